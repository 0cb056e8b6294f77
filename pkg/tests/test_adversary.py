"""
Tests for the patch discriminator and the hinge / perceptual objectives.
"""

import pytest
import torch

from common.errors import ValidationError
from models.discriminator import PatchDiscriminator, disc_forward, receptive_field
from models.lora import lora_adapters
from models.refiner import refine_batch
from training.config import LossWeights
from training.losses import discriminator_loss, generator_loss


class TestDiscriminator:
    """Test PatchDiscriminator shape and locality."""

    @pytest.fixture(autouse=True)
    def setup(self):
        """Seeded discriminator."""
        torch.manual_seed(0)
        self.disc = PatchDiscriminator()
        yield

    def test_output_shape(self):
        """Test: 64x64 images give an 8x8 logit grid."""
        assert self.disc(torch.rand(2, 3, 64, 64)).shape == (2, 1, 8, 8)

    def test_deterministic(self):
        """Test: the same input gives the same logits."""
        x = torch.rand(1, 3, 32, 32)
        with torch.no_grad():
            assert torch.equal(self.disc(x), self.disc(x))

    def test_input_gradient(self):
        """Test: logits are differentiable with respect to the image."""
        x = torch.rand(1, 3, 32, 32, requires_grad=True)
        self.disc(x).sum().backward()
        assert x.grad.abs().sum() > 0

    def test_patch_locality(self):
        """Test: a pixel change moves only logits whose receptive field covers it."""
        disc = self.disc.double()
        x = torch.rand(1, 3, 64, 64, dtype=torch.float64)
        row, col = 20, 33
        y = x.clone()
        y[:, :, row, col] = 1.0 - y[:, :, row, col]
        with torch.no_grad():
            before, after = disc(x)[0, 0], disc(y)[0, 0]
        changed = 0
        for i in range(8):
            for j in range(8):
                top, left, bottom, right = receptive_field(i, j)
                covers = top <= row <= bottom and left <= col <= right
                diff = float((before[i, j] - after[i, j]).abs())
                if covers:
                    changed += diff > 0
                else:
                    assert diff <= 1e-12, (i, j)
        assert changed > 0

    def test_receptive_field_extent(self):
        """Test: each logit sees a 15x15 box centred on its stride position."""
        assert receptive_field(0, 0) == (-7, -7, 7, 7)
        assert receptive_field(2, 3) == (9, 17, 23, 31)

    def test_bad_inputs(self):
        """Test: wrong channel count, indivisible size and out-of-range values are rejected."""
        with pytest.raises(ValidationError):
            self.disc(torch.rand(1, 1, 32, 32))
        with pytest.raises(ValidationError):
            self.disc(torch.rand(1, 3, 30, 30))
        with pytest.raises(ValidationError):
            disc_forward(self.disc, torch.full((1, 3, 32, 32), 2.0))


class TestObjectives:
    """Test generator_loss and discriminator_loss."""

    @pytest.fixture(autouse=True)
    def setup(self, codec):
        """Codec, discriminator and a pair of image batches."""
        torch.manual_seed(0)
        self.codec = codec
        self.disc = PatchDiscriminator()
        self.gt = torch.rand(4, 3, 32, 32)
        self.refined = torch.rand(4, 3, 32, 32)
        yield

    def test_identical_inputs(self):
        """Test: refined == ground truth zeroes the reconstruction and perceptual terms."""
        total, report = generator_loss(self.gt, self.gt, self.disc, self.codec,
                                       LossWeights(recon=1.0, perceptual=0.1, gan=0.0))
        assert report.recon_l2 == 0.0 and report.perceptual == 0.0
        assert float(total) == 0.0

    def test_linear_in_weights(self):
        """Test: doubling the reconstruction weight adds exactly one more L2 term."""
        _, one = generator_loss(self.refined, self.gt, self.disc, self.codec, LossWeights(1.0, 0.1, 0.05))
        _, two = generator_loss(self.refined, self.gt, self.disc, self.codec, LossWeights(2.0, 0.1, 0.05))
        assert two.total_g - one.total_g == pytest.approx(one.recon_l2, rel=1e-4)

    def test_shape_mismatch(self):
        """Test: refined and ground truth must match."""
        with pytest.raises(ValidationError):
            generator_loss(self.refined[:2], self.gt, self.disc, self.codec)

    def test_zero_discriminator(self):
        """Test: a discriminator that outputs 0 everywhere costs exactly 2."""
        loss = discriminator_loss(self.refined, self.gt, lambda images: torch.zeros(images.shape[0], 1, 4, 4))
        assert float(loss) == 2.0

    def test_saturated_discriminator(self):
        """Test: confident correct logits cost nothing."""
        def confident(images):
            return (images.mean(dim=(1, 2, 3), keepdim=True) - 0.5) * 1000
        loss = discriminator_loss(torch.zeros(2, 3, 16, 16), torch.ones(2, 3, 16, 16), confident)
        assert float(loss) == 0.0

    def test_discriminator_step_leaves_generator(self, refiner, eval_bundles):
        """Test: the discriminator loss sends no gradient into the adapters."""
        for adapter in lora_adapters(refiner.unet).values():
            torch.nn.init.normal_(adapter.up, std=0.05)
        bundle = eval_bundles[0]
        reference = torch.from_numpy(bundle.reference).float().unsqueeze(0)
        targets = torch.stack([torch.from_numpy(t.image).float() for t in bundle.targets]).unsqueeze(0)
        refined = refine_batch(reference, targets, refiner, self.codec).flatten(0, 1)
        before = {n: p.detach().clone() for n, p in refiner.named_parameters() if p.requires_grad}

        optimizer = torch.optim.Adam(self.disc.parameters(), lr=1e-2)
        loss = discriminator_loss(refined, targets.flatten(0, 1), self.disc)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

        for name, p in refiner.named_parameters():
            if p.requires_grad:
                assert p.grad is None, name
                assert torch.equal(p, before[name])
