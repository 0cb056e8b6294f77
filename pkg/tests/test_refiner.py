"""
Tests for the refiner: layouts, noise, U-Net contracts, refine and persistence.
"""

import copy
import os

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from common.errors import ConfigurationError, IntegrityError, ValidationError
from models.layout import (ViewLatentBatch, reshape_for_attention, reshape_for_resblock,
                           unfold_from_attention, unfold_from_resblock)
from models.lora import lora_adapters
from models.noise import (INFERENCE_SEED, TRAIN_NOISE_LEVELS, NoiseLevel, add_noise, sample_noise,
                          sample_train_noise_level)
from models.refiner import (RefinerConfig, RefinerModel, load_refiner, refine, refine_batch, save_refiner,
                            unet_forward)
from synthdata.coarse import DegradationConfig, degrade_bundle
from training.gradcheck import finite_difference_check


class TestLayout:
    """Test the view-slot reshapes."""

    def test_resblock_shape_and_index(self):
        """Test: (2, 3, 8, 16, 16) -> (6, 8, 16, 16); slot (1, 2) lands on row 5."""
        x = torch.randn(2, 3, 8, 16, 16)
        folded = reshape_for_resblock(x)
        assert folded.shape == (6, 8, 16, 16)
        assert folded[5, 0, 5, 5] == x[1, 2, 0, 5, 5]
        assert torch.equal(unfold_from_resblock(folded, 3), x)

    def test_attention_shape_and_index(self):
        """Test: (2, 3, 8, 16, 16) -> (2, 8, 768); (v=1, h=0, w=0) is token 256."""
        x = torch.randn(2, 3, 8, 16, 16)
        tokens = reshape_for_attention(x)
        assert tokens.shape == (2, 8, 768)
        assert torch.equal(tokens[:, :, 256], x[:, 1, :, 0, 0])
        assert torch.equal(unfold_from_attention(tokens, 3, 16, 16), x)

    def test_batch_validation(self):
        """Test: wrong rank or a missing novel slot is rejected."""
        with pytest.raises(ValidationError):
            ViewLatentBatch(torch.randn(2, 8, 16, 16))
        with pytest.raises(ValidationError):
            ViewLatentBatch(torch.randn(2, 1, 8, 16, 16))
        batch = ViewLatentBatch(torch.randn(2, 3, 8, 4, 4))
        assert batch.views == 2 and batch.batch_size == 2


class TestNoise:
    """Test variable-noise perturbation."""

    def test_zero_level_is_identity(self):
        """Test: r=0 returns every slot bit-identical."""
        batch = ViewLatentBatch(torch.randn(2, 3, 8, 4, 4))
        assert torch.equal(add_noise(batch, 0.0, rng_seed=1).data, batch.data)

    def test_reference_slot_untouched(self):
        """Test: slot 0 is bit-identical for every training level and seed."""
        batch = ViewLatentBatch(torch.randn(2, 3, 8, 4, 4))
        for r in TRAIN_NOISE_LEVELS:
            for seed in (0, 1, 99):
                out = add_noise(batch, r, rng_seed=seed)
                assert torch.equal(out.data[:, 0], batch.data[:, 0])

    def test_blend_of_zeros(self):
        """Test: r=0.5 on zero latents gives 0.5 * the seeded noise."""
        batch = ViewLatentBatch(torch.zeros(1, 3, 8, 4, 4))
        out = add_noise(batch, 0.5, rng_seed=7)
        expected = 0.5 * sample_noise((1, 2, 8, 4, 4), 7)
        assert torch.allclose(out.data[:, 1:], expected, atol=1e-7)

    def test_hand_computed_blend(self):
        """Test: r=0.3, z=[1, -2], n=[0.5, 0.5] -> [0.85, -1.25]."""
        data = torch.zeros(1, 2, 1, 1, 2)
        data[0, 1, 0, 0] = torch.tensor([1.0, -2.0])
        out = add_noise(ViewLatentBatch(data), 0.3, noise=torch.full((1, 1, 1, 1, 2), 0.5))
        assert torch.allclose(out.data[0, 1, 0, 0], torch.tensor([0.85, -1.25]), atol=1e-6)

    def test_level_bounds(self):
        """Test: r outside [0, 0.5] is rejected."""
        with pytest.raises(ValidationError):
            NoiseLevel(0.6)
        with pytest.raises(ValidationError):
            NoiseLevel(-0.1)

    def test_uniform_level_sampling(self):
        """Test: 60k draws hit each level with frequency in [0.15, 0.185]."""
        rng = np.random.default_rng(0)
        draws = [sample_train_noise_level(rng).r for _ in range(60000)]
        for level in TRAIN_NOISE_LEVELS:
            assert 0.15 <= draws.count(level) / len(draws) <= 0.185
        assert set(draws) <= set(TRAIN_NOISE_LEVELS)

    def test_level_sampling_reproducible(self):
        """Test: the same rng seed gives the same sequence."""
        rng_a, rng_b = np.random.default_rng(5), np.random.default_rng(5)
        assert [sample_train_noise_level(rng_a).r for _ in range(50)] == \
            [sample_train_noise_level(rng_b).r for _ in range(50)]


class TestUNet:
    """Test unet_forward contracts."""

    def test_output_shape(self, refiner):
        """Test: output shape equals input shape for several (B, V)."""
        for batch_size, views in ((1, 1), (2, 2), (1, 4)):
            model = RefinerModel(RefinerConfig(views=views))
            x = ViewLatentBatch(torch.randn(batch_size, views + 1, 8, 8, 8))
            with torch.no_grad():
                assert unet_forward(x, model).data.shape == x.data.shape

    def test_view_count_mismatch(self, refiner):
        """Test: a batch with the wrong V is rejected."""
        with pytest.raises(ValidationError):
            unet_forward(ViewLatentBatch(torch.randn(1, 4, 8, 8, 8)), refiner)

    def test_fixed_timestep(self, refiner):
        """Test: the U-Net refuses any timestep other than 400."""
        assert refiner.config.fixed_timestep == 400
        with pytest.raises(ValidationError):
            refiner.unet(torch.randn(1, 3, 8, 8, 8), timestep=10)

    def test_zero_lora_matches_base(self):
        """Test: fresh adapters leave the output bit-identical to the base model."""
        torch.manual_seed(0)
        base = RefinerModel(RefinerConfig(views=2)).eval()
        adapted = copy.deepcopy(base).attach_lora()
        x = ViewLatentBatch(torch.randn(2, 3, 8, 8, 8))
        with torch.no_grad():
            assert torch.equal(unet_forward(x, base).data, unet_forward(x, adapted).data)

    def test_novel_view_permutation_equivariance(self, refiner):
        """Test: swapping slots 1 and 2 swaps the outputs, slot 0 unchanged."""
        model = refiner.double()
        for adapter in lora_adapters(model.unet).values():
            torch.nn.init.normal_(adapter.up, std=0.05)
        x = torch.randn(1, 3, 8, 8, 8, dtype=torch.float64)
        swapped = x[:, [0, 2, 1]]
        with torch.no_grad():
            out = model(x)
            out_swapped = model(swapped)
        assert (out[:, [0, 2, 1]] - out_swapped).abs().max() <= 1e-5

    def test_lora_gradient_check(self, codec):
        """Test: LoRA gradients match central differences (B=1, V=2, 8x8 latents)."""
        torch.manual_seed(0)
        model = RefinerModel(RefinerConfig(views=2)).attach_lora().double()
        codec = codec.double()
        for adapter in lora_adapters(model.unet).values():
            torch.nn.init.normal_(adapter.up, std=0.05)
        reference = torch.rand(1, 3, 32, 32, dtype=torch.float64)
        coarse = torch.rand(1, 2, 3, 32, 32, dtype=torch.float64)
        target = torch.rand(1, 2, 3, 32, 32, dtype=torch.float64)
        params = [(n, p) for n, p in model.named_parameters() if p.requires_grad]
        results = finite_difference_check(
            lambda: F.mse_loss(refine_batch(reference, coarse, model, codec, r=0.1, seed=1), target),
            params, samples=10, h=1e-3, seed=0,
        )
        assert all(name.endswith(".down") or name.endswith(".up") for name, _ in params)
        assert all(r.close() for r in results), [(r.name, r.analytic, r.numeric) for r in results]


class TestRefine:
    """Test the single-step refine() entry point."""

    @pytest.fixture(autouse=True)
    def setup(self, refiner, codec, eval_bundles):
        """Two coarse views of a held-out identity."""
        self.refiner, self.codec = refiner, codec
        self.bundle = eval_bundles[0]
        self.coarse = degrade_bundle(self.bundle, DegradationConfig(), rng_seed=self.bundle.identity.seed)
        yield

    def test_shape_and_range(self):
        """Test: V=2 gives two (3, 32, 32) images in [0, 1]."""
        out = refine(self.bundle.reference, self.coarse, self.refiner, self.codec)
        assert len(out) == 2
        for image in out:
            assert image.shape == (3, 32, 32)
            assert image.min() >= 0 and image.max() <= 1

    def test_single_forward(self):
        """Test: each refine call runs the U-Net exactly once."""
        before = self.refiner.forward_calls
        refine(self.bundle.reference, self.coarse, self.refiner, self.codec)
        assert self.refiner.forward_calls - before == 1

    def test_deterministic(self):
        """Test: the fixed inference seed makes refine reproducible."""
        a = refine(self.bundle.reference, self.coarse, self.refiner, self.codec)
        b = refine(self.bundle.reference, self.coarse, self.refiner, self.codec, seed=INFERENCE_SEED)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_view_mismatch(self):
        """Test: three coarse views for a V=2 model is a validation error."""
        with pytest.raises(ValidationError):
            refine(self.bundle.reference, self.coarse + self.coarse[:1], self.refiner, self.codec)

    def test_bad_noise_level(self):
        """Test: r=0.7 is rejected."""
        with pytest.raises(ValidationError):
            refine(self.bundle.reference, self.coarse, self.refiner, self.codec, r=0.7)


class TestRefinerCheckpoint:
    """Test refiner persistence."""

    @pytest.fixture(autouse=True)
    def setup(self, tmp_path, refiner):
        """Refiner with non-zero adapters saved to disk."""
        for adapter in lora_adapters(refiner.unet).values():
            torch.nn.init.normal_(adapter.up, std=0.05)
        self.refiner = refiner
        self.directory = str(tmp_path / "refiner")
        self.meta = save_refiner(refiner, self.directory)
        yield

    def test_round_trip(self):
        """Test: loading reproduces the forward pass bit-exactly."""
        loaded = load_refiner(self.directory).eval()
        x = torch.randn(1, 3, 8, 8, 8)
        with torch.no_grad():
            assert torch.equal(loaded(x), self.refiner(x))
        assert loaded.base_hash() == self.refiner.base_hash()
        assert self.meta["views"] == 2 and self.meta["fixed_timestep"] == 400

    def test_load_with_other_view_count(self):
        """Test: one checkpoint serves any V."""
        loaded = load_refiner(self.directory, views=4)
        assert loaded.views == 4
        with torch.no_grad():
            assert loaded(torch.randn(1, 5, 8, 8, 8)).shape == (1, 5, 8, 8, 8)

    def test_only_adapters_trainable(self):
        """Test: a loaded refiner trains adapter parameters only."""
        loaded = load_refiner(self.directory)
        names = [n for n, p in loaded.named_parameters() if p.requires_grad]
        assert names and all(n.endswith(".down") or n.endswith(".up") for n in names)

    def test_tampered_adapter(self):
        """Test: an adapter blob that does not match its hash is an integrity error."""
        name, entry = next(iter(self.meta["adapters"].items()))
        path = os.path.join(self.directory, "adapters", entry["file"])
        values = torch.load(path, weights_only=True)
        values["up"] = values["up"] + 1.0
        torch.save(values, path)
        with pytest.raises(IntegrityError):
            load_refiner(self.directory)

    def test_missing(self, tmp_path):
        """Test: no checkpoint is a configuration error."""
        with pytest.raises(ConfigurationError):
            load_refiner(str(tmp_path / "missing"))
