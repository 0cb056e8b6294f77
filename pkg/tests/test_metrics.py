"""
Tests for metrics, the identity embedder, reports and evaluation protocols.
"""

import json
import os

import numpy as np
import pytest
from scipy import ndimage

from common.errors import ConfigurationError, IntegrityError, ValidationError
from evaluation.ablations import (ROTATION_ANGLES, ablate_noise, ablate_rotation, evaluate, rotation_poses,
                                  timing)
from evaluation.embedder import (IdentityEmbedder, get_embedder, load_embedder, save_embedder,
                                 train_embedder)
from evaluation.metrics import (PSNR_CAP, fid_proxy, frechet_distance, id_consistency, l2_error, lpips_proxy,
                                lpips_proxy_batch, psnr, ssim)
from evaluation.report import EvalReport, read_csv


def random_images(count, size=32, seed=0):
    rng = np.random.default_rng(seed)
    return [rng.random((3, size, size)).astype(np.float32) for _ in range(count)]


class ColorEmbedder:
    """Stand-in embedder: per-channel mean colour as the feature vector."""
    trained = True

    def features(self, images):
        return np.stack([np.asarray(img, dtype=np.float64).mean(axis=(1, 2)) for img in images])


@pytest.fixture(scope="module")
def embedder():
    """Briefly trained identity embedder over three identities."""
    return train_embedder([0, 1, 2], resolution=32, steps=20, batch_size=8, views_per_identity=4)


class TestPixelMetrics:
    """Test L2, PSNR and SSIM."""

    def test_psnr_cap(self):
        """Test: identical images score exactly the cap."""
        x = random_images(1)[0]
        assert psnr(x, x) == PSNR_CAP == 99.0

    def test_psnr_value(self):
        """Test: MSE 0.01 is 20 dB."""
        a = np.zeros((3, 8, 8))
        b = np.full((3, 8, 8), 0.1)
        assert l2_error(a, b) == pytest.approx(0.01)
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)

    def test_ssim_identity_and_symmetry(self):
        """Test: ssim(x, x) == 1 and ssim is symmetric and bounded."""
        a, b = random_images(2)
        assert ssim(a, a) == pytest.approx(1.0)
        assert ssim(a, b) == pytest.approx(ssim(b, a))
        assert -1.0 <= ssim(a, b) <= 1.0

    def test_ssim_bounds_anticorrelated(self):
        """Test: ssim stays in [-1, 1] for inverted, constant and unrelated images."""
        a, b = random_images(2, seed=4)
        inverted = ssim(a, 1.0 - a)
        assert -1.0 <= inverted < 0.0
        pairs = [(np.zeros_like(a), np.ones_like(a)), (a, b), (a, np.zeros_like(a))]
        for x, y in pairs:
            assert -1.0 <= ssim(x, y) <= 1.0

    def test_shape_mismatch(self):
        """Test: differently sized images are rejected."""
        with pytest.raises(ValidationError):
            psnr(np.zeros((3, 8, 8)), np.zeros((3, 16, 16)))
        with pytest.raises(ValidationError):
            ssim(np.zeros((1, 32, 32)), np.zeros((1, 32, 32)))


class TestLpipsProxy:
    """Test the codec-feature perceptual proxy."""

    def test_zero_and_symmetric(self, codec):
        """Test: d(x, x) == 0 and d(x, y) == d(y, x)."""
        a, b = random_images(2)
        assert lpips_proxy(a, a, codec) == 0.0
        assert lpips_proxy(a, b, codec) == pytest.approx(lpips_proxy(b, a, codec))

    def test_monotone_in_blur(self, codec, train_bundles):
        """Test: stronger blur moves further from the original, on average."""
        images = [b.reference for b in train_bundles] + [t.image for b in train_bundles for t in b.targets]

        def blurred(sigma):
            return [ndimage.gaussian_filter(img, sigma=(0, sigma, sigma)) for img in images]

        light = lpips_proxy_batch(images, blurred(0.5), codec).mean()
        heavy = lpips_proxy_batch(images, blurred(3.0), codec).mean()
        assert 0.0 < light < heavy

    def test_requires_codec(self):
        """Test: no codec is a configuration error."""
        x = random_images(1)[0]
        with pytest.raises(ConfigurationError):
            lpips_proxy(x, x, None)


class TestFrechet:
    """Test the Fréchet distance and fid_proxy."""

    def test_same_set(self):
        """Test: a set against itself is 0."""
        features = np.random.default_rng(0).normal(size=(64, 8))
        assert frechet_distance(features, features) == pytest.approx(0.0, abs=1e-6)

    def test_mean_shift(self):
        """Test: shifting every sample by d gives |d|^2."""
        features = np.random.default_rng(1).normal(size=(64, 8))
        shift = np.array([1.0, 2.0, 0, 0, 0, 0, 0, 0])
        assert frechet_distance(features, features + shift) == pytest.approx(5.0, abs=1e-6)

    def test_rank_deficient(self):
        """Test: fewer samples than dimensions still give a finite, non-negative value."""
        rng = np.random.default_rng(2)
        value = frechet_distance(rng.normal(size=(10, 32)), rng.normal(size=(10, 32)))
        assert np.isfinite(value) and value >= 0

    def test_fid_minimum_set_size(self):
        """Test: fewer than 32 images per set is a validation error naming the minimum."""
        with pytest.raises(ValidationError, match="32"):
            fid_proxy(random_images(31), random_images(40), ColorEmbedder())

    def test_fid_same_set(self):
        """Test: fid_proxy of a set against itself is 0."""
        images = random_images(40)
        assert fid_proxy(images, images, ColorEmbedder()) == pytest.approx(0.0, abs=1e-9)

    def test_fid_symmetric(self):
        """Test: swapping the two sets leaves fid_proxy unchanged."""
        a = random_images(40, seed=5)
        b = [0.5 * img + 0.2 for img in random_images(48, seed=6)]
        forward = fid_proxy(a, b, ColorEmbedder())
        assert forward > 0.0
        assert fid_proxy(b, a, ColorEmbedder()) == pytest.approx(forward, rel=1e-9, abs=1e-12)

    def test_fid_requires_trained_embedder(self):
        """Test: an untrained embedder is a configuration error."""
        with pytest.raises(ConfigurationError):
            fid_proxy(random_images(32), random_images(32), IdentityEmbedder(classes=3))


class TestEmbedder:
    """Test the synthetic identity embedder."""

    def test_untrained_rejected(self):
        """Test: id_consistency refuses an untrained embedder."""
        x = random_images(1)[0]
        with pytest.raises(ConfigurationError):
            id_consistency(x, x, IdentityEmbedder(classes=3))

    def test_training_metadata(self, embedder):
        """Test: training records held-out accuracy and the identity seeds."""
        assert embedder.trained
        assert 0.0 <= embedder.meta["heldout_accuracy"] <= 1.0
        assert embedder.meta["train_seeds"] == [0, 1, 2]

    def test_unit_norm_and_self_similarity(self, embedder):
        """Test: embeddings are unit length and id_consistency(x, x) == 1."""
        images = random_images(3)
        norms = np.linalg.norm(embedder.embed(images), axis=1)
        assert np.allclose(norms, 1.0, atol=1e-5)
        assert id_consistency(images[0], images[0], embedder) == pytest.approx(1.0, abs=1e-5)
        assert -1.0 <= id_consistency(images[0], images[1], embedder) <= 1.0

    def test_save_load(self, embedder, tmp_path):
        """Test: a saved embedder reloads with identical embeddings; lookups are cached."""
        directory = save_embedder(embedder, str(tmp_path / "embedder"))
        loaded = load_embedder(directory)
        images = random_images(2)
        assert np.allclose(loaded.embed(images), embedder.embed(images), atol=1e-6)
        assert get_embedder(directory) is get_embedder(directory)

    def test_tampered_weights(self, embedder, tmp_path):
        """Test: weights that do not match meta.json are an integrity error."""
        directory = save_embedder(embedder, str(tmp_path / "embedder"))
        with open(os.path.join(directory, "meta.json")) as f:
            meta = json.load(f)
        meta["weights_hash"] = "0" * 64
        with open(os.path.join(directory, "meta.json"), "w") as f:
            json.dump(meta, f)
        with pytest.raises(IntegrityError):
            load_embedder(directory)

    def test_missing(self, tmp_path):
        """Test: no embedder on disk is a configuration error."""
        with pytest.raises(ConfigurationError):
            load_embedder(str(tmp_path / "none"))
        with pytest.raises(ConfigurationError):
            get_embedder(None)

    def test_needs_two_identities(self):
        """Test: one identity cannot train a classifier."""
        with pytest.raises(ValidationError):
            train_embedder([0], resolution=32, steps=1)


class TestReport:
    """Test EvalReport."""

    def test_write(self, tmp_path):
        """Test: JSON plus one CSV per non-empty table."""
        report = EvalReport(kind="eval", summary={"psnr": {"refined": 20.0, "coarse": 18.0}},
                            per_view=[{"view": 1, "psnr": 20.0}, {"view": 2, "psnr": 19.0}])
        paths = report.write(str(tmp_path))
        assert sorted(os.path.basename(p) for p in paths) == ["eval.json", "eval_per_view.csv"]
        assert len(read_csv(os.path.join(str(tmp_path), "eval_per_view.csv"))) == 2
        with open(os.path.join(str(tmp_path), "eval.json")) as f:
            assert "proxies" in json.load(f)["note"]

    def test_non_finite_rejected(self):
        """Test: a NaN anywhere in the report fails validation."""
        report = EvalReport(kind="eval", per_noise=[{"r": 0.1, "psnr": float("nan")}])
        with pytest.raises(ValidationError, match="per_noise"):
            report.validate()


class TestProtocols:
    """Test evaluate and the ablations on an untrained refiner."""

    @pytest.fixture(autouse=True)
    def setup(self, refiner, codec, eval_bundles):
        """Fresh V=2 refiner, untrained codec, three held-out bundles."""
        self.refiner, self.codec, self.bundles = refiner, codec, eval_bundles
        yield

    def test_evaluate(self, tmp_path):
        """Test: summary pairs refined with coarse; tables cover views and regimes."""
        report = evaluate(self.refiner, self.codec, self.bundles, timing_trials=20)
        for metric in ("l2", "psnr", "ssim", "lpips_proxy"):
            assert set(report.summary[metric]) == {"refined", "coarse"}
        assert "fid_proxy" not in report.summary
        assert [row["view"] for row in report.per_view] == [1, 2]
        assert set(report.per_regime) == {"pretrain"}
        assert sum(row["count"] for row in report.per_angle) == 6
        assert report.timing["trials"] == 20 and report.timing["generation_ms"] > 0
        report.write(str(tmp_path))

    def test_ablate_noise(self):
        """Test: one row per level plus a spread per metric."""
        report = ablate_noise(self.refiner, self.codec, self.bundles)
        assert [row["r"] for row in report.per_noise] == [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]
        assert report.summary["psnr_spread"] >= 0

    def test_ablate_noise_bad_level(self):
        """Test: a level outside [0, 0.5] is rejected."""
        with pytest.raises(ValidationError):
            ablate_noise(self.refiner, self.codec, self.bundles, levels=(0.1, 0.7))

    def test_rotation_poses(self):
        """Test: slot 1 at the angle, slot 2 mirrored, the rest repeat the angle."""
        assert [p.yaw for p in rotation_poses(30.0, 3)] == [30.0, -30.0, 30.0]
        assert [p.yaw for p in rotation_poses(60.0, 1)] == [60.0]

    def test_ablate_rotation(self):
        """Test: exactly seven rows, one per yaw from -90 to 90."""
        report = ablate_rotation(self.refiner, self.codec, [b.identity.seed for b in self.bundles], resolution=32)
        assert [row["yaw"] for row in report.per_angle] == list(ROTATION_ANGLES)
        assert {"ssim_at_0", "ssim_at_-90", "ssim_at_90"} <= set(report.summary)

    def test_timing(self):
        """Test: fewer than 20 trials is rejected; 20 give positive medians."""
        with pytest.raises(ValidationError):
            timing(self.refiner, self.codec, self.bundles[0], n_trials=19)
        registration_ms, generation_ms = timing(self.refiner, self.codec, self.bundles[0], n_trials=20)
        assert registration_ms > 0 and generation_ms > 0
