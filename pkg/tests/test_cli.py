"""
End-to-end tests of run_portrait.py, run as a subprocess.
"""

import csv
import json
import os

import pytest

from tests.conftest import run_cli


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Tiny datasets, a two-step codec and a step-0 pretrain checkpoint."""
    root = tmp_path_factory.mktemp("cli")
    paths = {
        "train": str(root / "data" / "train"),
        "eval": str(root / "data" / "eval"),
        "codec_run": str(root / "runs" / "codec"),
        "pretrain": str(root / "runs" / "pretrain"),
        "root": str(root),
    }
    steps = [
        ("generate-data", "--identities", 4, "--views", 2, "--res", 32, "--out", paths["train"]),
        ("generate-data", "--identities", 4, "--views", 2, "--res", 32, "--split", "eval", "--out", paths["eval"]),
        ("train", "--stage", "codec", "--data", paths["train"], "--steps", 2, "--out", paths["codec_run"]),
        ("train", "--stage", "pretrain", "--data", paths["train"], "--codec",
         os.path.join(paths["codec_run"], "codec"), "--steps", 0, "--set", "base_steps=1",
         "--out", paths["pretrain"]),
    ]
    for args in steps:
        result = run_cli(*args)
        assert result.returncode == 0, result.stderr
    paths["codec"] = os.path.join(paths["codec_run"], "codec")
    paths["checkpoint"] = os.path.join(paths["pretrain"], "checkpoints", "step_0000000")
    return paths


class TestGenerateData:
    """Test the generate-data command."""

    def test_manifest_stable(self, tmp_path):
        """Test: the same arguments write a byte-identical manifest."""
        manifests = []
        for name in ("a", "b"):
            out = str(tmp_path / name)
            result = run_cli("generate-data", "--identities", 3, "--views", 2, "--res", 32, "--out", out)
            assert result.returncode == 0, result.stderr
            with open(os.path.join(out, "manifest.json"), "rb") as f:
                manifests.append(f.read())
            assert os.path.exists(os.path.join(out, "resolved_config.json"))
        assert manifests[0] == manifests[1]
        assert len(json.loads(manifests[0])["records"]) == 3

    def test_too_many_views(self, tmp_path):
        """Test: 17 views exits 1 naming the option."""
        result = run_cli("generate-data", "--identities", 2, "--views", 17, "--res", 32, "--out", str(tmp_path))
        assert result.returncode == 1
        assert "views" in result.stderr

    def test_unknown_override(self, tmp_path):
        """Test: an unknown --set key exits 1."""
        result = run_cli("generate-data", "--identities", 2, "--res", 32, "--set", "learning_rate=0.1",
                         "--out", str(tmp_path))
        assert result.returncode == 1
        assert "learning_rate" in result.stderr


class TestTrain:
    """Test the train command."""

    def test_missing_codec(self, pipeline, tmp_path):
        """Test: pretrain without a codec exits 1."""
        result = run_cli("train", "--stage", "pretrain", "--data", pipeline["train"], "--out", str(tmp_path))
        assert result.returncode == 1
        assert "codec" in result.stderr

    def test_step_zero_checkpoint(self, pipeline):
        """Test: steps 0 leaves a verified step-0 checkpoint and a config snapshot."""
        with open(os.path.join(pipeline["checkpoint"], "manifest.json")) as f:
            manifest = json.load(f)
        assert manifest["step"] == 0 and manifest["stage"] == "pretrain"
        assert manifest["train_seeds"] == [0, 1, 2, 3]
        with open(os.path.join(pipeline["pretrain"], "resolved_config.json")) as f:
            assert json.load(f)["resolved"]["base_steps"] == 1

    def test_config_document_views(self, pipeline, tmp_path):
        """Test: views from --config beat the dataset's view count; --set beats both."""
        document = str(tmp_path / "config.json")
        with open(document, "w") as f:
            json.dump({"views": 1}, f)
        for name, extra, expected in (("doc", (), 1), ("set", ("--set", "views=2"), 2)):
            out = str(tmp_path / name)
            result = run_cli("train", "--stage", "codec", "--data", pipeline["train"], "--config", document,
                             "--steps", 0, *extra, "--out", out)
            assert result.returncode == 0, result.stderr
            with open(os.path.join(out, "resolved_config.json")) as f:
                resolved = json.load(f)["resolved"]
            assert resolved["views"] == expected
            assert resolved["resolution"] == 32


class TestEvaluationCommands:
    """Test eval, the ablations and render."""

    def test_eval(self, pipeline, tmp_path):
        """Test: eval writes the JSON report and the per-view table."""
        out = str(tmp_path / "eval")
        result = run_cli("eval", "--checkpoint", pipeline["checkpoint"], "--data", pipeline["eval"], "--out", out)
        assert result.returncode == 0, result.stderr
        with open(os.path.join(out, "eval.json")) as f:
            report = json.load(f)
        assert set(report["summary"]["psnr"]) == {"refined", "coarse"}
        assert len(read_rows(os.path.join(out, "eval_per_view.csv"))) == 2

    def test_eval_on_training_data(self, pipeline, tmp_path):
        """Test: evaluating on training identities exits 2."""
        result = run_cli("eval", "--checkpoint", pipeline["checkpoint"], "--data", pipeline["train"],
                         "--out", str(tmp_path))
        assert result.returncode == 2

    def test_ablate_noise(self, pipeline, tmp_path):
        """Test: six rows, one per noise level."""
        out = str(tmp_path / "noise")
        result = run_cli("ablate-noise", "--checkpoint", pipeline["checkpoint"], "--data", pipeline["eval"],
                         "--out", out)
        assert result.returncode == 0, result.stderr
        rows = read_rows(os.path.join(out, "ablate_noise_per_noise.csv"))
        assert [float(row["r"]) for row in rows] == [0.0, 0.1, 0.2, 0.3, 0.4, 0.5]

    def test_ablate_rotation(self, pipeline, tmp_path):
        """Test: seven rows, yaw -90 to 90."""
        out = str(tmp_path / "rotation")
        result = run_cli("ablate-rotation", "--checkpoint", pipeline["checkpoint"], "--identities", 2,
                         "--out", out)
        assert result.returncode == 0, result.stderr
        rows = read_rows(os.path.join(out, "ablate_rotation_per_angle.csv"))
        assert [float(row["yaw"]) for row in rows] == [-90.0, -60.0, -30.0, 0.0, 30.0, 60.0, 90.0]

    def test_render(self, pipeline, tmp_path):
        """Test: three yaws give three coarse and three refined PNGs, reproducibly."""
        reference = os.path.join(pipeline["eval"], sorted(
            name for name in os.listdir(pipeline["eval"]) if name.endswith("_0.png"))[0])
        outputs = []
        for name in ("a", "b"):
            out = str(tmp_path / name)
            result = run_cli("render", "--checkpoint", pipeline["checkpoint"], "--reference", reference,
                             "--yaws", "30,-30,60", "--out", out)
            assert result.returncode == 0, result.stderr
            pngs = sorted(n for n in os.listdir(out) if n.endswith(".png"))
            assert len([n for n in pngs if n.startswith("coarse_")]) == 3
            assert len([n for n in pngs if n.startswith("refined_")]) == 3
            outputs.append({n: open(os.path.join(out, n), "rb").read() for n in pngs})
        assert outputs[0] == outputs[1]

    def test_render_missing_checkpoint(self, pipeline, tmp_path):
        """Test: a nonexistent checkpoint exits nonzero."""
        reference = os.path.join(pipeline["eval"], "100000_0.png")
        result = run_cli("render", "--checkpoint", str(tmp_path / "missing"), "--reference", reference,
                         "--yaws", "30", "--out", str(tmp_path / "out"))
        assert result.returncode != 0
