import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner
from PIL import Image

from synth import SQUARE_GT, noisy_square_image
from sgscn.cli import main, per_image_seed, _parse_resize, _parse_weights
from sgscn.io import read_labels_png
from sgscn.losses import LossWeights

import click


@pytest.fixture
def dataset(tmp_path):
    images = tmp_path / "images"
    masks = tmp_path / "masks"
    images.mkdir()
    masks.mkdir()
    for i in range(3):
        img = (noisy_square_image(i)[0] * 255).round().astype(np.uint8)
        Image.fromarray(img, mode="L").save(images / f"img{i}.png")
        Image.fromarray((SQUARE_GT * 255).astype(np.uint8),
                        mode="L").save(masks / f"img{i}.png")
    return tmp_path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestHelpers:
    def test_per_image_seed_deterministic(self):
        assert per_image_seed(3, "a.png") == per_image_seed(3, "a.png")
        assert per_image_seed(3, "a.png") != per_image_seed(3, "b.png")
        assert per_image_seed(3, "a.png") != per_image_seed(4, "a.png")
        assert 0 <= per_image_seed(12345, "x.png") <= 0x7FFFFFFF

    def test_parse_resize(self):
        assert _parse_resize(None, False) == (128, 128)
        assert _parse_resize("64x48", False) == (64, 48)
        assert _parse_resize("64x48", True) is None
        with pytest.raises(click.BadParameter):
            _parse_resize("64", False)

    def test_parse_weights(self):
        assert _parse_weights(None) == LossWeights()
        assert _parse_weights("1,0.5,0") == LossWeights(1.0, 0.5, 0.0)
        with pytest.raises(click.BadParameter):
            _parse_weights("1,2")


class TestSegmentKmeans:
    def test_outputs_and_schema(self, dataset):
        out = dataset / "out"
        result = CliRunner().invoke(main, [
            "segment", "--method", "kmeans", "--k", "3",
            "--images", str(dataset / "images"),
            "--masks", str(dataset / "masks"),
            "--out", str(out), "--no-resize"])
        assert result.exit_code == 0, result.output
        rows = read_csv(out / "metrics.csv")
        assert rows[0] == ["image", "cluster_id", "dsc", "hm", "xor"]
        assert [r[0] for r in rows[1:]] == ["img0.png", "img1.png", "img2.png"]
        for name in ("img0", "img1", "img2"):
            labels = read_labels_png(out / "labels" / f"{name}.png")
            assert labels.shape == (32, 32)
            assert len(np.unique(labels)) <= 3
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "segment"
        assert manifest["config"]["method"] == "kmeans"
        assert set(manifest["image_seeds"]) == {"img0.png", "img1.png",
                                                "img2.png"}

    def test_byte_identical_reruns(self, dataset):
        outputs = []
        for name in ("o1", "o2"):
            out = dataset / name
            result = CliRunner().invoke(main, [
                "segment", "--method", "kmeans",
                "--images", str(dataset / "images"),
                "--masks", str(dataset / "masks"),
                "--out", str(out), "--no-resize", "--threads", "2"])
            assert result.exit_code == 0, result.output
            blob = (out / "metrics.csv").read_bytes()
            for p in sorted((out / "labels").iterdir()):
                blob += p.read_bytes()
            outputs.append(blob)
        assert outputs[0] == outputs[1]

    def test_no_masks_no_metrics(self, dataset):
        out = dataset / "out"
        result = CliRunner().invoke(main, [
            "segment", "--method", "kmeans",
            "--images", str(dataset / "images"),
            "--out", str(out), "--no-resize"])
        assert result.exit_code == 0, result.output
        assert not (out / "metrics.csv").exists()
        assert (out / "labels" / "img0.png").exists()


class TestSegmentSgscn:
    def test_outputs(self, dataset):
        out = dataset / "out"
        result = CliRunner().invoke(main, [
            "segment", "--method", "sgscn",
            "--images", str(dataset / "images"),
            "--masks", str(dataset / "masks"),
            "--out", str(out), "--no-resize"])
        assert result.exit_code == 0, result.output
        rows = read_csv(out / "metrics.csv")
        assert len(rows) == 4
        for name in ("img0", "img1", "img2"):
            trace = read_csv(out / "trace" / f"{name}.csv")
            assert trace[0][0] == "iteration"
            assert len(trace) >= 2
        assert "dsc:" in result.output

    def test_bad_weights_flag(self, dataset):
        result = CliRunner().invoke(main, [
            "segment", "--images", str(dataset / "images"),
            "--weights", "nonsense"])
        assert result.exit_code != 0


class TestAblate:
    def test_table_schema(self, dataset):
        out = dataset / "out"
        result = CliRunner().invoke(main, [
            "ablate", "--images", str(dataset / "images"),
            "--masks", str(dataset / "masks"),
            "--out", str(out), "--no-resize"])
        assert result.exit_code == 0, result.output
        rows = read_csv(out / "ablation.csv")
        assert rows[0] == ["losses", "mean_dsc", "mean_hm", "mean_xor"]
        assert [r[0] for r in rows[1:]] == ["ce", "ce+ss", "ce+ss+cc"]
        for row in rows[1:]:
            for v in row[1:]:
                assert np.isfinite(float(v))

    def test_requires_masks(self, dataset):
        result = CliRunner().invoke(main, [
            "ablate", "--images", str(dataset / "images")])
        assert result.exit_code == 2


class TestGradcheck:
    def test_passes(self):
        result = CliRunner().invoke(main, ["gradcheck", "--seeds", "2"])
        assert result.exit_code == 0, result.output
        assert "PASS" in result.output
