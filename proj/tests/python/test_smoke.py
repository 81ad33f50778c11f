"""End-to-end smoke tests for the Python bindings."""

import json

import numpy as np
import pytest

import multipath as mp

TINY_SCENE = {
    "width": 32,
    "height": 32,
    "channels": 1,
    "num_classes": 2,
    "objects_mean": 2.0,
    "clutter_mean": 1.0,
    "size_min": 4.0,
    "size_small": 8.0,
    "size_mid": 12.0,
    "size_max": 20.0,
}

TINY_CONFIG = {
    "seed": 1,
    "scene": TINY_SCENE,
    "model": {
        "image_channels": 1,
        "num_classes": 2,
        "trunk_channels": [2, 2, 3, 4],
        "reduce_channels": 4,
        "head_hidden_dim": 8,
        "pool_size": 3,
        "foveal_factors": [1.0, 2.0],
        "integral_thresholds": [50, 75],
        "dropout": 0.0,
    },
    "loss": {"thresholds": [50, 75]},
    "train": {
        "iterations": 8,
        "images_per_batch": 1,
        "proposals_per_image": 8,
        "lr_initial": 0.001,
    },
    "proposals": {"count": 12},
    "images": 4,
    "eval_images": 3,
    "inference": {"max_detections": 20},
}


def test_geometry_roundtrip():
    assert mp.iou((0, 0, 10, 10), (0, 0, 10, 10)) == 100.0
    assert mp.iou((0, 0, 10, 10), (20, 20, 30, 30)) == 0.0

    proposal = (2.0, 3.0, 12.0, 9.0)
    gt = (4.0, 2.0, 11.0, 10.0)
    decoded = mp.decode_box(proposal, mp.encode_box(proposal, gt))
    assert decoded == pytest.approx(gt, abs=1e-9)


def test_scene_generation_shapes_and_determinism():
    image, objects = mp.generate_scene(TINY_SCENE, seed=7)
    assert image.shape == (1, 32, 32)
    assert image.dtype == np.float64
    assert 0.0 <= image.min() and image.max() <= 1.0
    for (x1, y1, x2, y2), cls in objects:
        assert 0.0 <= x1 < x2 <= 32.0
        assert 0.0 <= y1 < y2 <= 32.0
        assert cls in (1, 2)

    again, objects_again = mp.generate_scene(TINY_SCENE, seed=7)
    np.testing.assert_array_equal(image, again)
    assert objects == objects_again


def test_proposals_cover_objects_at_full_quality():
    _, objects = mp.generate_scene(TINY_SCENE, seed=3)
    if not objects:
        pytest.skip("empty scene for this seed")
    proposals = mp.simulate_proposals(objects, 32, 32, quality=1.0, count=50,
                                      seed=1)
    assert len(proposals) == 50
    for box, _ in objects:
        assert any(mp.iou(box, p) == 100.0 for p in proposals)


def test_evaluate_perfect_detections():
    gts = [(0, 1, (2.0, 2.0, 12.0, 12.0)), (1, 2, (4.0, 4.0, 20.0, 18.0))]
    dets = [(i, cls, 0.9, box) for (i, cls, box) in gts]
    result = mp.evaluate(dets, gts)
    assert result["ap"] == pytest.approx(100.0)
    assert result["ap50"] == pytest.approx(100.0)


def test_full_pipeline_and_model_reload(tmp_path):
    config = dict(TINY_CONFIG)
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config))
    out = tmp_path / "run"

    code, stdout, stderr = mp.run(
        ["gen", "--config", str(config_path), "--out", str(out)])
    assert code == 0, stderr
    assert "images: 4" in stdout

    code, stdout, stderr = mp.run(
        ["train", "--config", str(config_path), "--out", str(out)])
    assert code == 0, stderr
    assert (out / "model.ckpt").exists()

    code, stdout, stderr = mp.run(
        ["eval", "--config", str(config_path), "--out", str(out)])
    assert code == 0, stderr
    result = json.loads((out / "eval.json").read_text())
    assert 0.0 <= result["ap"] <= 100.0

    # The trained checkpoint drives detection directly from Python.
    model = mp.Model.load(str(out / "model.ckpt"))
    assert json.loads(model.config_json)["num_classes"] == 2
    image, objects = mp.generate_scene(TINY_SCENE, seed=99)
    proposals = mp.simulate_proposals(objects, 32, 32, quality=1.0, count=12,
                                      seed=5)
    if proposals:
        detections = mp.detect(model, image, proposals, max_detections=5)
        assert len(detections) <= 5
        for cls, score, (x1, y1, x2, y2) in detections:
            assert cls in (1, 2)
            assert 0.0 <= score <= 1.0
            assert x1 < x2 and y1 < y2
        scores = [score for _, score, _ in detections]
        assert scores == sorted(scores, reverse=True)


def test_cli_error_codes_surface():
    code, _, stderr = mp.run(["gen", "--config", "/does/not/exist.json"])
    assert code == 2
    assert "config" in stderr
