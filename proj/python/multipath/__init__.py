"""Object detection on synthetic scenes.

Thin wrapper over the C++ core: scene generation, a multi-region detection
network with skip connections and an integral classification loss, training,
inference and COCO-style evaluation. Configs cross the boundary as JSON, so
plain dicts work everywhere.
"""

from __future__ import annotations

import json
from typing import Any

from multipath._core import (  # noqa: F401
    Model,
    __version__,
    decode_box,
    encode_box,
    iou,
)
from multipath import _core


def generate_scene(config: dict[str, Any] | None = None, seed: int = 0):
    """Render one scene: ([C,H,W] float array in [0,1], [(box, cls), ...])."""
    merged = dict(_DEFAULT_SCENE)
    merged.update(config or {})
    return _core.generate_scene(json.dumps(merged), seed)


def simulate_proposals(objects, width, height, *, quality=1.0, count=100,
                       seed=0):
    """Jittered ground-truth boxes mixed with uniform background boxes."""
    return _core.simulate_proposals(list(objects), width, height, quality,
                                    count, seed)


def detect(model: Model, image, proposals, **options):
    """Run the detector; returns [(class, score, box), ...] best first."""
    return model.detect(image, list(proposals), json.dumps(options))


def evaluate(detections, ground_truths) -> dict[str, Any]:
    """COCO-style metrics for [(image_id, cls, score, box)] detections
    against [(image_id, cls, box)] ground truths."""
    return json.loads(_core.evaluate(list(detections), list(ground_truths)))


def run(args: list[str]) -> tuple[int, str, str]:
    """Invoke the command-line pipeline; returns (exit code, stdout, stderr)."""
    return _core.run_cli([str(a) for a in args])


_DEFAULT_SCENE = {
    "width": 128,
    "height": 128,
    "channels": 3,
    "num_classes": 3,
    "objects_mean": 7.0,
    "clutter_mean": 8.0,
    "occlusion_prob": 0.3,
    "size_min": 8.0,
    "size_small": 16.0,
    "size_mid": 32.0,
    "size_max": 80.0,
    "frac_below_small": 0.2,
    "frac_below_mid": 0.4,
    "seed": 0,
}

__all__ = [
    "Model",
    "__version__",
    "decode_box",
    "detect",
    "encode_box",
    "evaluate",
    "generate_scene",
    "iou",
    "run",
    "simulate_proposals",
]
