"""Shared fixtures: small synthetic scenes and oracle-mode helpers."""

from __future__ import annotations

import numpy as np
import pytest

from ovoda.alignment import ClassifiedObject, Distribution
from ovoda.events import FrameContext
from ovoda.scene_io import Frame, Scene, SynthConfig, generate_synthetic


def frame_context(scene_id: str, frame_index: int, frame: Frame) -> FrameContext:
    return FrameContext(
        scene_id=scene_id,
        frame_index=frame_index,
        timestamp_us=frame.timestamp_us,
        cameras=frame.cameras,
        cloud=frame.cloud,
    )


def onehot_classified(frame: Frame, labels: tuple[str, ...]) -> list[ClassifiedObject]:
    """Ground-truth objects wrapped as classified proposals with one-hot
    distributions (oracle mode)."""
    out = []
    for idx, ann in enumerate(frame.annotations):
        probs = np.zeros(len(labels))
        probs[labels.index(ann.class_name)] = 1.0
        out.append(ClassifiedObject(idx, ann.box, Distribution(probs, labels)))
    return out


@pytest.fixture(scope="session")
def small_dataset():
    cfg = SynthConfig(
        n_frames=4,
        n_objects=5,
        object_classes=("car", "truck", "pedestrian", "bicycle", "car"),
        moving_fraction=0.6,
        background_points=40,
        points_per_object=15,
    )
    return generate_synthetic(cfg, seed=21)
