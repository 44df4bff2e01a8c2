"""Class-agnostic object proposals: external ingestion (JSONL) and a
synthetic proposer that perturbs ground truth.

The synthetic proposer stands in for a trained class-agnostic detector: it
emits one proposal per annotation with seeded zero-mean noise on center,
size, and yaw, plus a configured number of random background proposals.
Objectness is ``max(0, min(1, 1 - kappa * ||perturbation||))`` where the
perturbation vector stacks the center offset (m), size offset (m), and yaw
offset (rad); background objectness is drawn from [0, 0.3].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ValidationError
from .geometry import Box3D, iou3d
from .providers import EmbeddingProvider, l2_normalize
from .scene_io import Frame, SceneDataset, canonical_json, quantize, quantize_yaw

MAX_PROPOSALS_PER_FRAME = 128  # matches the detector's object-query budget


@dataclass(frozen=True)
class ObjectProposal:
    box: Box3D
    objectness: float
    detector_feature: np.ndarray
    frame_ref: tuple[str, int]
    proposal_id: int

    def __post_init__(self):
        if not 0.0 <= self.objectness <= 1.0:
            raise ValidationError(f"objectness must be in [0, 1], got {self.objectness}")
        feat = np.asarray(self.detector_feature, dtype=np.float64).ravel()
        if feat.size and not np.all(np.isfinite(feat)):
            raise ValidationError("detector feature must be finite")
        object.__setattr__(self, "detector_feature", feat)
        object.__setattr__(self, "objectness", float(self.objectness))


@dataclass(frozen=True)
class NoiseConfig:
    """Perturbation scales for the synthetic proposer."""

    center_sigma_m: float = 0.0
    size_sigma_m: float = 0.0
    yaw_sigma_rad: float = 0.0
    feature_noise: float = 0.0
    background_per_frame: int = 2
    kappa: float = 1.0

    def __post_init__(self):
        for name in ("center_sigma_m", "size_sigma_m", "yaw_sigma_rad", "feature_noise", "kappa"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.background_per_frame < 0:
            raise ConfigError("background_per_frame must be non-negative")


def cap_proposals(props: list[ObjectProposal]) -> list[ObjectProposal]:
    """Prune to the per-frame budget, keeping the highest objectness
    (ties broken by proposal id for determinism)."""
    if len(props) <= MAX_PROPOSALS_PER_FRAME:
        return props
    ranked = sorted(props, key=lambda p: (-p.objectness, p.proposal_id))
    keep = {p.proposal_id for p in ranked[:MAX_PROPOSALS_PER_FRAME]}
    return [p for p in props if p.proposal_id in keep]


def synth_proposer(
    frame: Frame,
    scene_id: str,
    frame_index: int,
    noise: NoiseConfig,
    seed: int,
    provider: EmbeddingProvider | None = None,
    feature_dim: int = 256,
) -> list[ObjectProposal]:
    """One perturbed proposal per annotation plus background proposals.

    Detector features anchor on the true class text (via the provider) with
    optional noise, mimicking a detector distilled toward the shared
    embedding space.  Deterministic in (frame identity, noise, seed).
    """
    rng = np.random.default_rng([int(seed), hash_key(scene_id), frame_index])
    out: list[ObjectProposal] = []
    arena = max((math.hypot(a.box.center[0], a.box.center[1]) for a in frame.annotations), default=20.0)
    for idx, ann in enumerate(frame.annotations):
        d_center = rng.normal(0.0, noise.center_sigma_m, size=3) if noise.center_sigma_m else np.zeros(3)
        d_size = rng.normal(0.0, noise.size_sigma_m, size=3) if noise.size_sigma_m else np.zeros(3)
        d_yaw = float(rng.normal(0.0, noise.yaw_sigma_rad)) if noise.yaw_sigma_rad else 0.0
        size = tuple(max(0.05, s + ds) for s, ds in zip(ann.box.size, d_size))
        box = Box3D(
            tuple(c + dc for c, dc in zip(ann.box.center, d_center)),
            size,
            ann.box.yaw + d_yaw,
        )
        pert = math.sqrt(float(np.dot(d_center, d_center)) + float(np.dot(d_size, d_size)) + d_yaw**2)
        objectness = max(0.0, min(1.0, 1.0 - noise.kappa * pert))
        if provider is not None:
            base = provider.embed_text([ann.class_name])[0]
        else:
            base = np.zeros(feature_dim)
        if noise.feature_noise > 0:
            base = l2_normalize(base + noise.feature_noise * rng.normal(0.0, 1.0, size=base.shape))
        out.append(ObjectProposal(box, objectness, base, (scene_id, frame_index), idx))
    next_id = len(frame.annotations)
    for _ in range(noise.background_per_frame):
        for _attempt in range(100):
            center = (
                float(rng.uniform(-arena, arena)),
                float(rng.uniform(-arena, arena)),
                float(rng.uniform(0.3, 1.5)),
            )
            box = Box3D(center, tuple(rng.uniform(0.5, 3.0, size=3)), float(rng.uniform(-3.1, 3.1)))
            if all(iou3d(box, a.box) < 0.05 for a in frame.annotations):
                break
        else:
            continue
        feat = np.zeros(provider.dimension if provider is not None else feature_dim)
        out.append(
            ObjectProposal(box, float(rng.uniform(0.0, 0.3)), feat, (scene_id, frame_index), next_id)
        )
        next_id += 1
    return cap_proposals(out)


def hash_key(s: str) -> int:
    """Stable small integer from a string (for RNG stream derivation)."""
    h = 0
    for ch in s:
        h = (h * 131 + ord(ch)) % (2**31 - 1)
    return h


# ---------------------------------------------------------------------------
# JSONL ingestion


def write_proposals(proposals: dict[tuple[str, int], list[ObjectProposal]], path) -> None:
    """One JSON record per line, ordered by (scene, frame, proposal id)."""
    lines = []
    for (scene_id, frame_idx) in sorted(proposals):
        for p in proposals[(scene_id, frame_idx)]:
            lines.append(
                canonical_json(
                    {
                        "scene": scene_id,
                        "frame": frame_idx,
                        "proposal_id": p.proposal_id,
                        "box": p.box.to_dict(),
                        "objectness": p.objectness,
                        "feature": [float(v) for v in p.detector_feature],
                    }
                )
            )
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_proposals(path, dataset: SceneDataset) -> dict[tuple[str, int], list[ObjectProposal]]:
    """Validated per-frame proposal lists aligned to dataset frames."""
    frames = {
        (scene.scene_id, idx)
        for scene in dataset.scenes
        for idx in range(len(scene.frames))
    }
    out: dict[tuple[str, int], list[ObjectProposal]] = {}
    feature_dim: int | None = None
    for lineno, line in enumerate(Path(path).read_text().splitlines()):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"proposals line {lineno + 1}: invalid JSON ({exc})") from None
        key = (str(rec.get("scene")), int(rec.get("frame", -1)))
        if key not in frames:
            raise ValidationError(f"proposals line {lineno + 1}: unknown frame {key}")
        feat = np.asarray(rec.get("feature", []), dtype=np.float64)
        if feature_dim is None:
            feature_dim = feat.size
        elif feat.size != feature_dim:
            raise ValidationError(
                f"proposals line {lineno + 1}: feature dim {feat.size} != {feature_dim}"
            )
        objectness = rec.get("objectness")
        if not isinstance(objectness, (int, float)) or not 0.0 <= float(objectness) <= 1.0:
            raise ValidationError(f"proposals line {lineno + 1}: objectness out of range")
        try:
            box = Box3D.from_dict(rec["box"])
        except (KeyError, TypeError, ValidationError) as exc:
            raise ValidationError(f"proposals line {lineno + 1}: bad box ({exc})") from None
        prop = ObjectProposal(box, float(objectness), feat, key, int(rec.get("proposal_id", 0)))
        out.setdefault(key, []).append(prop)
    for key, plist in out.items():
        ids = [p.proposal_id for p in plist]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate proposal ids in frame {key}")
        out[key] = cap_proposals(plist)
    return out
