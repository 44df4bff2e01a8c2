"""Visual-feature assembly, vocabulary classification, and novelty discovery.

The fusion step averages the available modality legs (per-camera image
embeddings plus the point embedding) and adds a small seeded mixing of the
camera view directions, then normalizes.  Averaging keeps the fused vector
aligned with the shared text-anchor space, which a generic random projection
of the concatenation would not; the view-direction term makes the output
sensitive to which cameras actually saw the box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyEvidence,
    ValidationError,
    VocabMismatch,
)
from .geometry import Box3D, iou3d
from .providers import anchor, l2_normalize


@dataclass(frozen=True)
class DiscoveryThresholds:
    """Gates for novel object/attribute discovery.

    Defaults: suppression IoU 0.2 against base-classified boxes, minimum
    objectness 0.8, minimum semantic score 0.5 (objects) and 0.5
    (attributes), pair distance gate 15 m.  All comparisons against the
    score gates are strict.
    """

    iou_suppression: float = 0.2
    min_objectness: float = 0.8
    min_semantic_score: float = 0.5
    min_attribute_score: float = 0.5
    max_pair_distance_m: float = 15.0
    pair_distance_3d: bool = False  # gate on full 3D centers instead of BEV

    def __post_init__(self):
        for name in ("iou_suppression", "min_objectness", "min_semantic_score", "min_attribute_score"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {v}")
        if self.max_pair_distance_m <= 0:
            raise ValidationError("max_pair_distance_m must be positive")


@dataclass(frozen=True)
class Distribution:
    """Probabilities over a named label list (sums to one)."""

    probs: np.ndarray
    vocab_ref: tuple[str, ...]

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 1 or len(p) != len(self.vocab_ref):
            raise DimensionMismatch(
                f"{len(p)} probabilities for {len(self.vocab_ref)} labels"
            )
        if np.any(p < 0) or abs(float(p.sum()) - 1.0) > 1e-9:
            raise ValidationError("probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "vocab_ref", tuple(self.vocab_ref))

    @property
    def argmax_index(self) -> int:
        return int(np.argmax(self.probs))

    @property
    def argmax_label(self) -> str:
        return self.vocab_ref[self.argmax_index]

    @property
    def max_prob(self) -> float:
        return float(self.probs[self.argmax_index])


@dataclass(frozen=True, eq=False)
class TextBank:
    """Label list plus its embedded matrix (K x dim), rows normalized."""

    labels: tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != len(self.labels):
            raise DimensionMismatch(f"matrix {m.shape} for {len(self.labels)} labels")
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "matrix", m)


def build_text_bank(provider, labels) -> TextBank:
    labels = tuple(labels)
    return TextBank(labels, provider.embed_text(list(labels)))


def classify(v: np.ndarray, bank: TextBank, temperature: float) -> Distribution:
    """Softmax over dot products between the (normalized) vector and the
    bank rows, sharpened by the temperature."""
    if temperature <= 0:
        raise ValidationError(f"temperature must be positive, got {temperature}")
    v = l2_normalize(np.asarray(v, dtype=np.float64))
    if v.shape[0] != bank.matrix.shape[1]:
        raise DimensionMismatch(
            f"vector dim {v.shape[0]} vs text dim {bank.matrix.shape[1]}"
        )
    logits = (bank.matrix @ v) / temperature
    logits -= logits.max()
    expd = np.exp(logits)
    return Distribution(expd / expd.sum(), bank.labels)


def hfa_average(d1: Distribution, d2: Distribution) -> Distribution:
    """Element-wise mean of two distributions over the same label list."""
    if d1.vocab_ref != d2.vocab_ref:
        raise VocabMismatch("cannot average distributions over different vocabularies")
    return Distribution((d1.probs + d2.probs) / 2.0, d1.vocab_ref)


def concat_fm_features(detector_feature: np.ndarray, fm_feature: np.ndarray) -> np.ndarray:
    """Detector-first concatenation [detector || foundation-model feature]."""
    det = np.asarray(detector_feature, dtype=np.float64).ravel()
    fm = np.asarray(fm_feature, dtype=np.float64).ravel()
    if not (np.all(np.isfinite(det)) and np.all(np.isfinite(fm))):
        raise ValidationError("features must be finite")
    return np.concatenate([det, fm])


# ---------------------------------------------------------------------------
# Multi-view fusion


class ViewMixer:
    """Seeded projection of camera view directions into embedding space.

    Column j of the mixing matrix is ``anchor(seed, "viewmix|j", dim)``;
    the contribution is scaled by ``gamma`` so the semantic consensus of the
    modality legs stays dominant.
    """

    def __init__(self, dim: int, n_cameras: int, seed: int, gamma: float = 0.05):
        self.dim = int(dim)
        self.n_cameras = int(n_cameras)
        self.seed = int(seed)
        self.gamma = float(gamma)
        cols = [anchor(seed, f"viewmix|{j}", dim) for j in range(2 * self.n_cameras)]
        self._W = np.stack(cols, axis=1) if cols else np.zeros((dim, 0))

    def view_tilt(self, encodings: np.ndarray) -> np.ndarray:
        return self.gamma * (self._W @ encodings)


def fuse_visual_object(
    camera_views: list[tuple[np.ndarray, float] | None],
    point_embed: np.ndarray | None,
    mixer: ViewMixer,
) -> np.ndarray:
    """Fuse per-camera image embeddings and the point embedding into one
    normalized vector.

    `camera_views` follows the run's fixed camera ordering; cameras that do
    not see the box hold None and contribute zeroed view encodings.  At
    least one modality must be present.
    """
    if len(camera_views) != mixer.n_cameras:
        raise DimensionMismatch(
            f"{len(camera_views)} camera slots for mixer with {mixer.n_cameras}"
        )
    legs: list[np.ndarray] = []
    encodings = np.zeros(2 * mixer.n_cameras, dtype=np.float64)
    for slot, view in enumerate(camera_views):
        if view is None:
            continue
        embed, azimuth = view
        legs.append(np.asarray(embed, dtype=np.float64))
        encodings[2 * slot] = math.cos(azimuth)
        encodings[2 * slot + 1] = math.sin(azimuth)
    if point_embed is not None:
        legs.append(np.asarray(point_embed, dtype=np.float64))
    if not legs:
        raise EmptyEvidence("no image or point evidence for this box")
    base = legs[0].copy()
    for leg in legs[1:]:
        base += leg
    base /= float(len(legs))
    fused = base + mixer.view_tilt(encodings)
    norm = math.sqrt(float(np.dot(fused, fused)))
    if norm == 0.0:
        raise EmptyEvidence("fused evidence is identically zero")
    return fused / norm


# ---------------------------------------------------------------------------
# Discovery filters


@dataclass
class ClassifiedObject:
    """A proposal with its class distribution and predicted label."""

    proposal_id: int
    box: Box3D
    dist: Distribution
    predicted_class: str = ""
    is_novel: bool = False

    def __post_init__(self):
        if not self.predicted_class:
            self.predicted_class = self.dist.argmax_label
        elif self.predicted_class != self.dist.argmax_label:
            raise ValidationError("predicted_class must equal the distribution argmax")


def discover_novel_objects(
    classified: list[ClassifiedObject],
    proposals,
    thresholds: DiscoveryThresholds,
    base_classes,
) -> set[int]:
    """Proposal ids passing all four novelty gates.

    A proposal is novel when it (i) overlaps no base-classified proposal at
    or above the suppression IoU, (ii) has objectness strictly above the
    objectness gate, (iii) has semantic score strictly above the semantic
    gate, and (iv) predicts a class outside the base set.  Base membership
    is taken from pre-discovery predicted labels.
    """
    base_classes = set(base_classes)
    objectness = {p.proposal_id: p.objectness for p in proposals}
    base_boxes = [c.box for c in classified if c.predicted_class in base_classes]
    discovered: set[int] = set()
    for c in classified:
        if c.predicted_class in base_classes:
            continue
        q = objectness.get(c.proposal_id)
        if q is None or not q > thresholds.min_objectness:
            continue
        if not c.dist.max_prob > thresholds.min_semantic_score:
            continue
        if any(iou3d(c.box, b) >= thresholds.iou_suppression for b in base_boxes):
            continue
        discovered.add(c.proposal_id)
    return discovered


def discover_novel_attributes(
    events,
    thresholds: DiscoveryThresholds,
    base_attributes,
) -> set[int]:
    """Event ids passing the attribute novelty gates.

    Mirrors object discovery with the attribute score gate in place of the
    semantic gate, base-attribute-classified event boxes as the suppression
    reference set, and no objectness gate.
    """
    base_attributes = set(base_attributes)
    base_boxes = [e.box for e in events if e.predicted_attr in base_attributes]
    discovered: set[int] = set()
    for e in events:
        if e.predicted_attr is None or e.dist is None:
            continue
        if e.predicted_attr in base_attributes:
            continue
        if not e.dist.max_prob > thresholds.min_attribute_score:
            continue
        if any(iou3d(e.box, b) >= thresholds.iou_suppression for b in base_boxes):
            continue
        discovered.add(e.event_id)
    return discovered
