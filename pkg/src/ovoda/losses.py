"""Training losses: feature-alignment L1 terms, indicator-gated
cross-entropy classification terms, their weighted total, and a
finite-difference gradient checker.

All reductions are plain sums in fixed iteration order (weights absorb
scale), and cross-entropy clamps log arguments at 1e-12.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteGradient, ShapeMismatch, ValidationError
from .geometry import Box3D, iou3d

LOG_CLAMP = 1e-12
MEMBERSHIP_IOU = 0.5  # a box "belongs to" a reference set above this overlap


@dataclass(frozen=True)
class LossWeights:
    object_alignment: float = 1.0
    object_classification: float = 1.0
    attribute_alignment: float = 1.0
    attribute_classification: float = 1.0

    def __post_init__(self):
        for name in (
            "object_alignment",
            "object_classification",
            "attribute_alignment",
            "attribute_classification",
        ):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValidationError(f"loss weight {name} must be finite and >= 0")


def _as_batch(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ShapeMismatch(f"{name} contains non-finite entries")
    return arr


def _l1_sum(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ShapeMismatch(f"feature batches disagree: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).sum())


def _l1_grad(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sign(a - b)


def object_alignment_loss(visual: np.ndarray, detector: np.ndarray) -> float:
    """Sum of element-wise absolute differences between fused visual
    features and detector features (class-agnostic distillation)."""
    return _l1_sum(_as_batch(visual, "visual"), _as_batch(detector, "detector"))


def object_alignment_grad(visual: np.ndarray, detector: np.ndarray) -> np.ndarray:
    """d(loss)/d(visual); the detector gradient is its negation."""
    return _l1_grad(_as_batch(visual, "visual"), _as_batch(detector, "detector"))


def attribute_alignment_loss(event_visual: np.ndarray, backbone: np.ndarray) -> float:
    """L1 alignment of event visual features to point-backbone features."""
    return _l1_sum(_as_batch(event_visual, "event_visual"), _as_batch(backbone, "backbone"))


def attribute_alignment_grad(event_visual: np.ndarray, backbone: np.ndarray) -> np.ndarray:
    return _l1_grad(_as_batch(event_visual, "event_visual"), _as_batch(backbone, "backbone"))


def membership_indicator(box: Box3D, reference_boxes) -> float:
    """1.0 when the box overlaps any reference box at IoU >= 0.5, else 0.0."""
    return 1.0 if any(iou3d(box, b) >= MEMBERSHIP_IOU for b in reference_boxes) else 0.0


def cross_entropy(probs: np.ndarray, onehot: np.ndarray) -> float:
    p = np.asarray(probs, dtype=np.float64)
    h = np.asarray(onehot, dtype=np.float64)
    if p.shape != h.shape:
        raise ShapeMismatch(f"probs {p.shape} vs onehot {h.shape}")
    return float(-(h * np.log(np.clip(p, LOG_CLAMP, None))).sum())


def _gated_ce(indicators, dists, onehots) -> float:
    dists = _as_batch(dists, "dists")
    onehots = _as_batch(onehots, "onehots")
    if dists.shape != onehots.shape or len(indicators) != dists.shape[0]:
        raise ShapeMismatch(
            f"indicators {len(indicators)}, dists {dists.shape}, onehots {onehots.shape}"
        )
    total = 0.0
    for g, p, h in zip(indicators, dists, onehots):
        if g:
            total += cross_entropy(p, h)
    return total


def object_classification_loss(
    discovered_boxes, base_boxes, dists, onehots
) -> float:
    """Cross-entropy over discovered proposals whose box lies within the
    base-box set; proposals outside it contribute zero."""
    indicators = [membership_indicator(b, base_boxes) for b in discovered_boxes]
    return _gated_ce(indicators, dists, onehots)


def attribute_classification_loss(
    discovered_boxes, base_attribute_boxes, dists, onehots
) -> float:
    """Mirror of the object term against base-attribute event boxes."""
    indicators = [membership_indicator(b, base_attribute_boxes) for b in discovered_boxes]
    return _gated_ce(indicators, dists, onehots)


def total_loss(
    object_alignment: float,
    object_classification: float,
    attribute_alignment: float,
    attribute_classification: float,
    weights: LossWeights,
) -> float:
    return (
        weights.object_alignment * object_alignment
        + weights.object_classification * object_classification
        + weights.attribute_alignment * attribute_alignment
        + weights.attribute_classification * attribute_classification
    )


# ---------------------------------------------------------------------------
# Differentiable composed forms (for gradient checking and training views)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_ce_value_and_grad(logits: np.ndarray, onehot: np.ndarray):
    """Cross-entropy through softmax; gradient wrt logits is p - onehot."""
    p = softmax(np.asarray(logits, dtype=np.float64))
    value = cross_entropy(p, onehot)
    return value, p - np.asarray(onehot, dtype=np.float64)


def classification_value_and_grad(
    features: np.ndarray,
    text_matrix: np.ndarray,
    temperature: float,
    onehots: np.ndarray,
    indicators,
):
    """Indicator-gated CE over softmax(features @ text.T / temperature).

    Returns (value, d value / d features).
    """
    V = _as_batch(features, "features")
    T = _as_batch(text_matrix, "text_matrix")
    H = _as_batch(onehots, "onehots")
    if V.shape[1] != T.shape[1]:
        raise ShapeMismatch(f"feature dim {V.shape[1]} vs text dim {T.shape[1]}")
    logits = (V @ T.T) / temperature
    P = softmax(logits)
    value = 0.0
    grad = np.zeros_like(V)
    for i, g in enumerate(indicators):
        if not g:
            continue
        value += cross_entropy(P[i], H[i])
        grad[i] = ((P[i] - H[i]) @ T) / temperature
    return value, grad


def alignment_value_and_grad(a: np.ndarray, b: np.ndarray):
    a = _as_batch(a, "a")
    b = _as_batch(b, "b")
    return _l1_sum(a, b), _l1_grad(a, b)


def grad_check(value_and_grad, x0: np.ndarray, h: float = 1e-5) -> float:
    """Max relative error between the analytic gradient and central finite
    differences, checked coordinate by coordinate."""
    x0 = np.asarray(x0, dtype=np.float64)
    _, grad = value_and_grad(x0)
    grad = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("analytic gradient has non-finite entries")
    worst = 0.0
    flat = x0.ravel()
    for k in range(flat.size):
        xp = x0.copy().ravel()
        xm = x0.copy().ravel()
        xp[k] += h
        xm[k] -= h
        fp, _ = value_and_grad(xp.reshape(x0.shape))
        fm, _ = value_and_grad(xm.reshape(x0.shape))
        fd = (fp - fm) / (2.0 * h)
        if not math.isfinite(fd):
            raise NonFiniteGradient(f"finite difference at coordinate {k} is non-finite")
        g = float(grad.ravel()[k])
        denom = max(abs(fd), abs(g), 1e-8)
        worst = max(worst, abs(fd - g) / denom)
    return float(worst)
