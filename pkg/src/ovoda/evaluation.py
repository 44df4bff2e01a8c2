"""Detection matching, average precision, the NDS-lite composite, and
attribute success rates.

AP integrates the 101-point interpolated precision envelope over the recall
grid {0.01, ..., 1.00} (the degenerate recall-0 sample is excluded), which
makes the 2-GT/1-TP/1-FP fixture exactly 0.5.  Under the center-distance
matcher, per-class AP is the mean over the configured distance thresholds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyNovelSet, ValidationError
from .geometry import (
    Box3D,
    bev_center_distance,
    combine,
    iou3d,
    pair_distance,
    spatial_relation,
)
from .vocab import Vocabulary

NDS_MAP_WEIGHT = 5.0
TP_ERROR_NAMES = ("ate", "ase", "aoe")
LOCALIZATION_IOU = 0.5  # event localization gate for the conditioned success rate


@dataclass(frozen=True)
class MatchConfig:
    """Matcher choice: BEV center distance (meters, one AP per threshold,
    averaged) or rotated 3D IoU (single threshold)."""

    kind: str = "center_distance"
    thresholds: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)

    def __post_init__(self):
        if self.kind not in ("center_distance", "iou"):
            raise ValidationError(f"unknown matcher kind {self.kind!r}")
        if not self.thresholds:
            raise ValidationError("at least one matching threshold is required")
        if any(t <= 0 for t in self.thresholds):
            raise ValidationError("matching thresholds must be positive")
        if list(self.thresholds) != sorted(self.thresholds):
            raise ValidationError("matching thresholds must be ascending")
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))

    def primary_threshold(self) -> float:
        """Threshold used for true-positive error statistics (2 m for the
        center matcher when available, following common practice)."""
        if self.kind == "center_distance" and 2.0 in self.thresholds:
            return 2.0
        return self.thresholds[-1 if self.kind == "center_distance" else 0]


@dataclass(frozen=True)
class GtObject:
    frame_key: tuple[str, int]
    class_name: str
    box: Box3D


@dataclass(frozen=True)
class DetObject:
    frame_key: tuple[str, int]
    class_name: str
    box: Box3D
    score: float


@dataclass
class MatchResult:
    """Greedy per-class assignment for one frame and one threshold."""

    tp_pairs: list[tuple[int, int]]  # (detection index, gt index)
    fp_detections: list[int]
    fn_ground_truths: list[int]


def _candidate_metric(det: DetObject, gt: GtObject, kind: str) -> float:
    if kind == "center_distance":
        return bev_center_distance(det.box, gt.box)
    return iou3d(det.box, gt.box)


def _passes(metric: float, threshold: float, kind: str) -> bool:
    return metric <= threshold if kind == "center_distance" else metric >= threshold


def match(
    gts: list[GtObject],
    dets: list[DetObject],
    kind: str,
    threshold: float,
) -> MatchResult:
    """Greedy per-class matching by descending detection score.

    Each detection claims its best unclaimed ground truth satisfying the
    criterion; a ground truth matches at most one detection.
    """
    tp_pairs: list[tuple[int, int]] = []
    fp: list[int] = []
    matched_gt: set[int] = set()
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    for di in order:
        det = dets[di]
        best_gi, best_metric = None, None
        for gi, gt in enumerate(gts):
            if gi in matched_gt or gt.class_name != det.class_name:
                continue
            if gt.frame_key != det.frame_key:
                continue
            m = _candidate_metric(det, gt, kind)
            if not _passes(m, threshold, kind):
                continue
            better = (
                best_metric is None
                or (kind == "center_distance" and m < best_metric)
                or (kind == "iou" and m > best_metric)
            )
            if better:
                best_gi, best_metric = gi, m
        if best_gi is None:
            fp.append(di)
        else:
            matched_gt.add(best_gi)
            tp_pairs.append((di, best_gi))
    fn = [gi for gi in range(len(gts)) if gi not in matched_gt]
    return MatchResult(tp_pairs, fp, fn)


def average_precision(scored_flags: list[tuple[float, bool]], n_gt: int) -> float:
    """AP from pooled (score, is_true_positive) pairs and the GT count."""
    if n_gt <= 0:
        raise ValidationError("average precision needs at least one ground truth")
    if not scored_flags:
        return 0.0
    ranked = sorted(range(len(scored_flags)), key=lambda i: (-scored_flags[i][0], i))
    tps = np.cumsum([1.0 if scored_flags[i][1] else 0.0 for i in ranked])
    fps = np.cumsum([0.0 if scored_flags[i][1] else 1.0 for i in ranked])
    recall = tps / n_gt
    precision = tps / np.maximum(tps + fps, 1e-12)
    total = 0.0
    for k in range(1, 101):
        r = k / 100.0
        mask = recall >= r - 1e-12
        total += float(precision[mask].max()) if np.any(mask) else 0.0
    return total / 100.0


def _class_match_stats(
    gts: list[GtObject],
    dets: list[DetObject],
    kind: str,
    threshold: float,
) -> tuple[list[tuple[float, bool]], list[tuple[DetObject, GtObject]]]:
    """Pooled (score, tp) flags plus matched pairs, frame by frame."""
    frames = sorted({g.frame_key for g in gts} | {d.frame_key for d in dets})
    flags: list[tuple[float, bool]] = []
    pairs: list[tuple[DetObject, GtObject]] = []
    for fk in frames:
        f_gts = [g for g in gts if g.frame_key == fk]
        f_dets = [d for d in dets if d.frame_key == fk]
        result = match(f_gts, f_dets, kind, threshold)
        tp_det_indices = {di for di, _ in result.tp_pairs}
        for di, det in enumerate(f_dets):
            flags.append((det.score, di in tp_det_indices))
        for di, gi in result.tp_pairs:
            pairs.append((f_dets[di], f_gts[gi]))
    return flags, pairs


def aligned_size_iou(size_a, size_b) -> float:
    """IoU of two boxes sharing center and heading (size-only overlap)."""
    inter = math.prod(min(a, b) for a, b in zip(size_a, size_b))
    va = math.prod(size_a)
    vb = math.prod(size_b)
    return inter / (va + vb - inter)


def yaw_error(a: float, b: float) -> float:
    """Absolute heading difference wrapped into [0, pi]."""
    d = abs(math.fmod(a - b, 2.0 * math.pi))
    return min(d, 2.0 * math.pi - d)


def tp_error_stats(pairs: list[tuple[DetObject, GtObject]]) -> dict[str, float]:
    """Mean translation / scale / orientation errors over matched pairs.

    With no matches every error takes its maximum penalty 1.0.
    """
    if not pairs:
        return {name: 1.0 for name in TP_ERROR_NAMES}
    ate = float(np.mean([bev_center_distance(d.box, g.box) for d, g in pairs]))
    ase = float(np.mean([1.0 - aligned_size_iou(d.box.size, g.box.size) for d, g in pairs]))
    aoe = float(np.mean([yaw_error(d.box.yaw, g.box.yaw) for d, g in pairs]))
    return {"ate": ate, "ase": ase, "aoe": aoe}


def nds_lite(map_value: float, tp_errors: dict[str, float]) -> float:
    """Composite of mAP and saturated true-positive error terms:
    (5 * mAP + sum_k (1 - min(1, err_k))) / (5 + #errors)."""
    if any(v < 0 for v in tp_errors.values()):
        raise ValidationError("TP errors must be non-negative")
    bonus = sum(1.0 - min(1.0, v) for v in tp_errors.values())
    return (NDS_MAP_WEIGHT * map_value + bonus) / (NDS_MAP_WEIGHT + len(tp_errors))


def ap_novel(per_class_ap: dict[str, float], novel_classes) -> float:
    """Mean AP over the novel classes present in the table."""
    novel = [c for c in novel_classes if c in per_class_ap]
    if not novel:
        raise EmptyNovelSet("no evaluated novel classes")
    return float(np.mean([per_class_ap[c] for c in novel]))


# ---------------------------------------------------------------------------
# Attribute success rates


@dataclass(frozen=True)
class GtAttributeItem:
    """One attribute-annotated ground-truth item (object or pair)."""

    kind: str  # "nonspatial" | "spatial"
    scene_id: str
    frame_index: int
    keys: tuple[str, ...]  # instance id(s)
    classes: tuple[str, ...]
    attribute: str
    box: Box3D

    @property
    def key(self) -> tuple:
        return (self.kind, self.scene_id, self.frame_index, self.keys)


@dataclass(frozen=True)
class PredictedEvent:
    """Event record as emitted by the detection pipeline."""

    kind: str
    scene_id: str
    frame_index: int
    classes: tuple[str, ...]
    attribute: str
    box: Box3D
    score: float = 0.0
    gt_keys: tuple[str, ...] | None = None


def gt_attribute_items(
    dataset,
    vocab: Vocabulary,
    max_pair_distance: float = 15.0,
    use_3d_distance: bool = False,
) -> list[GtAttributeItem]:
    """Attribute-annotated items: one per (annotation, non-spatial
    attribute) and one per ground-truth pair within the distance gate
    (canonical order: annotation file order)."""
    spatial_set = set(vocab.spatial_attributes())
    items: list[GtAttributeItem] = []
    for scene in dataset.scenes:
        for fi, frame in enumerate(scene.frames):
            anns = frame.annotations
            for ann in anns:
                for attr in ann.attributes:
                    if attr in spatial_set:
                        continue
                    items.append(
                        GtAttributeItem(
                            "nonspatial",
                            scene.scene_id,
                            fi,
                            (ann.instance_id,),
                            (ann.class_name,),
                            attr,
                            ann.box,
                        )
                    )
            for i in range(len(anns)):
                for j in range(i + 1, len(anns)):
                    a, b = anns[i], anns[j]
                    if pair_distance(a.box, b.box, use_3d_distance) > max_pair_distance:
                        continue
                    if bev_center_distance(a.box, b.box) < 1e-9:
                        continue
                    rel = spatial_relation(a.box, b.box)
                    items.append(
                        GtAttributeItem(
                            "spatial",
                            scene.scene_id,
                            fi,
                            (a.instance_id, b.instance_id),
                            (a.class_name, b.class_name),
                            rel.phrase,
                            combine(a.box, b.box),
                        )
                    )
    return items


def sr_ad_only(items: list[GtAttributeItem], predictions: dict[tuple, str]) -> float:
    """Fraction of attribute-annotated items whose keyed prediction carries
    the right attribute label."""
    if not items:
        return 0.0
    correct = sum(1 for item in items if predictions.get(item.key) == item.attribute)
    return correct / len(items)


def sr_ad_od(items: list[GtAttributeItem], events: list[PredictedEvent]) -> float:
    """Success rate conditioned on object category and localization.

    An item succeeds when some predicted event of the same kind in the same
    frame matches its classes, overlaps its box at IoU >= 0.5, and carries
    the right attribute.
    """
    if not items:
        return 0.0
    by_frame: dict[tuple, list[PredictedEvent]] = {}
    for ev in events:
        by_frame.setdefault((ev.kind, ev.scene_id, ev.frame_index), []).append(ev)
    correct = 0
    for item in items:
        candidates = by_frame.get((item.kind, item.scene_id, item.frame_index), [])
        for ev in candidates:
            if ev.classes != item.classes:
                continue
            if ev.attribute != item.attribute:
                continue
            if iou3d(ev.box, item.box) < LOCALIZATION_IOU:
                continue
            correct += 1
            break
    return correct / len(items)


# ---------------------------------------------------------------------------
# Report assembly


@dataclass
class EvalReport:
    per_class_ap: dict[str, float]
    map_value: float
    per_class_ap_novel_metric: dict[str, float]
    ap_novel_value: float | None
    tp_errors: dict[str, float]
    nds_lite_value: float
    sr_ad_only_value: float | None
    sr_ad_od_value: float | None
    counts: dict[str, int]
    skipped_classes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "per_class_ap": dict(sorted(self.per_class_ap.items())),
            "map": self.map_value,
            "per_class_ap_novel_metric": dict(sorted(self.per_class_ap_novel_metric.items())),
            "ap_novel": self.ap_novel_value,
            "tp_errors": self.tp_errors,
            "nds_lite": self.nds_lite_value,
            "sr_ad_only": self.sr_ad_only_value,
            "sr_ad_od": self.sr_ad_od_value,
            "counts": self.counts,
            "skipped_classes": self.skipped_classes,
        }

    def render_table(self) -> str:
        lines = [f"{'class':<24}{'AP':>8}"]
        for cls, ap in sorted(self.per_class_ap.items()):
            lines.append(f"{cls:<24}{ap:>8.4f}")
        lines.append("-" * 32)
        lines.append(f"{'mAP':<24}{self.map_value:>8.4f}")
        if self.ap_novel_value is not None:
            lines.append(f"{'AP (novel)':<24}{self.ap_novel_value:>8.4f}")
        lines.append(f"{'NDS-lite':<24}{self.nds_lite_value:>8.4f}")
        if self.sr_ad_only_value is not None:
            lines.append(f"{'SR (AD only)':<24}{self.sr_ad_only_value:>8.4f}")
        if self.sr_ad_od_value is not None:
            lines.append(f"{'SR (AD & OD)':<24}{self.sr_ad_od_value:>8.4f}")
        return "\n".join(lines)


def evaluate_detections(
    gts: list[GtObject],
    dets: list[DetObject],
    cfg: MatchConfig = MatchConfig(),
    novel_classes=(),
    novel_iou_threshold: float = 0.2,
) -> EvalReport:
    """Full object-detection report: per-class AP under the configured
    matcher (averaged over thresholds for the center matcher), novel-class
    AP under a rotated-IoU matcher, and NDS-lite over TP errors measured at
    the primary threshold."""
    classes = sorted({g.class_name for g in gts})
    skipped = sorted({d.class_name for d in dets} - set(classes))
    per_class_ap: dict[str, float] = {}
    for cls in classes:
        cls_gts = [g for g in gts if g.class_name == cls]
        cls_dets = [d for d in dets if d.class_name == cls]
        aps = []
        for thr in cfg.thresholds:
            flags, _ = _class_match_stats(cls_gts, cls_dets, cfg.kind, thr)
            aps.append(average_precision(flags, len(cls_gts)))
        per_class_ap[cls] = float(np.mean(aps))
    map_value = float(np.mean(list(per_class_ap.values()))) if per_class_ap else 0.0

    pairs_all: list = []
    for cls in classes:
        cls_gts = [g for g in gts if g.class_name == cls]
        cls_dets = [d for d in dets if d.class_name == cls]
        _, pairs = _class_match_stats(cls_gts, cls_dets, cfg.kind, cfg.primary_threshold())
        pairs_all.extend(pairs)
    errors = tp_error_stats(pairs_all)

    per_class_ap_novel: dict[str, float] = {}
    novel = [c for c in novel_classes if c in classes]
    for cls in novel:
        cls_gts = [g for g in gts if g.class_name == cls]
        cls_dets = [d for d in dets if d.class_name == cls]
        flags, _ = _class_match_stats(cls_gts, cls_dets, "iou", novel_iou_threshold)
        per_class_ap_novel[cls] = average_precision(flags, len(cls_gts))
    ap_n = ap_novel(per_class_ap_novel, novel) if novel else None

    counts = {
        "n_ground_truth": len(gts),
        "n_detections": len(dets),
        "n_classes": len(classes),
        "n_true_positive_primary": len(pairs_all),
    }
    return EvalReport(
        per_class_ap=per_class_ap,
        map_value=map_value,
        per_class_ap_novel_metric=per_class_ap_novel,
        ap_novel_value=ap_n,
        tp_errors=errors,
        nds_lite_value=nds_lite(map_value, errors),
        sr_ad_only_value=None,
        sr_ad_od_value=None,
        counts=counts,
        skipped_classes=skipped,
    )
