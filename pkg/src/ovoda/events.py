"""Complex-event proposal generation and classification.

Non-spatial events follow an object track across the temporal window and
classify "<class> <attribute>" candidates; spatial events pair nearby
objects (both perspective directions) and classify the four relation
renderings.  Candidate scoring fuses image crops of the event box (original
and, with flip augmentation enabled, mirrored) with the point crop.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .alignment import (
    ClassifiedObject,
    Distribution,
    TextBank,
    ViewMixer,
    classify,
    fuse_visual_object,
    hfa_average,
)
from .errors import EmptyEvidence, OutOfOrderFrame, ValidationError
from .geometry import (
    Box3D,
    CameraModel,
    PointCloud,
    SpatialRelation,
    bev_center_distance,
    combine,
    crop_points,
    pair_distance,
    project_box,
    spatial_relation,
)
from .providers import EmbeddingProvider
from .vocab import PromptConfig, Vocabulary, render_nonspatial, render_spatial

TRACK_GATE_M = 2.0  # greedy nearest-center association gate
_MIN_RECT_AREA = 1.0  # px^2; smaller crops count as not visible


class EventKind(enum.Enum):
    NONSPATIAL = "nonspatial"
    SPATIAL = "spatial"


@dataclass(frozen=True, eq=False)
class FrameContext:
    """Per-frame sensor context needed to crop event evidence."""

    scene_id: str
    frame_index: int
    timestamp_us: int
    cameras: tuple[CameraModel, ...]
    cloud: PointCloud

    def __post_init__(self):
        object.__setattr__(
            self, "cameras", tuple(sorted(self.cameras, key=lambda c: c.camera_id))
        )


@dataclass
class ComplexEventProposal:
    kind: EventKind
    event_id: int
    member_ids: tuple[int, ...]
    member_classes: tuple[str, ...]
    box: Box3D
    crops: tuple[tuple[FrameContext, Box3D], ...]
    candidate_texts: tuple[str, ...]
    candidate_attrs: tuple[str, ...]
    geometric_relation: SpatialRelation | None = None
    track_id: int | None = None
    gt_keys: tuple[str, ...] | None = None
    dist: Distribution | None = None
    predicted_attr: str | None = None
    is_novel: bool = False

    def __post_init__(self):
        if not self.candidate_texts:
            raise ValidationError("event must carry at least one candidate text")
        if len(self.candidate_texts) != len(self.candidate_attrs):
            raise ValidationError("candidate texts and attribute labels must align")
        expected = 1 if self.kind is EventKind.NONSPATIAL else 2
        if len(self.member_ids) != expected:
            raise ValidationError(
                f"{self.kind.value} events carry {expected} member(s), got {len(self.member_ids)}"
            )

    @property
    def max_prob(self) -> float:
        return self.dist.max_prob if self.dist is not None else 0.0


# ---------------------------------------------------------------------------
# Temporal buffer with greedy track association


class TemporalBuffer:
    """Sliding window over the last T+1 frames of classified objects.

    Tracks extend greedily: each current object claims the nearest
    unclaimed track head from the previous frame within the 2 m gate;
    unmatched objects spawn fresh tracks.
    """

    def __init__(self, window_length: int):
        if window_length < 0:
            raise ValidationError("window length must be non-negative")
        self.T = int(window_length)
        self.window: deque[tuple[FrameContext, list[ClassifiedObject]]] = deque()
        self._frame_tracks: deque[dict[int, int]] = deque()  # proposal_id -> track_id
        self._next_track = 0
        self._last_timestamp: int | None = None

    def __len__(self) -> int:
        return len(self.window)

    def push_frame(self, ctx: FrameContext, classified: list[ClassifiedObject]) -> None:
        if self._last_timestamp is not None and ctx.timestamp_us <= self._last_timestamp:
            raise OutOfOrderFrame(
                f"frame at {ctx.timestamp_us} after {self._last_timestamp}"
            )
        self._last_timestamp = ctx.timestamp_us
        prev_heads: dict[int, Box3D] = {}
        if self.window:
            prev_ctx, prev_objs = self.window[-1]
            prev_map = self._frame_tracks[-1]
            for obj in prev_objs:
                prev_heads[prev_map[obj.proposal_id]] = obj.box
        assignment: dict[int, int] = {}
        claimed: set[int] = set()
        for obj in sorted(classified, key=lambda o: o.proposal_id):
            best_track, best_dist = None, TRACK_GATE_M
            for track_id in sorted(prev_heads):
                if track_id in claimed:
                    continue
                d = bev_center_distance(obj.box, prev_heads[track_id])
                if d < best_dist:
                    best_track, best_dist = track_id, d
            if best_track is None:
                best_track = self._next_track
                self._next_track += 1
            claimed.add(best_track)
            assignment[obj.proposal_id] = best_track
        self.window.append((ctx, list(classified)))
        self._frame_tracks.append(assignment)
        while len(self.window) > self.T + 1:
            self.window.popleft()
            self._frame_tracks.popleft()

    def track_history(self, track_id: int) -> list[tuple[FrameContext, ClassifiedObject]]:
        """Chronological (context, object) pairs of a track inside the window."""
        out = []
        for (ctx, objs), mapping in zip(self.window, self._frame_tracks):
            for obj in objs:
                if mapping.get(obj.proposal_id) == track_id:
                    out.append((ctx, obj))
                    break
        return out

    def current_tracks(self) -> list[tuple[int, ClassifiedObject]]:
        """(track_id, object) for the newest frame, ordered by proposal id."""
        if not self.window:
            return []
        ctx, objs = self.window[-1]
        mapping = self._frame_tracks[-1]
        return [(mapping[o.proposal_id], o) for o in sorted(objs, key=lambda o: o.proposal_id)]


# ---------------------------------------------------------------------------
# Event generation


def gen_nonspatial(
    buf: TemporalBuffer,
    vocab: Vocabulary,
    active_attributes: list[str],
    prompt_cfg: PromptConfig | None = None,
    start_id: int = 0,
) -> list[ComplexEventProposal]:
    """One proposal per current-frame track, with candidates for every
    compatible non-spatial attribute in the active vocabulary."""
    if not len(buf):
        return []
    prompt_cfg = prompt_cfg or PromptConfig()
    active = set(active_attributes)
    out: list[ComplexEventProposal] = []
    next_id = start_id
    for track_id, obj in buf.current_tracks():
        attrs = [a for a in vocab.nonspatial_attributes_for(obj.predicted_class) if a in active]
        if not attrs:
            continue
        history = buf.track_history(track_id)
        crops = tuple((ctx, member.box) for ctx, member in history)
        texts = tuple(
            render_nonspatial(obj.predicted_class, a, cfg=prompt_cfg) for a in attrs
        )
        out.append(
            ComplexEventProposal(
                kind=EventKind.NONSPATIAL,
                event_id=next_id,
                member_ids=(obj.proposal_id,),
                member_classes=(obj.predicted_class,),
                box=obj.box,
                crops=crops,
                candidate_texts=texts,
                candidate_attrs=tuple(attrs),
                track_id=track_id,
            )
        )
        next_id += 1
    return out


def gen_spatial(
    ctx: FrameContext,
    classified: list[ClassifiedObject],
    max_pair_distance: float,
    prompt_cfg: PromptConfig | None = None,
    start_id: int = 0,
    use_3d_distance: bool = False,
) -> list[ComplexEventProposal]:
    """Two proposals (one per perspective) for every unordered pair of
    objects within the distance gate."""
    prompt_cfg = prompt_cfg or PromptConfig()
    objs = sorted(classified, key=lambda o: o.proposal_id)
    out: list[ComplexEventProposal] = []
    next_id = start_id
    for i in range(len(objs)):
        for j in range(i + 1, len(objs)):
            a, b = objs[i], objs[j]
            if pair_distance(a.box, b.box, use_3d_distance) > max_pair_distance:
                continue
            if bev_center_distance(a.box, b.box) < 1e-9:
                continue  # relation undefined for coincident centers
            union = combine(a.box, b.box)
            for subject, reference in ((a, b), (b, a)):
                rel = spatial_relation(subject.box, reference.box)
                texts = tuple(
                    render_spatial(subject.predicted_class, reference.predicted_class, r, prompt_cfg)
                    for r in SpatialRelation
                )
                out.append(
                    ComplexEventProposal(
                        kind=EventKind.SPATIAL,
                        event_id=next_id,
                        member_ids=(subject.proposal_id, reference.proposal_id),
                        member_classes=(subject.predicted_class, reference.predicted_class),
                        box=union,
                        crops=((ctx, union),),
                        candidate_texts=texts,
                        candidate_attrs=tuple(r.phrase for r in SpatialRelation),
                        geometric_relation=rel,
                    )
                )
                next_id += 1
    return out


# ---------------------------------------------------------------------------
# Event classification


def _frame_views(
    ctx: FrameContext,
    box: Box3D,
    provider: EmbeddingProvider,
    hflip: bool,
) -> tuple[list, np.ndarray | None]:
    views: list = []
    for cam in ctx.cameras:
        rect = project_box(box, cam)
        if rect is None or rect.area < _MIN_RECT_AREA:
            views.append(None)
            continue
        embed = provider.embed_image(cam.image_id, rect.as_tuple(), hflip=hflip)
        views.append((embed, cam.azimuth))
    point_embed = None
    idx = crop_points(box, ctx.cloud)
    if len(idx):
        point_embed = provider.embed_points(ctx.cloud.points[idx])
    return views, point_embed


def fuse_event_evidence(
    ev: ComplexEventProposal,
    provider: EmbeddingProvider,
    mixer: ViewMixer,
    hflip: bool,
) -> np.ndarray | None:
    """Average the per-frame fused crop vectors over the event's crop plan.

    Returns None when no frame offers any evidence.
    """
    fused_frames = []
    for ctx, box in ev.crops:
        views, point_embed = _frame_views(ctx, box, provider, hflip)
        try:
            fused_frames.append(fuse_visual_object(views, point_embed, mixer))
        except EmptyEvidence:
            continue
    if not fused_frames:
        return None
    total = fused_frames[0].copy()
    for v in fused_frames[1:]:
        total += v
    return total / len(fused_frames)


def _swap_lateral(dist: Distribution, attrs: tuple[str, ...]) -> Distribution:
    try:
        li = attrs.index(SpatialRelation.ON_LEFT_OF.phrase)
        ri = attrs.index(SpatialRelation.ON_RIGHT_OF.phrase)
    except ValueError:
        return dist
    p = dist.probs.copy()
    p[li], p[ri] = p[ri], p[li]
    return Distribution(p, dist.vocab_ref)


def classify_event(
    ev: ComplexEventProposal,
    provider: EmbeddingProvider,
    mixer: ViewMixer,
    temperature: float,
    hfa: bool = True,
    hfa_swap_lateral: bool = False,
) -> ComplexEventProposal:
    """Attach the candidate distribution and predicted attribute.

    With flip augmentation the original and mirrored predictions are
    averaged; `hfa_swap_lateral` additionally swaps the left/right
    hypotheses of the mirrored pass (off by default).
    """
    bank = TextBank(ev.candidate_texts, provider.embed_text(list(ev.candidate_texts)))
    v = fuse_event_evidence(ev, provider, mixer, hflip=False)
    if v is None:
        n = len(ev.candidate_texts)
        ev.dist = Distribution(np.full(n, 1.0 / n), ev.candidate_texts)
        ev.predicted_attr = ev.candidate_attrs[ev.dist.argmax_index]
        return ev
    dist = classify(v, bank, temperature)
    if hfa:
        v_flip = fuse_event_evidence(ev, provider, mixer, hflip=True)
        if v_flip is not None:
            flip_dist = classify(v_flip, bank, temperature)
            if hfa_swap_lateral and ev.kind is EventKind.SPATIAL:
                flip_dist = _swap_lateral(flip_dist, ev.candidate_attrs)
            dist = hfa_average(dist, flip_dist)
    ev.dist = dist
    ev.predicted_attr = ev.candidate_attrs[dist.argmax_index]
    return ev
