"""End-to-end orchestration: proposals -> classification -> discovery ->
events -> event classification, plus the ground-truth pair builder and the
attribute-oracle pass used for isolated attribute evaluation.

All outputs are plain dict records ordered by (scene, frame, id) so the CLI
can serialize them canonically and runs are byte-reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .alignment import (
    ClassifiedObject,
    DiscoveryThresholds,
    Distribution,
    TextBank,
    ViewMixer,
    build_text_bank,
    classify,
    concat_fm_features,
    discover_novel_attributes,
    discover_novel_objects,
    fuse_visual_object,
)
from .errors import EmptyEvidence, ValidationError
from .events import (
    ComplexEventProposal,
    EventKind,
    FrameContext,
    TemporalBuffer,
    classify_event,
    gen_nonspatial,
    gen_spatial,
)
from .geometry import (
    Box3D,
    SpatialRelation,
    bev_center_distance,
    combine,
    crop_points,
    pair_distance,
    project_box,
    spatial_relation,
)
from .proposals import NoiseConfig, ObjectProposal, synth_proposer
from .providers import CachingProvider, EmbeddingProvider
from .scene_io import Frame, Scene, SceneDataset
from .vocab import (
    PromptConfig,
    Vocabulary,
    load_vocabulary,
    render_nonspatial,
    render_ovad_label,
    render_spatial,
)
from .vocab import testing_vocab as _testing_vocab
from .vocab import training_vocab as _training_vocab

_MIN_RECT_AREA = 1.0


@dataclass(frozen=True)
class PipelineSettings:
    """Knobs shared by the detection and oracle passes."""

    seed: int = 0
    temperature: float = 0.05
    temporal_window: int = 2
    hfa: bool = True
    hfa_swap_lateral: bool = False
    psp: bool = True
    trailing_period: bool = True
    fusion_gamma: float = 0.05
    use_training_vocab: bool = False
    thresholds: DiscoveryThresholds = field(default_factory=DiscoveryThresholds)

    def prompt_config(self) -> PromptConfig:
        return PromptConfig(
            perspective_prefix_enabled=self.psp,
            trailing_period=self.trailing_period,
        )


def _object_labels(vocab: Vocabulary, settings: PipelineSettings) -> list[str]:
    fn = _training_vocab if settings.use_training_vocab else _testing_vocab
    return fn(vocab, "object")


def _attribute_labels(vocab: Vocabulary, settings: PipelineSettings) -> list[str]:
    fn = _training_vocab if settings.use_training_vocab else _testing_vocab
    return fn(vocab, "attribute")


def _frame_context(scene: Scene, frame_index: int) -> FrameContext:
    frame = scene.frames[frame_index]
    return FrameContext(
        scene_id=scene.scene_id,
        frame_index=frame_index,
        timestamp_us=frame.timestamp_us,
        cameras=frame.cameras,
        cloud=frame.cloud,
    )


def _classify_proposal(
    ctx: FrameContext,
    box: Box3D,
    provider: EmbeddingProvider,
    mixer: ViewMixer,
    bank: TextBank,
    temperature: float,
) -> tuple[Distribution, np.ndarray | None]:
    """Fuse a proposal's evidence and classify it over the object bank.

    Returns (distribution, fused vector); proposals with no evidence get a
    uniform distribution and no vector.
    """
    views = []
    for cam in ctx.cameras:
        rect = project_box(box, cam)
        if rect is None or rect.area < _MIN_RECT_AREA:
            views.append(None)
            continue
        views.append((provider.embed_image(cam.image_id, rect.as_tuple()), cam.azimuth))
    point_embed = None
    idx = crop_points(box, ctx.cloud)
    if len(idx):
        point_embed = provider.embed_points(ctx.cloud.points[idx])
    try:
        fused = fuse_visual_object(views, point_embed, mixer)
    except EmptyEvidence:
        n = len(bank.labels)
        return Distribution(np.full(n, 1.0 / n), bank.labels), None
    return classify(fused, bank, temperature), fused


def _box_dict(box: Box3D) -> dict:
    return box.to_dict()


def run_detection(
    dataset: SceneDataset,
    provider: EmbeddingProvider,
    settings: PipelineSettings,
    proposals: dict[tuple[str, int], list[ObjectProposal]] | None = None,
    proposer_noise: NoiseConfig | None = None,
    vocabulary: Vocabulary | None = None,
) -> tuple[list[dict], list[dict]]:
    """Run the full open-vocabulary pipeline over a dataset.

    Proposals come from the supplied per-frame map or, when absent, from the
    synthetic proposer with `proposer_noise`.  Returns (detection records,
    event records) ordered by (scene, frame, id).
    """
    vocab = vocabulary or load_vocabulary(dataset.vocabulary_ref)
    provider = provider if isinstance(provider, CachingProvider) else CachingProvider(provider)
    obj_labels = _object_labels(vocab, settings)
    attr_labels = _attribute_labels(vocab, settings)
    bank = build_text_bank(provider, obj_labels)
    prompt_cfg = settings.prompt_config()
    base_classes = set(vocab.base_objects)
    base_attributes = set(vocab.base_attributes)
    noise = proposer_noise or NoiseConfig()

    detections: list[dict] = []
    event_records: list[dict] = []
    for scene in dataset.scenes:
        n_cameras = len(scene.frames[0].cameras) if scene.frames else 0
        mixer = ViewMixer(provider.dimension, n_cameras, settings.seed, settings.fusion_gamma)
        buffer = TemporalBuffer(settings.temporal_window)
        for fi, frame in enumerate(scene.frames):
            ctx = _frame_context(scene, fi)
            frame_props = (
                proposals.get((scene.scene_id, fi), [])
                if proposals is not None
                else synth_proposer(frame, scene.scene_id, fi, noise, settings.seed, provider)
            )
            frame_props = sorted(frame_props, key=lambda p: p.proposal_id)
            classified: list[ClassifiedObject] = []
            fused_dims: dict[int, int] = {}
            for prop in frame_props:
                dist, fused = _classify_proposal(
                    ctx, prop.box, provider, mixer, bank, settings.temperature
                )
                classified.append(ClassifiedObject(prop.proposal_id, prop.box, dist))
                if fused is not None and prop.detector_feature.size:
                    fused_dims[prop.proposal_id] = concat_fm_features(
                        prop.detector_feature, fused
                    ).shape[0]
            novel_ids = discover_novel_objects(
                classified, frame_props, settings.thresholds, base_classes
            )
            for c in classified:
                c.is_novel = c.proposal_id in novel_ids
            objectness = {p.proposal_id: p.objectness for p in frame_props}
            for c in classified:
                detections.append(
                    {
                        "scene": scene.scene_id,
                        "frame": fi,
                        "proposal_id": c.proposal_id,
                        "class_name": c.predicted_class,
                        "score": objectness[c.proposal_id] * c.dist.max_prob,
                        "objectness": objectness[c.proposal_id],
                        "semantic_score": c.dist.max_prob,
                        "is_novel": c.is_novel,
                        "box": _box_dict(c.box),
                        "fused_feature_dim": fused_dims.get(c.proposal_id),
                    }
                )
            buffer.push_frame(ctx, classified)
            events = gen_nonspatial(buffer, vocab, attr_labels, prompt_cfg)
            events += gen_spatial(
                ctx,
                classified,
                settings.thresholds.max_pair_distance_m,
                prompt_cfg,
                start_id=len(events),
                use_3d_distance=settings.thresholds.pair_distance_3d,
            )
            for ev in events:
                classify_event(
                    ev,
                    provider,
                    mixer,
                    settings.temperature,
                    hfa=settings.hfa,
                    hfa_swap_lateral=settings.hfa_swap_lateral,
                )
            novel_attr_ids = discover_novel_attributes(
                events, settings.thresholds, base_attributes
            )
            for ev in events:
                ev.is_novel = ev.event_id in novel_attr_ids
                event_records.append(_event_record(scene.scene_id, fi, ev))
    return detections, event_records


def _event_record(scene_id: str, frame_index: int, ev: ComplexEventProposal) -> dict:
    return {
        "scene": scene_id,
        "frame": frame_index,
        "event_id": ev.event_id,
        "kind": ev.kind.value,
        "member_ids": list(ev.member_ids),
        "member_classes": list(ev.member_classes),
        "predicted_attribute": ev.predicted_attr,
        "score": ev.max_prob,
        "geometric_relation": ev.geometric_relation.phrase if ev.geometric_relation else None,
        "is_novel_attribute": ev.is_novel,
        "box": _box_dict(ev.box),
        "gt_keys": list(ev.gt_keys) if ev.gt_keys else None,
    }


# ---------------------------------------------------------------------------
# Attribute oracle pass (ground-truth boxes and classes)


def run_attribute_oracle(
    dataset: SceneDataset,
    provider: EmbeddingProvider,
    settings: PipelineSettings,
    vocabulary: Vocabulary | None = None,
) -> list[dict]:
    """Classify attributes on ground-truth objects and pairs.

    Events are keyed to annotation instance ids so the isolated attribute
    success rate can align predictions with ground truth directly.  Pair
    events are emitted in the canonical annotation order only.
    """
    vocab = vocabulary or load_vocabulary(dataset.vocabulary_ref)
    provider = provider if isinstance(provider, CachingProvider) else CachingProvider(provider)
    attr_labels = _attribute_labels(vocab, settings)
    active = set(attr_labels)
    prompt_cfg = settings.prompt_config()
    records: list[dict] = []
    for scene in dataset.scenes:
        n_cameras = len(scene.frames[0].cameras) if scene.frames else 0
        mixer = ViewMixer(provider.dimension, n_cameras, settings.seed, settings.fusion_gamma)
        history: list[tuple[FrameContext, dict[str, Box3D]]] = []
        for fi, frame in enumerate(scene.frames):
            ctx = _frame_context(scene, fi)
            boxes = {a.instance_id: a.box for a in frame.annotations}
            history.append((ctx, boxes))
            window = history[-(settings.temporal_window + 1) :]
            events: list[ComplexEventProposal] = []
            for idx, ann in enumerate(frame.annotations):
                attrs = [
                    a for a in vocab.nonspatial_attributes_for(ann.class_name) if a in active
                ]
                if not attrs:
                    continue
                crops = tuple(
                    (past_ctx, past_boxes[ann.instance_id])
                    for past_ctx, past_boxes in window
                    if ann.instance_id in past_boxes
                )
                events.append(
                    ComplexEventProposal(
                        kind=EventKind.NONSPATIAL,
                        event_id=len(events),
                        member_ids=(idx,),
                        member_classes=(ann.class_name,),
                        box=ann.box,
                        crops=crops,
                        candidate_texts=tuple(
                            render_nonspatial(ann.class_name, a, cfg=prompt_cfg) for a in attrs
                        ),
                        candidate_attrs=tuple(attrs),
                        gt_keys=(ann.instance_id,),
                    )
                )
            anns = frame.annotations
            for i in range(len(anns)):
                for j in range(i + 1, len(anns)):
                    a, b = anns[i], anns[j]
                    d = pair_distance(a.box, b.box, settings.thresholds.pair_distance_3d)
                    if d > settings.thresholds.max_pair_distance_m or bev_center_distance(a.box, b.box) < 1e-9:
                        continue
                    union = combine(a.box, b.box)
                    events.append(
                        ComplexEventProposal(
                            kind=EventKind.SPATIAL,
                            event_id=len(events),
                            member_ids=(i, j),
                            member_classes=(a.class_name, b.class_name),
                            box=union,
                            crops=((ctx, union),),
                            candidate_texts=tuple(
                                render_spatial(a.class_name, b.class_name, r, prompt_cfg)
                                for r in SpatialRelation
                            ),
                            candidate_attrs=tuple(r.phrase for r in SpatialRelation),
                            geometric_relation=spatial_relation(a.box, b.box),
                            gt_keys=(a.instance_id, b.instance_id),
                        )
                    )
            for ev in events:
                classify_event(
                    ev,
                    provider,
                    mixer,
                    settings.temperature,
                    hfa=settings.hfa,
                    hfa_swap_lateral=settings.hfa_swap_lateral,
                )
                records.append(_event_record(scene.scene_id, fi, ev))
    return records


# ---------------------------------------------------------------------------
# Ground-truth pair dataset builder


def build_pair_records(
    dataset: SceneDataset,
    max_pair_distance: float = 15.0,
    use_3d_distance: bool = False,
) -> tuple[list[dict], dict[str, int]]:
    """Enumerate annotation pairs within [0, max_pair_distance] meters.

    Emits one record per unordered pair per frame (closed interval), with
    the axis-aligned union box, the geometric relation from the first
    annotation's perspective, and the rendered label text.  Also returns
    per-relation counts.
    """
    records: list[dict] = []
    counts: dict[str, int] = {}
    for scene in dataset.scenes:
        for fi, frame in enumerate(scene.frames):
            anns = frame.annotations
            for i in range(len(anns)):
                for j in range(i + 1, len(anns)):
                    a, b = anns[i], anns[j]
                    d = pair_distance(a.box, b.box, use_3d_distance)
                    if d > max_pair_distance or bev_center_distance(a.box, b.box) < 1e-9:
                        continue
                    rel = spatial_relation(a.box, b.box)
                    label = render_ovad_label(a.class_name, b.class_name, rel)
                    counts[rel.phrase] = counts.get(rel.phrase, 0) + 1
                    records.append(
                        {
                            "scene": scene.scene_id,
                            "frame": fi,
                            "id_i": a.instance_id,
                            "id_j": b.instance_id,
                            "class_i": a.class_name,
                            "class_j": b.class_name,
                            "relation": rel.phrase,
                            "label_text": label,
                            "distance_m": d,
                            "union_box": combine(a.box, b.box).to_dict(),
                        }
                    )
    return records, counts
