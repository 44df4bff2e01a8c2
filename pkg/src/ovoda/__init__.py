"""Open-vocabulary 3D object and attribute detection pipeline."""

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
    hfa_average,
)
from .config import ProviderSpec, RunConfig, load_run_config
from .evaluation import (
    DetObject,
    EvalReport,
    GtObject,
    MatchConfig,
    ap_novel,
    average_precision,
    evaluate_detections,
    gt_attribute_items,
    match,
    nds_lite,
    sr_ad_od,
    sr_ad_only,
)
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
    Box2D,
    Box3D,
    CameraModel,
    PointCloud,
    SpatialRelation,
    bev_center_distance,
    center_distance_3d,
    combine,
    corners,
    crop_points,
    iou3d,
    pair_distance,
    project_box,
    spatial_relation,
)
from .losses import (
    LossWeights,
    attribute_alignment_loss,
    attribute_classification_loss,
    grad_check,
    object_alignment_loss,
    object_classification_loss,
    total_loss,
)
from .pipeline import PipelineSettings, build_pair_records, run_attribute_oracle, run_detection
from .proposals import NoiseConfig, ObjectProposal, load_proposals, synth_proposer, write_proposals
from .providers import (
    CachingProvider,
    EmbeddingProvider,
    RemoteProvider,
    SyntheticProvider,
    anchor,
)
from .scene_io import (
    Annotation,
    Frame,
    Scene,
    SceneDataset,
    SynthConfig,
    generate_synthetic,
    load_dataset,
    write_dataset,
)
from .vocab import (
    PromptConfig,
    Vocabulary,
    load_vocabulary,
    render_nonspatial,
    render_ovad_label,
    render_spatial,
    testing_vocab,
    training_vocab,
)

__version__ = "0.1.0"
