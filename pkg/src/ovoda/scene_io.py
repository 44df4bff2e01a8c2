"""Scene dataset schema ("ovoda-scene/1"), canonical serialization, and the
deterministic synthetic scene generator.

The file schema is a flat JSON document per dataset: scenes hold ordered
frames; frames hold cameras, a point array, and annotations.  Cameras are
stored as pinhole parameters plus a planar pose (position + azimuth) and are
expanded to full intrinsics/extrinsics at load, which keeps rotation blocks
exactly orthonormal after 6-decimal float quantization.

Serialization is canonical: keys sorted, floats fixed to 6 decimals, so equal
datasets produce identical bytes.  The generator quantizes every float it
emits to the same grid, making write -> load -> write a byte-level fixpoint.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, SchemaError, ValidationError
from .geometry import (
    Box3D,
    CameraModel,
    PointCloud,
    bev_center_distance,
    bev_iou,
    combine,
    project_box,
    spatial_relation,
)
from .providers import encode_synth_image_id
from .vocab import Vocabulary, load_vocabulary, render_ovad_label

SCENE_SCHEMA = "ovoda-scene/1"
SPLITS = ("train", "val", "test")


# ---------------------------------------------------------------------------
# Dataset types


@dataclass(frozen=True)
class Annotation:
    instance_id: str
    class_name: str
    box: Box3D
    attributes: tuple[str, ...] = ()
    velocity: tuple[float, float] | None = None

    def __post_init__(self):
        if not self.class_name:
            raise ValidationError("annotation class_name must be non-empty")
        object.__setattr__(self, "attributes", tuple(self.attributes))
        if self.velocity is not None:
            object.__setattr__(self, "velocity", (float(self.velocity[0]), float(self.velocity[1])))


@dataclass(frozen=True, eq=False)
class Frame:
    timestamp_us: int
    cameras: tuple[CameraModel, ...]
    cloud: PointCloud
    annotations: tuple[Annotation, ...]

    def __post_init__(self):
        ids = [c.camera_id for c in self.cameras]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate camera ids in frame: {ids}")
        object.__setattr__(self, "cameras", tuple(self.cameras))
        object.__setattr__(self, "annotations", tuple(self.annotations))


@dataclass(frozen=True, eq=False)
class Scene:
    scene_id: str
    frames: tuple[Frame, ...]

    def __post_init__(self):
        ts = [f.timestamp_us for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValidationError(f"timestamps not strictly increasing in {self.scene_id}")
        object.__setattr__(self, "frames", tuple(self.frames))


@dataclass(frozen=True, eq=False)
class SceneDataset:
    scenes: tuple[Scene, ...]
    split: str
    vocabulary_ref: str

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValidationError(f"split must be one of {SPLITS}, got {self.split!r}")
        object.__setattr__(self, "scenes", tuple(self.scenes))


# ---------------------------------------------------------------------------
# Canonical JSON


def _canonical(obj) -> str:
    if isinstance(obj, dict):
        inner = ",".join(
            f"{json.dumps(str(k))}:{_canonical(v)}" for k, v in sorted(obj.items())
        )
        return "{" + inner + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_canonical(v) for v in obj) + "]"
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if v == 0.0:
            v = 0.0  # collapse -0.0
        return f"{v:.6f}"
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot canonicalize {type(obj)!r}")


def canonical_json(obj) -> str:
    """Deterministic JSON: sorted keys, floats fixed to 6 decimals."""
    return _canonical(obj)


def quantize(v: float) -> float:
    """Snap a float to the canonical 6-decimal grid."""
    return round(float(v), 6)


def quantize_yaw(yaw: float) -> float:
    """Quantize while staying inside (-pi, pi]."""
    q = quantize(yaw)
    limit = 3.141592
    return min(max(q, -limit), limit)


# ---------------------------------------------------------------------------
# Schema mapping


def _camera_to_dict(cam: CameraModel) -> dict:
    K = cam.intrinsics
    E = cam.extrinsics
    R = E[:3, :3]
    pos = -R.T @ E[:3, 3]
    forward = R[2]
    return {
        "camera_id": cam.camera_id,
        "image_id": cam.image_id,
        "width": cam.image_size[0],
        "height": cam.image_size[1],
        "fx": float(K[0, 0]),
        "fy": float(K[1, 1]),
        "cx": float(K[0, 2]),
        "cy": float(K[1, 2]),
        "position": [float(v) for v in pos],
        "azimuth": math.atan2(float(forward[1]), float(forward[0])),
    }


def camera_from_pose(
    camera_id: str,
    fx: float,
    fy: float,
    cx: float,
    cy: float,
    width: int,
    height: int,
    position,
    azimuth: float,
    image_id: str = "",
) -> CameraModel:
    """Build a horizontal-axis pinhole camera from planar pose parameters."""
    c, s = math.cos(azimuth), math.sin(azimuth)
    right = np.array([s, -c, 0.0])
    down = np.array([0.0, 0.0, -1.0])
    forward = np.array([c, s, 0.0])
    R = np.stack([right, down, forward])
    E = np.eye(4)
    E[:3, :3] = R
    E[:3, 3] = -R @ np.asarray(position, dtype=np.float64)
    K = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
    return CameraModel(camera_id, K, E, (width, height), image_id=image_id)


def dataset_to_dict(ds: SceneDataset) -> dict:
    return {
        "schema": SCENE_SCHEMA,
        "split": ds.split,
        "vocabulary_ref": ds.vocabulary_ref,
        "scenes": [
            {
                "scene_id": sc.scene_id,
                "frames": [
                    {
                        "timestamp_us": fr.timestamp_us,
                        "cameras": [_camera_to_dict(c) for c in fr.cameras],
                        "points": fr.cloud.points.tolist(),
                        "annotations": [
                            {
                                "instance_id": a.instance_id,
                                "class_name": a.class_name,
                                "box": a.box.to_dict(),
                                "attributes": list(a.attributes),
                                "velocity": list(a.velocity) if a.velocity is not None else None,
                            }
                            for a in fr.annotations
                        ],
                    }
                    for fr in sc.frames
                ],
            }
            for sc in ds.scenes
        ],
    }


def write_dataset(ds: SceneDataset, path) -> None:
    Path(path).write_text(canonical_json(dataset_to_dict(ds)))


class _Reader:
    """Schema walker producing SchemaError with a JSON-pointer path."""

    def __init__(self, doc):
        self.doc = doc

    @staticmethod
    def need(obj, key, pointer):
        if not isinstance(obj, dict):
            raise SchemaError(pointer, f"expected object, got {type(obj).__name__}")
        if key not in obj:
            raise SchemaError(f"{pointer}/{key}", "missing field")
        return obj[key]

    @staticmethod
    def as_number(value, pointer) -> float:
        if isinstance(value, bool):
            raise SchemaError(pointer, "expected number, got bool")
        if isinstance(value, (int, float)):
            return float(value)
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                raise SchemaError(pointer, f"expected number, got {value!r}") from None
        raise SchemaError(pointer, f"expected number, got {type(value).__name__}")

    @staticmethod
    def as_list(value, pointer) -> list:
        if not isinstance(value, list):
            raise SchemaError(pointer, f"expected array, got {type(value).__name__}")
        return value

    @staticmethod
    def as_str(value, pointer) -> str:
        if not isinstance(value, str):
            raise SchemaError(pointer, f"expected string, got {type(value).__name__}")
        return value


def _annotation_from_dict(d, pointer) -> Annotation:
    r = _Reader
    box_d = r.need(d, "box", pointer)
    bp = f"{pointer}/box"
    center = [r.as_number(v, f"{bp}/center/{i}") for i, v in enumerate(r.as_list(r.need(box_d, "center", bp), f"{bp}/center"))]
    size = [r.as_number(v, f"{bp}/size/{i}") for i, v in enumerate(r.as_list(r.need(box_d, "size", bp), f"{bp}/size"))]
    yaw = r.as_number(r.need(box_d, "yaw", bp), f"{bp}/yaw")
    instance_id = r.as_str(r.need(d, "instance_id", pointer), f"{pointer}/instance_id")
    class_name = r.as_str(r.need(d, "class_name", pointer), f"{pointer}/class_name")
    attributes = [
        r.as_str(a, f"{pointer}/attributes/{i}")
        for i, a in enumerate(r.as_list(d.get("attributes", []), f"{pointer}/attributes"))
    ]
    vel = d.get("velocity")
    velocity = None
    if vel is not None:
        vel = r.as_list(vel, f"{pointer}/velocity")
        velocity = (r.as_number(vel[0], f"{pointer}/velocity/0"), r.as_number(vel[1], f"{pointer}/velocity/1"))
    try:
        box = Box3D(tuple(center), tuple(size), yaw)
    except ValidationError as exc:
        raise ValidationError(f"annotation {instance_id!r}: {exc}") from None
    return Annotation(instance_id, class_name, box, tuple(attributes), velocity)


def load_dataset(path, vocabulary: Vocabulary | None = None) -> SceneDataset:
    """Load and fully validate a dataset file.

    Annotation classes and attributes are checked against the vocabulary;
    when none is supplied the file's `vocabulary_ref` is resolved against
    the bundled presets.
    """
    doc = json.loads(Path(path).read_text())
    r = _Reader
    if r.need(doc, "schema", "") != SCENE_SCHEMA:
        raise SchemaError("/schema", f"expected {SCENE_SCHEMA!r}, got {doc.get('schema')!r}")
    split = r.as_str(r.need(doc, "split", ""), "/split")
    vocab_ref = r.as_str(r.need(doc, "vocabulary_ref", ""), "/vocabulary_ref")
    if vocabulary is None:
        vocabulary = load_vocabulary(vocab_ref)
    known = set(vocabulary.all_objects())
    scenes = []
    for si, sd in enumerate(r.as_list(r.need(doc, "scenes", ""), "/scenes")):
        sp = f"/scenes/{si}"
        scene_id = r.as_str(r.need(sd, "scene_id", sp), f"{sp}/scene_id")
        frames = []
        for fi, fd in enumerate(r.as_list(r.need(sd, "frames", sp), f"{sp}/frames")):
            fp = f"{sp}/frames/{fi}"
            ts_raw = r.need(fd, "timestamp_us", fp)
            if isinstance(ts_raw, bool) or not isinstance(ts_raw, int):
                raise SchemaError(f"{fp}/timestamp_us", "expected integer")
            cameras = []
            for ci, cd in enumerate(r.as_list(r.need(fd, "cameras", fp), f"{fp}/cameras")):
                cp = f"{fp}/cameras/{ci}"
                try:
                    cameras.append(
                        camera_from_pose(
                            r.as_str(r.need(cd, "camera_id", cp), f"{cp}/camera_id"),
                            r.as_number(r.need(cd, "fx", cp), f"{cp}/fx"),
                            r.as_number(r.need(cd, "fy", cp), f"{cp}/fy"),
                            r.as_number(r.need(cd, "cx", cp), f"{cp}/cx"),
                            r.as_number(r.need(cd, "cy", cp), f"{cp}/cy"),
                            int(r.as_number(r.need(cd, "width", cp), f"{cp}/width")),
                            int(r.as_number(r.need(cd, "height", cp), f"{cp}/height")),
                            [r.as_number(v, f"{cp}/position/{i}") for i, v in enumerate(r.as_list(r.need(cd, "position", cp), f"{cp}/position"))],
                            r.as_number(r.need(cd, "azimuth", cp), f"{cp}/azimuth"),
                            image_id=r.as_str(cd.get("image_id", ""), f"{cp}/image_id"),
                        )
                    )
                except ValidationError as exc:
                    raise ValidationError(f"scene {scene_id} frame {fi} camera {ci}: {exc}") from None
            pts_raw = r.as_list(r.need(fd, "points", fp), f"{fp}/points")
            try:
                cloud = PointCloud(np.asarray(pts_raw, dtype=np.float64).reshape(-1, 3))
            except (ValueError, ValidationError) as exc:
                raise ValidationError(f"scene {scene_id} frame {fi}: bad points ({exc})") from None
            annotations = []
            for ai, ad in enumerate(r.as_list(r.need(fd, "annotations", fp), f"{fp}/annotations")):
                ann = _annotation_from_dict(ad, f"{fp}/annotations/{ai}")
                if ann.class_name not in known:
                    raise ValidationError(
                        f"scene {scene_id} frame {fi} annotation {ann.instance_id!r}: "
                        f"class {ann.class_name!r} not in vocabulary {vocabulary.name!r}"
                    )
                for attr in ann.attributes:
                    if not vocabulary.is_compatible(ann.class_name, attr):
                        raise ValidationError(
                            f"scene {scene_id} frame {fi} annotation {ann.instance_id!r}: "
                            f"attribute {attr!r} incompatible with {ann.class_name!r}"
                        )
                annotations.append(ann)
            try:
                frames.append(Frame(ts_raw, tuple(cameras), cloud, tuple(annotations)))
            except ValidationError as exc:
                raise ValidationError(f"scene {scene_id} frame {fi}: {exc}") from None
        try:
            scenes.append(Scene(scene_id, tuple(frames)))
        except ValidationError as exc:
            raise ValidationError(f"scene {scene_id}: {exc}") from None
    return SceneDataset(tuple(scenes), split, vocab_ref)


# ---------------------------------------------------------------------------
# Synthetic generation


_CLASS_SIZES: dict[str, tuple[float, float, float]] = {
    "car": (4.5, 1.9, 1.6),
    "regular vehicle": (4.5, 1.9, 1.6),
    "truck": (7.0, 2.5, 2.8),
    "bus": (11.0, 2.9, 3.3),
    "trailer": (10.0, 2.6, 3.5),
    "construction vehicles": (6.0, 2.8, 3.0),
    "motorcycle": (2.0, 0.8, 1.4),
    "bicycle": (1.7, 0.6, 1.3),
    "pedestrian": (0.6, 0.6, 1.7),
    "barrier": (2.0, 0.4, 1.0),
    "traffic cone": (0.4, 0.4, 0.8),
    "construction cone": (0.4, 0.4, 0.8),
}
_DEFAULT_SIZE = (2.0, 2.0, 2.0)
_MOVING_SPEED_GATE = 0.5  # m/s separating moving from static labels


@dataclass(frozen=True)
class SynthConfig:
    """Settings for the synthetic scene generator."""

    n_scenes: int = 1
    n_frames: int = 4
    n_objects: int = 6
    object_classes: tuple[str, ...] | None = None
    n_cameras: int = 4
    image_size: tuple[int, int] = (1600, 900)
    focal: float = 800.0
    camera_height: float = 1.6
    arena_min_radius: float = 6.0
    arena_max_radius: float = 32.0
    dt: float = 0.5
    moving_fraction: float = 0.5
    speed_range: tuple[float, float] = (1.0, 3.0)
    points_per_object: int = 60
    background_points: int = 300
    vocabulary: str = "nuscenes-b6n4"
    split: str = "val"

    def __post_init__(self):
        if self.n_scenes < 0 or self.n_frames < 0 or self.n_objects < 0:
            raise ConfigError("counts must be non-negative")
        if self.n_cameras < 1:
            raise ConfigError("at least one camera is required")
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if not 0 < self.arena_min_radius < self.arena_max_radius:
            raise ConfigError("arena radii must satisfy 0 < min < max")
        if self.speed_range[0] <= _MOVING_SPEED_GATE:
            raise ConfigError(f"moving speeds must exceed {_MOVING_SPEED_GATE} m/s")
        if self.object_classes is not None and len(self.object_classes) != self.n_objects:
            raise ConfigError("object_classes length must equal n_objects")


def _pick_attribute(vocab: Vocabulary, class_name: str, moving: bool, rng) -> tuple[str, ...]:
    group = vocab.group_of(class_name)
    if group == "vehicle":
        return ("moving",) if moving else (str(rng.choice(["parked", "stopped"])),)
    if group == "pedestrian":
        return ("moving",) if moving else (str(rng.choice(["standing", "sitting lying down"])),)
    if group == "cycle":
        return (str(rng.choice(["with rider", "without rider"])),)
    return ()


def _frame_image_entries(
    annotations: tuple[Annotation, ...],
    cam: CameraModel,
    max_pair_distance: float = 15.0,
) -> list[tuple[tuple[float, float, float, float], str]]:
    """Rect/text manifest embedded into a synthetic image reference.

    Lists every visible annotation (class plus its attribute) and every
    visible ground-truth pair union box with its spatial label.
    """
    entries = []
    for ann in annotations:
        rect = project_box(ann.box, cam)
        if rect is None or rect.area < 1.0:
            continue
        text = ann.class_name if not ann.attributes else f"{ann.class_name} {ann.attributes[0]}"
        entries.append((rect.as_tuple(), text))
    n = len(annotations)
    for i in range(n):
        for j in range(i + 1, n):
            a, b = annotations[i], annotations[j]
            if bev_center_distance(a.box, b.box) > max_pair_distance:
                continue
            union = combine(a.box, b.box)
            rect = project_box(union, cam)
            if rect is None or rect.area < 1.0:
                continue
            rel = spatial_relation(a.box, b.box)
            entries.append((rect.as_tuple(), render_ovad_label(a.class_name, b.class_name, rel)))
    return entries


def generate_synthetic(config: SynthConfig, seed: int) -> SceneDataset:
    """Deterministic multi-frame scenes with ground-truth boxes, motion
    attributes, per-box point clusters, and ring-mounted cameras.

    Objects never overlap above BEV IoU 0.1 in any frame; moving objects
    advance by velocity * dt per frame and are labeled "moving"; static
    objects get a class-appropriate static attribute.
    """
    vocab = load_vocabulary(config.vocabulary)
    scenes = []
    for scene_idx in range(config.n_scenes):
        rng = np.random.default_rng([int(seed), scene_idx])
        pool = list(vocab.base_objects + vocab.novel_objects) or ["car"]
        classes = [
            str(c)
            for c in (config.object_classes or rng.choice(pool, size=config.n_objects))
        ]
        # Trajectory placement by rejection sampling.
        placed: list[dict] = []
        for obj_idx, class_name in enumerate(classes):
            base_size = _CLASS_SIZES.get(class_name, _DEFAULT_SIZE)
            size = tuple(
                quantize(s * rng.uniform(0.92, 1.08)) for s in base_size
            )
            group = vocab.group_of(class_name)
            movable = group in ("vehicle", "pedestrian")
            moving = movable and rng.uniform() < config.moving_fraction
            speed = rng.uniform(*config.speed_range) if moving else 0.0
            ok = False
            for _ in range(1000):
                radius = rng.uniform(config.arena_min_radius, config.arena_max_radius)
                angle = rng.uniform(-math.pi, math.pi)
                x0, y0 = radius * math.cos(angle), radius * math.sin(angle)
                heading = rng.uniform(-3.14, 3.14)
                vx, vy = speed * math.cos(heading), speed * math.sin(heading)
                centers = []
                valid = True
                for t in range(config.n_frames):
                    cx = quantize(x0 + vx * config.dt * t)
                    cy = quantize(y0 + vy * config.dt * t)
                    r = math.hypot(cx, cy)
                    if not config.arena_min_radius * 0.8 <= r <= config.arena_max_radius * 1.1:
                        valid = False
                        break
                    centers.append((cx, cy))
                if not valid:
                    continue
                yaw = quantize_yaw(heading if moving else rng.uniform(-3.14, 3.14))
                clash = False
                for other in placed:
                    for t in range(config.n_frames):
                        box_a = Box3D((*centers[t], size[2] / 2), size, yaw)
                        box_b = Box3D(
                            (*other["centers"][t], other["size"][2] / 2),
                            other["size"],
                            other["yaw"],
                        )
                        if bev_iou(box_a, box_b) > 0.1:
                            clash = True
                            break
                    if clash:
                        break
                if clash:
                    continue
                placed.append(
                    {
                        "instance_id": f"obj-{scene_idx:03d}-{obj_idx:03d}",
                        "class_name": class_name,
                        "size": size,
                        "yaw": yaw,
                        "centers": centers,
                        "velocity": (quantize(vx), quantize(vy)) if moving else None,
                        "attributes": _pick_attribute(vocab, class_name, moving, rng),
                    }
                )
                ok = True
                break
            if not ok:
                raise ConfigError(
                    f"could not place object {obj_idx} ({class_name}) after 1000 attempts; "
                    "reduce n_objects or enlarge the arena"
                )

        # Camera ring (fixed across frames; image ids vary per frame).
        cam_protos = []
        for k in range(config.n_cameras):
            raw = 2.0 * math.pi * k / config.n_cameras - math.pi / 4.0
            azimuth = quantize_yaw(math.atan2(math.sin(raw), math.cos(raw)))
            cam_protos.append((f"cam{k}", azimuth))

        frames = []
        for t in range(config.n_frames):
            annotations = []
            cluster_points = []
            for obj in placed:
                center = (*obj["centers"][t], quantize(obj["size"][2] / 2))
                box = Box3D(center, obj["size"], obj["yaw"])
                annotations.append(
                    Annotation(
                        obj["instance_id"],
                        obj["class_name"],
                        box,
                        obj["attributes"],
                        obj["velocity"],
                    )
                )
                local = rng.uniform(-0.49, 0.49, size=(config.points_per_object, 3)) * np.asarray(obj["size"])
                c, s = math.cos(obj["yaw"]), math.sin(obj["yaw"])
                world = np.empty_like(local)
                world[:, 0] = c * local[:, 0] - s * local[:, 1] + center[0]
                world[:, 1] = s * local[:, 0] + c * local[:, 1] + center[1]
                world[:, 2] = local[:, 2] + center[2]
                cluster_points.append(np.round(world, 6))
            radii = rng.uniform(config.arena_min_radius * 0.5, config.arena_max_radius, size=config.background_points)
            angles = rng.uniform(-math.pi, math.pi, size=config.background_points)
            bg = np.stack(
                [radii * np.cos(angles), radii * np.sin(angles), rng.uniform(0.0, 0.3, size=config.background_points)],
                axis=1,
            )
            pts = np.vstack(cluster_points + [np.round(bg, 6)]) if (cluster_points or config.background_points) else np.empty((0, 3))
            anns = tuple(annotations)
            cameras = []
            for cam_id, azimuth in cam_protos:
                bare = camera_from_pose(
                    cam_id,
                    config.focal,
                    config.focal,
                    config.image_size[0] / 2.0,
                    config.image_size[1] / 2.0,
                    config.image_size[0],
                    config.image_size[1],
                    (0.0, 0.0, quantize(config.camera_height)),
                    azimuth,
                )
                entries = _frame_image_entries(anns, bare)
                cameras.append(replace(bare, image_id=encode_synth_image_id(entries)))
            frames.append(
                Frame(
                    timestamp_us=int(round(t * config.dt * 1e6)),
                    cameras=tuple(cameras),
                    cloud=PointCloud(pts),
                    annotations=anns,
                )
            )
        scenes.append(Scene(f"scene-{scene_idx:03d}", tuple(frames)))
    return SceneDataset(tuple(scenes), config.split, config.vocabulary)
