"""Oriented 3D box algebra and camera projection.

All operations are pure functions over immutable value types and are safe to
call concurrently.  Conventions:

* World frame: right-handed, z up.  Yaw rotates about +z; yaw 0 means the
  box length axis points along +x.
* Box frame: x forward (length), y left (width), z up (height).
* Camera frame: x right, y down, z forward (pinhole looking along +z).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CoincidentCenters, ValidationError

_TWO_PI = 2.0 * math.pi


def wrap_yaw(yaw: float) -> float:
    """Normalize a finite angle into (-pi, pi].

    Values already in range are returned bit-exactly so that serialized
    datasets survive load/store cycles unchanged.
    """
    if not math.isfinite(yaw):
        raise ValidationError(f"yaw must be finite, got {yaw!r}")
    if -math.pi < yaw <= math.pi:
        return yaw
    wrapped = math.fmod(yaw + math.pi, _TWO_PI)
    if wrapped <= 0.0:
        wrapped += _TWO_PI
    return wrapped - math.pi


@dataclass(frozen=True)
class Box3D:
    """Oriented 3D box: center (x, y, z) m, size (l, w, h) m, yaw rad.

    Length l runs along the heading; invariants l, w, h > 0 and yaw in
    (-pi, pi] are enforced at construction.
    """

    center: tuple[float, float, float]
    size: tuple[float, float, float]
    yaw: float = 0.0

    def __post_init__(self):
        center = tuple(float(v) for v in self.center)
        size = tuple(float(v) for v in self.size)
        if len(center) != 3 or len(size) != 3:
            raise ValidationError("center and size must be 3-vectors")
        if not all(math.isfinite(v) for v in center + size):
            raise ValidationError(f"box has non-finite fields: {center} {size}")
        if not all(v > 0.0 for v in size):
            raise ValidationError(f"box size must be positive, got {size}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "yaw", wrap_yaw(float(self.yaw)))

    @property
    def volume(self) -> float:
        l, w, h = self.size
        return l * w * h

    def to_dict(self) -> dict:
        return {"center": list(self.center), "size": list(self.size), "yaw": self.yaw}

    @classmethod
    def from_dict(cls, d: dict) -> "Box3D":
        return cls(tuple(d["center"]), tuple(d["size"]), float(d["yaw"]))


@dataclass(frozen=True)
class Box2D:
    """Axis-aligned pixel rectangle with x_min <= x_max, y_min <= y_max."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min <= self.x_max and self.y_min <= self.y_max):
            raise ValidationError(f"degenerate Box2D bounds: {self}")

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


class SpatialRelation(enum.Enum):
    """One of the four relations defined in the reference box's frame."""

    IN_FRONT_OF = "in front of"
    BEHIND = "behind"
    ON_LEFT_OF = "on the left of"
    ON_RIGHT_OF = "on the right of"

    @property
    def phrase(self) -> str:
        return self.value

    @classmethod
    def from_phrase(cls, phrase: str) -> "SpatialRelation":
        for rel in cls:
            if rel.value == phrase:
                return rel
        raise ValidationError(f"unknown spatial relation {phrase!r}")


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole camera: 3x3 upper-triangular intrinsics, 4x4 world-to-camera
    rigid extrinsics, image size (width, height) in pixels."""

    camera_id: str
    intrinsics: np.ndarray
    extrinsics: np.ndarray
    image_size: tuple[int, int]
    image_id: str = ""

    def __post_init__(self):
        K = np.asarray(self.intrinsics, dtype=np.float64)
        E = np.asarray(self.extrinsics, dtype=np.float64)
        if K.shape != (3, 3):
            raise ValidationError(f"intrinsics must be 3x3, got {K.shape}")
        if E.shape != (4, 4):
            raise ValidationError(f"extrinsics must be 4x4, got {E.shape}")
        lower = np.array([K[1, 0], K[2, 0], K[2, 1]])
        if np.any(np.abs(lower) > 1e-9):
            raise ValidationError("intrinsics must be upper-triangular")
        if K[0, 0] <= 0 or K[1, 1] <= 0 or K[2, 2] <= 0:
            raise ValidationError("intrinsics focal entries must be positive")
        R = E[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-6):
            raise ValidationError("extrinsics rotation block is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise ValidationError("extrinsics rotation block must have det +1")
        if not np.allclose(E[3], [0.0, 0.0, 0.0, 1.0], atol=1e-9):
            raise ValidationError("extrinsics bottom row must be [0, 0, 0, 1]")
        w, h = self.image_size
        if w <= 0 or h <= 0:
            raise ValidationError(f"image size must be positive, got {self.image_size}")
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "extrinsics", E)
        object.__setattr__(self, "image_size", (int(w), int(h)))

    @property
    def azimuth(self) -> float:
        """World-frame azimuth of the optical axis (for view-direction codes)."""
        forward = self.extrinsics[2, :3]
        return math.atan2(forward[1], forward[0])


@dataclass(frozen=True, eq=False)
class PointCloud:
    """N x 3 points in the same world frame as the boxes."""

    points: np.ndarray
    frame: str = "world"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if pts.size and not np.all(np.isfinite(pts)):
            raise ValidationError("point cloud contains non-finite coordinates")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


# ---------------------------------------------------------------------------
# Box operations


def _rotation_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


_LOCAL_FOOTPRINT = np.array(
    [[0.5, 0.5], [-0.5, 0.5], [-0.5, -0.5], [0.5, -0.5]]
)  # CCW starting at the front-left corner (x forward, y left)


def corners(box: Box3D) -> np.ndarray:
    """Eight world-frame corners, shape (8, 3).

    Ordering: bottom face counter-clockwise starting at the front-left
    corner, then the top face in the same x-y order.
    """
    l, w, h = box.size
    foot = _LOCAL_FOOTPRINT * np.array([l, w])
    local = np.empty((8, 3))
    local[:4, :2] = foot
    local[4:, :2] = foot
    local[:4, 2] = -0.5 * h
    local[4:, 2] = 0.5 * h
    return local @ _rotation_z(box.yaw).T + np.asarray(box.center)


def _polygon_area(poly: np.ndarray) -> float:
    """Shoelace area of a simple polygon, (N, 2)."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of `subject` by convex CCW polygon `clip`."""
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        a = clip[i]
        b = clip[(i + 1) % n]
        edge = (b[0] - a[0], b[1] - a[1])
        inside = [
            edge[0] * (p[1] - a[1]) - edge[1] * (p[0] - a[0]) >= 0.0 for p in output
        ]
        clipped: list[tuple[float, float]] = []
        m = len(output)
        for j in range(m):
            cur, nxt = output[j], output[(j + 1) % m]
            if inside[j]:
                clipped.append(cur)
            if inside[j] != inside[(j + 1) % m]:
                # Intersection of segment cur->nxt with the clip edge line.
                dx, dy = nxt[0] - cur[0], nxt[1] - cur[1]
                denom = edge[0] * dy - edge[1] * dx
                if abs(denom) < 1e-300:
                    continue
                t = (edge[0] * (a[1] - cur[1]) - edge[1] * (a[0] - cur[0])) / denom
                clipped.append((cur[0] + t * dx, cur[1] + t * dy))
        output = clipped
    return np.array(output) if output else np.empty((0, 2))


def bev_footprint(box: Box3D) -> np.ndarray:
    """CCW bird's-eye-view footprint polygon, shape (4, 2)."""
    return corners(box)[:4, :2]


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    return _polygon_area(_clip_polygon(bev_footprint(a), bev_footprint(b)))


def iou3d(a: Box3D, b: Box3D) -> float:
    """Exact rotated 3D IoU: BEV convex polygon intersection x z-overlap."""
    inter_area = bev_intersection_area(a, b)
    if inter_area <= 0.0:
        return 0.0
    za0, za1 = a.center[2] - 0.5 * a.size[2], a.center[2] + 0.5 * a.size[2]
    zb0, zb1 = b.center[2] - 0.5 * b.size[2], b.center[2] + 0.5 * b.size[2]
    z_overlap = min(za1, zb1) - max(za0, zb0)
    if z_overlap <= 0.0:
        return 0.0
    inter = inter_area * z_overlap
    union = a.volume + b.volume - inter
    if union <= 0.0:
        return 0.0
    return float(min(1.0, max(0.0, inter / union)))


def bev_iou(a: Box3D, b: Box3D) -> float:
    """Bird's-eye-view IoU over footprint areas (z ignored)."""
    inter = bev_intersection_area(a, b)
    if inter <= 0.0:
        return 0.0
    area_a = a.size[0] * a.size[1]
    area_b = b.size[0] * b.size[1]
    return float(inter / (area_a + area_b - inter))


def bev_center_distance(a: Box3D, b: Box3D) -> float:
    """Euclidean distance between the (x, y) centers; z is ignored."""
    return math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1])


def center_distance_3d(a: Box3D, b: Box3D) -> float:
    """Full 3D center distance (opt-in alternative for the pair gate)."""
    return math.dist(a.center, b.center)


def pair_distance(a: Box3D, b: Box3D, use_3d: bool = False) -> float:
    return center_distance_3d(a, b) if use_3d else bev_center_distance(a, b)


def combine(a: Box3D, b: Box3D) -> Box3D:
    """Axis-aligned box spanning the element-wise min/max over both boxes'
    corners; the result has yaw 0 and is commutative in its arguments."""
    pts = np.vstack([corners(a), corners(b)])
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    return Box3D(tuple((lo + hi) / 2.0), tuple(hi - lo), 0.0)


def spatial_relation(subject: Box3D, reference: Box3D) -> SpatialRelation:
    """Classify where `subject` sits in the reference box's frame.

    The subject center is expressed in the reference frame (x forward,
    y left); the dominant axis decides the relation and an exact tie
    resolves to the front/behind axis.
    """
    dx_w = subject.center[0] - reference.center[0]
    dy_w = subject.center[1] - reference.center[1]
    if math.hypot(dx_w, dy_w) < 1e-9:
        raise CoincidentCenters("boxes share a BEV center")
    c, s = math.cos(reference.yaw), math.sin(reference.yaw)
    dx = c * dx_w + s * dy_w
    dy = -s * dx_w + c * dy_w
    if abs(dx) >= abs(dy):
        return SpatialRelation.IN_FRONT_OF if dx > 0 else SpatialRelation.BEHIND
    return SpatialRelation.ON_LEFT_OF if dy > 0 else SpatialRelation.ON_RIGHT_OF


def project_box(box: Box3D, cam: CameraModel, near: float = 0.1) -> Box2D | None:
    """Project a box onto the image plane.

    Corners with camera-frame depth <= `near` are discarded; with fewer
    than two survivors the box is treated as not visible (None).  The
    returned rectangle is clamped to the image bounds.
    """
    pts = corners(box)
    hom = np.hstack([pts, np.ones((8, 1))])
    cam_pts = hom @ cam.extrinsics.T
    depth = cam_pts[:, 2]
    keep = depth > near
    if np.count_nonzero(keep) < 2:
        return None
    vis = cam_pts[keep, :3]
    pix = vis @ cam.intrinsics.T
    pix = pix[:, :2] / pix[:, 2:3]
    w, h = cam.image_size
    x0 = float(np.clip(pix[:, 0].min(), 0.0, w))
    x1 = float(np.clip(pix[:, 0].max(), 0.0, w))
    y0 = float(np.clip(pix[:, 1].min(), 0.0, h))
    y1 = float(np.clip(pix[:, 1].max(), 0.0, h))
    return Box2D(x0, y0, x1, y1)


def crop_points(box: Box3D, cloud: PointCloud | np.ndarray) -> np.ndarray:
    """Indices of points strictly inside the yaw-oriented box."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if pts.size == 0:
        return np.empty(0, dtype=np.intp)
    d = pts - np.asarray(box.center)
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    local_x = c * d[:, 0] + s * d[:, 1]
    local_y = -s * d[:, 0] + c * d[:, 1]
    half = np.asarray(box.size) / 2.0
    mask = (
        (np.abs(local_x) < half[0])
        & (np.abs(local_y) < half[1])
        & (np.abs(d[:, 2]) < half[2])
    )
    return np.nonzero(mask)[0]
