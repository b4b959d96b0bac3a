"""Rigid transforms, rotations, point clouds and parametric object models.

Conventions used throughout the package:
  - rotations are 3x3 matrices, translations are 3-vectors in millimeters
  - angles at the API surface are degrees
  - composition a * b applies b first, then a
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ORTHO_TOL = 1e-9
REORTHO_TRIGGER = 1e-12

SYMMETRY_NONE = "none"
SYMMETRY_Z = "continuous-about-z"
_SYMMETRIES = (SYMMETRY_NONE, SYMMETRY_Z)


class GeometryError(ValueError):
    """Invalid geometric input (bad rotation, bad dimensions, bad file)."""


def _as_rotation(m) -> np.ndarray:
    r = np.asarray(m, dtype=float)
    if r.shape != (3, 3):
        raise GeometryError(f"rotation must be 3x3, got {r.shape}")
    if np.linalg.norm(r.T @ r - np.eye(3)) > ORTHO_TOL:
        raise GeometryError("rotation is not orthonormal")
    if abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
        raise GeometryError("rotation determinant is not +1")
    return r


def _orthonormalize(r: np.ndarray) -> np.ndarray:
    # polar projection onto SO(3); sign guard keeps det = +1
    u, _, vt = np.linalg.svd(r)
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


@dataclass(frozen=True)
class Pose:
    """SE(3) rigid transform: p -> rotation @ p + translation (mm)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _as_rotation(self.rotation)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise GeometryError("translation has non-finite entries")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_translation(t) -> "Pose":
        return Pose(np.eye(3), np.asarray(t, dtype=float))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def to_numbers(self) -> list[float]:
        """12 numbers, row-major rotation then translation (file format)."""
        return [*self.rotation.reshape(9).tolist(), *self.translation.tolist()]

    @staticmethod
    def from_numbers(nums) -> "Pose":
        v = np.asarray(nums, dtype=float).reshape(12)
        return Pose(v[:9].reshape(3, 3), v[9:])


def compose(a: Pose, b: Pose) -> Pose:
    """Composition that applies b first, then a."""
    r = a.rotation @ b.rotation
    if np.linalg.norm(r.T @ r - np.eye(3)) > REORTHO_TRIGGER:
        r = _orthonormalize(r)
    return Pose(r, a.rotation @ b.translation + a.translation)


def invert(p: Pose) -> Pose:
    rt = p.rotation.T
    return Pose(rt, -rt @ p.translation)


def rotation_about_axis(axis, angle_deg: float) -> np.ndarray:
    """Rodrigues rotation about a (not necessarily unit) axis."""
    a = np.asarray(axis, dtype=float)
    n = np.linalg.norm(a)
    if n == 0.0:
        raise GeometryError("rotation axis must be non-zero")
    a = a / n
    th = np.radians(angle_deg)
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(th) * k + (1.0 - np.cos(th)) * (k @ k)


def rotation_x(angle_deg: float) -> np.ndarray:
    return rotation_about_axis([1.0, 0.0, 0.0], angle_deg)


def rotation_y(angle_deg: float) -> np.ndarray:
    return rotation_about_axis([0.0, 1.0, 0.0], angle_deg)


def rotation_z(angle_deg: float) -> np.ndarray:
    return rotation_about_axis([0.0, 0.0, 1.0], angle_deg)


FLIP_Y = np.diag([-1.0, 1.0, -1.0])


def flip_y(p: Pose) -> Pose:
    """180 degrees about the body y-axis; translation untouched."""
    return Pose(p.rotation @ FLIP_Y, p.translation)


def angular_error_z(a: Pose, b: Pose) -> float:
    """Angle in degrees between the object z-axes of the two poses."""
    d = float(np.dot(a.rotation[:, 2], b.rotation[:, 2]))
    return float(np.degrees(np.arccos(np.clip(d, -1.0, 1.0))))


def rotation_geodesic(a: Pose, b: Pose) -> float:
    """Full geodesic rotation distance in degrees, range [0, 180]."""
    rel = a.rotation.T @ b.rotation
    c = (np.trace(rel) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def translation_error(a: Pose, b: Pose) -> float:
    return float(np.linalg.norm(a.translation - b.translation))


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation via normalized quaternion."""
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def swing_about_z(r: np.ndarray) -> np.ndarray:
    """Remove the body z-axis twist from r, keeping only the swing.

    The swing is the minimal rotation taking the world z-axis onto r's
    third column; the removed twist is a rotation about the body z-axis,
    which is unobservable for parts with continuous z symmetry.
    """
    v = r[:, 2]
    c = float(np.clip(v[2], -1.0, 1.0))
    if c < -1.0 + 1e-12:
        swing = rotation_x(180.0)
    else:
        axis = np.cross([0.0, 0.0, 1.0], v)
        n = np.linalg.norm(axis)
        if n < 1e-15:
            swing = np.eye(3)
        else:
            swing = rotation_about_axis(axis, float(np.degrees(np.arccos(c))))
    return _orthonormalize(swing)


@dataclass(frozen=True)
class PointCloud:
    """N x 3 points in mm, with optional per-point source-object ids."""

    points: np.ndarray
    source_ids: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise GeometryError("point cloud has non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.source_ids is not None:
            sid = np.asarray(self.source_ids, dtype=int).reshape(-1)
            if sid.shape[0] != pts.shape[0]:
                raise GeometryError("source_ids length mismatch")
            sid.setflags(write=False)
            object.__setattr__(self, "source_ids", sid)

    def __len__(self) -> int:
        return self.points.shape[0]


def transform_points(p: Pose, c: PointCloud) -> PointCloud:
    return PointCloud(p.apply(c.points), c.source_ids)


def farthest_point_sample(points: np.ndarray, k: int) -> np.ndarray:
    """Greedy farthest-point subset of size k (indices are deterministic).

    Seeded from the point farthest from the centroid, lowest index on ties.
    """
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    if k > n:
        raise GeometryError(f"cannot sample {k} keypoints from {n} points")
    centroid = pts.mean(axis=0)
    start = int(np.argmax(np.linalg.norm(pts - centroid, axis=1)))
    chosen = [start]
    dist = np.linalg.norm(pts - pts[start], axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(pts - pts[nxt], axis=1))
    return pts[chosen].copy()


@dataclass
class ObjectModel:
    """Surface-sampled rigid part, centered at its own origin.

    diameter is the maximum extent (max pairwise point distance bound),
    stable_rest_height is the origin height when the part lies on a plane.
    normals are optional outward unit normals aligned with surface_cloud.
    """

    id: str
    surface_cloud: PointCloud
    diameter: float
    symmetry: str
    keypoints: np.ndarray
    stable_rest_height: float
    normals: np.ndarray | None = None
    _nn_cache: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.symmetry not in _SYMMETRIES:
            raise GeometryError(f"unknown symmetry {self.symmetry!r}")
        if len(self.surface_cloud) == 0:
            raise GeometryError("object model needs a non-empty surface cloud")
        self.keypoints = np.asarray(self.keypoints, dtype=float).reshape(-1, 3)

    @property
    def sampling_resolution(self) -> float:
        """Coarse surface spacing estimate: diameter / sqrt(n_points)."""
        return self.diameter / np.sqrt(len(self.surface_cloud))

    def decimated(self, n: int, seed: int = 0) -> "ObjectModel":
        """Random n-point subsample for fast approximate distance checks."""
        total = len(self.surface_cloud)
        if n >= total:
            return self
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(total, size=n, replace=False))
        cloud = PointCloud(self.surface_cloud.points[idx])
        normals = None if self.normals is None else self.normals[idx]
        return ObjectModel(self.id, cloud, self.diameter, self.symmetry,
                           self.keypoints, self.stable_rest_height, normals)


def sample_cylinder_model(radius: float, height: float, n_points: int = 2048,
                          seed: int = 0, n_keypoints: int = 8,
                          model_id: str | None = None) -> ObjectModel:
    """Area-uniform surface sampling of a z-axis cylinder centered at origin.

    Lateral surface and both caps are covered proportionally to area;
    keypoints come from farthest-point sampling of the result.
    """
    if radius <= 0 or height <= 0:
        raise GeometryError("cylinder radius and height must be positive")
    if n_points < 64:
        raise GeometryError("need at least 64 surface points")
    rng = np.random.default_rng(seed)
    lateral_area = 2.0 * np.pi * radius * height
    cap_area = np.pi * radius * radius
    total = lateral_area + 2.0 * cap_area

    u = rng.random(n_points)
    theta = rng.random(n_points) * 2.0 * np.pi
    pts = np.empty((n_points, 3))
    normals = np.empty((n_points, 3))

    on_lateral = u < lateral_area / total
    nl = int(on_lateral.sum())
    z = (rng.random(nl) - 0.5) * height
    ct, st = np.cos(theta[on_lateral]), np.sin(theta[on_lateral])
    pts[on_lateral] = np.column_stack([radius * ct, radius * st, z])
    normals[on_lateral] = np.column_stack([ct, st, np.zeros(nl)])

    on_cap = ~on_lateral
    nc = int(on_cap.sum())
    r = radius * np.sqrt(rng.random(nc))
    sign = np.where(rng.random(nc) < 0.5, 1.0, -1.0)
    ct, st = np.cos(theta[on_cap]), np.sin(theta[on_cap])
    pts[on_cap] = np.column_stack([r * ct, r * st, sign * height / 2.0])
    normals[on_cap] = np.column_stack([np.zeros(nc), np.zeros(nc), sign])

    diameter = float(np.sqrt((2.0 * radius) ** 2 + height ** 2))
    keypoints = farthest_point_sample(pts, n_keypoints)
    mid = model_id or f"cylinder_r{radius:g}_h{height:g}"
    return ObjectModel(mid, PointCloud(pts), diameter, SYMMETRY_Z,
                       keypoints, float(radius), normals)


def _fmt9(x: float) -> str:
    return f"{x:.9g}"


def save_model(model: ObjectModel, path) -> None:
    """ASCII point-list export: header line then one x y z triple per line."""
    pts = model.surface_cloud.points
    lines = [f"model {model.id} {len(pts)} {_fmt9(model.diameter)} {model.symmetry}"]
    for p in pts:
        lines.append(" ".join(_fmt9(v) for v in p))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _max_extent(pts: np.ndarray) -> float:
    try:
        from scipy.spatial import ConvexHull

        hull = pts[np.unique(ConvexHull(pts).vertices)]
    except Exception:
        hull = pts
    d2 = ((hull[:, None, :] - hull[None, :, :]) ** 2).sum(axis=2)
    return float(np.sqrt(d2.max()))


def load_model(path, n_keypoints: int = 8) -> ObjectModel:
    """Read the native ASCII format or an ASCII vertex-only PLY file.

    Keypoints are recomputed by farthest-point sampling; rest height for
    z-symmetric parts is the max radial extent (lying orientation), else
    half the z extent.
    """
    with open(path) as fh:
        first = fh.readline().strip()
        if first.startswith("ply"):
            pts = _read_ply_vertices(fh)
            mid = str(path).rsplit("/", 1)[-1].rsplit(".", 1)[0]
            diameter = _max_extent(pts)
            symmetry = SYMMETRY_NONE
        else:
            parts = first.split()
            if len(parts) != 5 or parts[0] != "model":
                raise GeometryError(f"bad model header: {first!r}")
            mid, n, diameter, symmetry = parts[1], int(parts[2]), float(parts[3]), parts[4]
            rows = [line.split() for line in fh if line.strip()]
            if len(rows) != n:
                raise GeometryError(f"expected {n} points, found {len(rows)}")
            pts = np.array(rows, dtype=float)
    if symmetry == SYMMETRY_Z:
        rest = float(np.max(np.linalg.norm(pts[:, :2], axis=1)))
    else:
        rest = float((pts[:, 2].max() - pts[:, 2].min()) / 2.0)
    keypoints = farthest_point_sample(pts, min(n_keypoints, len(pts)))
    return ObjectModel(mid, PointCloud(pts), float(diameter), symmetry,
                       keypoints, rest)


def _read_ply_vertices(fh) -> np.ndarray:
    n_vertices = None
    for line in fh:
        token = line.strip()
        if token.startswith("element vertex"):
            n_vertices = int(token.split()[-1])
        elif token.startswith("format") and "ascii" not in token:
            raise GeometryError("only ASCII PLY files are supported")
        elif token == "end_header":
            break
    if n_vertices is None:
        raise GeometryError("PLY header lacks an element vertex count")
    rows = []
    for line in fh:
        if line.strip():
            rows.append(line.split()[:3])
        if len(rows) == n_vertices:
            break
    if len(rows) != n_vertices:
        raise GeometryError("PLY vertex list is truncated")
    return np.array(rows, dtype=float)
