"""Synthetic structured-light scanning, filtering, rigid registration, quality checks.

The scanner samples points on the faces of a convex mesh.  Surface samples are
drawn in the object frame from a seed tied to the object, so two scans of the
same (unchanged) surface share the very same material points; only the
sensor-side depth noise differs between views.  Registration of noise-free
multi-view scans is therefore exact, which mirrors how feature-rich surfaces
behave far better than resampling the mesh per view would.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import ConvexShape, RigidTransform


class EmptyScan(Exception):
    """No mesh face is visible from the requested viewpoint."""


class TooFewPoints(Exception):
    """The cloud is too small for the requested neighbourhood size."""


class Diverged(Exception):
    """Registration error increased for too many consecutive iterations."""


class MissingIntensity(Exception):
    """Quality assessment needs per-point intensity on both clouds."""


@dataclass
class PointCloud:
    points: np.ndarray
    intensity: np.ndarray | None = None
    frame_id: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.isfinite(self.points).all():
            raise ValueError("point coordinates must be finite")
        if self.intensity is not None:
            self.intensity = np.asarray(self.intensity, dtype=float).reshape(-1)
            if len(self.intensity) != len(self.points):
                raise ValueError("intensity length must match point count")

    def __len__(self) -> int:
        return len(self.points)

    def select(self, mask) -> "PointCloud":
        inten = None if self.intensity is None else self.intensity[mask]
        return PointCloud(self.points[mask], inten, self.frame_id)

    def transformed(self, tf: RigidTransform) -> "PointCloud":
        return PointCloud(tf.apply(self.points), self.intensity, self.frame_id)


@dataclass
class QualityReport:
    overexposure_before: int
    overexposure_after: int
    roughness_before: float
    roughness_after: float
    passed: bool


@dataclass
class ScanParams:
    """Knobs of the synthetic scanner.

    surface_seed fixes the material sample points (object identity);
    sensor_seed fixes the per-view depth noise.  roughness is the per-face
    RMS surface texture in metres (scalar broadcasts over faces); it displaces
    samples along the face normal and darkens the returned intensity.
    """

    density: float = 2e5
    depth_noise: float = 2e-4
    view_dir: np.ndarray = (-1.0, 0.0, 0.0)
    surface_seed: int = 0
    sensor_seed: int = 0
    roughness: float | np.ndarray = 0.0
    intensity_base: float = 0.88
    intensity_slope: float = 250.0
    speckle: float = 0.05

    def __post_init__(self):
        self.view_dir = np.asarray(self.view_dir, dtype=float).reshape(3)
        self.view_dir = self.view_dir / np.linalg.norm(self.view_dir)


def _face_samples(mesh: ConvexShape, face: int, params: ScanParams):
    """Deterministic material points with texture displacement and reflectance."""
    rough = np.broadcast_to(np.asarray(params.roughness, dtype=float),
                            (len(mesh.faces),))[face]
    area = mesh.face_area(face)
    n_pts = max(1, int(round(params.density * area)))
    rng = np.random.default_rng(np.random.SeedSequence((params.surface_seed, face)))
    tris = mesh.face_triangles(face)
    areas = np.array([0.5 * np.linalg.norm(np.cross(b - a, c - a)) for a, b, c in tris])
    pick = rng.choice(len(tris), size=n_pts, p=areas / areas.sum())
    r1 = np.sqrt(rng.uniform(size=n_pts))
    r2 = rng.uniform(size=n_pts)
    texture = rng.standard_normal(n_pts)
    speckle = rng.standard_normal(n_pts)
    tri = np.array(tris)[pick]
    pts = (1 - r1)[:, None] * tri[:, 0] + (r1 * (1 - r2))[:, None] * tri[:, 1] \
        + (r1 * r2)[:, None] * tri[:, 2]
    normal = mesh.face_normal(face)
    pts = pts + (rough * texture)[:, None] * normal
    inten = params.intensity_base - params.intensity_slope * rough \
        + params.speckle * speckle
    return pts, np.clip(inten, 0.0, 1.0)


def synthetic_scan(mesh: ConvexShape, pose: RigidTransform,
                   params: ScanParams) -> PointCloud:
    """Scan the posed mesh from the configured view direction.

    Faces whose outward normals point toward the camera are sampled; depth
    noise is added along the viewing ray in the world frame.
    """
    visible = [i for i in range(len(mesh.faces))
               if (pose.rotation @ mesh.face_normal(i)) @ params.view_dir < -1e-9]
    if not visible:
        raise EmptyScan("no face visible from the given pose")
    pts_all, inten_all = [], []
    for i in visible:
        pts, inten = _face_samples(mesh, i, params)
        pts_all.append(pose.apply(pts))
        inten_all.append(inten)
    pts = np.vstack(pts_all)
    inten = np.concatenate(inten_all)
    if params.depth_noise > 0.0:
        rng = np.random.default_rng(np.random.SeedSequence((params.sensor_seed, 0xD)))
        pts = pts + rng.standard_normal(len(pts))[:, None] * params.depth_noise \
            * params.view_dir
    return PointCloud(pts, inten)


def field_limits_filter(cloud: PointCloud, lower, upper) -> PointCloud:
    """Keep exactly the points inside the closed axis-aligned box."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if (lower >= upper).any():
        raise ValueError("box needs lower < upper per axis")
    mask = ((cloud.points >= lower) & (cloud.points <= upper)).all(axis=1)
    return cloud.select(mask)


def sor_filter(cloud: PointCloud, k: int = 50, alpha: float = 1.0) -> PointCloud:
    """Statistical outlier removal.

    Points whose mean distance to their k nearest neighbours exceeds the
    cloud-wide mean plus alpha standard deviations are dropped.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if len(cloud) <= k:
        raise TooFewPoints(f"need more than {k} points, got {len(cloud)}")
    tree = cKDTree(cloud.points)
    dists, _ = tree.query(cloud.points, k=k + 1)
    mean_d = dists[:, 1:].mean(axis=1)
    threshold = mean_d.mean() + alpha * mean_d.std()
    return cloud.select(mean_d <= threshold)


def fit_rigid(source: np.ndarray, target: np.ndarray) -> RigidTransform:
    """Least-squares rigid motion mapping paired source points onto target points.

    SVD-based orthogonal Procrustes with a reflection guard.
    """
    src = np.asarray(source, dtype=float)
    tgt = np.asarray(target, dtype=float)
    cs = src.mean(axis=0)
    ct = tgt.mean(axis=0)
    h = (src - cs).T @ (tgt - ct)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return RigidTransform(rot, ct - rot @ cs)


@dataclass
class IcpParams:
    max_iters: int = 60
    tol: float = 1e-12
    reject_ratio: float = 5.0
    max_diverging: int = 5


def icp_register(source: PointCloud, target: PointCloud,
                 init: RigidTransform | None = None,
                 params: IcpParams | None = None):
    """Iterative closest point: returns (transform source->target frame, rms).

    Correspondences beyond reject_ratio times the current median distance are
    discarded, which tolerates the partial overlap between consecutive views.
    """
    if len(source) == 0 or len(target) == 0:
        raise ValueError("both clouds must be non-empty")
    params = params or IcpParams()
    tf = init or RigidTransform.identity()
    tree = cKDTree(target.points)
    best_tf, best_rms = tf, np.inf
    prev_rms = np.inf
    worse = 0
    for _ in range(params.max_iters):
        moved = tf.apply(source.points)
        dists, idx = tree.query(moved)
        med = np.median(dists)
        keep = dists <= params.reject_ratio * med + 1e-300
        if keep.sum() < 3:
            keep = np.ones(len(dists), dtype=bool)
        rms = float(np.sqrt(np.mean(dists[keep] ** 2)))
        if rms < best_rms:
            best_tf, best_rms = tf, rms
        if rms > prev_rms:
            worse += 1
            if worse >= params.max_diverging:
                raise Diverged(f"rms rose {worse} consecutive iterations")
        else:
            worse = 0
        if abs(prev_rms - rms) < params.tol:
            break
        prev_rms = rms
        tf = fit_rigid(source.points[keep], target.points[idx[keep]])
    return best_tf, best_rms


def register_sequence(scans, commanded_angles, axis=(0.0, 0.0, 1.0),
                      params: IcpParams | None = None):
    """Register each scan into the first scan's frame.

    The commanded rotation between consecutive views seeds the ICP, the
    refined relative transforms are then composed.  Returns one transform per
    scan (the first is the identity).
    """
    if len(scans) < 2:
        raise ValueError("need at least 2 scans")
    if len(commanded_angles) != len(scans):
        raise ValueError("one commanded angle per scan")
    axis = np.asarray(axis, dtype=float)
    if abs(axis @ (0, 0, 1.0)) < 1.0 - 1e-12:
        raise ValueError("only rotation about z is supported")
    transforms = [RigidTransform.identity()]
    for i in range(len(scans) - 1):
        rel_init = RigidTransform.rotation_z(commanded_angles[i] - commanded_angles[i + 1])
        rel, _ = icp_register(scans[i + 1], scans[i], rel_init, params)
        transforms.append(transforms[i].compose(rel))
    return transforms


def merge_scans(scans, commanded_angles, icp_params: IcpParams | None = None,
                sor_k: int = 50, sor_alpha: float = 1.0) -> PointCloud:
    """Fuse rotated views into one model cloud in the first view's frame."""
    transforms = register_sequence(scans, commanded_angles, params=icp_params)
    pts = np.vstack([tf.apply(s.points) for tf, s in zip(transforms, scans)])
    if all(s.intensity is not None for s in scans):
        inten = np.concatenate([s.intensity for s in scans])
    else:
        inten = None
    merged = PointCloud(pts, inten, scans[0].frame_id)
    return sor_filter(merged, k=sor_k, alpha=sor_alpha)


@dataclass
class QualityParams:
    intensity_threshold: float = 0.9
    window: float = 0.01
    min_window_points: int = 8
    over_ratio: float = 1.5
    rough_ratio: float = 0.7


def surface_roughness(cloud: PointCloud, window: float = 0.01,
                      min_window_points: int = 8) -> float:
    """RMS residual of local plane fits over square windows of the surface.

    The cloud is projected into its own principal frame; windows tile the two
    tangent directions.
    """
    pts = cloud.points
    center = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - center, full_matrices=False)
    local = (pts - center) @ vt.T  # columns: tangent, tangent, normal
    uv = local[:, :2]
    cells = np.floor(uv / window).astype(int)
    _, inverse = np.unique(cells, axis=0, return_inverse=True)
    sq_sum = 0.0
    count = 0
    for cell in range(inverse.max() + 1):
        sel = local[inverse == cell]
        if len(sel) < min_window_points:
            continue
        centered = sel - sel.mean(axis=0)
        resid = np.linalg.svd(centered, compute_uv=False)[-1]
        sq_sum += resid ** 2
        count += len(sel)
    if count == 0:
        resid = np.linalg.svd(local - local.mean(axis=0), compute_uv=False)[-1]
        return float(resid / np.sqrt(len(local)))
    return float(np.sqrt(sq_sum / count))


def assess_quality(before: PointCloud, after: PointCloud,
                   params: QualityParams | None = None) -> QualityReport:
    """Compare scans of a face around a sanding pass.

    A properly sanded face reflects more (overexposed point count up) and is
    flatter (plane-fit residual down); both move past configurable ratios for
    the pass verdict.
    """
    params = params or QualityParams()
    for cloud in (before, after):
        if cloud.intensity is None or len(cloud.intensity) == 0:
            raise MissingIntensity("both clouds need per-point intensity")
    over_b = int((before.intensity > params.intensity_threshold).sum())
    over_a = int((after.intensity > params.intensity_threshold).sum())
    rough_b = surface_roughness(before, params.window, params.min_window_points)
    rough_a = surface_roughness(after, params.window, params.min_window_points)
    passed = over_a >= params.over_ratio * over_b and rough_a <= params.rough_ratio * rough_b
    return QualityReport(over_b, over_a, rough_b, rough_a, bool(passed))


# --- file formats ------------------------------------------------------------

def save_ply(cloud: PointCloud, path) -> None:
    """ASCII PLY with x, y, z and optional intensity, 9 significant digits."""
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(cloud)}\n")
        fh.write("property float x\nproperty float y\nproperty float z\n")
        if cloud.intensity is not None:
            fh.write("property float intensity\n")
        fh.write("end_header\n")
        for i, p in enumerate(cloud.points):
            row = f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}"
            if cloud.intensity is not None:
                row += f" {cloud.intensity[i]:.9g}"
            fh.write(row + "\n")


def load_ply(path) -> PointCloud:
    with open(path) as fh:
        if fh.readline().strip() != "ply":
            raise ValueError("not a PLY file")
        n = 0
        props = []
        for line in fh:
            token = line.strip().split()
            if token[:2] == ["element", "vertex"]:
                n = int(token[2])
            elif token[0] == "property" and n:
                props.append(token[2])
            elif token[0] == "end_header":
                break
            elif token[0] == "element":
                raise ValueError("only vertex elements are supported")
        if props[:3] != ["x", "y", "z"]:
            raise ValueError("vertex element must start with x, y, z")
        data = np.array([[float(v) for v in fh.readline().split()] for _ in range(n)])
    data = data.reshape(n, len(props))
    inten = data[:, 3] if "intensity" in props else None
    return PointCloud(data[:, :3], inten)


def save_xyz(cloud: PointCloud, path) -> None:
    """Plain text, one whitespace-separated point per line."""
    with open(path, "w") as fh:
        for p in cloud.points:
            fh.write(f"{p[0]:.9g} {p[1]:.9g} {p[2]:.9g}\n")


def load_xyz(path) -> PointCloud:
    pts = np.loadtxt(path, ndmin=2)
    return PointCloud(pts[:, :3])
