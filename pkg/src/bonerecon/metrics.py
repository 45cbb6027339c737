"""Reconstruction metrics: Chamfer-L1, voxel IoU, F-score, normal consistency, per-axis MAE."""

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigurationError, InputError, PreconditionError
from .geom import face_normals, is_watertight, sample_surface
from .occupancy import InsideTester
from .register.icp import icp_rigid


@dataclass
class MetricsConfig:
    chamfer_samples: int = 100_000
    iou_pitch: float = 1.0 / 64
    fscore_t: float = 0.02
    nc_samples: int = 100_000
    axis_samples: int = 10_000
    icp_iters: int = 50
    icp_tol: float = 1e-10
    seed: int = 0
    units: str = "normalized"

    def __post_init__(self):
        if min(self.chamfer_samples, self.nc_samples, self.axis_samples) <= 0:
            raise ConfigurationError("sample counts must be positive")
        if self.fscore_t <= 0 or self.iou_pitch <= 0:
            raise ConfigurationError("threshold and voxel pitch must be positive")


@dataclass
class MetricsReport:
    iou: float
    chamfer_l1: float
    f_score: float
    nc: float
    maxe: float
    maye: float
    maze: float
    units: str = "normalized"
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())


def nearest(query, ref):
    """Distance and index of the nearest ``ref`` point for every query point (k-d tree)."""
    d, i = cKDTree(ref).query(query)
    return d, i


def nearest_brute(query, ref, chunk=2048):
    """O(n m) reference for ``nearest``."""
    d = np.empty(len(query))
    idx = np.empty(len(query), dtype=np.int64)
    for s in range(0, len(query), chunk):
        q = query[s:s + chunk]
        d2 = ((q[:, None, :] - ref[None, :, :]) ** 2).sum(-1)
        j = d2.argmin(axis=1)
        idx[s:s + chunk] = j
        d[s:s + chunk] = np.sqrt(d2[np.arange(len(q)), j])
    return d, idx


def _nonempty(*meshes):
    for m in meshes:
        if m.n_faces == 0:
            raise InputError("metric needs nonempty meshes")


def chamfer_l1(a, b, n=100_000, seed=0):
    """Symmetric mean nearest-sample distance; both meshes are sampled with ``seed``."""
    _nonempty(a, b)
    pa, _ = sample_surface(a, n, seed)
    pb, _ = sample_surface(b, n, seed)
    return 0.5 * (float(nearest(pa, pb)[0].mean()) + float(nearest(pb, pa)[0].mean()))


def occupancy_grids(a, b, pitch):
    """Centre-inside occupancy of both meshes on a grid spanning their joint bounding box."""
    present = [m for m in (a, b) if m.n_faces]
    if not present:
        return np.zeros(0, bool), np.zeros(0, bool)
    lo = np.min([m.bounds()[0] for m in present], axis=0)
    hi = np.max([m.bounds()[1] for m in present], axis=0)
    dims = np.maximum(np.ceil((hi - lo) / pitch - 1e-9).astype(np.int64), 1)
    axes = [lo[k] + (np.arange(dims[k]) + 0.5) * pitch for k in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    out = []
    for m in (a, b):
        if m.n_faces == 0:
            out.append(np.zeros(len(pts), bool))
            continue
        if not is_watertight(m):
            raise PreconditionError("voxel IoU needs watertight meshes")
        out.append(InsideTester(m, check=False)(pts))
    return out[0], out[1]


def voxel_iou(a, b, pitch=1.0 / 64):
    """|A and B| / |A or B| over voxel centres; 1.0 when both grids are empty.

    A mesh with no faces counts as empty; any other mesh must be watertight.
    """
    ga, gb = occupancy_grids(a, b, pitch)
    union = np.count_nonzero(ga | gb)
    if union == 0:
        return 1.0
    return np.count_nonzero(ga & gb) / union


def f_score(a, b, t=0.02, n=100_000, seed=0):
    if t <= 0:
        raise ConfigurationError("F-score threshold must be positive, got %r" % t)
    _nonempty(a, b)
    pa, _ = sample_surface(a, n, seed)
    pb, _ = sample_surface(b, n, seed)
    precision = float((nearest(pa, pb)[0] < t).mean())
    recall = float((nearest(pb, pa)[0] < t).mean())
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def normal_consistency(a, b, n=100_000, seed=0):
    """Mean |n_A . n_B| between each sample and its nearest sample on the other mesh, both ways."""
    _nonempty(a, b)
    na, nb = face_normals(a), face_normals(b)
    pa, fa = sample_surface(a, n, seed)
    pb, fb = sample_surface(b, n, seed)
    _, ab = nearest(pa, pb)
    _, ba = nearest(pb, pa)
    ca = np.abs((na[fa] * nb[fb[ab]]).sum(1)).mean()
    cb = np.abs((nb[fb] * na[fa[ba]]).sum(1)).mean()
    return float(0.5 * (ca + cb))


def axis_mae(a, b, cfg=None, details=False):
    """Per-axis mean absolute error after rigidly aligning samples of ``a`` to samples of ``b``."""
    cfg = cfg or MetricsConfig()
    _nonempty(a, b)
    pa, _ = sample_surface(a, cfg.axis_samples, cfg.seed)
    pb, _ = sample_surface(b, cfg.axis_samples, cfg.seed)
    tf = icp_rigid(pa, pb, cfg.icp_iters, cfg.icp_tol)
    moved = tf.apply(pa)
    _, j = nearest(moved, pb)
    err = np.abs(moved - pb[j]).mean(axis=0)
    out = tuple(float(e) for e in err)
    if details:
        return out, {"transform": tf, "source": pa, "target": pb}
    return out


def evaluate(pred, gt, cfg=None):
    cfg = cfg or MetricsConfig()
    maxe, maye, maze = axis_mae(pred, gt, cfg)
    return MetricsReport(
        iou=float(voxel_iou(pred, gt, cfg.iou_pitch)),
        chamfer_l1=chamfer_l1(pred, gt, cfg.chamfer_samples, cfg.seed),
        f_score=f_score(pred, gt, cfg.fscore_t, cfg.chamfer_samples, cfg.seed),
        nc=normal_consistency(pred, gt, cfg.nc_samples, cfg.seed),
        maxe=maxe, maye=maye, maze=maze,
        units=cfg.units, config=asdict(cfg),
    )
