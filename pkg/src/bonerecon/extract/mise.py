"""Multiresolution isosurface extraction over an occupancy field."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError
from .mcubes import CORNERS, marching_cubes

# value written around the grid before meshing so that every surface is closed
PAD_VALUE = 0.0


@dataclass
class ExtractionConfig:
    init_res: int = 32
    upsample_steps: int = 2
    tau: float = 0.2
    simplify_target_faces: int = 20000
    refine_iters: int = 5
    batch_points: int = 65536

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise ConfigurationError("tau must lie in (0, 1), got %r" % self.tau)
        if self.init_res < 8:
            raise ConfigurationError("init_res must be >= 8, got %r" % self.init_res)
        if self.upsample_steps < 0:
            raise ConfigurationError("upsample_steps must be >= 0")

    @property
    def final_points(self):
        return self.init_res * 2 ** self.upsample_steps + 1


@dataclass
class AdaptiveOccupancyGrid:
    """Final-resolution point grid; NaN marks points the field never saw."""

    values: np.ndarray
    tau: float
    n_evals: int = 0
    active_per_level: list = field(default_factory=list)

    @property
    def resolution(self):
        return self.values.shape[0] - 1

    @property
    def evaluated(self):
        return np.isfinite(self.values)

    def to_mesh(self):
        return extract_surface(self.values, self.tau)

    def stats(self):
        n = self.values.size
        return {"final_points": int(self.values.shape[0]), "n_evals": int(self.n_evals),
                "dense_evals": int(n), "eval_fraction": self.n_evals / n,
                "active_per_level": [int(a) for a in self.active_per_level]}


def grid_coords(n):
    return np.linspace(-0.5, 0.5, n)


def extract_surface(values, tau):
    """Marching cubes in logit space on a [-0.5, 0.5]^3 probability grid, closed at the border."""
    n = values.shape[0]
    return marching_cubes(values, tau, origin=(-0.5,) * 3, spacing=1.0 / (n - 1),
                          interp="logit", pad_value=PAD_VALUE)


def dense_grid(field_fn, n, batch_points=65536):
    x = grid_coords(n)
    pts = np.stack(np.meshgrid(x, x, x, indexing="ij"), axis=-1).reshape(-1, 3)
    out = np.empty(len(pts))
    for s in range(0, len(pts), batch_points):
        out[s:s + batch_points] = field_fn(pts[s:s + batch_points])
    return out.reshape(n, n, n)


class _Evaluator:
    def __init__(self, field_fn, values, batch_points):
        self.field_fn = field_fn
        self.values = values
        self.n = values.shape[0]
        self.coords = grid_coords(self.n)
        self.batch = batch_points
        self.count = 0

    def __call__(self, flat_idx):
        flat_idx = np.unique(flat_idx)
        flat_idx = flat_idx[~np.isfinite(self.values.ravel()[flat_idx])]
        if len(flat_idx) == 0:
            return 0
        ijk = np.stack(np.unravel_index(flat_idx, self.values.shape), axis=1)
        pts = self.coords[ijk]
        out = np.empty(len(pts))
        for s in range(0, len(pts), self.batch):
            out[s:s + self.batch] = self.field_fn(pts[s:s + self.batch])
        self.values.ravel()[flat_idx] = out
        self.count += len(flat_idx)
        return len(flat_idx)


def _mixed_cells(sub, tau):
    """Cells of ``sub`` whose evaluated corners lie on both sides of tau."""
    fin = np.isfinite(sub)
    ins = fin & (sub >= tau)
    out = fin & (sub < tau)
    n0, n1, n2 = sub.shape
    any_in = np.zeros((n0 - 1, n1 - 1, n2 - 1), dtype=bool)
    any_out = np.zeros_like(any_in)
    full = np.ones_like(any_in)
    for ox, oy, oz in CORNERS:
        sl = (slice(ox, ox + n0 - 1), slice(oy, oy + n1 - 1), slice(oz, oz + n2 - 1))
        any_in |= ins[sl]
        any_out |= out[sl]
        full &= fin[sl]
    return any_in & any_out, full


def _cell_points(cells, cell_shape, stride, offsets, full_shape):
    """Full-grid flat indices of ``offsets`` (in units of ``stride``) from each cell corner."""
    ijk = np.stack(np.unravel_index(cells, cell_shape), axis=1) * stride
    pts = (ijk[:, None, :] + offsets[None, :, :] * stride).reshape(-1, 3)
    return np.ravel_multi_index(pts.T, full_shape)


def _close(values, tau, stride, evaluate):
    """Evaluate every corner of cells (at ``stride``) that straddle tau, until stable."""
    sl = (slice(None, None, stride),) * 3
    while True:
        sub = values[sl]
        mixed, full = _mixed_cells(sub, tau)
        todo = np.flatnonzero(mixed & ~full)
        if len(todo) == 0:
            return mixed
        idx = _cell_points(todo, mixed.shape, stride, CORNERS, values.shape)
        if evaluate(idx) == 0:
            return mixed


def mise(field_fn, cfg):
    """Evaluate ``field_fn`` (points -> probabilities) on an adaptively refined grid.

    Starting at ``init_res`` cells per axis, cells whose corners straddle tau are
    subdivided until the final resolution. At each level, cells that straddle tau
    through any evaluated corner have all of their corners evaluated, which
    tracks every surface component the coarse grid has seen. Components that fit
    inside one coarse cell without touching a coarse grid point can be missed.
    """
    n = cfg.final_points
    values = np.full((n, n, n), np.nan)
    ev = _Evaluator(field_fn, values, cfg.batch_points)
    stride = 2 ** cfg.upsample_steps
    coarse = np.arange(0, n, stride)
    ci = np.stack(np.meshgrid(coarse, coarse, coarse, indexing="ij"), axis=-1).reshape(-1, 3)
    ev(np.ravel_multi_index(ci.T, values.shape))
    active = []
    sub_offsets = np.array([[a, b, c] for a in range(3) for b in range(3) for c in range(3)])
    while True:
        mixed = _close(values, cfg.tau, stride, ev)
        active.append(int(mixed.sum()))
        if stride == 1:
            break
        half = stride // 2
        cells = np.flatnonzero(mixed)
        if len(cells):
            ijk = np.stack(np.unravel_index(cells, mixed.shape), axis=1) * stride
            pts = (ijk[:, None, :] + sub_offsets[None] * half).reshape(-1, 3)
            ev(np.ravel_multi_index(pts.T, values.shape))
        stride = half
    _close_border(values, cfg.tau, ev)
    return AdaptiveOccupancyGrid(values, cfg.tau, ev.count, active)


def _close_border(values, tau, evaluate):
    """Closure on the padded grid, so border cells match a padded dense grid."""
    while True:
        padded = np.pad(values, 1, mode="constant", constant_values=PAD_VALUE)
        mixed, full = _mixed_cells(padded, tau)
        todo = np.flatnonzero(mixed & ~full)
        if len(todo) == 0:
            return
        idx = np.stack(np.unravel_index(todo, mixed.shape), axis=1)
        pts = (idx[:, None, :] + CORNERS[None]).reshape(-1, 3) - 1
        n = values.shape[0]
        inside = ((pts >= 0) & (pts < n)).all(axis=1)
        if evaluate(np.ravel_multi_index(pts[inside].T, values.shape)) == 0:
            return
