"""Ground-truth occupancy: inside tests, uniform samples, voxel grids, minibatches."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ParseError, PreconditionError, SizeError
from .geom import is_watertight

# Fixed pseudo-random ray directions; the first three vote, the rest are retries.
_DIRS = np.random.default_rng(7919).normal(size=(16, 3))
RAY_DIRECTIONS = _DIRS / np.linalg.norm(_DIRS, axis=1, keepdims=True)
N_VOTES = 3
BARY_EPS = 1e-12
_PAIR_CHUNK = 4_000_000


class _RayCaster:
    """Triangles bucketed on a 2D grid in the plane orthogonal to one ray direction."""

    def __init__(self, mesh, direction):
        self.d = np.asarray(direction, dtype=np.float64)
        helper = np.array([1.0, 0.0, 0.0]) if abs(self.d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = np.cross(self.d, helper)
        e1 /= np.linalg.norm(e1)
        self.basis = np.stack([e1, np.cross(self.d, e1)], axis=1)
        tri = mesh.vertices[mesh.faces]
        self.v0 = tri[:, 0]
        self.e1 = tri[:, 1] - tri[:, 0]
        self.e2 = tri[:, 2] - tri[:, 0]
        uv = tri @ self.basis  # (m, 3, 2)
        lo, hi = uv.min(axis=1), uv.max(axis=1)
        span = (uv.reshape(-1, 2).max(axis=0) - uv.reshape(-1, 2).min(axis=0)).max()
        size = float(np.median((hi - lo).max(axis=1))) if len(tri) else 1.0
        self.h = max(size, span / 1024.0, 1e-12)
        self.origin = uv.reshape(-1, 2).min(axis=0) - self.h
        lo_c = np.floor((lo - self.origin) / self.h).astype(np.int64)
        hi_c = np.floor((hi - self.origin) / self.h).astype(np.int64)
        self.shape = hi_c.max(axis=0) + 2 if len(tri) else np.array([1, 1])
        nx = hi_c[:, 0] - lo_c[:, 0] + 1
        ny = hi_c[:, 1] - lo_c[:, 1] + 1
        cnt = nx * ny
        tri_id = np.repeat(np.arange(len(tri)), cnt)
        k = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        cx = lo_c[tri_id, 0] + k % np.repeat(nx, cnt)
        cy = lo_c[tri_id, 1] + k // np.repeat(nx, cnt)
        cell = cx * self.shape[1] + cy
        order = np.argsort(cell, kind="stable")
        self.tri_sorted = tri_id[order]
        ncell = int(self.shape[0] * self.shape[1])
        self.start = np.searchsorted(cell[order], np.arange(ncell + 1))

    def cast(self, points):
        """Return (odd crossing count, ambiguous) per point for rays along +d."""
        uv = points @ self.basis
        c = np.floor((uv - self.origin) / self.h).astype(np.int64)
        valid = (c >= 0).all(axis=1) & (c < self.shape).all(axis=1)
        cell = np.where(valid, c[:, 0] * self.shape[1] + c[:, 1], 0)
        s0 = self.start[cell]
        cnt = np.where(valid, self.start[cell + 1] - s0, 0)
        hits = np.zeros(len(points), dtype=np.int64)
        amb = np.zeros(len(points), dtype=bool)
        csum = np.cumsum(cnt)
        begin = 0
        while begin < len(points):
            base = csum[begin - 1] if begin else 0
            end = int(np.searchsorted(csum, base + _PAIR_CHUNK, side="right"))
            end = max(end, begin + 1)
            sl = slice(begin, end)
            pc = cnt[sl]
            pid = np.repeat(np.arange(begin, end), pc)
            off = np.arange(pc.sum()) - np.repeat(np.cumsum(pc) - pc, pc)
            tid = self.tri_sorted[np.repeat(s0[sl], pc) + off]
            h, a = self._intersect(points[pid], tid)
            hits += np.bincount(pid[h], minlength=len(points))
            amb |= np.bincount(pid[a], minlength=len(points)) > 0
            begin = end
        return hits % 2 == 1, amb

    def _intersect(self, o, tid):
        d = self.d
        e1, e2 = self.e1[tid], self.e2[tid]
        pvec = np.cross(d, e2)
        det = np.einsum("ij,ij->i", e1, pvec)
        ok = np.abs(det) > 1e-300
        inv = 1.0 / np.where(ok, det, 1.0)
        tvec = o - self.v0[tid]
        u = np.einsum("ij,ij->i", tvec, pvec) * inv
        qvec = np.cross(tvec, e1)
        v = (qvec @ d) * inv
        t = np.einsum("ij,ij->i", e2, qvec) * inv
        w = 1.0 - u - v
        hit = ok & (u >= 0) & (v >= 0) & (w >= 0) & (t > 0)
        near = ok & (u > -BARY_EPS) & (v > -BARY_EPS) & (w > -BARY_EPS) & (t > 0)
        amb = near & (np.minimum(np.minimum(np.abs(u), np.abs(v)), np.abs(w)) < BARY_EPS)
        return hit, amb


class InsideTester:
    """Parity inside test with a 3-ray majority vote, reusable across many queries."""

    def __init__(self, mesh, check=True):
        if check and not is_watertight(mesh):
            raise PreconditionError("inside test requires a watertight mesh")
        self.mesh = mesh
        self._casters = {}

    def _caster(self, k):
        if k not in self._casters:
            self._casters[k] = _RayCaster(self.mesh, RAY_DIRECTIONS[k])
        return self._casters[k]

    def __call__(self, points):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if self.mesh.n_faces == 0 or len(points) == 0:
            return np.zeros(len(points), dtype=bool)
        lo, hi = self.mesh.bounds()
        inbox = ((points >= lo) & (points <= hi)).all(axis=1)
        votes = np.zeros(len(points), dtype=np.int64)
        idx = np.flatnonzero(inbox)
        p = points[idx]
        next_dir = N_VOTES
        for k in range(N_VOTES):
            res, amb = self._caster(k).cast(p)
            pending = np.flatnonzero(amb)
            while len(pending) and next_dir < len(RAY_DIRECTIONS):
                r2, a2 = self._caster(next_dir).cast(p[pending])
                res[pending] = r2
                pending = pending[a2]
                next_dir += 1
            votes[idx] += res
        return votes >= 2


def point_inside(mesh, p):
    return bool(InsideTester(mesh)(np.asarray(p, dtype=np.float64)[None])[0])


def points_inside(mesh, points):
    return InsideTester(mesh)(points)


@dataclass
class OccupancySampleSet:
    points: np.ndarray  # (n, 3) float32
    labels: np.ndarray  # (n,) uint8
    seed: int
    mesh_id: str = ""

    def __len__(self):
        return len(self.labels)

    def save(self, path):
        path = Path(path)
        with open(path, "wb") as fh:
            fh.write(self.points.astype("<f4").tobytes())
            fh.write(self.labels.astype(np.uint8).tobytes())
        header = {"count": len(self), "seed": int(self.seed), "mesh_id": self.mesh_id}
        with open(str(path) + ".json", "w") as fh:
            json.dump(header, fh, sort_keys=True)

    @classmethod
    def load(cls, path):
        path = Path(path)
        with open(str(path) + ".json") as fh:
            header = json.load(fh)
        n = int(header["count"])
        raw = np.fromfile(path, dtype=np.uint8)
        if raw.size != 13 * n:
            raise ParseError("%s: expected %d bytes for %d samples, found %d" % (path, 13 * n, n, raw.size))
        pts = raw[:12 * n].view("<f4").reshape(n, 3).astype(np.float32)
        return cls(pts, raw[12 * n:].copy(), int(header["seed"]), header.get("mesh_id", ""))


def sample_uniform_occupancy(mesh, n, seed, mesh_id=""):
    """``n`` points uniform in [-0.5, 0.5]^3 labelled by the parity test."""
    rng = np.random.default_rng(seed)
    pts = (rng.random((n, 3)) - 0.5).astype(np.float32)
    labels = points_inside(mesh, pts.astype(np.float64)).astype(np.uint8) if n else np.zeros(0, np.uint8)
    return OccupancySampleSet(pts, labels, seed, mesh_id)


@dataclass
class MiniBatch:
    points: np.ndarray
    labels: np.ndarray

    @property
    def T(self):
        return len(self.labels)


def minibatch(samples, T=2048, seed=0, call_index=0):
    """Uniform subset of ``T`` samples without replacement, fixed by (seed, call_index)."""
    if T > len(samples):
        raise SizeError("minibatch of %d requested from %d samples" % (T, len(samples)))
    rng = np.random.default_rng([int(seed), int(call_index)])
    idx = rng.choice(len(samples), size=T, replace=False)
    return MiniBatch(samples.points[idx], samples.labels[idx])


def triangle_box_overlap(tri, center, half):
    """Separating-axis test of triangles (k, 3, 3) against cubes (k, 3) of half-size ``half``.

    Touching counts as overlapping.
    """
    v = tri - center[:, None, :]
    f = np.stack([v[:, 1] - v[:, 0], v[:, 2] - v[:, 1], v[:, 0] - v[:, 2]], axis=1)
    sep = np.zeros(len(tri), dtype=bool)
    for a in range(3):
        sep |= (v[:, :, a].min(axis=1) > half) | (v[:, :, a].max(axis=1) < -half)
    n = np.cross(f[:, 0], f[:, 1])
    d = np.einsum("ij,ij->i", n, v[:, 0])
    sep |= np.abs(d) > half * np.abs(n).sum(axis=1)
    eye = np.eye(3)
    for i in range(3):
        for j in range(3):
            axis = np.cross(eye[i][None, :], f[:, j])
            p = np.einsum("kvj,kj->kv", v, axis)
            r = half * np.abs(axis).sum(axis=1)
            sep |= (p.min(axis=1) > r) | (p.max(axis=1) < -r)
    return ~sep


def voxel_occupancy_grid(mesh, res=32):
    """Voxels of [-0.5, 0.5]^3 whose centre is inside or that touch a triangle."""
    if res < 2:
        raise ConfigurationError("voxel grid resolution must be >= 2, got %r" % res)
    pitch = 1.0 / res
    c = -0.5 + (np.arange(res) + 0.5) * pitch
    centers = np.stack(np.meshgrid(c, c, c, indexing="ij"), axis=-1).reshape(-1, 3)
    grid = InsideTester(mesh)(centers).reshape(res, res, res)
    tri = mesh.vertices[mesh.faces]
    lo = np.clip(np.ceil((tri.min(axis=1) + 0.5) * res).astype(np.int64) - 1, 0, res - 1)
    hi = np.clip(np.floor((tri.max(axis=1) + 0.5) * res).astype(np.int64), 0, res - 1)
    ext = hi - lo + 1
    cnt = ext.prod(axis=1)
    tid = np.repeat(np.arange(len(tri)), cnt)
    k = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
    ex = ext[tid]
    ijk = lo[tid] + np.stack([k % ex[:, 0], (k // ex[:, 0]) % ex[:, 1], k // (ex[:, 0] * ex[:, 1])], axis=1)
    centre = -0.5 + (ijk + 0.5) * pitch
    hit = triangle_box_overlap(tri[tid], centre, 0.5 * pitch)
    h = ijk[hit]
    grid[h[:, 0], h[:, 1], h[:, 2]] = True
    return grid
