"""Core geometry types, mesh/volume I/O and unit-box normalization."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateGeometryError, FormatError, InputError, ParseError

MESH_FORMATS = (".off", ".obj", ".ply")


@dataclass
class TriMesh:
    """Indexed triangle mesh.

    ``vertices`` is (n, 3) float64, ``faces`` is (m, 3) int64 with indices into
    ``vertices``. ``labels`` optionally tags every vertex with an integer part id
    indexing ``part_names``.
    """

    vertices: np.ndarray
    faces: np.ndarray
    labels: np.ndarray | None = field(default=None, compare=False)
    part_names: tuple = field(default=(), compare=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces):
            if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
                raise InputError("face index out of range for %d vertices" % len(self.vertices))
            f = self.faces
            bad = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
            if bad.any():
                raise InputError("degenerate face %d (repeated vertex index)" % int(np.flatnonzero(bad)[0]))

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_faces(self):
        return len(self.faces)

    def copy(self):
        labels = None if self.labels is None else self.labels.copy()
        return TriMesh(self.vertices.copy(), self.faces.copy(), labels, self.part_names)

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def edges(self):
        """Unique undirected edges as a sorted (k, 2) array."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e = np.sort(e, axis=1)
        return np.unique(e, axis=0)

    def face_areas(self):
        v = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def signed_volume(self):
        v = self.vertices[self.faces]
        return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)

    def euler_characteristic(self):
        used = np.unique(self.faces)
        return len(used) - len(self.edges()) + self.n_faces

    def flipped(self):
        return TriMesh(self.vertices.copy(), self.faces[:, ::-1].copy(), self.labels, self.part_names)

    def transformed(self, fn):
        return TriMesh(fn(self.vertices), self.faces.copy(), self.labels, self.part_names)


def concatenate(meshes):
    verts, faces, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + off)
        off += m.n_vertices
    if not verts:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return TriMesh(np.concatenate(verts), np.concatenate(faces))


@dataclass
class Volume3D:
    """Regular scalar grid; ``values[i, j, k]`` is voxel (i, j, k) with x along axis 0.

    ``origin`` is the corner of voxel (0, 0, 0), all lengths in millimeters.
    """

    values: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise InputError("volume values must be a non-empty 3D array, got shape %s" % (self.values.shape,))
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        if len(self.spacing) != 3 or min(self.spacing) <= 0:
            raise InputError("spacing must be three positive values")

    @property
    def dims(self):
        return tuple(int(d) for d in self.values.shape)

    @property
    def extent(self):
        return np.asarray(self.dims) * np.asarray(self.spacing)

    @property
    def center(self):
        return np.asarray(self.origin) + 0.5 * self.extent

    def voxel_centers(self):
        axes = [self.origin[a] + (np.arange(self.dims[a]) + 0.5) * self.spacing[a] for a in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


@dataclass(frozen=True)
class UnitBoxTransform:
    """x -> scale * x + translation."""

    scale: float
    translation: tuple

    def apply(self, points):
        return self.scale * np.asarray(points, dtype=np.float64) + np.asarray(self.translation)

    def inverse(self, points):
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.translation)) / self.scale

    def to_dict(self):
        return {"scale": float(self.scale), "translation": [float(t) for t in self.translation]}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["scale"]), tuple(float(t) for t in d["translation"]))


def normalize_to_unit_box(mesh, pad=0.05):
    """Center the bounding box at the origin and scale its longest edge to ``1 - 2*pad``."""
    if mesh.n_vertices == 0:
        raise InputError("cannot normalize a mesh without vertices")
    lo, hi = mesh.bounds()
    extent = float((hi - lo).max())
    if extent <= 0:
        raise DegenerateGeometryError("mesh has zero extent")
    scale = (1.0 - 2.0 * pad) / extent
    center = 0.5 * (lo + hi)
    if abs(scale - 1.0) < 1e-12:
        scale = 1.0
    tf = UnitBoxTransform(scale, tuple(float(t) for t in -scale * center))
    return TriMesh(tf.apply(mesh.vertices), mesh.faces.copy(), mesh.labels, mesh.part_names), tf


def face_normals(mesh):
    v = mesh.vertices[mesh.faces]
    n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    norm = np.linalg.norm(n, axis=1)
    scale = np.abs(v).max() if len(v) else 1.0
    bad = norm <= 1e-300 + 1e-14 * max(scale, 1e-300) ** 2
    if bad.any():
        raise DegenerateGeometryError("zero-area face %d" % int(np.flatnonzero(bad)[0]))
    return n / norm[:, None]


def is_watertight(mesh):
    """Every undirected edge is used exactly twice, once in each direction."""
    if mesh.n_faces == 0:
        return False
    f = mesh.faces
    directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    n = mesh.n_vertices
    key = directed[:, 0] * n + directed[:, 1]
    if len(np.unique(key)) != len(key):
        return False
    rev = directed[:, 1] * n + directed[:, 0]
    return bool(np.isin(rev, key).all())


def sample_surface(mesh, n, seed):
    """Area-weighted uniform surface samples. Returns (points, face_index)."""
    if mesh.n_faces == 0:
        raise InputError("cannot sample an empty mesh")
    rng = np.random.default_rng(seed)
    areas = mesh.face_areas()
    cdf = np.cumsum(areas)
    cdf /= cdf[-1]
    fidx = np.searchsorted(cdf, rng.random(n), side="right")
    fidx = np.minimum(fidx, mesh.n_faces - 1)
    r = rng.random((n, 2))
    flip = r.sum(axis=1) > 1
    r[flip] = 1 - r[flip]
    v = mesh.vertices[mesh.faces[fidx]]
    pts = v[:, 0] + r[:, :1] * (v[:, 1] - v[:, 0]) + r[:, 1:] * (v[:, 2] - v[:, 0])
    return pts, fidx


# ---------------------------------------------------------------- mesh I/O


def _ext(path):
    ext = Path(path).suffix.lower()
    if ext not in MESH_FORMATS:
        raise FormatError("unsupported mesh format %r (expected one of %s)" % (ext, ", ".join(MESH_FORMATS)))
    return ext


def _tokens(path):
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if line:
                yield lineno, line.split()


def _fan(poly):
    return [(poly[0], poly[i], poly[i + 1]) for i in range(1, len(poly) - 1)]


def _load_off(path):
    it = _tokens(path)
    try:
        lineno, tok = next(it)
    except StopIteration:
        raise ParseError("%s: empty file" % path) from None
    if tok[0].upper() != "OFF":
        raise ParseError("%s line %d: missing OFF header" % (path, lineno))
    tok = tok[1:]
    if not tok:
        try:
            lineno, tok = next(it)
        except StopIteration:
            raise ParseError("%s: missing counts line" % path) from None
    try:
        nv, nf = int(tok[0]), int(tok[1])
    except (ValueError, IndexError):
        raise ParseError("%s line %d: bad counts line" % (path, lineno)) from None
    verts, faces = [], []
    for _ in range(nv):
        try:
            lineno, tok = next(it)
            verts.append([float(t) for t in tok[:3]])
            if len(tok) < 3:
                raise ValueError
        except StopIteration:
            raise ParseError("%s: expected %d vertices, file ended" % (path, nv)) from None
        except ValueError:
            raise ParseError("%s line %d: bad vertex" % (path, lineno)) from None
    for _ in range(nf):
        try:
            lineno, tok = next(it)
            k = int(tok[0])
            idx = [int(t) for t in tok[1:1 + k]]
            if k < 3 or len(idx) != k:
                raise ValueError
        except StopIteration:
            raise ParseError("%s: expected %d faces, file ended" % (path, nf)) from None
        except ValueError:
            raise ParseError("%s line %d: bad face" % (path, lineno)) from None
        if min(idx) < 0 or max(idx) >= nv:
            raise ParseError("%s line %d: face index out of range" % (path, lineno))
        faces.extend(_fan(idx))
    return verts, faces


def _load_obj(path):
    verts, faces, seen = [], [], False
    for lineno, tok in _tokens(path):
        seen = True
        if tok[0] == "v":
            try:
                verts.append([float(t) for t in tok[1:4]])
                if len(tok) < 4:
                    raise ValueError
            except ValueError:
                raise ParseError("%s line %d: bad vertex" % (path, lineno)) from None
        elif tok[0] == "f":
            idx = []
            for t in tok[1:]:
                try:
                    i = int(t.split("/")[0])
                except ValueError:
                    raise ParseError("%s line %d: bad face index %r" % (path, lineno, t)) from None
                if i == 0:
                    raise ParseError("%s line %d: OBJ indices are 1-based, got 0" % (path, lineno))
                i = i - 1 if i > 0 else len(verts) + i
                if i < 0 or i >= len(verts):
                    raise ParseError("%s line %d: face index out of range" % (path, lineno))
                idx.append(i)
            if len(idx) < 3:
                raise ParseError("%s line %d: face with fewer than 3 vertices" % (path, lineno))
            faces.extend(_fan(idx))
    if not seen and not open(path).read().strip():
        # a comment-only file is a valid empty mesh
        raise ParseError("%s: empty file" % path)
    return verts, faces


def _load_ply(path):
    it = _tokens(path)
    try:
        lineno, tok = next(it)
    except StopIteration:
        raise ParseError("%s: empty file" % path) from None
    if tok != ["ply"]:
        raise ParseError("%s line %d: missing ply magic" % (path, lineno))
    elements = []
    for lineno, tok in it:
        if tok[0] == "format":
            if tok[1] != "ascii":
                raise FormatError("%s: only ascii PLY is supported, got %s" % (path, tok[1]))
        elif tok[0] == "element":
            elements.append([tok[1], int(tok[2]), []])
        elif tok[0] == "property":
            if not elements:
                raise ParseError("%s line %d: property before element" % (path, lineno))
            elements[-1][2].append(tok[-1])
        elif tok[0] == "end_header":
            break
        elif tok[0] in ("comment", "obj_info"):
            continue
        else:
            raise ParseError("%s line %d: unexpected header line" % (path, lineno))
    else:
        raise ParseError("%s: missing end_header" % path)
    verts, faces = [], []
    for name, count, props in elements:
        for _ in range(count):
            try:
                lineno, tok = next(it)
            except StopIteration:
                raise ParseError("%s: file ended inside element %s" % (path, name)) from None
            try:
                if name == "vertex":
                    vals = dict(zip(props, tok))
                    verts.append([float(vals["x"]), float(vals["y"]), float(vals["z"])])
                elif name == "face":
                    k = int(tok[0])
                    idx = [int(t) for t in tok[1:1 + k]]
                    if k < 3 or len(idx) != k:
                        raise ValueError
                    if min(idx) < 0 or max(idx) >= len(verts):
                        raise ParseError("%s line %d: face index out of range" % (path, lineno))
                    faces.extend(_fan(idx))
            except (ValueError, KeyError):
                raise ParseError("%s line %d: bad %s record" % (path, lineno, name)) from None
    return verts, faces


def load_mesh(path):
    ext = _ext(path)
    loader = {".off": _load_off, ".obj": _load_obj, ".ply": _load_ply}[ext]
    verts, faces = loader(path)
    try:
        return TriMesh(np.array(verts, dtype=np.float64).reshape(-1, 3),
                       np.array(faces, dtype=np.int64).reshape(-1, 3))
    except InputError as exc:
        raise ParseError("%s: %s" % (path, exc)) from None


def save_mesh(mesh, path):
    ext = _ext(path)
    lines = []
    vfmt = "%.17g %.17g %.17g"
    if ext == ".off":
        lines.append("OFF")
        lines.append("%d %d 0" % (mesh.n_vertices, mesh.n_faces))
        lines += [vfmt % tuple(v) for v in mesh.vertices]
        lines += ["3 %d %d %d" % tuple(f) for f in mesh.faces]
    elif ext == ".obj":
        lines += ["v " + vfmt % tuple(v) for v in mesh.vertices]
        lines += ["f %d %d %d" % tuple(f + 1) for f in mesh.faces]
        if not lines:
            lines.append("# empty mesh")
    else:
        lines += ["ply", "format ascii 1.0",
                  "element vertex %d" % mesh.n_vertices,
                  "property double x", "property double y", "property double z",
                  "element face %d" % mesh.n_faces,
                  "property list uchar int vertex_indices", "end_header"]
        lines += [vfmt % tuple(v) for v in mesh.vertices]
        lines += ["3 %d %d %d" % tuple(f) for f in mesh.faces]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------- volume I/O


def save_volume(volume, path):
    """Raw little-endian float32, x fastest, plus a ``.json`` sidecar."""
    path = Path(path)
    volume.values.astype("<f4").ravel(order="F").tofile(path)
    meta = {"dims": list(volume.dims), "spacing": list(volume.spacing), "origin": list(volume.origin)}
    with open(str(path) + ".json", "w") as fh:
        json.dump(meta, fh, sort_keys=True)


def load_volume(path):
    path = Path(path)
    with open(str(path) + ".json") as fh:
        meta = json.load(fh)
    dims = tuple(int(d) for d in meta["dims"])
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != int(np.prod(dims)):
        raise ParseError("%s: expected %d values, found %d" % (path, int(np.prod(dims)), raw.size))
    return Volume3D(raw.reshape(dims, order="F").astype(np.float64), meta["spacing"], meta["origin"])


def ensure_parent(path):
    parent = os.path.dirname(os.fspath(path))
    if parent:
        os.makedirs(parent, exist_ok=True)


def closest_point_on_triangles(p, a, b, c):
    """Closest points on triangles (a, b, c) to points p, all arrays of shape (k, 3)."""
    ab, ac, ap = b - a, c - a, p - a
    d1 = np.einsum("ij,ij->i", ab, ap)
    d2 = np.einsum("ij,ij->i", ac, ap)
    bp = p - b
    d3 = np.einsum("ij,ij->i", ab, bp)
    d4 = np.einsum("ij,ij->i", ac, bp)
    cp = p - c
    d5 = np.einsum("ij,ij->i", ab, cp)
    d6 = np.einsum("ij,ij->i", ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    denom = va + vb + vc
    denom = np.where(denom == 0, 1.0, denom)
    v = vb / denom
    w = vc / denom
    out = a + v[:, None] * ab + w[:, None] * ac

    def sel(mask, val):
        out[mask] = val[mask]

    with np.errstate(divide="ignore", invalid="ignore"):
        # edge regions
        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        sel(m, a + (d1 / (d1 - d3))[:, None] * ab)
        m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        sel(m, a + (d2 / (d2 - d6))[:, None] * ac)
        m = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        sel(m, b + ((d4 - d3) / ((d4 - d3) + (d5 - d6)))[:, None] * (c - b))
        # vertex regions
        sel((d1 <= 0) & (d2 <= 0), a)
        sel((d3 >= 0) & (d4 <= d3), b)
        sel((d6 >= 0) & (d5 <= d6), c)
    return out


def point_mesh_distance(points, mesh, chunk=2000000):
    """Exact unsigned distance from each point to the mesh surface (brute force over faces)."""
    points = np.asarray(points, dtype=np.float64)
    tri = mesh.vertices[mesh.faces]
    best = np.full(len(points), np.inf)
    step = max(1, chunk // max(1, mesh.n_faces))
    for s in range(0, len(points), step):
        p = points[s:s + step]
        k = len(p)
        pp = np.repeat(p, mesh.n_faces, axis=0)
        t = np.tile(tri, (k, 1, 1))
        q = closest_point_on_triangles(pp, t[:, 0], t[:, 1], t[:, 2])
        d = np.linalg.norm(pp - q, axis=1).reshape(k, mesh.n_faces)
        best[s:s + step] = d.min(axis=1)
    return best
