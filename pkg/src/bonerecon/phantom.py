"""Synthetic torso phantoms: ribs as capsule polylines, vertebrae as cylinders."""

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError, GenerationError
from .extract.mcubes import marching_cubes
from .geom import TriMesh, Volume3D, is_watertight


@dataclass
class PhantomSpec:
    torso_axes: tuple = (140.0, 100.0, 150.0)  # semi-axes, mm
    ribs_per_side: int = 6
    rib_radius: float = 7.0
    rib_arc: tuple = (115.0, 78.0)  # ellipse semi-axes in the axial plane
    rib_angles: tuple = (25.0, 140.0)  # degrees from posterior
    rib_spacing: float = 22.0
    rib_drop: float = 25.0
    vertebra_count: int = 6
    vertebra_radius: float = 14.0
    vertebra_height: float = 16.0
    vertebra_spacing: float = 24.0
    spine_y: float = 70.0
    bone: float = 0.5
    soft: float = 0.02
    air: float = 0.0
    dims: tuple = (64, 64, 64)
    spacing: tuple = (5.0, 5.0, 5.0)
    jitter: float = 1.0  # 0 gives the unperturbed template geometry

    def __post_init__(self):
        for name in ("torso_axes", "rib_arc", "rib_angles", "dims", "spacing"):
            setattr(self, name, tuple(getattr(self, name)))
        self.dims = tuple(int(d) for d in self.dims)
        if not self.bone > self.soft > self.air:
            raise ConfigurationError("attenuation must satisfy bone > soft tissue > air")
        positive = [*self.torso_axes, self.rib_radius, *self.rib_arc, self.rib_spacing, self.vertebra_radius,
                    self.vertebra_height, self.vertebra_spacing, *self.spacing]
        if min(positive) <= 0 or min(self.dims) < 2:
            raise ConfigurationError("geometric parameters must be positive")
        if self.ribs_per_side < 0 or self.vertebra_count < 0 or self.jitter < 0:
            raise ConfigurationError("counts and jitter must be non-negative")

    def to_dict(self):
        return asdict(self)


@dataclass
class Part:
    label: str
    kind: str  # "rib" or "vertebra"
    params: dict

    def sdf(self, p):
        if self.kind == "rib":
            return _polyline_sdf(p, np.asarray(self.params["points"]), self.params["radius"])
        return _cylinder_sdf(p, np.asarray(self.params["center"]), self.params["radius"], self.params["height"])

    def bounds(self):
        if self.kind == "rib":
            pts, r = np.asarray(self.params["points"]), self.params["radius"]
            return pts.min(axis=0) - r, pts.max(axis=0) + r
        c = np.asarray(self.params["center"])
        ext = np.array([self.params["radius"], self.params["radius"], self.params["height"] / 2])
        return c - ext, c + ext


def _polyline_sdf(p, pts, radius):
    a, b = pts[:-1], pts[1:]
    best = np.full(len(p), np.inf)
    for s in range(len(a)):
        ab = b[s] - a[s]
        t = np.clip((p - a[s]) @ ab / (ab @ ab), 0.0, 1.0)
        best = np.minimum(best, np.linalg.norm(p - a[s] - t[:, None] * ab, axis=1))
    return best - radius


def _cylinder_sdf(p, center, radius, height):
    q = p - center
    dr = np.hypot(q[:, 0], q[:, 1]) - radius
    dz = np.abs(q[:, 2]) - height / 2
    outside = np.hypot(np.maximum(dr, 0), np.maximum(dz, 0))
    return np.minimum(np.maximum(dr, dz), 0.0) + outside


def vertebra_label(i, n):
    """Vertebrae are split top to bottom into cervical, thoracic and lumbar thirds."""
    group = min(3 * i // max(n, 1), 2)
    return ("cervical", "thoracic", "lumbar")[group]


def phantom_parts(spec, seed=0):
    rng = np.random.default_rng(seed)
    j = spec.jitter
    parts = []
    zc = (np.arange(spec.vertebra_count) - (spec.vertebra_count - 1) / 2) * spec.vertebra_spacing
    for i, z in enumerate(zc[::-1]):
        dx = j * rng.uniform(-2.0, 2.0)
        parts.append(Part(vertebra_label(i, spec.vertebra_count), "vertebra",
                          {"center": [dx, spec.spine_y, float(z)], "radius": spec.vertebra_radius,
                           "height": spec.vertebra_height}))
    zr = (np.arange(spec.ribs_per_side) - (spec.ribs_per_side - 1) / 2) * spec.rib_spacing
    phi = np.deg2rad(np.linspace(spec.rib_angles[0], spec.rib_angles[1], 9))
    for side, tag in ((-1.0, "L"), (1.0, "R")):
        for k, z0 in enumerate(zr[::-1]):
            ra = spec.rib_arc[0] * (1 + j * rng.uniform(-0.06, 0.06))
            rb = spec.rib_arc[1] * (1 + j * rng.uniform(-0.06, 0.06))
            drop = spec.rib_drop + j * rng.uniform(-5.0, 5.0)
            s = (phi - phi[0]) / (phi[-1] - phi[0])
            arc = np.stack([side * ra * np.sin(phi), rb * np.cos(phi), z0 - drop * s], axis=1)
            head = np.array([[side * (spec.vertebra_radius + 0.5 * spec.rib_radius), spec.spine_y, z0]])
            parts.append(Part("rib_%s%d" % (tag, k + 1), "rib",
                              {"points": np.vstack([head, arc]).tolist(), "radius": spec.rib_radius}))
    return parts


def _grid_axes(spec):
    dims, sp = np.asarray(spec.dims), np.asarray(spec.spacing)
    origin = -0.5 * dims * sp
    return origin, [origin[a] + (np.arange(dims[a]) + 0.5) * sp[a] for a in range(3)]


def _mesh_of(sdf, origin, spacing, dims):
    """Watertight zero level set of ``sdf`` sampled at voxel centres of the given grid."""
    axes = [origin[a] + (np.arange(dims[a]) + 0.5) * spacing[a] for a in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    vals = -sdf(pts).reshape(tuple(dims))
    start = np.array([ax[0] for ax in axes])
    return marching_cubes(vals, 0.0, origin=start, spacing=spacing, pad_value=-1.0)


def bone_sdf(parts):
    def f(p):
        out = np.full(len(p), np.inf)
        for part in parts:
            out = np.minimum(out, part.sdf(p))
        return out
    return f


def phantom_generate(spec, seed=0):
    """Return (volume, bone mesh, parts). The mesh is in the volume's mm frame."""
    parts = phantom_parts(spec, seed)
    origin, axes = _grid_axes(spec)
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    torso = ((pts / np.asarray(spec.torso_axes)) ** 2).sum(axis=1) <= 1.0
    sdf = bone_sdf(parts)(pts)
    values = np.where(torso, spec.soft, spec.air)
    values = np.where(sdf <= 0, spec.bone, values).reshape(spec.dims)
    vol = Volume3D(values.astype(np.float64), spec.spacing, origin)
    if not parts:
        return vol, TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)), parts
    mesh = _mesh_of(bone_sdf(parts), origin, np.asarray(spec.spacing), np.asarray(spec.dims))
    if not is_watertight(mesh):
        raise GenerationError("phantom bone mesh (seed %d) is not watertight; try another seed" % seed)
    return vol, mesh, parts


def part_mesh(part, spec):
    """Mesh one part on the volume's voxel lattice, restricted to its bounding box."""
    origin, _ = _grid_axes(spec)
    sp = np.asarray(spec.spacing)
    lo, hi = part.bounds()
    i0 = np.maximum(np.floor((lo - origin) / sp).astype(int) - 2, 0)
    i1 = np.minimum(np.ceil((hi - origin) / sp).astype(int) + 2, np.asarray(spec.dims))
    mesh = _mesh_of(part.sdf, origin + i0 * sp, sp, i1 - i0)
    if not is_watertight(mesh):
        raise GenerationError("part %s is not watertight" % part.label)
    return mesh
