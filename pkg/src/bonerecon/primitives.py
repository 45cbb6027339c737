"""Closed test meshes and SDF meshing."""

import numpy as np

from .extract.mcubes import marching_cubes
from .geom import TriMesh


def icosphere(subdivisions=3, radius=1.0, center=(0.0, 0.0, 0.0)):
    """Geodesic sphere; ``subdivisions=3`` gives 642 vertices and 1280 faces."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    v = np.array(verts) * radius + np.asarray(center, dtype=float)
    return TriMesh(v, np.array(faces))


def box(lo=(-0.5, -0.5, -0.5), hi=(0.5, 0.5, 0.5), divisions=1):
    """Axis-aligned box, each face split into ``divisions``^2 squares (2 triangles each)."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    n = int(divisions)
    index = {}
    verts, faces = [], []

    def vid(g):
        if g not in index:
            index[g] = len(verts)
            verts.append(lo + (hi - lo) * np.array(g) / n)
        return index[g]

    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        for side in (0, n):
            for i in range(n):
                for j in range(n):
                    quad = []
                    for di, dj in ((0, 0), (1, 0), (1, 1), (0, 1)):
                        g = [0, 0, 0]
                        g[a], g[b], g[c] = side, i + di, j + dj
                        quad.append(vid(tuple(g)))
                    if side == 0:
                        quad = quad[::-1]
                    faces += [(quad[0], quad[1], quad[2]), (quad[0], quad[2], quad[3])]
    return TriMesh(np.array(verts), np.array(faces))


def cylinder(radius=0.1, height=0.5, segments=24, rings=8, center=(0.0, 0.0, 0.0), axis=2):
    """Capped cylinder along ``axis`` with a centre vertex on each cap."""
    ang = 2 * np.pi * np.arange(segments) / segments
    zs = np.linspace(-height / 2, height / 2, rings + 1)
    verts = [(radius * np.cos(a), radius * np.sin(a), z) for z in zs for a in ang]
    faces = []
    for r in range(rings):
        for s in range(segments):
            a, b = r * segments + s, r * segments + (s + 1) % segments
            c, d = a + segments, b + segments
            faces += [(a, b, d), (a, d, c)]
    bot = len(verts)
    verts.append((0.0, 0.0, zs[0]))
    top = len(verts)
    verts.append((0.0, 0.0, zs[-1]))
    for s in range(segments):
        faces.append((bot, (s + 1) % segments, s))
        t0 = rings * segments
        faces.append((top, t0 + s, t0 + (s + 1) % segments))
    v = np.array(verts)
    v = np.roll(v, axis - 2, axis=1)
    return TriMesh(v + np.asarray(center, float), np.array(faces))


def torus(major=0.25, minor=0.08, n_major=32, n_minor=16):
    verts, faces = [], []
    for i in range(n_major):
        u = 2 * np.pi * i / n_major
        for j in range(n_minor):
            w = 2 * np.pi * j / n_minor
            r = major + minor * np.cos(w)
            verts.append((r * np.cos(u), r * np.sin(u), minor * np.sin(w)))
    for i in range(n_major):
        for j in range(n_minor):
            a = i * n_minor + j
            b = ((i + 1) % n_major) * n_minor + j
            c = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
            d = i * n_minor + (j + 1) % n_minor
            faces += [(a, b, c), (a, c, d)]
    return TriMesh(np.array(verts), np.array(faces))


def mesh_from_sdf(sdf, lo, hi, res):
    """Zero level set of a signed distance function (negative inside) on a ``res``^3 point grid."""
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    axes = [np.linspace(lo[a], hi[a], res) for a in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    vals = -sdf(pts).reshape(res, res, res)
    return marching_cubes(vals, 0.0, origin=lo, spacing=(hi - lo) / (res - 1), pad_value=-1.0)


def sdf_sphere(center, radius):
    center = np.asarray(center, float)
    return lambda p: np.linalg.norm(p - center, axis=1) - radius


def sdf_capsule(a, b, radius):
    a, b = np.asarray(a, float), np.asarray(b, float)
    ab = b - a

    def f(p):
        t = np.clip((p - a) @ ab / (ab @ ab), 0.0, 1.0)
        return np.linalg.norm(p - a - t[:, None] * ab, axis=1) - radius
    return f


def dumbbell(radius=0.2, separation=0.6, neck=0.05, res=33):
    """Two spheres joined by a thin capsule; a high-curvature geodesic fixture."""
    c1, c2 = (-separation / 2, 0, 0), (separation / 2, 0, 0)
    s1, s2 = sdf_sphere(c1, radius), sdf_sphere(c2, radius)
    bar = sdf_capsule(c1, c2, neck)
    ext = separation / 2 + radius + 0.05
    return mesh_from_sdf(lambda p: np.minimum(np.minimum(s1(p), s2(p)), bar(p)),
                         (-ext, -radius - 0.05, -radius - 0.05), (ext, radius + 0.05, radius + 0.05), res)
