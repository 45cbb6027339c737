"""Registration fixtures shared by the unit and acceptance suites."""

import numpy as np

from bonerecon.geom import concatenate
from bonerecon.primitives import cylinder, icosphere

GAP = 0.05


def two_cylinders(radius=0.05, height=0.4):
    """Two parallel, disconnected cylinders whose surfaces are GAP apart."""
    off = radius + GAP / 2
    a = cylinder(radius, height, 16, 8, center=(-off, 0, 0))
    b = cylinder(radius, height, 16, 8, center=(off, 0, 0))
    return concatenate([a, b]), a.n_vertices


def bend_first(mesh, n_a, amp=0.08, height=0.4):
    """Target points: cylinder A bowed sideways (parallel to B), cylinder B untouched."""
    X = mesh.vertices.copy()
    X[:n_a, 1] += amp * np.cos(np.pi * X[:n_a, 2] / height)
    return X


# kernel width shared by both kernels in the comparison; wide enough that the
# Euclidean kernel couples across the gap
CYLINDER_PARAMS = dict(beta=1.0, lam=2.0)


def displacement_ratio(out, mesh, n_a):
    d = np.linalg.norm(out.vertices - mesh.vertices, axis=1)
    return d[n_a:].mean() / d[:n_a].mean()


def sphere_points(n=500, seed=0, r=0.3):
    p = np.random.default_rng(seed).normal(size=(n, 3))
    return r * p / np.linalg.norm(p, axis=1, keepdims=True)


def sinusoid_warp(Y, amp=0.05, wavelength=2.0):
    return Y + amp * np.sin(2 * np.pi * Y[:, [1, 2, 0]] / wavelength)


def smooth_sphere():
    return icosphere(3, 0.3)
