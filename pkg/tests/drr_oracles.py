"""Reference integrators for checking the exact ray-volume path integrals."""

import numpy as np
from scipy.ndimage import gaussian_filter

from bonerecon.drr import siddon_batch
from bonerecon.geom import Volume3D


def cube_volume(mu=0.7, n=10, side=40.0):
    return Volume3D(np.full((n, n, n), mu), (side / n,) * 3, (-side / 2,) * 3)


def dense_stepping(volume, p0, p1, frac=0.002):
    """Midpoint-rule integrator with step = frac * min spacing.

    Its own error is about h/2 per voxel jump, so the step must be fine for the
    0.5% per-ray comparison on white-noise volumes.
    """
    p0, p1 = np.asarray(p0, float), np.asarray(p1, float)
    length = np.linalg.norm(p1 - p0)
    h = frac * min(volume.spacing)
    n = max(int(np.ceil(length / h)), 1)
    t = (np.arange(n) + 0.5) / n
    pts = p0 + t[:, None] * (p1 - p0)
    ijk = np.floor((pts - np.asarray(volume.origin)) / np.asarray(volume.spacing)).astype(int)
    ok = ((ijk >= 0) & (ijk < np.asarray(volume.dims))).all(axis=1)
    vals = np.zeros(n)
    vals[ok] = volume.values[ijk[ok, 0], ijk[ok, 1], ijk[ok, 2]]
    return vals.sum() * length / n


def dense_errors(rng, smooth, n_vol=10, n_rays=100):
    """Relative per-ray errors on random volumes; ``smooth`` is a gaussian sigma in voxels (0 for white noise)."""
    errs = []
    for _ in range(n_vol):
        v = rng.random((9, 8, 7))
        if smooth:
            v = gaussian_filter(v, smooth)
        vol = Volume3D(v, rng.uniform(2, 5, 3), rng.uniform(-20, 0, 3))
        lo = np.asarray(vol.origin)
        p0 = lo + rng.random((n_rays, 3)) * vol.extent
        p1 = lo + rng.random((n_rays, 3)) * vol.extent
        ours = siddon_batch(vol, p0, p1)
        errs += [abs(ours[i] - dense_stepping(vol, p0[i], p1[i])) / ours[i] for i in range(n_rays)]
    return np.array(errs)
