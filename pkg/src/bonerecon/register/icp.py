"""Rigid ICP with nearest-neighbour correspondences and SVD Procrustes."""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ..errors import DegenerateGeometryError


@dataclass
class RigidTransform:
    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rmse: list = field(default_factory=list)

    def apply(self, points):
        return np.asarray(points) @ self.R.T + self.t

    @property
    def angle(self):
        """Rotation angle in radians."""
        return float(np.arccos(np.clip((np.trace(self.R) - 1) / 2, -1.0, 1.0)))


def _check(points, name):
    c = points - points.mean(axis=0)
    if len(points) < 3 or np.linalg.matrix_rank(c, tol=1e-9 * max(np.abs(c).max(initial=0.0), 1e-300)) < 2:
        raise DegenerateGeometryError("%s points are collinear or too few for a rigid fit" % name)


def procrustes(src, dst):
    """Least-squares rotation and translation mapping src onto dst, det(R) = +1."""
    cs, cd = src.mean(axis=0), dst.mean(axis=0)
    H = (src - cs).T @ (dst - cd)
    U, _, Vt = np.linalg.svd(H)
    S = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0])
    R = Vt.T @ S @ U.T
    return R, cd - R @ cs


def icp_rigid(source, target, max_iters=50, tol=1e-10):
    """Align ``source`` to ``target``; starts from the centroid offset.

    Stops when the RMSE improves by less than ``tol``.
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check(source, "source")
    _check(target, "target")
    tree = cKDTree(target)
    R = np.eye(3)
    t = target.mean(axis=0) - source.mean(axis=0)
    cur = source + t
    d, j = tree.query(cur)
    rmse = [float(np.sqrt(np.mean(d * d)))]
    for _ in range(max_iters):
        R1, t1 = procrustes(source, target[j])
        moved = source @ R1.T + t1
        d, j_new = tree.query(moved)
        err = float(np.sqrt(np.mean(d * d)))
        if err > rmse[-1]:
            break
        R, t, j = R1, t1, j_new
        rmse.append(err)
        if rmse[-2] - err < tol:
            break
    return RigidTransform(R, t, rmse)
