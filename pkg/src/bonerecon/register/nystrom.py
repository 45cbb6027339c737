"""Nystrom low-rank kernel factors with farthest-point landmarks."""

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError

PINV_TOL = 1e-10


@dataclass
class LowRankKernel:
    """K ~ U diag(lam) U^T."""

    U: np.ndarray
    lam: np.ndarray
    landmarks: np.ndarray

    def matrix(self):
        return (self.U * self.lam) @ self.U.T

    def matvec(self, W):
        return self.U @ (self.lam[:, None] * (self.U.T @ W))

    def quad(self, W):
        """trace(W^T K W)."""
        UW = self.U.T @ W
        return float((self.lam[:, None] * UW * UW).sum())


def farthest_point_landmarks(column_oracle, diag, n, m, seed):
    """Greedy farthest-point sampling under the kernel-induced distance
    d(i, j)^2 = k(i, i) + k(j, j) - 2 k(i, j). For a Gaussian of geodesic distance
    this ordering is the geodesic one. Returns landmark indices and their columns."""
    rng = np.random.default_rng(seed)
    first = int(rng.integers(n))
    idx = [first]
    cols = [column_oracle(np.array([first]))[:, 0]]
    dmin = diag + diag[first] - 2.0 * cols[0]
    dmin[first] = -np.inf
    for _ in range(1, m):
        j = int(np.argmax(dmin))
        c = column_oracle(np.array([j]))[:, 0]
        idx.append(j)
        cols.append(c)
        dmin = np.minimum(dmin, diag + diag[j] - 2.0 * c)
        dmin[idx] = -np.inf
    return np.array(idx), np.stack(cols, axis=1)


def nystrom(column_oracle, n, m, seed=0, diag=None):
    """Low-rank factors of an n x n kernel from ``m`` landmark columns.

    ``column_oracle(indices)`` returns the (n, len(indices)) kernel columns. The
    landmark block is pseudo-inverted keeping eigenvalues above 1e-10 times the
    largest; negative eigenvalues are dropped, so the result is PSD.
    """
    if m < 1:
        raise ConfigurationError("need at least one landmark, got %d" % m)
    if m > n:
        raise ConfigurationError("landmark count %d exceeds point count %d" % (m, n))
    if diag is None:
        diag = np.ones(n)
    if m == n:
        idx = np.arange(n)
        C = column_oracle(idx)
    else:
        idx, C = farthest_point_landmarks(column_oracle, np.asarray(diag, dtype=np.float64), n, m, seed)
    Kmm = 0.5 * (C[idx] + C[idx].T)
    s, Q = np.linalg.eigh(Kmm)
    keep = s > PINV_TOL * max(s.max(initial=0.0), 0.0)
    if not keep.any():
        return LowRankKernel(np.zeros((n, 0)), np.zeros(0), idx)
    U = C @ Q[:, keep]
    return LowRankKernel(U, 1.0 / s[keep], idx)
