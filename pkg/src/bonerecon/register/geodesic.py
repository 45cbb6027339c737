"""Graph geodesics on triangle meshes and Gaussian kernels built from them."""

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import dijkstra
from scipy.spatial.distance import cdist

from ..errors import InputError


def mesh_graph(mesh):
    """Sparse symmetric graph of mesh edges plus the opposite-vertex diagonal of every
    pair of triangles sharing an edge, weighted by Euclidean length."""
    f = mesh.faces
    n = mesh.n_vertices
    pairs = [np.sort(f[:, [0, 1]], axis=1), np.sort(f[:, [1, 2]], axis=1), np.sort(f[:, [2, 0]], axis=1)]
    opposite = [f[:, 2], f[:, 0], f[:, 1]]
    e = np.concatenate(pairs)
    opp = np.concatenate(opposite)
    key = e[:, 0] * n + e[:, 1]
    order = np.argsort(key, kind="stable")
    ks, os_ = key[order], opp[order]
    same = np.flatnonzero(ks[1:] == ks[:-1])
    diag = np.stack([os_[same], os_[same + 1]], axis=1)
    diag = diag[diag[:, 0] != diag[:, 1]]
    all_e = np.unique(np.sort(np.concatenate([e, diag]), axis=1), axis=0)
    w = np.linalg.norm(mesh.vertices[all_e[:, 0]] - mesh.vertices[all_e[:, 1]], axis=1)
    # zero-length edges would vanish from a sparse matrix; keep them reachable
    w = np.maximum(w, 1e-300)
    g = coo_matrix((w, (all_e[:, 0], all_e[:, 1])), shape=(n, n)).tocsr()
    return g


def geodesic_distances(mesh, sources=None, graph=None):
    """(len(sources), n_vertices) shortest-path distances; inf between components."""
    n = mesh.n_vertices
    if sources is None:
        sources = np.arange(n)
    sources = np.atleast_1d(np.asarray(sources, dtype=np.int64))
    bad = (sources < 0) | (sources >= n)
    if bad.any():
        raise IndexError("source vertex %d out of range for %d vertices" % (int(sources[bad][0]), n))
    if graph is None:
        graph = mesh_graph(mesh)
    return dijkstra(graph, directed=False, indices=sources)


def euclidean_distances(a, b=None):
    return cdist(a, a if b is None else b)


def gaussian_kernel(a, b=None, beta=0.2):
    d2 = cdist(a, a if b is None else b, "sqeuclidean")
    return np.exp(-d2 / (2.0 * beta * beta))


@dataclass
class GeodesicKernel:
    matrix: np.ndarray  # PSD-corrected kernel
    eigvals: np.ndarray  # clipped eigenvalues, ascending
    eigvecs: np.ndarray
    raw_min_eigval: float
    n_clipped: int
    beta: float


def build_geodesic_kernel(D, beta):
    """Gaussian of distances made positive semidefinite by eigenvalue clipping."""
    D = np.asarray(D, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise InputError("distance matrix must be square, got %s" % (D.shape,))
    if beta <= 0:
        raise InputError("kernel width beta must be positive")
    finite = np.isfinite(D)
    Df = np.where(finite, D, 0.0)
    if (finite != finite.T).any() or np.abs(Df - Df.T).max(initial=0.0) > 1e-6:
        raise InputError("distance matrix is not symmetric within 1e-6")
    K = np.exp(-np.where(finite, D, np.inf) ** 2 / (2.0 * beta * beta))
    K = 0.5 * (K + K.T)
    lam, V = np.linalg.eigh(K)
    raw_min = float(lam[0]) if len(lam) else 0.0
    n_clipped = int((lam < 0).sum())
    lam = np.maximum(lam, 0.0)
    Kc = (V * lam) @ V.T
    return GeodesicKernel(0.5 * (Kc + Kc.T), lam, V, raw_min, n_clipped, float(beta))
