"""Coherent point drift (non-rigid) with Euclidean or geodesic coherence kernels."""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from ..errors import ConfigurationError, InputError, PreconditionError
from ..geom import TriMesh, is_watertight
from .geodesic import build_geodesic_kernel, euclidean_distances, gaussian_kernel, geodesic_distances, mesh_graph
from .nystrom import LowRankKernel, nystrom

SIGMA2_FLOOR = 1e-12
_CHUNK_ENTRIES = 4_000_000


@dataclass
class CPDParams:
    w: float = 0.1
    beta: float = 0.2
    lam: float = 2.0
    max_iters: int = 100
    tol: float = 1e-5
    sigma2: float | None = None  # initial variance; None uses the standard CPD estimate
    kernel: str = "geodesic"  # gbcpd only: "geodesic" or "euclidean"
    nystrom_threshold: int = 3000
    nystrom_landmarks: int = 400
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.w < 1:
            raise ConfigurationError("outlier weight w must lie in [0, 1)")
        if self.beta <= 0 or self.lam <= 0:
            raise ConfigurationError("beta and lambda must be positive")
        if self.max_iters < 1 or self.tol <= 0:
            raise ConfigurationError("max_iters must be >= 1 and tol > 0")
        if self.kernel not in ("geodesic", "euclidean"):
            raise ConfigurationError("kernel must be 'geodesic' or 'euclidean'")


@dataclass
class DeformationModel:
    Y: np.ndarray
    W: np.ndarray
    kernel: object  # dense (M, M) array or LowRankKernel
    sigma2: float
    w: float
    lam: float
    beta: float

    def displacement(self):
        return _kmul(self.kernel, self.W)

    def deformed(self):
        return self.Y + self.displacement()


@dataclass
class EMLog:
    sigma2: list = field(default_factory=list)
    objective: list = field(default_factory=list)  # penalized negative log-likelihood after each M-step
    status: str = "max_iters"

    @property
    def iterations(self):
        return len(self.sigma2)


def _kmul(K, W):
    return K.matvec(W) if isinstance(K, LowRankKernel) else K @ W


def _kquad(K, W):
    return K.quad(W) if isinstance(K, LowRankKernel) else float((W * (K @ W)).sum())


def initial_sigma2(X, Y):
    N, D = X.shape
    M = len(Y)
    return float((M * (X * X).sum() + N * (Y * Y).sum() - 2.0 * X.sum(0) @ Y.sum(0)) / (D * M * N))


def _chunks(N, M):
    step = max(1, _CHUNK_ENTRIES // max(M, 1))
    return range(0, N, step), step


def _log_outlier(w, sigma2, D, M, N):
    if w == 0:
        return -np.inf
    return 0.5 * D * math.log(2 * math.pi * sigma2) + math.log(w / (1 - w)) + math.log(M / N)


def e_step(X, TY, sigma2, w):
    """Posterior sufficient statistics (P1, Pt1, PX) computed in the log domain."""
    N, D = X.shape
    M = len(TY)
    lc = _log_outlier(w, sigma2, D, M, N)
    P1 = np.zeros(M)
    Pt1 = np.zeros(N)
    PX = np.zeros((M, D))
    starts, step = _chunks(N, M)
    for s in starts:
        x = X[s:s + step]
        logits = -cdist(TY, x, "sqeuclidean") / (2.0 * sigma2)
        lse = logsumexp(np.vstack([logits, np.full((1, len(x)), lc)]), axis=0)
        P = np.exp(logits - lse)
        P1 += P.sum(1)
        Pt1[s:s + step] = P.sum(0)
        PX += P @ x
    return P1, Pt1, PX


def penalized_nll(X, TY, W, K, sigma2, w, lam):
    """-sum_n log p(x_n) + lam/2 tr(W^T K W) for the CPD mixture."""
    N, D = X.shape
    M = len(TY)
    log_out = math.log(w / N) if w > 0 else -np.inf
    log_in = math.log((1 - w) / M) - 0.5 * D * math.log(2 * math.pi * sigma2)
    total = 0.0
    starts, step = _chunks(N, M)
    for s in starts:
        logits = -cdist(TY, X[s:s + step], "sqeuclidean") / (2.0 * sigma2)
        total -= np.logaddexp(log_out, log_in + logsumexp(logits, axis=0)).sum()
    return float(total + 0.5 * lam * _kquad(K, W))


def _solve_w(K, P1, B, s):
    """Solve (diag(P1) K + s I) W = B."""
    if isinstance(K, LowRankKernel):
        U, lam = K.U, K.lam
        if U.shape[1] == 0:
            return B / s
        DU = P1[:, None] * U
        inner = s * np.diag(1.0 / lam) + U.T @ DU
        return (B - DU @ np.linalg.solve(inner, U.T @ B)) / s
    A = P1[:, None] * K
    A[np.diag_indices_from(A)] += s
    return lu_solve(lu_factor(A), B)


def cpd_em(X, Y, K, params):
    """EM loop shared by CPD and GBCPD. Returns (deformed Y, DeformationModel, EMLog)."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if len(X) < 4 or len(Y) < 4:
        raise InputError("CPD needs at least 4 points in each set (got %d target, %d source)" % (len(X), len(Y)))
    N, D = X.shape
    sigma2 = params.sigma2 if params.sigma2 is not None else initial_sigma2(X, Y)
    sigma2 = max(float(sigma2), SIGMA2_FLOOR)
    W = np.zeros_like(Y)
    TY = Y.copy()
    log = EMLog()
    xx = (X * X).sum(1)
    for _ in range(params.max_iters):
        P1, Pt1, PX = e_step(X, TY, sigma2, params.w)
        Np = P1.sum()
        if Np <= 0:
            log.status = "no-correspondence"
            break
        W = _solve_w(K, P1, PX - P1[:, None] * Y, params.lam * sigma2)
        TY = Y + _kmul(K, W)
        num = (Pt1 * xx).sum() - 2.0 * (PX * TY).sum() + (P1 * (TY * TY).sum(1)).sum()
        new = num / (Np * D)
        collapsed = new < SIGMA2_FLOOR
        new = max(new, SIGMA2_FLOOR)
        change = abs(new - sigma2) / sigma2
        sigma2 = new
        log.sigma2.append(sigma2)
        log.objective.append(penalized_nll(X, TY, W, K, sigma2, params.w, params.lam))
        if collapsed:
            log.status = "converged-sigma"
            break
        if change < params.tol:
            log.status = "converged"
            break
    model = DeformationModel(Y, W, K, sigma2, params.w, params.lam, params.beta)
    return TY, model, log


def cpd_nonrigid(X, Y, params=None):
    """Classic CPD with a Euclidean Gaussian coherence kernel."""
    params = params or CPDParams(kernel="euclidean")
    Y = np.asarray(Y, dtype=np.float64)
    return cpd_em(X, Y, gaussian_kernel(Y, beta=params.beta), params)


def template_kernel(mesh, params):
    """Coherence kernel over the template vertices: dense PSD-corrected, or Nystrom above the threshold."""
    V = mesh.vertices
    M = len(V)
    beta = params.beta
    if params.kernel == "euclidean":
        if M <= params.nystrom_threshold:
            return build_geodesic_kernel(euclidean_distances(V), beta).matrix
        oracle = lambda idx: gaussian_kernel(V, V[idx], beta)
        return nystrom(oracle, M, min(params.nystrom_landmarks, M), params.seed)
    graph = mesh_graph(mesh)
    if M <= params.nystrom_threshold:
        return build_geodesic_kernel(geodesic_distances(mesh, graph=graph), beta).matrix

    def oracle(idx):
        d = geodesic_distances(mesh, idx, graph=graph).T
        return np.exp(-d * d / (2.0 * beta * beta))
    return nystrom(oracle, M, min(params.nystrom_landmarks, M), params.seed)


def gbcpd_register(template, target_points, params=None, kernel=None):
    """Deform ``template`` toward ``target_points``; the output keeps the template topology."""
    params = params or CPDParams()
    if not is_watertight(template):
        raise PreconditionError("registration template must be watertight")
    X = np.asarray(target_points, dtype=np.float64)
    if len(X) == 0:
        raise InputError("registration target is empty")
    K = template_kernel(template, params) if kernel is None else kernel
    TY, model, log = cpd_em(X, template.vertices, K, params)
    out = TriMesh(TY, template.faces.copy(), template.labels, template.part_names)
    return out, model, log
