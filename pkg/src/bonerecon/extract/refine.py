"""Pull mesh vertices onto the tau level set of an occupancy field."""

import numpy as np

from ..geom import TriMesh


def central_gradient(field_fn, points, h=1e-4):
    grads = np.empty_like(points)
    for a in range(3):
        step = np.zeros(3)
        step[a] = h
        grads[:, a] = (field_fn(points + step) - field_fn(points - step)) / (2 * h)
    return grads


def mean_edge_length(mesh):
    """Mean length of the edges incident to each vertex."""
    e = mesh.edges()
    length = np.linalg.norm(mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1)
    total = np.bincount(e.ravel(), weights=np.repeat(length, 2), minlength=mesh.n_vertices)
    count = np.bincount(e.ravel(), minlength=mesh.n_vertices)
    return total / np.maximum(count, 1)


def refine_gradient(mesh, field_fn, tau, iters, grad_fn=None, max_halvings=4, history=None):
    """Newton steps v <- v - (F(v) - tau) grad F / |grad F|^2 along the field gradient.

    Steps are clamped to half the local mean edge length, vertices with
    |grad F| < 1e-8 are skipped, and a step whose residual |F - tau| would grow is
    halved (up to ``max_halvings`` times) or dropped, so the mean residual never
    increases. ``history`` (a list) receives the mean residual before each
    iteration and after the last.
    """
    if grad_fn is None:
        def grad_fn(p):
            return central_gradient(field_fn, p)
    v = mesh.vertices.copy()
    if mesh.n_vertices == 0:
        return mesh.copy()
    limit = 0.5 * mean_edge_length(mesh)
    res = field_fn(v) - tau
    if history is not None:
        history.append(float(np.abs(res).mean()))
    for _ in range(iters):
        g = grad_fn(v)
        g2 = np.einsum("ij,ij->i", g, g)
        ok = np.sqrt(g2) >= 1e-8
        step = np.zeros_like(v)
        step[ok] = -(res[ok] / g2[ok])[:, None] * g[ok]
        length = np.linalg.norm(step, axis=1)
        over = length > limit
        step[over] *= (limit[over] / length[over])[:, None]
        pending = np.flatnonzero(ok & (length > 0))
        for _ in range(max_halvings + 1):
            if len(pending) == 0:
                break
            trial = v[pending] + step[pending]
            r_new = field_fn(trial) - tau
            better = np.abs(r_new) <= np.abs(res[pending])
            acc = pending[better]
            v[acc] = trial[better]
            res[acc] = r_new[better]
            pending = pending[~better]
            step[pending] *= 0.5
        if history is not None:
            history.append(float(np.abs(res).mean()))
    return TriMesh(v, mesh.faces.copy(), mesh.labels)
