"""Quadric error metric edge-collapse simplification."""

import heapq

import numpy as np

from ..geom import TriMesh


def _plane_quadrics(verts, faces):
    v = verts[faces]
    n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    norm = np.linalg.norm(n, axis=1)
    n = n / np.where(norm > 0, norm, 1.0)[:, None]
    d = -np.einsum("ij,ij->i", n, v[:, 0])
    p = np.concatenate([n, d[:, None]], axis=1)
    return p[:, :, None] * p[:, None, :]


def optimal_position(q, a, b):
    """Minimizer of x^T A x + 2 b^T x + c, taken nearest the edge midpoint.

    Singular quadrics (flat or ridge neighbourhoods) are handled through the
    pseudo-inverse anchored at the midpoint; for a zero quadric this is the
    midpoint itself.
    """
    A, bb = q[:3, :3], q[:3, 3]
    mid = 0.5 * (a + b)
    w, vecs = np.linalg.eigh(A)
    keep = w > 1e-9 * max(w[-1], 1e-300)
    if not keep.any():
        return mid
    vk = vecs[:, keep]
    r = A @ mid + bb
    return mid - vk @ ((vk.T @ r) / w[keep])


def _cost(q, x):
    h = np.append(x, 1.0)
    return max(float(h @ q @ h), 0.0)


def simplify_quadric(mesh, target_faces):
    """Collapse edges in order of quadric error until at most ``target_faces`` remain.

    A collapse is rejected if it breaks the link condition (which keeps closed
    manifolds closed) or flips the normal of any surviving incident face.
    """
    target_faces = max(int(target_faces), 4)
    if mesh.n_faces <= target_faces:
        return mesh.copy()
    verts = mesh.vertices.copy()
    faces = mesh.faces.copy()
    alive_f = np.ones(len(faces), dtype=bool)
    alive_v = np.ones(len(verts), dtype=bool)
    fq = _plane_quadrics(verts, faces)
    Q = np.zeros((len(verts), 4, 4))
    for k in range(3):
        np.add.at(Q, faces[:, k], fq)
    vfaces = [set() for _ in range(len(verts))]
    for fi, f in enumerate(faces):
        for v in f:
            vfaces[v].add(fi)
    stamp = np.zeros(len(verts), dtype=np.int64)
    heap = []

    def push(u, v):
        if u > v:
            u, v = v, u
        q = Q[u] + Q[v]
        x = optimal_position(q, verts[u], verts[v])
        heapq.heappush(heap, (_cost(q, x), u, v, int(stamp[u]), int(stamp[v]), x))

    def neighbours(u):
        out = set()
        for fi in vfaces[u]:
            out.update(faces[fi])
        out.discard(u)
        return out

    for u, v in mesh.edges():
        push(int(u), int(v))

    n_faces = int(alive_f.sum())
    while n_faces > target_faces and heap:
        cost, u, v, su, sv, x = heapq.heappop(heap)
        if not (alive_v[u] and alive_v[v]) or stamp[u] != su or stamp[v] != sv:
            continue
        shared = vfaces[u] & vfaces[v]
        if not shared:
            continue
        nu, nv = neighbours(u), neighbours(v)
        opposite = set()
        for fi in shared:
            opposite.update(faces[fi])
        opposite -= {u, v}
        if (nu & nv) != opposite:
            continue
        if n_faces - len(shared) < 4:
            continue
        if not _collapse_keeps_orientation(verts, faces, (vfaces[u] | vfaces[v]) - shared, u, v, x):
            continue
        for fi in shared:
            alive_f[fi] = False
            for w in faces[fi]:
                vfaces[w].discard(fi)
        for fi in vfaces[v]:
            f = faces[fi]
            f[f == v] = u
            vfaces[u].add(fi)
        vfaces[v] = set()
        alive_v[v] = False
        verts[u] = x
        Q[u] = Q[u] + Q[v]
        stamp[u] += 1
        n_faces -= len(shared)
        for w in neighbours(u):
            push(u, w)

    keep_f = faces[alive_f]
    used = np.unique(keep_f)
    remap = -np.ones(len(verts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriMesh(verts[used], remap[keep_f])


def _collapse_keeps_orientation(verts, faces, moved, u, v, x):
    for fi in moved:
        f = faces[fi]
        p = verts[f]
        n_old = np.cross(p[1] - p[0], p[2] - p[0])
        p = p.copy()
        p[(f == u) | (f == v)] = x
        n_new = np.cross(p[1] - p[0], p[2] - p[0])
        if np.dot(n_old, n_new) <= 0.0 or np.dot(n_new, n_new) <= 1e-30:
            return False
    return True
