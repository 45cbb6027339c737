"""Table-driven marching cubes.

The 256-case triangle table is generated at import time instead of being
transcribed. Each cube face is resolved from its own four corner signs
(ambiguous faces always separate the inside corners), so the two cells sharing
a face always agree and closed level sets produce watertight meshes. Triangles
are wound so normals point toward values below the level.
"""

import numpy as np

from ..geom import TriMesh

# corner c has offset (c & 1, (c >> 1) & 1, (c >> 2) & 1)
CORNERS = np.array([[(c >> a) & 1 for a in range(3)] for c in range(8)], dtype=np.int64)


def _build_edges():
    edges = []
    for c in range(8):
        for a in range(3):
            if not (c >> a) & 1:
                edges.append((c, c | (1 << a), a))
    return edges


EDGES = _build_edges()  # (lower corner, upper corner, axis)
_EDGE_ID = {frozenset(e[:2]): i for i, e in enumerate(EDGES)}


def _faces():
    out = []
    for a in range(3):
        b, c = (a + 1) % 3, (a + 2) % 3
        for side in (0, 1):
            ring = []
            for ub, uc in ((0, 0), (1, 0), (1, 1), (0, 1)):
                bits = {a: side, b: ub, c: uc}
                ring.append(bits[0] | (bits[1] << 1) | (bits[2] << 2))
            out.append(ring if side == 1 else ring[::-1])
    return out


FACES = _faces()  # corner rings, counter-clockwise seen from outside the cube


def _case_triangles(case):
    inside = [(case >> c) & 1 for c in range(8)]
    nxt = {}
    for ring in FACES:
        crossings = []
        for k in range(4):
            p, q = ring[k], ring[(k + 1) % 4]
            if inside[p] != inside[q]:
                crossings.append((_EDGE_ID[frozenset((p, q))], bool(inside[q])))
        n = len(crossings)
        for k, (edge, entering) in enumerate(crossings):
            if entering:
                for j in range(1, n):
                    e2, ent2 = crossings[(k + j) % n]
                    if not ent2:
                        nxt[edge] = e2
                        break
    tris = []
    seen = set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        e = nxt[start]
        while e != start:
            loop.append(e)
            seen.add(e)
            e = nxt[e]
        tris.extend(_triangulate(loop))
    return tris


def _edge_faces(edge):
    lo, hi, _ = EDGES[edge]
    return {i for i, ring in enumerate(FACES) if lo in ring and hi in ring}


def _triangulate(loop):
    """Triangulate a crossing loop without diagonals that lie in a cube face.

    A diagonal joining two crossings on the same face could be generated by the
    neighbouring cell as well, giving non-manifold edges.
    """
    faces = [_edge_faces(e) for e in loop]

    def ok(i, j):
        return (j - i) % len(loop) in (1, len(loop) - 1) or not (faces[i] & faces[j])

    def solve(idx):
        if len(idx) < 3:
            return []
        a, b = idx[0], idx[-1]
        for k in range(1, len(idx) - 1):
            c = idx[k]
            if ok(a, c) and ok(c, b):
                left, right = solve(idx[:k + 1]), solve(idx[k:])
                if left is not None and right is not None:
                    return [(a, c, b)] + left + right
        return None

    tri = solve(list(range(len(loop))))
    if tri is None:
        raise RuntimeError("no face-free triangulation for loop %s" % (loop,))
    return [(loop[a], loop[b], loop[c]) for a, b, c in tri]


def _build_table():
    cases = [_case_triangles(c) for c in range(256)]
    width = max(len(t) for t in cases)
    table = -np.ones((256, width, 3), dtype=np.int64)
    count = np.zeros(256, dtype=np.int64)
    for c, tris in enumerate(cases):
        count[c] = len(tris)
        if tris:
            table[c, :len(tris)] = tris
    return table, count


TRI_TABLE, TRI_COUNT = _build_table()

_EPS = 1e-6
T_MARGIN = 1e-3  # vertices stay this fraction of an edge away from grid corners


def logit(p):
    p = np.clip(p, _EPS, 1.0 - _EPS)
    return np.log(p) - np.log1p(-p)


def cube_cases(values, level):
    """Per-cell case index; -1 for cells with a non-finite corner."""
    inside = values >= level
    finite = np.isfinite(values)
    n0, n1, n2 = values.shape
    case = np.zeros((n0 - 1, n1 - 1, n2 - 1), dtype=np.int64)
    ok = np.ones(case.shape, dtype=bool)
    for c, (ox, oy, oz) in enumerate(CORNERS):
        sl = (slice(ox, ox + n0 - 1), slice(oy, oy + n1 - 1), slice(oz, oz + n2 - 1))
        case |= inside[sl].astype(np.int64) << c
        ok &= finite[sl]
    case[~ok] = -1
    return case


def marching_cubes(values, level, origin=(-0.5, -0.5, -0.5), spacing=None, interp="linear", pad_value=None):
    """Extract the ``level`` isosurface of a grid of point samples.

    ``values`` may contain NaN for unevaluated points; cells touching them are
    skipped. ``interp='logit'`` places vertices by linear interpolation of
    logit(value), for probability grids. ``pad_value`` surrounds the grid with
    one layer of that value so surfaces reaching the border are closed.
    Output ordering is canonical: vertices sorted by grid-edge id, faces by cell.
    """
    values = np.asarray(values, dtype=np.float64)
    origin = np.asarray(origin, dtype=np.float64)
    if spacing is None:
        spacing = 1.0 / (values.shape[0] - 1)
    spacing = np.broadcast_to(np.asarray(spacing, dtype=np.float64), (3,)).copy()
    if pad_value is not None:
        values = np.pad(values, 1, mode="constant", constant_values=pad_value)
        origin = origin - spacing
    if min(values.shape) < 2:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    case = cube_cases(values, level)
    cells = np.flatnonzero((case > 0) & (case < 255))
    if len(cells) == 0:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    shape = np.array(values.shape)
    ccase = case.ravel()[cells]
    ci, cj, ck = np.unravel_index(cells, case.shape)
    ntri = TRI_COUNT[ccase]
    cell_rep = np.repeat(np.arange(len(cells)), ntri)
    slot = np.arange(len(cell_rep)) - np.repeat(np.cumsum(ntri) - ntri, ntri)
    local = TRI_TABLE[ccase[cell_rep], slot]  # (T, 3) local edge ids

    edge_lo = np.array([CORNERS[e[0]] for e in EDGES])
    edge_ax = np.array([e[2] for e in EDGES])
    npts = int(np.prod(shape))
    pi = ci[cell_rep][:, None] + edge_lo[local, 0]
    pj = cj[cell_rep][:, None] + edge_lo[local, 1]
    pk = ck[cell_rep][:, None] + edge_lo[local, 2]
    gid = edge_ax[local] * npts + (pi * shape[1] + pj) * shape[2] + pk

    uniq, inv = np.unique(gid.ravel(), return_inverse=True)
    faces = inv.reshape(-1, 3)
    ax = uniq // npts
    flat = uniq % npts
    p = np.stack(np.unravel_index(flat, values.shape), axis=1)
    q = p.copy()
    q[np.arange(len(q)), ax] += 1
    vflat = values.ravel()
    va = vflat[flat]
    vb = vflat[np.ravel_multi_index(q.T, values.shape)]
    if interp == "logit":
        fa, fb, lv = logit(va), logit(vb), float(logit(np.array(level)))
    else:
        fa, fb, lv = va, vb, float(level)
    denom = fb - fa
    t = np.where(denom != 0, (lv - fa) / np.where(denom != 0, denom, 1.0), 0.5)
    # a corner sitting exactly on the level would put several vertices on one point and
    # leave zero-area faces; keeping t off the corners costs at most T_MARGIN of a cell
    t = np.clip(t, T_MARGIN, 1.0 - T_MARGIN)
    verts = origin + spacing * (p + t[:, None] * (q - p))
    return TriMesh(verts, faces)
