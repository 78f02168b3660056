"""Quadrature rules.

1D Gauss-Legendre, collapsed-tensor triangle rules, Duffy rules for vertex
singularities, the box-boundary rule feeding the separable kernel expansion,
and the four regularized tensor rules for singular triangle pairs
(identical / shared edge / shared vertex / disjoint).
"""

from collections import namedtuple
from functools import lru_cache

import numpy as np

Rule1D = namedtuple("Rule1D", "points weights")
GreenRule = namedtuple("GreenRule", "points weights normals k")
PairRule = namedtuple("PairRule", "x y w")
SingularityCase = namedtuple("SingularityCase", "kind row_perm col_perm")

DISJOINT, VERTEX, EDGE, IDENTICAL = 0, 1, 2, 3
KIND_NAMES = ("disjoint", "vertex", "edge", "identical")
KIND_CODES = {name: code for code, name in enumerate(KIND_NAMES)}

# vertex permutations of the reference triangle; rotations first, then the
# odd permutations (an aligned shared edge needs one when the two triangles
# are consistently oriented)
PERMS3 = np.array(
    [[0, 1, 2], [1, 2, 0], [2, 0, 1], [0, 2, 1], [2, 1, 0], [1, 0, 2]],
    dtype=np.int64,
)
INV_PERMS3 = np.array([np.argsort(p) for p in PERMS3])
_PERM_ID = {tuple(p): i for i, p in enumerate(PERMS3.tolist())}

# chart-node reordering induced by each vertex permutation: slot a < 3 maps
# to vertex perm[a], slot 3+j to the midpoint of edge (perm[j], perm[j+1])
_MID_OF_PAIR = {(0, 1): 3, (1, 2): 4, (2, 0): 5}
_MID_OF_PAIR.update({(b, a): m for (a, b), m in list(_MID_OF_PAIR.items())})
ORDER6 = np.array(
    [
        [p[0], p[1], p[2],
         _MID_OF_PAIR[(p[0], p[1])],
         _MID_OF_PAIR[(p[1], p[2])],
         _MID_OF_PAIR[(p[2], p[0])]]
        for p in PERMS3.tolist()
    ],
    dtype=np.int64,
)


@lru_cache(maxsize=None)
def gauss_legendre(m):
    """m-point Gauss-Legendre rule on [-1, 1]."""
    if not 1 <= m <= 32:
        raise ValueError("Gauss order %r outside [1, 32]" % (m,))
    points, weights = np.polynomial.legendre.leggauss(m)
    return Rule1D(points, weights)


@lru_cache(maxsize=None)
def _gauss01(m):
    rule = gauss_legendre(m)
    return 0.5 * (rule.points + 1.0), 0.5 * rule.weights


@lru_cache(maxsize=None)
def triangle_gauss(q):
    """Collapsed tensor rule on t-hat with q*q nodes.

    (x, y) = (s (1 - t), s t) maps the unit square onto the triangle with
    Jacobian s; nodes cluster toward the vertex (0, 0).
    """
    s, ws = _gauss01(q)
    t, wt = _gauss01(q)
    ss, tt = np.meshgrid(s, t, indexing="ij")
    ww = np.outer(ws, wt)
    pts = np.column_stack([(ss * (1.0 - tt)).ravel(), (ss * tt).ravel()])
    return pts, (ww * ss).ravel()


# barycentric rotations sending the clustered vertex (0,0) of the base rule
# to vertex v: new coordinates as functions of (x, y, l0)
def duffy_rule(singular_vertex, q):
    """Duffy-transformed rule on t-hat clustering nodes at the given vertex."""
    if singular_vertex not in (0, 1, 2):
        raise ValueError("vertex index must be 0, 1 or 2")
    pts, wts = triangle_gauss(q)
    if singular_vertex == 0:
        return pts, wts
    x, y = pts[:, 0], pts[:, 1]
    l0 = 1.0 - x - y
    if singular_vertex == 1:
        return np.column_stack([l0, x]), wts
    return np.column_stack([y, l0]), wts


def green_box_rule(box, delta, m):
    """Tensor Gauss rule on the boundary of the box enlarged by delta.

    Returns 6 m^2 points with outward normals; weights sum to the area of
    the enlarged box boundary.
    """
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    lower, upper = (box.lower, box.upper) if hasattr(box, "lower") else box
    lo = np.asarray(lower, dtype=np.float64) - delta
    hi = np.asarray(upper, dtype=np.float64) + delta
    g, w = _gauss01(m)
    points, weights, normals = [], [], []
    for axis in range(3):
        b, c = [a for a in range(3) if a != axis]
        pb = lo[b] + (hi[b] - lo[b]) * g
        pc = lo[c] + (hi[c] - lo[c]) * g
        face_w = np.outer(w, w).ravel() * (hi[b] - lo[b]) * (hi[c] - lo[c])
        gb, gc = np.meshgrid(pb, pc, indexing="ij")
        for side, coord in ((0, lo[axis]), (1, hi[axis])):
            z = np.empty((m * m, 3))
            z[:, axis] = coord
            z[:, b] = gb.ravel()
            z[:, c] = gc.ravel()
            n = np.zeros((m * m, 3))
            n[:, axis] = -1.0 if side == 0 else 1.0
            points.append(z)
            weights.append(face_w)
            normals.append(n)
    points = np.concatenate(points)
    return GreenRule(points, np.concatenate(weights), np.concatenate(normals),
                     len(points))


def classify_pairs(row_tris, col_tris):
    """Vectorized singularity classification of triangle pairs.

    row_tris, col_tris: (B, 3) arrays of global vertex indices.
    Returns (kind, row_perm_id, col_perm_id) arrays; permutation ids index
    PERMS3 / ORDER6. The permutations bring shared vertices to the leading
    slots with matching order on both sides.
    """
    row_tris = np.asarray(row_tris)
    col_tris = np.asarray(col_tris)
    B = len(row_tris)
    eq = row_tris[:, :, None] == col_tris[:, None, :]  # (B, 3, 3)
    row_hit = eq.any(axis=2)
    col_hit = eq.any(axis=1)
    shared = row_hit.sum(axis=1)
    kind = np.empty(B, dtype=np.int64)
    kind[shared == 0] = DISJOINT
    kind[shared == 1] = VERTEX
    kind[shared == 2] = EDGE
    kind[shared == 3] = IDENTICAL
    rperm = np.zeros(B, dtype=np.int64)
    cperm = np.zeros(B, dtype=np.int64)

    mask = kind == VERTEX
    if mask.any():
        # rotation moving the shared vertex to slot 0 on both sides
        rperm[mask] = np.argmax(row_hit[mask], axis=1)
        cperm[mask] = np.argmax(col_hit[mask], axis=1)

    mask = kind == EDGE
    if mask.any():
        bits = (row_hit[mask, 0] * 1 + row_hit[mask, 1] * 2 + row_hit[mask, 2] * 4)
        # {0,1} -> rotation 0, {1,2} -> rotation 1, {0,2} -> rotation 2
        rot = np.where(bits == 3, 0, np.where(bits == 6, 1, 2))
        rperm[mask] = rot
        idx = np.nonzero(mask)[0]
        g0 = row_tris[idx, PERMS3[rot, 0]]
        g1 = row_tris[idx, PERMS3[rot, 1]]
        c0 = np.argmax(col_tris[idx] == g0[:, None], axis=1)
        c1 = np.argmax(col_tris[idx] == g1[:, None], axis=1)
        c2 = 3 - c0 - c1
        cperm[mask] = _perm_id_table()[c0, c1, c2]
    return kind, rperm, cperm


@lru_cache(maxsize=1)
def _perm_id_table():
    table = np.zeros((3, 3, 3), dtype=np.int64)
    for i, p in enumerate(PERMS3.tolist()):
        table[p[0], p[1], p[2]] = i
    return table


def classify_pair(t, s):
    """Single-pair classification; see classify_pairs."""
    kind, rp, cp = classify_pairs(np.asarray(t).reshape(1, 3),
                                  np.asarray(s).reshape(1, 3))
    return SingularityCase(KIND_NAMES[kind[0]],
                           tuple(PERMS3[rp[0]].tolist()),
                           tuple(PERMS3[cp[0]].tolist()))


def _grid4(q):
    g, w = _gauss01(q)
    xi, e1, e2, e3 = np.meshgrid(g, g, g, g, indexing="ij")
    w4 = np.einsum("i,j,k,l->ijkl", w, w, w, w)
    return (xi.ravel(), e1.ravel(), e2.ravel(), e3.ravel(), w4.ravel())


def _to_simplex(r1, r2):
    return np.column_stack([r1 - r2, r2])


# relative-coordinate matrices of the identical case; each yields a
# symmetric pair of subdomains, six in total
_IDENTICAL_MATS = (
    ((1, 0, 0, 0), (1, -1, 1, 0), (0, 0, 0, 1), (0, 0, 1, 0)),
    ((1, 0, 0, 0), (0, 1, -1, 1), (0, 0, 1, 0), (0, 0, 0, 1)),
    ((1, 0, 0, -1), (0, 1, 0, -1), (0, 0, 0, -1), (0, 0, 1, -1)),
)


@lru_cache(maxsize=None)
def sauter_rule(kind, q):
    """Regularized tensor rule on t-hat x t-hat for one singularity case.

    kind is a KIND_NAMES entry or its code. Node counts are 6 q^4 / 10 q^4 /
    2 q^4 / q^4 for identical / edge / vertex / disjoint (the edge rule is
    symmetrized, see below). Points are given in simplex coordinates; the
    construction works in the 'relative' coordinates 0 <= r2 <= r1 <= 1 and
    shears the result, which leaves the weights untouched.
    """
    if q < 1:
        raise ValueError("quadrature order must be positive")
    code = KIND_CODES[kind] if isinstance(kind, str) else int(kind)
    if code == DISJOINT:
        px, wx = triangle_gauss(q)
        py, wy = triangle_gauss(q)
        nx = len(px)
        x = np.repeat(px, nx, axis=0)
        y = np.tile(py, (nx, 1))
        return PairRule(x, y, np.outer(wx, wy).ravel())

    xi, e1, e2, e3, w4 = _grid4(q)
    xs, ys, ws = [], [], []

    def add(rx1, rx2, ry1, ry2, jac):
        xs.append(_to_simplex(rx1, rx2))
        ys.append(_to_simplex(ry1, ry2))
        ws.append(w4 * jac)

    if code == IDENTICAL:
        jac = xi**3 * e1**2 * e2
        wv = (xi, xi * e1, xi * e1 * e2, xi * e1 * e2 * e3)
        for mat in _IDENTICAL_MATS:
            z = [sum(mat[r][c] * wv[c] for c in range(4) if mat[r][c])
                 for r in range(4)]
            add(z[0], z[1], z[0] - z[2], z[1] - z[3], jac)
            add(z[0] - z[2], z[1] - z[3], z[0], z[1], jac)
    elif code == VERTEX:
        jac = xi**3 * e2
        add(xi, xi * e1, xi * e2, xi * e2 * e3, jac)
        add(xi * e2, xi * e2 * e3, xi, xi * e1, jac)
    elif code == EDGE:
        jac_a = xi**3 * e1**2
        jac_b = xi**3 * e1**2 * e2
        specs = (
            ((xi, -xi * e1 * e2, xi * e1 * (1.0 - e2), xi * e1 * e3), jac_a),
            ((xi, -xi * e1 * e2 * e3, xi * e1 * e2 * (1.0 - e3), xi * e1), jac_b),
            ((xi * (1.0 - e1 * e2), xi * e1 * e2, xi * e1 * e2 * e3,
              xi * e1 * (1.0 - e2)), jac_b),
            ((xi * (1.0 - e1 * e2 * e3), xi * e1 * e2 * e3, xi * e1,
              xi * e1 * e2 * (1.0 - e3)), jac_b),
            ((xi * (1.0 - e1 * e2 * e3), xi * e1 * e2 * e3, xi * e1 * e2,
              xi * e1 * (1.0 - e2 * e3)), jac_b),
        )
        for (w0, w1, w2, w3), jac in specs:
            add(w0, w3, w0 + w1, w2, jac)
    else:
        raise ValueError("unknown singularity kind %r" % (kind,))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    w = np.concatenate(ws)
    if code == EDGE:
        # On a consistently oriented surface the shared edge runs through
        # the two triangles in opposite directions, so exchanging the roles
        # of t and s maps the rule through (x, y) -> (Sy, Sx) with S the
        # 0<->1 vertex exchange. The raw subdomains lack that symmetry;
        # averaging with the mirrored copy makes swapped pair integrals
        # agree to rounding instead of to quadrature error.
        sx = np.stack([1.0 - x[:, 0] - x[:, 1], x[:, 1]], axis=1)
        sy = np.stack([1.0 - y[:, 0] - y[:, 1], y[:, 1]], axis=1)
        x = np.concatenate([x, sy])
        y = np.concatenate([y, sx])
        w = np.concatenate([0.5 * w, 0.5 * w])
    return PairRule(x, y, w)
