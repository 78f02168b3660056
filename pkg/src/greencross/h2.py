"""Applying H2-matrices: matvec, storage accounting, norm estimation, CG.

Vectors cross the API boundary in external dof ordering; the permutation
into cluster-tree ordering happens once per product.  The matvec follows
the usual four phases: forward transform up the column basis, coupling,
backward transform down the row basis, then the dense nearfield blocks.
"""

from collections import namedtuple

import numpy as np

from .errors import ConfigError

__all__ = ["mvm", "mvm_t", "as_operator", "storage_report",
           "spectral_error_estimate", "cg_solve", "cgnr_solve", "CGResult"]


def _forward(basis, xt):
    """Coefficients v^T x per cluster index, computed upward."""
    hat = {}

    def rec(bn):
        cl = bn.cluster
        if not bn.children:
            hat[cl.index] = bn.v.T @ xt[cl.start:cl.stop]
            return
        acc = np.zeros(bn.rank)
        for c in bn.children:
            rec(c)
            acc += c.transfer.T @ hat[c.cluster.index]
        hat[cl.index] = acc

    for root in basis.roots:
        rec(root)
    return hat


def _backward(basis, hat, yt):
    """Scatter coefficient contributions downward and into yt (in place)."""

    def rec(bn):
        cl = bn.cluster
        if not bn.children:
            yt[cl.start:cl.stop] += bn.v @ hat[cl.index]
            return
        for c in bn.children:
            hat[c.cluster.index] += c.transfer @ hat[cl.index]
            rec(c)

    for root in basis.roots:
        rec(root)


def _check_dim(x, n):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (n,):
        raise ConfigError("vector of length %d, operator wants %d"
                          % (x.size, n))
    return x


def mvm(h, x):
    """y = H x with H an H2-matrix, external ordering in and out."""
    rb, cb = h.row_basis, h.col_basis
    nr, nc = h.shape
    x = _check_dim(x, nc)
    xt = x[h.col_tree.perm]
    xhat = _forward(cb, xt)
    yhat = {bn.cluster.index: np.zeros(bn.rank) for bn in rb.nodes()}
    for blk in h.coupling:
        yhat[blk.row.index] += blk.values @ xhat[blk.col.index]
    yt = np.zeros(nr)
    _backward(rb, yhat, yt)
    for blk in h.nearfield:
        yt[blk.row.start:blk.row.stop] += (
            blk.values @ xt[blk.col.start:blk.col.stop])
    y = np.empty(nr)
    y[h.row_tree.perm] = yt
    return y


def mvm_t(h, x):
    """y = H^T x: the mirror image of :func:`mvm`."""
    rb, cb = h.row_basis, h.col_basis
    nr, nc = h.shape
    x = _check_dim(x, nr)
    xt = x[h.row_tree.perm]
    xhat = _forward(rb, xt)
    yhat = {bn.cluster.index: np.zeros(bn.rank) for bn in cb.nodes()}
    for blk in h.coupling:
        yhat[blk.col.index] += blk.values.T @ xhat[blk.row.index]
    yt = np.zeros(nc)
    _backward(cb, yhat, yt)
    for blk in h.nearfield:
        yt[blk.col.start:blk.col.stop] += (
            blk.values.T @ xt[blk.row.start:blk.row.stop])
    y = np.empty(nc)
    y[h.col_tree.perm] = yt
    return y


def as_operator(h):
    """Closure apply(x, trans=False) wrapping mvm/mvm_t."""
    def apply(x, trans=False):
        return mvm_t(h, x) if trans else mvm(h, x)
    return apply


def storage_report(h):
    """Byte counts per category, 8 bytes per real.

    Accepts an H2-matrix or a plain dimension; a dimension reports just the
    dense reference 8 n^2.  Matrix reports exclude index/tree overhead from
    the total and list the pivot index bytes separately.
    """
    if isinstance(h, (int, np.integer)):
        n = int(h)
        return {"dense": 8 * n * n, "total": 8 * n * n}
    leaf_bases = transfers = index_bytes = 0
    for basis in (h.row_basis, h.col_basis):
        for bn in basis.nodes():
            index_bytes += 8 * bn.rank
            if not bn.children:
                leaf_bases += 8 * bn.v.size
            if bn.transfer is not None:
                transfers += 8 * bn.transfer.size
    couplings = sum(8 * blk.values.size for blk in h.coupling)
    nearfield = sum(8 * blk.values.size for blk in h.nearfield)
    nr, nc = h.shape
    return {"leaf_bases": leaf_bases, "transfers": transfers,
            "couplings": couplings, "nearfield": nearfield,
            "total": leaf_bases + transfers + couplings + nearfield,
            "index_bytes": index_bytes, "dense": 8 * nr * nc}


def storage_csv_rows(report):
    """category,bytes rows in a fixed order."""
    order = ("leaf_bases", "transfers", "couplings", "nearfield", "total",
             "index_bytes", "dense")
    return [(key, report[key]) for key in order if key in report]


def spectral_error_estimate(apply_ref, apply_approx, n, iters=100, seed=0):
    """Power iteration estimate of ||ref - approx||_2 and its ratio to
    ||ref||_2.

    Both closures take (x, trans=False) and must implement the transpose;
    the iteration runs z <- E^T (E z) on the difference.  The reference norm
    is estimated by the same iteration with the same seed, which makes the
    returned ratio deterministic.
    """
    if iters < 1:
        raise ConfigError("iters must be positive")

    def op_norm(fwd, bwd):
        rng = np.random.default_rng(seed)
        z = rng.standard_normal(n)
        nz = np.linalg.norm(z)
        if nz == 0.0:
            z = np.random.default_rng(seed + 1).standard_normal(n)
            nz = np.linalg.norm(z)
            if nz == 0.0:
                raise ConfigError("degenerate start vector")
        z = z / nz
        est = 0.0
        for _ in range(iters):
            w = fwd(z)
            est = np.linalg.norm(w)
            if est == 0.0:
                return 0.0
            z = bwd(w)
            nz = np.linalg.norm(z)
            if nz == 0.0:
                return est
            z = z / nz
        return est

    abs_err = op_norm(lambda u: apply_ref(u) - apply_approx(u),
                      lambda u: apply_ref(u, True) - apply_approx(u, True))
    ref = op_norm(lambda u: apply_ref(u), lambda u: apply_ref(u, True))
    if ref == 0.0:
        return abs_err, 0.0 if abs_err == 0.0 else np.inf
    return abs_err, abs_err / ref


CGResult = namedtuple("CGResult", "x residuals converged")


def cg_solve(apply, b, tol=1e-8, max_iter=500):
    """Conjugate gradients for a symmetric positive definite closure.

    Returns the iterate, the history of absolute residual 2-norms (from the
    recurrence), and whether ||b - A x|| <= tol ||b|| was reached.
    """
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rs = float(r @ r)
    nb = np.sqrt(float(b @ b))
    hist = [np.sqrt(rs)]
    if nb == 0.0:
        return CGResult(x, np.asarray(hist), True)
    for _ in range(max_iter):
        if hist[-1] <= tol * nb:
            break
        ap = apply(p)
        denom = float(p @ ap)
        if denom <= 0.0:
            break
        alpha = rs / denom
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = float(r @ r)
        hist.append(np.sqrt(rs_new))
        p = r + (rs_new / rs) * p
        rs = rs_new
    return CGResult(x, np.asarray(hist), bool(hist[-1] <= tol * nb))


def cgnr_solve(apply, b, tol=1e-8, max_iter=500):
    """CG on the normal equations for a nonsymmetric closure with transpose.

    The history tracks the true residual ||b - A x||, and convergence is
    declared against it, not against the normal-equation residual.
    """
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b)
    r = b.copy()
    s = apply(r, True)
    p = s.copy()
    ss = float(s @ s)
    nb = np.sqrt(float(b @ b))
    hist = [np.sqrt(float(r @ r))]
    if nb == 0.0:
        return CGResult(x, np.asarray(hist), True)
    for _ in range(max_iter):
        if hist[-1] <= tol * nb or ss == 0.0:
            break
        q = apply(p)
        denom = float(q @ q)
        if denom == 0.0:
            break
        alpha = ss / denom
        x = x + alpha * p
        r = r - alpha * q
        hist.append(np.sqrt(float(r @ r)))
        s = apply(r, True)
        ss_new = float(s @ s)
        p = s + (ss_new / ss) * p
        ss = ss_new
    return CGResult(x, np.asarray(hist), bool(hist[-1] <= tol * nb))
