"""Configurable-precision real arithmetic and dense symmetric linear algebra.

All numerics in this package run on mpmath arbitrary-precision reals
(gmpy2-backed when available).  A "working precision" is a decimal digit
count ``prec``; every routine here evaluates inside ``mp.workdps(prec)``,
so results are deterministic for a fixed ``prec`` and the precision of a
combined computation is the precision it is invoked at (callers combining
inputs of different precision should pass the max).

Tolerance conventions, used throughout the package:

* ``half_eps(prec)`` = 10**(-prec/2): half the digits are budgeted for
  accumulated roundoff.  Symmetry, orthonormality and rank thresholds all
  default to this value.
* The symmetric eigensolver is mpmath's ``eigsy`` (tridiagonalization + QL),
  wrapped with a deterministic canonicalization: eigenvalues sorted
  descending, degenerate clusters re-based on projected canonical axes, and
  every vector sign-fixed so its largest-magnitude entry is positive.
"""

from __future__ import annotations

import mpmath
from mpmath import mp, mpf

DEFAULT_PREC = 64


class NumericalError(ArithmeticError):
    """Internal numerical failure (convergence, residuals, lost precision)."""


def workdps(prec):
    """Context manager running mpmath at ``prec`` decimal digits."""
    return mp.workdps(int(prec))


def half_eps(prec) -> mpf:
    """10**(-prec/2), the default roundoff budget at working precision."""
    return mpf(10) ** (-mpf(int(prec)) / 2)


def to_mpf(x) -> mpf:
    """Convert to mpf, routing floats and strings through exact decimal text."""
    if isinstance(x, str):
        return mpf(x)
    if isinstance(x, float):
        # repr round-trips the binary double; avoids silent re-rounding
        return mpf(x)
    return mpf(x)


def mat(rows) -> mpmath.matrix:
    """Build an mpmath matrix from nested lists (entries may be strings)."""
    r = len(rows)
    c = len(rows[0])
    m = mpmath.zeros(r, c)
    for i in range(r):
        if len(rows[i]) != c:
            raise ValueError("ragged rows")
        for j in range(c):
            m[i, j] = to_mpf(rows[i][j])
    return m


def eye(n) -> mpmath.matrix:
    return mpmath.eye(n)


def zeros(r, c=None) -> mpmath.matrix:
    return mpmath.zeros(r, c if c is not None else r)


def max_abs(m) -> mpf:
    """Max-norm (largest absolute entry); 0 for empty matrices."""
    best = mpf(0)
    for i in range(m.rows):
        for j in range(m.cols):
            a = abs(m[i, j])
            if a > best:
                best = a
    return best


def transpose(m) -> mpmath.matrix:
    return m.T


def submatrix(m, rows, cols) -> mpmath.matrix:
    out = mpmath.zeros(len(rows), len(cols))
    for a, i in enumerate(rows):
        for b, j in enumerate(cols):
            out[a, b] = m[i, j]
    return out


def embed(m, rows, cols, size_r, size_c=None) -> mpmath.matrix:
    """Place ``m`` at index sets (rows, cols) inside a zero matrix."""
    out = mpmath.zeros(size_r, size_c if size_c is not None else size_r)
    for a, i in enumerate(rows):
        for b, j in enumerate(cols):
            out[i, j] = m[a, b]
    return out


def symmetrize(m) -> mpmath.matrix:
    return (m + m.T) / 2


def sym_deviation(m) -> mpf:
    return max_abs(m - m.T)


def check_symmetric(m, prec, tol=None):
    """Raise if max|M_ij - M_ji| exceeds the (relative) symmetry tolerance."""
    if m.rows != m.cols:
        raise ValueError("matrix not square")
    with workdps(prec):
        scale = max_abs(m)
        lim = (tol if tol is not None else half_eps(prec)) * max(scale, mpf(1))
        dev = sym_deviation(m)
        if dev > lim:
            raise ValueError(
                "matrix not symmetric: deviation %s exceeds %s"
                % (mpmath.nstr(dev, 5), mpmath.nstr(lim, 5))
            )


def _sign_fix(v):
    """Flip sign so the largest-magnitude entry is positive (first on ties)."""
    best = mpf(0)
    idx = 0
    for i in range(v.rows):
        a = abs(v[i])
        if a > best * (1 + mpf("1e-8")):
            best = a
            idx = i
    if v[idx] < 0:
        return -v
    return v


def _col(m, j):
    return m[:, j]


def sym_eig(m, prec=DEFAULT_PREC, cluster_rtol=None):
    """Eigendecomposition of a symmetric matrix at ``prec`` decimal digits.

    Returns ``(evals, V)`` with eigenvalues sorted descending and eigenvector
    columns orthonormal, ``M V = V diag(evals)``.  Within each degenerate
    cluster (relative gap below ``cluster_rtol``, default 10**(-prec/2)) the
    basis is canonicalized deterministically from projected coordinate axes,
    so repeated runs and different platforms agree exactly.
    """
    check_symmetric(m, prec)
    n = m.rows
    with workdps(prec):
        ms = symmetrize(m)
        try:
            e, q = mpmath.eigsy(ms)
        except Exception as exc:  # pragma: no cover - eigsy is very robust
            raise NumericalError("symmetric eigensolver failed: %s" % exc)
        order = sorted(range(n), key=lambda k: (-e[k], k))
        evals = [e[k] for k in order]
        vecs = [_col(q, k) for k in order]
        rtol = cluster_rtol if cluster_rtol is not None else half_eps(prec)
        scale = max(abs(evals[0]) if n else mpf(0), abs(evals[-1]) if n else mpf(0), mpf(1))
        # group indices into degenerate clusters
        clusters = []
        start = 0
        for k in range(1, n + 1):
            if k == n or abs(evals[k] - evals[k - 1]) > rtol * scale:
                clusters.append((start, k))
                start = k
        out_vecs = []
        for a, b in clusters:
            if b - a == 1:
                out_vecs.append(_sign_fix(vecs[a]))
                continue
            out_vecs.extend(_canonical_cluster_basis(vecs[a:b], n))
        v = mpmath.zeros(n, n)
        for j, vec in enumerate(out_vecs):
            for i in range(n):
                v[i, j] = vec[i]
        return evals, v


def _canonical_cluster_basis(vecs, n):
    """Deterministic orthonormal basis of span(vecs) from projected axes."""
    dim = len(vecs)
    accepted = []
    for j in range(n):
        if len(accepted) == dim:
            break
        # projection of e_j onto the cluster span
        w = mpmath.zeros(n, 1)
        for v in vecs:
            w += v * v[j]
        for u in accepted:
            coef = mpf(0)
            for i in range(n):
                coef += u[i] * w[i]
            w -= u * coef
        nrm = mpmath.norm(w)
        if nrm > mpf("0.5") * mpf(10) ** (-mp.dps // 4):
            accepted.append(_sign_fix(w / nrm))
    if len(accepted) != dim:  # pragma: no cover - spans always admit axes
        raise NumericalError("failed to canonicalize degenerate eigenspace")
    return accepted


def psd_check(m, tol, prec=DEFAULT_PREC) -> bool:
    """True iff the minimum eigenvalue of symmetric ``m`` is >= -tol."""
    if m.rows == 0:
        return True
    evals, _ = sym_eig(m, prec)
    with workdps(prec):
        return evals[-1] >= -to_mpf(tol)


def pseudoinverse(m, rank_tol=None, prec=DEFAULT_PREC):
    """Moore-Penrose pseudoinverse of a symmetric PSD matrix.

    Eigenvalues below ``rank_tol * max_eigenvalue`` are treated as zero;
    a negative eigenvalue beyond that tolerance raises.
    """
    evals, v = sym_eig(m, prec)
    with workdps(prec):
        rt = to_mpf(rank_tol) if rank_tol is not None else half_eps(prec)
        top = max((abs(l) for l in evals), default=mpf(0))
        cut = rt * top
        inv = mpmath.zeros(m.rows, m.rows)
        for k, l in enumerate(evals):
            if l < -cut:
                raise NumericalError(
                    "pseudoinverse: negative eigenvalue %s" % mpmath.nstr(l, 8)
                )
            if l > cut:
                inv[k, k] = 1 / l
        return v * inv * v.T


def matrix_sqrt(m, prec=DEFAULT_PREC, tol=None):
    """Principal square root of a symmetric PSD matrix (tiny negatives clipped)."""
    evals, v = sym_eig(m, prec)
    with workdps(prec):
        lim = (to_mpf(tol) if tol is not None else half_eps(prec)) * max(
            (abs(l) for l in evals), default=mpf(0)
        )
        d = mpmath.zeros(m.rows, m.rows)
        for k, l in enumerate(evals):
            if l < -lim:
                raise NumericalError(
                    "matrix_sqrt: negative eigenvalue %s" % mpmath.nstr(l, 8)
                )
            d[k, k] = mpmath.sqrt(l) if l > 0 else mpf(0)
        return v * d * v.T


def inv_sqrt(m, rank_tol=None, prec=DEFAULT_PREC):
    """Pseudo inverse square root of a symmetric PSD matrix."""
    evals, v = sym_eig(m, prec)
    with workdps(prec):
        rt = to_mpf(rank_tol) if rank_tol is not None else half_eps(prec)
        top = max((abs(l) for l in evals), default=mpf(0))
        cut = rt * top
        d = mpmath.zeros(m.rows, m.rows)
        for k, l in enumerate(evals):
            if l < -cut:
                raise NumericalError("inv_sqrt: negative eigenvalue")
            if l > cut:
                d[k, k] = 1 / mpmath.sqrt(l)
        return v * d * v.T
