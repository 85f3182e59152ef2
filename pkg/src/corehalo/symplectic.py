"""Symplectic phase-space formalism for Gaussian covariance matrices.

Mode ordering is (x1, p1, ..., xn, pn) everywhere, matching the canonical
commutation form Omega = diag_blocks([[0, 1], [-1, 0]]).  Covariance matrices
use the anticommutator normalization in which the n-mode vacuum is the
identity, so physicality reads "all Williamson eigenvalues >= 1".
"""

from __future__ import annotations

from dataclasses import dataclass, field

import mpmath
from mpmath import mp, mpf

from .precision import (
    DEFAULT_PREC,
    NumericalError,
    check_symmetric,
    half_eps,
    inv_sqrt,
    mat,
    matrix_sqrt,
    max_abs,
    psd_check,
    submatrix,
    sym_eig,
    to_mpf,
    workdps,
)


def omega(n_modes) -> mpmath.matrix:
    """The 2n x 2n symplectic form, block-diagonal [[0, 1], [-1, 0]]."""
    m = mpmath.zeros(2 * n_modes, 2 * n_modes)
    for j in range(n_modes):
        m[2 * j, 2 * j + 1] = mpf(1)
        m[2 * j + 1, 2 * j] = mpf(-1)
    return m


@dataclass(frozen=True)
class Bipartition:
    """A-B mode split with the A modes listed first."""

    n_a: int
    n_b: int

    @property
    def n_modes(self) -> int:
        return self.n_a + self.n_b

    def b_modes(self):
        return range(self.n_a, self.n_a + self.n_b)


@dataclass
class CovMatrix:
    """Covariance matrix of an n-mode Gaussian state.

    ``mat`` is a symmetric 2n x 2n mpmath matrix; ``prec`` records the working
    decimal precision the entries were produced at.  First moments default to
    zero and are carried along by mode reorderings only.
    """

    mat: mpmath.matrix
    prec: int = DEFAULT_PREC
    first_moments: list = field(default=None)

    def __post_init__(self):
        if self.mat.rows != self.mat.cols or self.mat.rows % 2:
            raise ValueError("covariance matrix must be square of even dimension")

    @property
    def n_modes(self) -> int:
        return self.mat.rows // 2

    @classmethod
    def from_rows(cls, rows, prec=DEFAULT_PREC):
        with workdps(prec):
            m = mat(rows)
        return cls(m, prec)

    def copy(self):
        return CovMatrix(self.mat.copy(), self.prec, list(self.first_moments) if self.first_moments else None)


def _matrix_of(sigma):
    return sigma.mat if isinstance(sigma, CovMatrix) else sigma


def symplectic_inverse(s) -> mpmath.matrix:
    """Inverse of a symplectic matrix, computed exactly as -Omega S^T Omega."""
    n = s.rows // 2
    om = omega(n)
    return -om * s.T * om


def is_symplectic(s, tol=None, prec=DEFAULT_PREC) -> bool:
    """True iff max|S Omega S^T - Omega| <= tol."""
    if s.rows != s.cols or s.rows % 2:
        raise ValueError("symplectic candidates are square with even dimension")
    with workdps(prec):
        n = s.rows // 2
        om = omega(n)
        dev = max_abs(s * om * s.T - om)
        lim = to_mpf(tol) if tol is not None else half_eps(prec)
        return dev <= lim


def physicality(sigma, tol=None, prec=None) -> bool:
    """Uncertainty-principle test: PSD of the real embedding of sigma + i Omega.

    The 4n x 4n real form [[sigma, -Omega], [Omega, sigma]] is PSD exactly when
    sigma + i Omega is, which is also equivalent to every Williamson eigenvalue
    being >= 1 (the cheaper route taken by callers that already diagonalize).
    """
    m = _matrix_of(sigma)
    if prec is None:
        prec = sigma.prec if isinstance(sigma, CovMatrix) else DEFAULT_PREC
    with workdps(prec):
        n = m.rows // 2
        om = omega(n)
        dim = 2 * m.rows
        emb = mpmath.zeros(dim, dim)
        for i in range(m.rows):
            for j in range(m.cols):
                emb[i, j] = m[i, j]
                emb[m.rows + i, m.rows + j] = m[i, j]
                emb[i, m.rows + j] = -om[i, j]
                emb[m.rows + i, j] = om[i, j]
        lim = to_mpf(tol) if tol is not None else half_eps(prec) * max(max_abs(m), mpf(1))
        return psd_check(emb, lim, prec)


def partial_trace(sigma: CovMatrix, keep) -> CovMatrix:
    """Reduced state on the given modes (principal submatrix)."""
    keep = list(keep)
    n = sigma.n_modes
    if len(set(keep)) != len(keep) or any(k < 0 or k >= n for k in keep):
        raise ValueError("keep set must be distinct valid mode indices")
    idx = []
    for k in keep:
        idx.extend([2 * k, 2 * k + 1])
    sub = submatrix(sigma.mat, idx, idx)
    fm = None
    if sigma.first_moments is not None:
        fm = [sigma.first_moments[i] for i in idx]
    return CovMatrix(sub, sigma.prec, fm)


def mode_permutation_matrix(perm, n_modes) -> mpmath.matrix:
    """2x2-identity-block permutation map sending mode perm[k] to slot k."""
    if sorted(perm) != list(range(n_modes)):
        raise ValueError("not a valid mode permutation")
    s = mpmath.zeros(2 * n_modes, 2 * n_modes)
    for new, old in enumerate(perm):
        s[2 * new, 2 * old] = mpf(1)
        s[2 * new + 1, 2 * old + 1] = mpf(1)
    return s


def permute_modes(sigma: CovMatrix, perm):
    """Reorder modes so slot k holds old mode perm[k]; returns (CM, map)."""
    n = sigma.n_modes
    s = mode_permutation_matrix(perm, n)
    with workdps(sigma.prec):
        out = s * sigma.mat * s.T
        fm = None
        if sigma.first_moments is not None:
            fm = []
            for k in perm:
                fm.extend([sigma.first_moments[2 * k], sigma.first_moments[2 * k + 1]])
    return CovMatrix(out, sigma.prec, fm), s


@dataclass
class WilliamsonResult:
    s: mpmath.matrix
    nu: list  # symplectic eigenvalues, descending, one per mode

    @property
    def d(self) -> mpmath.matrix:
        n = len(self.nu)
        dm = mpmath.zeros(2 * n, 2 * n)
        for j, v in enumerate(self.nu):
            dm[2 * j, 2 * j] = v
            dm[2 * j + 1, 2 * j + 1] = v
        return dm


def _symp_product(u, w, om):
    # u, w are column vectors
    return (u.T * om * w)[0, 0]


def williamson(sigma, prec=None) -> WilliamsonResult:
    """Williamson normal form S sigma S^T = diag(nu_1, nu_1, ..., nu_n, nu_n).

    Follows the similarity route: the spectrum of -Omega sigma Omega sigma is
    obtained from the symmetric form sqrt(sigma) Omega^T sigma Omega
    sqrt(sigma); eigenvector pairs are normalized into symplectic rows, with
    symplectic Gram-Schmidt inside accidentally degenerate clusters, and a
    final single-mode rotation/squeeze makes each 2x2 block exactly diagonal.
    Eigenvalues are returned descending; S is verified symplectic.
    """
    m = _matrix_of(sigma)
    if prec is None:
        prec = sigma.prec if isinstance(sigma, CovMatrix) else DEFAULT_PREC
    check_symmetric(m, prec)
    n = m.rows // 2
    with workdps(prec):
        evals_s, vecs_s = sym_eig(m, prec)
        if evals_s[-1] <= 0:
            raise NumericalError("williamson requires a positive definite matrix")
        top = evals_s[0]
        half = half_eps(prec)
        r = vecs_s * _diag([mpmath.sqrt(l) for l in evals_s]) * vecs_s.T
        rinv = vecs_s * _diag([1 / mpmath.sqrt(l) for l in evals_s]) * vecs_s.T
        om = omega(n)
        k = r * (om.T * m * om) * r
        evals, v = sym_eig(k, prec)
        # candidate rows: sigma^(-1/2) w, eigenvalue nu^2 (each doubly degenerate)
        cand = [rinv * v[:, j] for j in range(2 * n)]
        # cluster equal eigenvalues (>= 2-dim each; 4+ when modes collide)
        clusters = []
        start = 0
        scale = max(abs(evals[0]), mpf(1))
        for j in range(1, 2 * n + 1):
            if j == 2 * n or abs(evals[j] - evals[j - 1]) > half * scale:
                clusters.append((start, j))
                start = j
        pairs = []
        for a, b in clusters:
            pool = list(range(a, b))
            if len(pool) % 2:
                raise NumericalError("odd symplectic eigenvalue multiplicity")
            vecs = {j: cand[j] for j in pool}
            accepted = []
            while pool:
                iu = pool.pop(0)
                u = vecs[iu]
                for (ux, up) in accepted:
                    u = u - ux * _symp_product(u, up, om) + up * _symp_product(u, ux, om)
                # partner with the largest symplectic product
                best_j, best_val = None, mpf(0)
                for j in pool:
                    w = vecs[j]
                    val = abs(_symp_product(u, w, om))
                    if val > best_val:
                        best_j, best_val = j, val
                if best_j is None or best_val <= half * mpf(10):
                    raise NumericalError("symplectically degenerate eigenspace")
                pool.remove(best_j)
                w = vecs[best_j]
                for (ux, up) in accepted:
                    w = w - ux * _symp_product(w, up, om) + up * _symp_product(w, ux, om)
                alpha = _symp_product(u, w, om)
                root = mpmath.sqrt(abs(alpha))
                ux = u / root
                up = w * (mpmath.sign(alpha) / root)
                accepted.append((ux, up))
                nu = mpmath.sqrt((evals[iu] + evals[best_j]) / 2)
                pairs.append((nu, ux, up))
        # descending in nu; cluster traversal already gives that order
        s0 = mpmath.zeros(2 * n, 2 * n)
        for j, (nu, ux, up) in enumerate(pairs):
            for i in range(2 * n):
                s0[2 * j, i] = ux[i]
                s0[2 * j + 1, i] = up[i]
        # The normalized eigenvector rows are already sigma-orthonormal, so each
        # mode block of S0 sigma S0^T equals nu I up to roundoff and the block
        # rotation angle is a pure gauge.  Fix it canonically: rotate each
        # pair so the first row carries the largest possible weight on the
        # x coordinates (an exact no-op for states without x-p mixing).
        c = s0 * m * s0.T
        rot = mpmath.zeros(2 * n, 2 * n)
        nus = []
        for j, (nu_guess, ux, up) in enumerate(pairs):
            g11 = sum(ux[2 * t] ** 2 for t in range(n))
            g22 = sum(up[2 * t] ** 2 for t in range(n))
            g12 = sum(ux[2 * t] * up[2 * t] for t in range(n))
            gap = mpmath.sqrt((g11 - g22) ** 2 + 4 * g12 * g12)
            scale_g = max(g11, g22, mpf(1))
            if gap <= scale_g * half * 100:
                theta = mpf(0)  # isotropic pair: keep the constructed gauge
            else:
                theta = mpmath.atan2(2 * g12, g11 - g22) / 2
            ct, st = mpmath.cos(theta), mpmath.sin(theta)
            a = c[2 * j, 2 * j]
            bb = c[2 * j + 1, 2 * j + 1]
            cc = (c[2 * j, 2 * j + 1] + c[2 * j + 1, 2 * j]) / 2
            mux = a * ct * ct + 2 * cc * ct * st + bb * st * st
            mup = a * st * st - 2 * cc * ct * st + bb * ct * ct
            if mux <= 0 or mup <= 0:
                raise NumericalError("mode block lost positivity")
            nu = mpmath.sqrt(mux * mup)
            nus.append(nu)
            sa = mpmath.sqrt(nu / mux)
            sb = mpmath.sqrt(nu / mup)
            # S_j = diag(sa, sb) * R(theta)^T
            rot[2 * j, 2 * j] = sa * ct
            rot[2 * j, 2 * j + 1] = sa * st
            rot[2 * j + 1, 2 * j] = -sb * st
            rot[2 * j + 1, 2 * j + 1] = sb * ct
        s = rot * s0
        # canonical pair signs: largest-magnitude x-row entry positive
        for j in range(n):
            best, idx = mpf(0), 0
            for i in range(2 * n):
                ai = abs(s[2 * j, i])
                if ai > best * (1 + mpf("1e-8")):
                    best, idx = ai, i
            if s[2 * j, idx] < 0:
                for i in range(2 * n):
                    s[2 * j, i] = -s[2 * j, i]
                    s[2 * j + 1, i] = -s[2 * j + 1, i]
        order = sorted(range(n), key=lambda j: (-nus[j], j))
        perm_rows = []
        for j in order:
            perm_rows.extend([2 * j, 2 * j + 1])
        s_final = mpmath.zeros(2 * n, 2 * n)
        for new, old in enumerate(perm_rows):
            for i in range(2 * n):
                s_final[new, i] = s[old, i]
        nu_sorted = [nus[j] for j in order]
        lim = half * max(max_abs(m), mpf(1)) * 100
        if max_abs(s_final * om * s_final.T - om) > lim:
            raise NumericalError("williamson output failed symplecticity")
        resid = s_final * m * s_final.T
        for j in range(n):
            resid[2 * j, 2 * j] -= nu_sorted[j]
            resid[2 * j + 1, 2 * j + 1] -= nu_sorted[j]
        if max_abs(resid) > lim * max(abs(nu_sorted[0]), mpf(1)):
            raise NumericalError("williamson residual diagonality failure")
        return WilliamsonResult(s_final, nu_sorted)


def _diag(vals):
    d = mpmath.zeros(len(vals), len(vals))
    for i, v in enumerate(vals):
        d[i, i] = v
    return d


def symplectic_gram_schmidt(seeds, n_modes, prec=DEFAULT_PREC) -> mpmath.matrix:
    """Complete seed rows to a full 2n x 2n symplectic matrix.

    Seeds are taken as consecutive (x-like, p-like) pairs whose pairwise
    symplectic products already reproduce Omega entries up to scaling; each
    accepted pair is rescaled so its product is exactly 1.  Completion vectors
    are canonical basis vectors, symplectically orthogonalized against all
    accepted pairs; candidates that turn out symplectically orthogonal to a
    pending completion vector are deferred, not dropped.
    """
    with workdps(prec):
        om = omega(n_modes)
        dim = 2 * n_modes
        seeds = [_as_column(v, dim) for v in seeds]
        if len(seeds) % 2:
            raise ValueError("seed rows must come in (x-like, p-like) pairs")
        dep_tol = half_eps(prec) * 10
        pairs = []

        def ortho(v):
            for (ux, up) in pairs:
                v = v - ux * _symp_product(v, up, om) + up * _symp_product(v, ux, om)
            return v

        for t in range(0, len(seeds), 2):
            u = ortho(seeds[t])
            w = ortho(seeds[t + 1])
            beta = _symp_product(u, w, om)
            if abs(beta) <= dep_tol * max(mpmath.norm(u) * mpmath.norm(w), mpf(1)):
                raise NumericalError("seed subspace symplectically degenerate")
            pairs.append((u, w / beta))
        queue = [_unit_vector(j, dim) for j in range(dim)]
        pending = None
        deferred = []
        while len(pairs) < n_modes:
            if not queue:
                if pending is None or not deferred:
                    raise NumericalError("symplectic completion exhausted candidates")
                queue, deferred = deferred, []
            v = ortho(queue.pop(0))
            nrm = mpmath.norm(v)
            if nrm <= dep_tol:
                continue
            if pending is None:
                pending = v / nrm
                continue
            beta = _symp_product(pending, v, om)
            if abs(beta) <= dep_tol * max(nrm, mpf(1)):
                deferred.append(v)
                continue
            pairs.append((pending, v / beta))
            pending = None
            queue = deferred + queue
            deferred = []
        s = mpmath.zeros(dim, dim)
        for j, (ux, up) in enumerate(pairs):
            for i in range(dim):
                s[2 * j, i] = ux[i]
                s[2 * j + 1, i] = up[i]
        if not is_symplectic(s, half_eps(prec) * max(max_abs(s) ** 2, mpf(1)) * 100, prec):
            raise NumericalError("gram-schmidt produced a non-symplectic map")
        return s


def _as_column(v, dim):
    if isinstance(v, mpmath.matrix):
        if v.cols == 1:
            col = v
        else:
            col = v.T
    else:
        col = mpmath.matrix([to_mpf(x) for x in v])
    if col.rows != dim:
        raise ValueError("seed vector has wrong dimension")
    return col


def _unit_vector(j, dim):
    v = mpmath.zeros(dim, 1)
    v[j] = mpf(1)
    return v
