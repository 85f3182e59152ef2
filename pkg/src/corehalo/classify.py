"""N-SOL membership, entanglement consolidation, and the symmetric shortcut.

A bipartite Gaussian state is N-SOL when the A- and B-restrictions of its
negativity-contributing PT rows are symplectically orthogonal with products
Omega_ij / 2.  For such states a local symplectic built by symplectic
Gram-Schmidt on those restrictions consolidates every unit of negativity
into (1_A x 1_B) two-mode squeezed pairs ("cores"), leaving a halo that
carries no negativity of its own.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import mpmath
from mpmath import mpf

from .precision import (
    DEFAULT_PREC,
    NumericalError,
    half_eps,
    max_abs,
    submatrix,
    to_mpf,
    workdps,
)
from .symplectic import (
    Bipartition,
    CovMatrix,
    is_symplectic,
    mode_permutation_matrix,
    omega,
    permute_modes,
    symplectic_gram_schmidt,
    symplectic_inverse,
    williamson,
)
from .ptspace import (
    PtSpectrum,
    lambda_matrix,
    negativity_from_spectrum,
    parties_of,
    partial_transpose,
    pt_spectrum,
    s_tilde_local_update,
)


class NoNegativityError(ValueError):
    """Raised when an operation needs V_N but the state has no negativity."""


class NsolViolation(ValueError):
    """Raised when consolidation is requested for a state outside N-SOL."""


def _restrict_row(row, lo, hi):
    v = mpmath.zeros(hi - lo, 1)
    for i in range(lo, hi):
        v[i - lo] = row[0, i]
    return v


def nsol_deviation(spec: PtSpectrum) -> mpf:
    """Worst deviation of local V_N symplectic products from Omega_ij / 2."""
    if spec.n_minus == 0:
        raise NoNegativityError("state has no negativity; N-SOL test not applicable")
    bip = spec.bip
    with workdps(spec.prec):
        rows = []
        for (x, p) in spec.vn_rows():
            rows.append(x)
            rows.append(p)
        k = len(rows)
        oma = omega(bip.n_a)
        omb = omega(bip.n_b)
        om_vn = omega(k // 2)
        worst = mpf(0)
        for i in range(k):
            ri_a = _restrict_row(rows[i], 0, 2 * bip.n_a)
            ri_b = _restrict_row(rows[i], 2 * bip.n_a, 2 * bip.n_modes)
            for j in range(k):
                rj_a = _restrict_row(rows[j], 0, 2 * bip.n_a)
                rj_b = _restrict_row(rows[j], 2 * bip.n_a, 2 * bip.n_modes)
                target = om_vn[i, j] / 2
                da = abs((ri_a.T * oma * rj_a)[0, 0] - target)
                db = abs((ri_b.T * omb * rj_b)[0, 0] - target)
                worst = max(worst, da, db)
        return worst


def nsol_check(sigma: CovMatrix, bip: Bipartition, tol=None, prec=None, spec=None) -> bool:
    """True iff every local V_N symplectic product matches Omega_ij / 2."""
    if prec is None:
        prec = sigma.prec
    if spec is None:
        spec = pt_spectrum(sigma, bip, prec)
    with workdps(prec):
        lim = to_mpf(tol) if tol is not None else half_eps(prec) * 1000
        return nsol_deviation(spec) <= lim


@dataclass
class Core:
    """One consolidated (1_A x 1_B) squeezed pair."""

    a_mode: int
    b_mode: int
    nu_minus: mpf
    r: mpf


@dataclass
class CoreHaloDecomposition:
    """Result of consolidating an N-SOL state.

    ``local_map`` is the block-diagonal symplectic S_A + S_B in the original
    A-first mode ordering, ``sigma_af`` the consolidated state in that same
    ordering (core k occupying A-mode k and B-mode k), and ``sigma_prime``
    the same state permuted to core-halo ordering (c1_A, c1_B, ..., halo).
    ``parties_ch`` records each core-halo mode's party.
    """

    local_map: mpmath.matrix
    s_a: mpmath.matrix
    s_b: mpmath.matrix
    sigma_af: CovMatrix
    sigma_prime: CovMatrix
    perm: list
    parties_ch: list
    cores: list
    halo_modes: list
    s_tilde_prime: mpmath.matrix
    bip: Bipartition
    prec: int

    @property
    def n_cores(self) -> int:
        return len(self.cores)


def _core_halo_perm(bip: Bipartition, n_cores: int):
    """A-first mode indices rearranged to (c1_A, c1_B, ..., halo_A, halo_B)."""
    perm = []
    for k in range(n_cores):
        perm.append(k)
        perm.append(bip.n_a + k)
    perm.extend(range(n_cores, bip.n_a))
    perm.extend(range(bip.n_a + n_cores, bip.n_modes))
    parties = ["A", "B"] * n_cores + ["A"] * (bip.n_a - n_cores) + ["B"] * (bip.n_b - n_cores)
    return perm, parties


def _row_ab_parts(row_mat, row_idx, core_a, core_b, n_a):
    xa = row_mat[row_idx, 2 * core_a]
    pa = row_mat[row_idx, 2 * core_a + 1]
    xb = row_mat[row_idx, 2 * (n_a + core_b)]
    pb = row_mat[row_idx, 2 * (n_a + core_b) + 1]
    return (xa, pa), (xb, pb)


def _apply_local(sigma: CovMatrix, s_a, s_b, bip: Bipartition) -> CovMatrix:
    n = bip.n_modes
    local = mpmath.zeros(2 * n, 2 * n)
    for i in range(2 * bip.n_a):
        for j in range(2 * bip.n_a):
            local[i, j] = s_a[i, j]
    off = 2 * bip.n_a
    for i in range(2 * bip.n_b):
        for j in range(2 * bip.n_b):
            local[off + i, off + j] = s_b[i, j]
    return CovMatrix(local * sigma.mat * local.T, sigma.prec), local


def consolidate(sigma: CovMatrix, bip: Bipartition, prec=None, spec=None, nsol_tol=None) -> CoreHaloDecomposition:
    """Consolidate all negativity into cores via symplectic Gram-Schmidt.

    Seeds the A- and B-side Gram-Schmidt with the V_N row restrictions
    (rescaled by sqrt(2) so local products become Omega entries), applies the
    momentum-reflection conjugation on B, then fixes any negative-squeezing
    core by a single-mode pi phase on its B mode.  The output is verified:
    V_N support confined to cores, per-core PT minima matching the global
    spectrum, and total negativity preserved.

    ``nsol_tol`` loosens the N-SOL gate for inputs known only to limited
    precision (e.g. matrices quoted to a few significant digits); the
    verification tolerances scale along with the measured deviation.
    """
    if prec is None:
        prec = sigma.prec
    if spec is None:
        spec = pt_spectrum(sigma, bip, prec)
    if spec.n_minus == 0:
        raise NoNegativityError("nothing to consolidate: state has no negativity")
    if not nsol_check(sigma, bip, tol=nsol_tol, prec=prec, spec=spec):
        raise NsolViolation(
            "state is not N-SOL (worst local product deviation %s)"
            % mpmath.nstr(nsol_deviation(spec), 5)
        )
    with workdps(prec):
        rt2 = mpmath.sqrt(2)
        seeds_a, seeds_b = [], []
        for (x, p) in spec.vn_rows():
            seeds_a.append(_restrict_row(x, 0, 2 * bip.n_a) * rt2)
            seeds_a.append(_restrict_row(p, 0, 2 * bip.n_a) * rt2)
            seeds_b.append(_restrict_row(x, 2 * bip.n_a, 2 * bip.n_modes) * rt2)
            seeds_b.append(_restrict_row(p, 2 * bip.n_a, 2 * bip.n_modes) * rt2)
        g_a = symplectic_gram_schmidt(seeds_a, bip.n_a, prec)
        g_b = symplectic_gram_schmidt(seeds_b, bip.n_b, prec)
        lam_b = lambda_matrix(["B"] * bip.n_b)
        s_a = g_a
        s_b = lam_b * g_b * lam_b
        return _finish_consolidation(sigma, bip, prec, spec, s_a, s_b)


def _finish_consolidation(sigma, bip, prec, spec, s_a, s_b) -> CoreHaloDecomposition:
    """Shared tail: pi-phase fixing, verification, core table, permutation."""
    n_cores = spec.n_minus
    sig_af, local = _apply_local(sigma, s_a, s_b, bip)
    st_prime = s_tilde_local_update(spec.s_tilde, s_a, s_b, bip, prec)
    # negative-squeezing cores have A-B *symmetric* V_N rows; flip their B mode
    flipped = False
    for k, pair in enumerate(spec.vn_pairs):
        x_idx = 2 * pair
        (xa, pa), (xb, pb) = _row_ab_parts(st_prime, x_idx, k, k, bip.n_a)
        sym = mpmath.sqrt((xa + xb) ** 2 + (pa + pb) ** 2)
        anti = mpmath.sqrt((xa - xb) ** 2 + (pa - pb) ** 2)
        if sym > anti:
            flipped = True
            for j in range(2 * bip.n_b):
                s_b[2 * k, j] = -s_b[2 * k, j]
                s_b[2 * k + 1, j] = -s_b[2 * k + 1, j]
    if flipped:
        sig_af, local = _apply_local(sigma, s_a, s_b, bip)
        st_prime = s_tilde_local_update(spec.s_tilde, s_a, s_b, bip, prec)
    _verify_consolidation(sig_af, bip, prec, spec, st_prime, n_cores)
    cores = []
    for k, pair in enumerate(spec.vn_pairs):
        nu = spec.nu[pair]
        cores.append(Core(k, k, nu, -mpmath.log(nu) / 2))
    perm, parties = _core_halo_perm(bip, n_cores)
    sig_ch, _ = permute_modes(sig_af, perm)
    halo = list(range(2 * n_cores, bip.n_modes))
    return CoreHaloDecomposition(
        local_map=local,
        s_a=s_a,
        s_b=s_b,
        sigma_af=sig_af,
        sigma_prime=sig_ch,
        perm=perm,
        parties_ch=parties,
        cores=cores,
        halo_modes=halo,
        s_tilde_prime=st_prime,
        bip=bip,
        prec=prec,
    )


def _verify_consolidation(sig_af, bip, prec, spec, st_prime, n_cores):
    """Mandatory post-construction checks on a consolidated state.

    Tolerances track the worst N-SOL deviation of the input: an exactly
    N-SOL state is held to the roundoff budget, while a state quoted to k
    digits is allowed commensurate leakage.
    """
    half = half_eps(prec)
    dev = nsol_deviation(spec) if n_cores else mpf(0)
    lim = max(half * 1000, dev * 100)
    n = bip.n_modes
    for k, pair in enumerate(spec.vn_pairs):
        core_cols = {2 * k, 2 * k + 1, 2 * (bip.n_a + k), 2 * (bip.n_a + k) + 1}
        for row_idx in (2 * pair, 2 * pair + 1):
            nrm = mpmath.norm(st_prime[row_idx, :].T)
            worst = mpf(0)
            for i in range(2 * n):
                if i not in core_cols:
                    worst = max(worst, abs(st_prime[row_idx, i]))
            if worst > lim * max(nrm, mpf(1)):
                raise NumericalError(
                    "V_N row support leaks outside its core (%s)" % mpmath.nstr(worst, 5)
                )
            (xa, pa), (xb, pb) = _row_ab_parts(st_prime, row_idx, k, k, bip.n_a)
            anti = mpmath.sqrt((xa + xb) ** 2 + (pa + pb) ** 2)
            if anti > lim * max(nrm, mpf(1)):
                raise NumericalError("consolidated V_N row is not A-B anti-symmetric")
        # reduced core must reproduce its PT minimum and positive squeezing
        idx = [2 * k, 2 * k + 1, 2 * (bip.n_a + k), 2 * (bip.n_a + k) + 1]
        core_cm = CovMatrix(submatrix(sig_af.mat, idx, idx), prec)
        core_spec = pt_spectrum(core_cm, Bipartition(1, 1), prec)
        nu_expect = spec.nu[pair]
        if abs(core_spec.nu[-1] - nu_expect) > lim * max(nu_expect, mpf(1)):
            raise NumericalError("reduced core PT minimum drifted from the global spectrum")
        if core_cm.mat[0, 2] < 0:
            raise NumericalError("core left in negative-squeezing form after phase fixing")


def symmetric_consolidate(sigma: CovMatrix, bip: Bipartition, prec=None, spec=None) -> CoreHaloDecomposition:
    """Consolidation shortcut for A-B symmetric states without x-p mixing.

    When the PT blocks satisfy sigma~_A = sigma~_B with symmetric off-diagonal
    block and no x-p matrix elements, S_A = S_B may be taken directly as the
    Williamson diagonalizer of sigma~_A - sigma~_AB.  Produces the same core
    spectra and invariants as :func:`consolidate`.
    """
    if prec is None:
        prec = sigma.prec
    if bip.n_a != bip.n_b:
        raise ValueError("symmetric consolidation needs equal mode counts")
    with workdps(prec):
        tilde = partial_transpose(sigma, bip)
        na = bip.n_a
        idx_a = list(range(2 * na))
        idx_b = list(range(2 * na, 4 * na))
        ta = submatrix(tilde.mat, idx_a, idx_a)
        tb = submatrix(tilde.mat, idx_b, idx_b)
        tab = submatrix(tilde.mat, idx_a, idx_b)
        scale = max(max_abs(tilde.mat), mpf(1))
        lim = half_eps(prec) * scale * 1000
        if max_abs(ta - tb) > lim or max_abs(tab - tab.T) > lim:
            raise ValueError("state violates the A-B symmetry precondition")
        for i in range(0, 2 * na, 2):
            for j in range(1, 2 * na, 2):
                if abs(ta[i, j]) > lim or abs(tab[i, j]) > lim or abs(tab[j, i]) > lim:
                    raise ValueError("state has x-p matrix elements; symmetric route invalid")
        if spec is None:
            spec = pt_spectrum(sigma, bip, prec)
        if spec.n_minus == 0:
            raise NoNegativityError("nothing to consolidate: state has no negativity")
        diff = ta - tab
        res = williamson(CovMatrix(diff, prec), prec)
        # modes carrying nu < 1 of this sector are the cores; cores first, ascending
        nu = res.nu
        tolneg = half_eps(prec)
        core_modes = [j for j in range(na) if nu[j] < 1 - tolneg]
        if len(core_modes) != spec.n_minus:
            raise NsolViolation(
                "negativity is not confined to the symmetric difference sector"
            )
        core_modes.sort(key=lambda j: (nu[j], j))
        halo_modes = [j for j in range(na) if j not in set(core_modes)]
        order = core_modes + halo_modes
        pmat = mode_permutation_matrix(order, na)
        s = pmat * res.s
        return _finish_consolidation(sigma, bip, prec, spec, s.copy(), s.copy())


def two_mode_symmetric_analysis(n, k_q, k_p, prec=DEFAULT_PREC):
    """Closed-form PT minimum of the symmetric two-mode normal form.

    Returns (nu_minus, lambda, r) with nu_minus = sqrt((n + k_p)(n - k_q)),
    lambda the single-mode squeeze aligning V_N with a two-mode squeezed
    vacuum, and r = -ln(nu_minus)/2 when the state is entangled (else None).
    """
    with workdps(prec):
        n = to_mpf(n)
        k_q = to_mpf(k_q)
        k_p = to_mpf(k_p)
        if n <= 0 or n < abs(k_q) or n < abs(k_p):
            raise ValueError("normal form requires n >= |k_q|, |k_p| for a PSD matrix")
        nu_minus = mpmath.sqrt((n + k_p) * (n - k_q))
        lam = ((n + k_p) / (n - k_q)) ** mpf("0.25")
        r = -mpmath.log(nu_minus) / 2 if nu_minus < 1 else None
        return nu_minus, lam, r


def two_mode_symmetric_cm(n, k_q, k_p, prec=DEFAULT_PREC) -> CovMatrix:
    """Explicit 4x4 covariance matrix of the symmetric two-mode normal form."""
    with workdps(prec):
        n = to_mpf(n)
        k_q = to_mpf(k_q)
        k_p = to_mpf(k_p)
        m = mpmath.zeros(4, 4)
        m[0, 0] = m[1, 1] = m[2, 2] = m[3, 3] = n
        m[0, 2] = m[2, 0] = k_q
        m[1, 3] = m[3, 1] = k_p
        return CovMatrix(m, prec)
