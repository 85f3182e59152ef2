"""Partial transposition, PT symplectic spectra, and logarithmic negativity.

The partial transpose acts in phase space as the momentum reflection Lambda
on the B party.  Diagonalizing the PT covariance matrix with a symplectic
map S-tilde splits phase space into the negativity-contributing subspace
(PT symplectic eigenvalues below one) and its complement; those row vectors
drive every classification and filtering step downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import mpmath
from mpmath import mpf

from .precision import (
    DEFAULT_PREC,
    NumericalError,
    half_eps,
    max_abs,
    to_mpf,
    workdps,
)
from .symplectic import (
    Bipartition,
    CovMatrix,
    omega,
    symplectic_inverse,
    williamson,
)


def lambda_matrix(parties) -> mpmath.matrix:
    """Momentum reflection on B modes; ``parties`` is a per-mode 'A'/'B' list."""
    n = len(parties)
    m = mpmath.zeros(2 * n, 2 * n)
    for j, p in enumerate(parties):
        m[2 * j, 2 * j] = mpf(1)
        m[2 * j + 1, 2 * j + 1] = mpf(-1) if p == "B" else mpf(1)
    return m


def parties_of(bip: Bipartition):
    return ["A"] * bip.n_a + ["B"] * bip.n_b


def partial_transpose(sigma: CovMatrix, bip: Bipartition) -> CovMatrix:
    """Lambda sigma Lambda; an involution that flips B-mode momentum signs."""
    if bip.n_modes != sigma.n_modes:
        raise ValueError("bipartition does not match the covariance matrix")
    with workdps(sigma.prec):
        out = sigma.mat.copy()
        flip = [2 * j + 1 for j in bip.b_modes()]
        for i in flip:
            for k in range(out.cols):
                out[i, k] = -out[i, k]
        for k in range(out.rows):
            for i in flip:
                out[k, i] = -out[k, i]
    return CovMatrix(out, sigma.prec, list(sigma.first_moments) if sigma.first_moments else None)


@dataclass
class PtSpectrum:
    """PT symplectic eigensystem of a bipartite covariance matrix.

    ``nu`` holds one eigenvalue per mode, descending, so the rows of
    ``s_tilde`` pair as (x-like 2j, p-like 2j+1).  ``vn_pairs`` indexes the
    negativity-contributing pairs in ascending-eigenvalue order (dominant,
    i.e. smallest, first); ``vnslash_pairs`` holds the complement.
    """

    nu: list
    s_tilde: mpmath.matrix
    n_minus: int
    vn_pairs: list
    vnslash_pairs: list
    bip: Bipartition
    prec: int

    def vn_rows(self):
        """V_N row vectors as (x_row, p_row) tuples, dominant core first."""
        out = []
        for j in self.vn_pairs:
            out.append((self.s_tilde[2 * j, :], self.s_tilde[2 * j + 1, :]))
        return out

    def vn_values(self):
        return [self.nu[j] for j in self.vn_pairs]


def pt_spectrum(sigma: CovMatrix, bip: Bipartition, prec=None, tol_neg=None) -> PtSpectrum:
    """Williamson analysis of the PT covariance matrix, with reconstruction check.

    Eigenvalues below ``1 - tol_neg`` (default tol 10**(-prec/2), absolute)
    count as negativity-contributing.  Before returning, the identity
    sigma = Lambda Omega { sum nu_j |nu_j><nu_j| } Omega^T Lambda is verified
    against the input at the roundoff budget.
    """
    if prec is None:
        prec = sigma.prec
    with workdps(prec):
        tilde = partial_transpose(sigma, bip)
        res = williamson(tilde, prec)
        tol = to_mpf(tol_neg) if tol_neg is not None else half_eps(prec)
        one = mpf(1)
        nu = res.nu
        n = len(nu)
        vn = [j for j in range(n) if nu[j] < one - tol]
        vn.sort(key=lambda j: (nu[j], j))
        vns = [j for j in range(n) if j not in set(vn)]
        spec = PtSpectrum(nu, res.s, len(vn), vn, vns, bip, prec)
        recon = reconstruct_cm(spec)
        dev = max_abs(recon - sigma.mat)
        if dev > half_eps(prec) * max(max_abs(sigma.mat), mpf(1)) * 100:
            raise NumericalError(
                "PT reconstruction residual %s exceeds tolerance" % mpmath.nstr(dev, 5)
            )
        return spec


def reconstruct_cm(spec: PtSpectrum) -> mpmath.matrix:
    """sigma rebuilt from the PT eigensystem (the Lambda-Omega transfer identity)."""
    with workdps(spec.prec):
        n = len(spec.nu)
        om = omega(n)
        lam = lambda_matrix(parties_of(spec.bip))
        st = spec.s_tilde
        dm = mpmath.zeros(2 * n, 2 * n)
        for j, v in enumerate(spec.nu):
            dm[2 * j, 2 * j] = v
            dm[2 * j + 1, 2 * j + 1] = v
        core = st.T * dm * st
        return lam * om * core * om.T * lam


def log_negativity(sigma: CovMatrix, bip: Bipartition, prec=None, tol_neg=None) -> mpf:
    """-sum log2(nu) over PT symplectic eigenvalues below one (one per pair)."""
    spec = pt_spectrum(sigma, bip, prec, tol_neg)
    return negativity_from_spectrum(spec)


def negativity_from_spectrum(spec: PtSpectrum) -> mpf:
    with workdps(spec.prec):
        if spec.n_minus == 0:
            return mpf(0)
        total = mpf(0)
        for j in spec.vn_pairs:
            total -= mpmath.log(spec.nu[j], 2)
        return total


def s_tilde_local_update(s_tilde, s_a, s_b, bip: Bipartition, prec=DEFAULT_PREC):
    """PT diagonalizer after a local map: S-tilde Lambda (S_A + S_B)^-1 Lambda.

    Local symplectics leave the PT symplectic eigenvalues untouched, so the
    updated rows diagonalize the PT form of the transformed state with the
    same spectrum.
    """
    with workdps(prec):
        n = bip.n_modes
        if s_tilde.rows != 2 * n:
            raise ValueError("dimension mismatch between s_tilde and bipartition")
        if s_a.rows != 2 * bip.n_a or s_b.rows != 2 * bip.n_b:
            raise ValueError("local block dimensions do not match the bipartition")
        local = mpmath.zeros(2 * n, 2 * n)
        for i in range(2 * bip.n_a):
            for j in range(2 * bip.n_a):
                local[i, j] = s_a[i, j]
        off = 2 * bip.n_a
        for i in range(2 * bip.n_b):
            for j in range(2 * bip.n_b):
                local[off + i, off + j] = s_b[i, j]
        lam = lambda_matrix(parties_of(bip))
        return s_tilde * lam * symplectic_inverse(local) * lam
