"""Vacuum covariance matrices for two regions of the 1D lattice scalar field.

The infinite-volume vacuum two-point functions with a nearest-neighbor
lattice action and dispersion w(k) = sqrt(m^2 + 4 sin^2(k/2)) are

    g_x(D) = (1/pi) Int_0^pi cos(k D) / w(k) dk
    g_p(D) = (1/pi) Int_0^pi cos(k D) * w(k) dk

normalized so the vacuum covariance diagonal is one per quadrature.  Near
the massless limit the 1/w integrand develops a sharp scale-m feature at
k = 0; the interval [0, k_cut] is handled with the substitution
k = m sinh(u), which flattens it to an analytic integrand, and tanh-sinh
quadrature covers both pieces.

Two regions of diameter ``d`` separated by ``r_tilde`` sites are assembled
with the second region's modes in *mirrored* site order, making the A-B
exchange an index reflection: sigma_A = sigma_B and sigma_AB symmetric,
which the symmetric consolidation shortcut relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import mpmath
from mpmath import mpf

from .precision import DEFAULT_PREC, to_mpf, workdps
from .quadrature import quad_vector
from .symplectic import Bipartition, CovMatrix

K_CUT = mpf("1e-3")

_CORR_CACHE = {}


@dataclass(frozen=True)
class RegionSpec:
    """Two disjoint lattice regions: diameter, separation, mass, precision."""

    d: int
    r_tilde: int
    m: str = "1e-10"
    precision: int = None

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("region diameter must be at least 1")
        if self.r_tilde < 0:
            raise ValueError("separation must be non-negative")
        if self.precision is None:
            object.__setattr__(self, "precision", default_precision(self.r_tilde))


def default_precision(r_tilde) -> int:
    """Working digits for a separation: deep tails need the extra headroom."""
    return max(DEFAULT_PREC, 30 + 2 * int(r_tilde))


def _dispersion(k, m):
    s = 2 * mpmath.sin(k / 2)
    return mpmath.sqrt(m * m + s * s)


def correlator_batch(offsets, m, prec=DEFAULT_PREC):
    """(g_x, g_p) for every site offset in one quadrature sweep.

    Returns a dict {offset: (g_x, g_p)}.  Results are cached per
    (offset, mass, precision).  ``m`` may be zero only for g_p; the massless
    g_x integral diverges and raises.
    """
    offsets = sorted(set(abs(int(d)) for d in offsets))
    m_key = str(to_mpf(m))
    missing = [d for d in offsets if (d, m_key, prec) not in _CORR_CACHE]
    if missing:
        _compute_correlators(missing, m, prec, m_key)
    return {d: _CORR_CACHE[(d, m_key, prec)] for d in offsets}


def correlator(delta, m, prec=DEFAULT_PREC):
    """Single-offset vacuum correlators (g_x, g_p)."""
    return correlator_batch([delta], m, prec)[abs(int(delta))]


def _cos_family(k, deltas):
    """cos(k*delta) for all requested offsets via the Chebyshev recurrence."""
    top = max(deltas)
    c = mpmath.cos(k)
    vals = [mpf(1), c]
    for _ in range(2, top + 1):
        vals.append(2 * c * vals[-1] - vals[-2])
    return [vals[d] for d in deltas]


def _compute_correlators(deltas, m, prec, m_key):
    with workdps(prec + 10):
        m = to_mpf(m)
        if m < 0:
            raise ValueError("mass must be non-negative")
        nd = len(deltas)
        massless = m == 0

        def body_main(k):
            w = _dispersion(k, m)
            cos_vals = _cos_family(k, deltas)
            out = []
            if not massless:
                out.extend(cv / w for cv in cos_vals)
            out.extend(cv * w for cv in cos_vals)
            return out

        n_out = nd if massless else 2 * nd
        lo = mpf(0) if massless else K_CUT
        main, _ = quad_vector(body_main, lo, mpmath.pi, prec, n_out)
        if massless:
            gx = [None] * nd
            gp = list(main)
        else:
            gx = list(main[:nd])
            gp = list(main[nd:])
            # scale-m region: k = m sinh(u) turns 1/w into an analytic factor
            u_max = mpmath.asinh(K_CUT / m)

            def body_origin(u):
                k = m * mpmath.sinh(u)
                w = _dispersion(k, m)
                jac = m * mpmath.cosh(u)
                cos_vals = _cos_family(k, deltas)
                out = [cv * jac / w for cv in cos_vals]
                out.extend(cv * jac * w for cv in cos_vals)
                return out

            origin, _ = quad_vector(body_origin, mpf(0), u_max, prec, 2 * nd)
            for i in range(nd):
                gx[i] += origin[i]
                gp[i] += origin[nd + i]
        inv_pi = 1 / mpmath.pi
        for i, d in enumerate(deltas):
            gxv = None if massless else +(gx[i] * inv_pi)
            _CORR_CACHE[(d, m_key, prec)] = (gxv, +(gp[i] * inv_pi))


def vacuum_cm(spec: RegionSpec):
    """Covariance matrix of two vacuum regions; returns (CovMatrix, Bipartition).

    Modes are the 2d sites, region A in ascending site order and region B in
    descending order (the reflection that makes the state A-B symmetric);
    x and p sectors are uncorrelated.
    """
    d, r, prec = spec.d, spec.r_tilde, spec.precision
    m = to_mpf(spec.m)
    if m <= 0:
        raise ValueError("vacuum construction needs m > 0 (use the massless limit value)")
    sites = list(range(d)) + [2 * d + r - 1 - j for j in range(d)]
    offsets = sorted(set(abs(a - b) for a in sites for b in sites))
    corr = correlator_batch(offsets, m, prec)
    with workdps(prec):
        n = 2 * d
        mat = mpmath.zeros(2 * n, 2 * n)
        for a in range(n):
            for b in range(n):
                gx, gp = corr[abs(sites[a] - sites[b])]
                mat[2 * a, 2 * b] = gx
                mat[2 * a + 1, 2 * b + 1] = gp
    return CovMatrix(mat, prec), Bipartition(d, d)
