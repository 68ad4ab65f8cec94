"""Sampling distribution of the Pearson correlation under Gaussian outputs.

Provides the exact sample-correlation density, Gauss-Legendre expectations
over (-1, 1), tail probabilities (integrated in atanh space so that
spike-shaped densities near |rho| ~ 1 stay resolvable), and Wishart
simulation via the Bartlett construction.

With nu = N - 2 pilot degrees of freedom the density used throughout is

    f(r | rho, N) = K(nu) (1-rho^2)^{(nu+1)/2} (1-r^2)^{(nu-2)/2}
                    (1-rho*r)^{-(nu+1/2)} 2F1(1/2, 1/2; nu+3/2; (1+rho*r)/2)

    K(nu) = nu * Gamma(nu+1) / (sqrt(2*pi) * Gamma(nu+3/2)),

the rapidly-converging form of the exact Hotelling density (the 2F1
argument stays in (0, 1)).  All prefactors are evaluated in log space to
survive large N.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, gammasgn

from .errors import (
    NonFiniteIntegrand,
    NotPositiveDefinite,
    OutOfSupport,
    SeriesDiverged,
    ZeroVariance,
)
from .mfmc import CovarianceSpec

_SERIES_TOL = 1e-15
_SERIES_CAP = 10000


def substream(seed: int, task_index: int = 0) -> np.random.Generator:
    """Independent, reproducible RNG substream for (seed, task_index)."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(task_index,)))


# ---------------------------------------------------------------------------
# Gauss hypergeometric function
# ---------------------------------------------------------------------------

def _hyp_series(a: float, b: float, c: float, x, tol=_SERIES_TOL, cap=_SERIES_CAP):
    """Raw power series with term-ratio recurrence; x may be an array."""
    x = np.asarray(x, dtype=float)
    term = np.ones_like(x)
    total = np.ones_like(x)
    for k in range(cap):
        term = term * ((a + k) * (b + k)) / ((c + k) * (k + 1.0)) * x
        total = total + term
        if np.all(np.abs(term) <= tol * np.abs(total)):
            return total
    raise SeriesDiverged(
        f"2F1 series did not converge in {cap} terms "
        f"(a={a}, b={b}, c={c}, max|x|={np.max(np.abs(x)):.6g})"
    )


def gauss_2f1(a: float, b: float, c: float, x):
    """Power-series evaluation of 2F1(a, b; c; x) for |x| < 1.

    Terminates when the relative term magnitude drops below 1e-15; raises
    `SeriesDiverged` after 10000 terms.
    """
    if c <= 0 and float(c).is_integer():
        raise ValueError(f"c={c} is a nonpositive integer")
    xa = np.asarray(x, dtype=float)
    if np.any(np.abs(xa) >= 1):
        raise ValueError("series evaluation requires |x| < 1")
    out = _hyp_series(a, b, c, xa)
    return float(out) if np.isscalar(x) else out


def _hyp2f1_half_half(c: float, x, one_minus_x=None):
    """2F1(1/2, 1/2; c; x) on x in [0, 1) for half-integer c = nu + 3/2.

    Direct series away from 1; near 1 (where the series needs too many
    terms) the standard connection formula in (1 - x) is used.  It is
    non-degenerate here because c - a - b = nu + 1/2 is never an integer.
    Small nu is the slow corner: for nu > 40 the (c)_k factor makes the
    direct series converge quickly even at x = 1.
    """
    x = np.asarray(x, dtype=float)
    z = 1.0 - x if one_minus_x is None else np.asarray(one_minus_x, dtype=float)
    nu = c - 1.5
    out = np.empty_like(x)
    direct = (x <= 0.97) | np.full(x.shape, nu > 40)
    if np.any(direct):
        out[direct] = _hyp_series(0.5, 0.5, c, x[direct])
    near1 = ~direct
    if np.any(near1):
        s = c - 1.0  # = c - a - b
        coeff_a = gammasgn(s) * np.exp(gammaln(c) + gammaln(s) - 2.0 * gammaln(c - 0.5))
        coeff_b = gammasgn(-s) * np.exp(gammaln(c) + gammaln(-s) - 2.0 * gammaln(0.5))
        zn = z[near1]
        out[near1] = (coeff_a * _hyp_series(0.5, 0.5, 1.0 - s, zn)
                      + coeff_b * np.power(zn, s) * _hyp_series(c - 0.5, c - 0.5, 1.0 + s, zn))
    return out


# ---------------------------------------------------------------------------
# Sample-correlation density
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CorrelationDensityParams:
    """True correlation and pilot sample count for the sampling density."""

    rho: float
    n_pilot: int

    def __post_init__(self):
        if self.n_pilot < 3:
            raise ValueError("need at least 3 pilot samples (nu >= 1)")
        if not abs(self.rho) < 1:
            raise ValueError("|rho| must be < 1")

    @property
    def nu(self) -> int:
        return self.n_pilot - 2


def _log_norm_const(nu: int) -> float:
    return float(np.log(nu) + gammaln(nu + 1.0) - 0.5 * np.log(2.0 * np.pi)
                 - gammaln(nu + 1.5))


def corr_density(r, params: CorrelationDensityParams):
    """Exact density of the sample correlation at r given (rho, N)."""
    ra = np.asarray(r, dtype=float)
    if np.any(np.abs(ra) >= 1):
        raise OutOfSupport("sample correlation density is supported on (-1, 1)")
    nu = params.nu
    rho = params.rho
    logk = (_log_norm_const(nu)
            + 0.5 * (nu + 1) * np.log1p(-rho * rho)
            + 0.5 * (nu - 2) * np.log1p(-ra * ra)
            - (nu + 0.5) * np.log1p(-rho * ra))
    hyp = _hyp2f1_half_half(nu + 1.5, 0.5 * (1.0 + rho * ra))
    out = np.exp(logk) * hyp
    return float(out) if np.isscalar(r) else out


def _density_z(u, rho: float, nu: int):
    """Density times Jacobian at r = tanh(u), stable for |u| up to ~700.

    Uses log(sech^2 u) = 2(log 2 - |u| - log1p(exp(-2|u|))) and the
    cancellation-free form of 1 - rho*tanh(u).
    """
    u = np.asarray(u, dtype=float)
    au = np.abs(u)
    log_sech2 = 2.0 * (np.log(2.0) - au - np.log1p(np.exp(-2.0 * au)))
    e = np.exp(-2.0 * au)  # in (0, 1]
    # 1 - rho*tanh(u) = ((1 -/+ rho) + (1 +/- rho) e^{-2|u|}) / (1 + e^{-2|u|})
    onem = np.where(u >= 0,
                    ((1.0 - rho) + (1.0 + rho) * e) / (1.0 + e),
                    ((1.0 + rho) + (1.0 - rho) * e) / (1.0 + e))
    logk = (_log_norm_const(nu)
            + 0.5 * (nu + 1) * np.log1p(-rho * rho)
            + (0.5 * (nu - 2) + 1.0) * log_sech2
            - (nu + 0.5) * np.log(onem))
    hyp = _hyp2f1_half_half(nu + 1.5, 1.0 - 0.5 * onem, one_minus_x=0.5 * onem)
    return np.exp(logk) * hyp


_PANEL_NODES, _PANEL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def corr_cdf(r: float, params: CorrelationDensityParams) -> float:
    """P(rhat < r | rho, N) by composite quadrature of the density in atanh space.

    The density in u = atanh(t) is a bump centered near atanh(rho) with
    exponential tails of rate nu, so a window of half-width ~40/nu around
    the center captures the mass to well below 1e-12 for any rho.
    """
    if not -1.0 < r < 1.0:
        if r <= -1.0:
            return 0.0
        return 1.0
    nu = params.nu
    center = float(np.arctanh(params.rho))
    half_width = 40.0 / nu + 5.0
    lo = center - half_width
    hi = min(float(np.arctanh(r)), center + half_width)
    if hi <= lo:
        return 0.0
    n_panels = max(6, int(np.ceil((hi - lo) / 1.25)))
    edges = np.linspace(lo, hi, n_panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    u = (mid[:, None] + half[:, None] * _PANEL_NODES[None, :]).ravel()
    w = (half[:, None] * _PANEL_WEIGHTS[None, :]).ravel()
    return float(np.dot(w, _density_z(u, params.rho, nu)))


# ---------------------------------------------------------------------------
# Quadrature expectations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadratureRule:
    """Nodes/weights on (-1, 1); weights must integrate constants exactly."""

    nodes: np.ndarray
    weights: np.ndarray
    order: int

    def __post_init__(self):
        object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if abs(self.weights.sum() - 2.0) > 1e-12:
            raise ValueError("weights must sum to 2 on (-1, 1)")
        if np.any(np.diff(self.nodes) <= 0):
            raise ValueError("nodes must be strictly increasing")


def gauss_legendre_rule(order: int = 200) -> QuadratureRule:
    nodes, weights = np.polynomial.legendre.leggauss(order)
    return QuadratureRule(nodes=nodes, weights=weights, order=order)


def expect_over_sample_corr(f, params: CorrelationDensityParams,
                            rule: QuadratureRule) -> float:
    """E[f(rhat)] = sum_i w_i f(x_i) f_dens(x_i) over the rule's nodes."""
    vals = np.asarray(f(rule.nodes), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise NonFiniteIntegrand("integrand returned a non-finite value at a node")
    dens = corr_density(rule.nodes, params)
    return float(np.dot(rule.weights, vals * dens))


# ---------------------------------------------------------------------------
# Wishart simulation (Bartlett construction)
# ---------------------------------------------------------------------------

def sample_wishart(cov: CovarianceSpec, n_pilot: int, count: int,
                   seed: int) -> np.ndarray:
    """count draws of the sample covariance, (N-1) Sigma_hat ~ W(N-1, Sigma).

    Bartlett construction: W = (L A)(L A)^T with Sigma = L L^T, A lower
    triangular, A_ii^2 ~ chi2(N-1-i) and standard-normal subdiagonal.
    Deterministic given the seed; returns an array of shape (count, M, M).
    """
    if cov.full_matrix is None:
        raise ValueError("Wishart sampling needs the full covariance matrix")
    sigma = cov.full_matrix
    p = sigma.shape[0]
    dof = n_pilot - 1
    if dof < p:
        raise ValueError(f"need n_pilot - 1 >= {p} for a nonsingular Wishart draw")
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("covariance matrix is not positive definite") from exc
    rng = substream(seed)
    a = np.zeros((count, p, p))
    diag_df = dof - np.arange(p)
    for i in range(p):
        a[:, i, i] = np.sqrt(rng.chisquare(diag_df[i], size=count))
    il, jl = np.tril_indices(p, k=-1)
    if len(il):
        a[:, il, jl] = rng.standard_normal(size=(count, len(il)))
    la = np.einsum("ij,njk->nik", chol, a)
    w = np.einsum("nik,njk->nij", la, la)
    return w / dof


def sample_corr_from_wishart(cov: CovarianceSpec, n_pilot: int, count: int,
                             seed: int) -> np.ndarray:
    """Sample correlations rhat = W01/sqrt(W00 W11) from 2x2 Wishart draws.

    Explicitly vectorized shortcut for the bivariate case; distributionally
    identical to computing the Pearson correlation of N Gaussian pairs.
    """
    if cov.n_models != 2:
        raise ValueError("shortcut requires a 2x2 covariance")
    matrix = cov.full_matrix
    if matrix is None:
        matrix = CovarianceSpec.bifid(cov.rho0[0], cov.sigma).full_matrix
    dof = n_pilot - 1
    if dof < 2:
        raise ValueError("need n_pilot >= 3")
    chol = np.linalg.cholesky(matrix)
    rng = substream(seed)
    a00 = np.sqrt(rng.chisquare(dof, size=count))
    a11 = np.sqrt(rng.chisquare(dof - 1, size=count))
    a10 = rng.standard_normal(size=count)
    # rows of L A for L = [[l00, 0], [l10, l11]]
    r0 = chol[0, 0] * a00
    r1a = chol[1, 0] * a00 + chol[1, 1] * a10
    r1b = chol[1, 1] * a11
    w00 = r0 * r0
    w01 = r0 * r1a
    w11 = r1a * r1a + r1b * r1b
    return w01 / np.sqrt(w00 * w11)


def sample_correlation(pairs) -> float:
    """Pearson sample correlation of (hifi, lofi) pairs."""
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
        raise ValueError("need at least 3 (hifi, lofi) pairs")
    xc = arr[:, 0] - arr[:, 0].mean()
    yc = arr[:, 1] - arr[:, 1].mean()
    sx = np.dot(xc, xc)
    sy = np.dot(yc, yc)
    if sx <= 0 or sy <= 0:
        raise ZeroVariance("a column is constant; correlation undefined")
    val = float(np.dot(xc, yc) / np.sqrt(sx * sy))
    return min(1.0, max(-1.0, val))
