"""Multi-fidelity Monte Carlo estimator variance and optimal hyperparameters.

Model 0 is the high-fidelity model. For an ensemble of M models with costs
c_i, budget C, correlations rho_{0,i} and standard deviations sigma_i, the
estimator variance under hyperparameters p = (n, beta) is

    v(p; Sigma) = sigma_0^2/n_0
                  + sum_i (1/n_{i-1} - 1/n_i) (beta_i^2 sigma_i^2
                                               - 2 beta_i rho_{0,i} sigma_0 sigma_i)

subject to nested allocations n_0 <= n_1 <= ... and the budget constraint
sum c_i n_i <= C.  All allocations here are continuous relaxations; use
`round_allocation` only when exporting a runnable sample plan.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConditionsNotMet,
    DegenerateVariance,
    InvalidAllocation,
    InvalidSpectrum,
    ModelOrderViolation,
    NestednessViolation,
    NotPositiveDefinite,
)

_S_FLOOR = 1e-14  # clip for degenerate variance-reduction contributions


@dataclass(frozen=True)
class ModelEnsemble:
    """Per-model evaluation costs and the total budget (model 0 = hifi)."""

    costs: tuple[float, ...]
    budget: float

    def __post_init__(self):
        costs = tuple(float(c) for c in self.costs)
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "budget", float(self.budget))
        if len(costs) < 2:
            raise ValueError("need at least two models")
        if any(c <= 0 for c in costs):
            raise ValueError("all model costs must be strictly positive")
        if self.budget <= 0:
            raise ValueError("budget must be strictly positive")

    @property
    def n_models(self) -> int:
        return len(self.costs)


@dataclass(frozen=True)
class CovarianceSpec:
    """Output covariance of a model ensemble.

    `sigma` holds the per-model standard deviations and `rho0` the
    correlations of each low-fidelity model with model 0.  `full_matrix`
    is optional; it is required only by operations that need lofi-lofi
    correlations (Wishart sampling of M > 2 ensembles).
    """

    sigma: tuple[float, ...]
    rho0: tuple[float, ...]
    full_matrix: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self):
        sigma = tuple(float(s) for s in self.sigma)
        rho0 = tuple(float(r) for r in self.rho0)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "rho0", rho0)
        if len(sigma) < 2 or len(rho0) != len(sigma) - 1:
            raise ValueError("need sigma for M models and rho0 for M-1 lofi models")
        if any(s <= 0 for s in sigma):
            raise ValueError("standard deviations must be strictly positive")
        if any(abs(r) >= 1 for r in rho0):
            raise ValueError("correlations must lie strictly inside (-1, 1)")
        if self.full_matrix is not None:
            m = np.asarray(self.full_matrix, dtype=float)
            object.__setattr__(self, "full_matrix", m)
            if m.shape != (len(sigma), len(sigma)):
                raise ValueError("full_matrix shape does not match sigma")
            if not np.allclose(m, m.T, atol=1e-12):
                raise NotPositiveDefinite("full_matrix is not symmetric")
            try:
                np.linalg.cholesky(m)
            except np.linalg.LinAlgError as exc:
                raise NotPositiveDefinite("full_matrix is not positive definite") from exc
            if np.max(np.abs(np.sqrt(np.diag(m)) - np.asarray(sigma))) > 1e-12:
                raise ValueError("full_matrix diagonal inconsistent with sigma")
            implied = m[0, 1:] / (np.sqrt(m[0, 0] * np.diag(m)[1:]))
            if np.max(np.abs(implied - np.asarray(rho0))) > 1e-12:
                raise ValueError("full_matrix first row inconsistent with rho0")

    @property
    def n_models(self) -> int:
        return len(self.sigma)

    @classmethod
    def bifid(cls, rho: float, sigma=(1.0, 1.0)) -> "CovarianceSpec":
        """Two-model spec; builds the 2x2 matrix so Wishart sampling works."""
        s0, s1 = float(sigma[0]), float(sigma[1])
        m = np.array([[s0 * s0, rho * s0 * s1], [rho * s0 * s1, s1 * s1]])
        return cls(sigma=(s0, s1), rho0=(float(rho),), full_matrix=m)

    @classmethod
    def from_matrix(cls, matrix) -> "CovarianceSpec":
        m = np.asarray(matrix, dtype=float)
        sig = np.sqrt(np.diag(m))
        rho0 = m[0, 1:] / (sig[0] * sig[1:])
        return cls(sigma=tuple(sig), rho0=tuple(rho0), full_matrix=m)


@dataclass(frozen=True)
class MfmcHyperparams:
    """Continuous sample allocations n_0..n_{M-1} and weights beta_1..beta_{M-1}."""

    n: tuple[float, ...]
    beta: tuple[float, ...]

    def __post_init__(self):
        n = tuple(float(v) for v in self.n)
        beta = tuple(float(b) for b in self.beta)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "beta", beta)
        if len(beta) != len(n) - 1:
            raise ValueError("need one weight per low-fidelity model")
        if n[0] <= 0:
            raise InvalidAllocation("high-fidelity allocation must be positive")
        if any(n[i] > n[i + 1] * (1 + 1e-12) for i in range(len(n) - 1)):
            raise NestednessViolation(f"allocations not nondecreasing: {n}")

    def validate_budget(self, ensemble: ModelEnsemble, slack: float = 1e-9) -> None:
        spend = float(np.dot(self.n, ensemble.costs))
        if spend > ensemble.budget + slack:
            raise InvalidAllocation(
                f"allocation spends {spend:.6g} > budget {ensemble.budget:.6g}"
            )


def _s_terms(rho0) -> np.ndarray:
    """Variance-reduction contributions S_0..S_{M-1} from the hifi correlations."""
    r2 = np.square(np.asarray(rho0, dtype=float))
    s = np.empty(len(r2) + 1)
    s[0] = 1.0 - r2[0]
    if len(r2) > 1:
        s[1:-1] = r2[:-1] - r2[1:]
    s[-1] = r2[-1]
    return s


def optimal_weights(cov: CovarianceSpec) -> np.ndarray:
    """Variance-minimizing control-variate weights beta_i = rho_{0,i} sigma_0 / sigma_i."""
    sig = np.asarray(cov.sigma)
    return np.asarray(cov.rho0) * sig[0] / sig[1:]


def estimator_variance(params: MfmcHyperparams, cov: CovarianceSpec,
                       ensemble: ModelEnsemble) -> float:
    """Estimator variance v(p; Sigma) for nested allocations."""
    n = np.asarray(params.n, dtype=float)
    if n[0] <= 0:
        raise InvalidAllocation("n_0 must be positive")
    if np.any(n[:-1] > n[1:] * (1 + 1e-12)):
        raise NestednessViolation(f"allocations not nondecreasing: {params.n}")
    beta = np.asarray(params.beta, dtype=float)
    sig = np.asarray(cov.sigma)
    rho = np.asarray(cov.rho0)
    inv = 1.0 / n
    cv = beta * beta * sig[1:] ** 2 - 2.0 * beta * rho * sig[0] * sig[1:]
    return float(sig[0] ** 2 * inv[0] + np.dot(inv[:-1] - inv[1:], cv))


def closed_form_allocation(cov: CovarianceSpec, ensemble: ModelEnsemble) -> MfmcHyperparams:
    """Closed-form optimal allocation r_i = sqrt(c_0 S_i / (c_i S_0)).

    Requires the cost/correlation conditions c_{i-1}/c_i > S_{i-1}/S_i for
    every i; equality counts as a violation (use `pava_allocation`, which is
    exact in all regimes).
    """
    s = _s_terms(cov.rho0)
    c = np.asarray(ensemble.costs)
    if np.any(c[:-1] * s[1:] <= s[:-1] * c[1:]):
        raise ConditionsNotMet(
            "cost/correlation conditions fail; use pava_allocation"
        )
    r = np.sqrt(c[0] * s / (c * s[0]))
    n0 = ensemble.budget / float(np.dot(c, r))
    return MfmcHyperparams(n=tuple(n0 * r), beta=tuple(optimal_weights(cov)))


def pava_allocation(cov: CovarianceSpec, ensemble: ModelEnsemble) -> MfmcHyperparams:
    """Exact minimizer of sum_i S_i/n_i under nestedness and budget equality.

    Models must be ordered by decreasing |rho_{0,i}| (hifi first).  Works by
    pooling adjacent blocks whose variance-to-cost ratios R_i = S_i/c_i
    violate monotonicity; ties merge.  Each final block gets
    n proportional to sqrt(R_block), rescaled to spend the budget exactly.
    Reduces to `closed_form_allocation` whenever the closed-form conditions
    hold.
    """
    rho = np.asarray(cov.rho0, dtype=float)
    order = np.abs(rho)
    if np.any(order[:-1] < order[1:] - 1e-15):
        raise ModelOrderViolation(
            "low-fidelity models must be ordered by decreasing |rho_{0,i}|"
        )
    s = _s_terms(rho)
    if np.any(s < -1e-12):
        raise InvalidSpectrum(f"negative variance-reduction contribution: {s}")
    s = np.maximum(s, _S_FLOOR)
    c = np.asarray(ensemble.costs, dtype=float)

    # stack of pooled blocks: (S_sum, c_sum, count)
    blocks: list[list[float]] = []
    for i in range(len(s)):
        blocks.append([s[i], c[i], 1])
        while len(blocks) > 1:
            s_prev, c_prev, _ = blocks[-2]
            s_last, c_last, _ = blocks[-1]
            if s_prev * c_last >= s_last * c_prev:  # R_prev >= R_last, merge ties too
                blocks[-2][0] += blocks[-1][0]
                blocks[-2][1] += blocks[-1][1]
                blocks[-2][2] += blocks[-1][2]
                blocks.pop()
            else:
                break

    n_raw = np.empty(len(s))
    pos = 0
    for s_blk, c_blk, cnt in blocks:
        n_raw[pos:pos + cnt] = math.sqrt(s_blk / c_blk)
        pos += cnt
    scale = ensemble.budget / float(np.dot(c, n_raw))
    return MfmcHyperparams(n=tuple(scale * n_raw), beta=tuple(optimal_weights(cov)))


def _optimized_params(cov: CovarianceSpec, ensemble: ModelEnsemble) -> MfmcHyperparams:
    return pava_allocation(cov, ensemble)


def discrepancy(sigma1: CovarianceSpec, sigma2: CovarianceSpec,
                ensemble: ModelEnsemble) -> float:
    """Log-ratio suboptimality of optimizing under sigma1 when sigma2 is true.

    Returns log(v(p_1; sigma2) / v(p_2; sigma2)) >= 0, where p_k minimizes
    v(.; sigma_k) under the budget.  Zero iff the two specs induce the same
    optimizer; invariant to the total budget under the continuous relaxation.
    """
    p1 = _optimized_params(sigma1, ensemble)
    p2 = _optimized_params(sigma2, ensemble)
    v12 = estimator_variance(p1, sigma2, ensemble)
    v22 = estimator_variance(p2, sigma2, ensemble)
    val = math.log(v12 / v22)
    if val < -1e-12:
        raise InvalidAllocation(f"negative discrepancy {val}: optimizer is broken")
    return val


def variance_reduction_ratio(params: MfmcHyperparams, cov: CovarianceSpec,
                             ensemble: ModelEnsemble) -> float:
    """Hifi-MC variance at full budget divided by v(params; Sigma)."""
    v = estimator_variance(params, cov, ensemble)
    if v <= 0:
        raise DegenerateVariance("estimator variance must be positive")
    v0 = cov.sigma[0] ** 2 * ensemble.costs[0] / ensemble.budget
    return v0 / v


def projected_vs_true_ratio(sample_cov: CovarianceSpec, true_cov: CovarianceSpec,
                            ensemble: ModelEnsemble) -> float:
    """Overconfidence ratio v(p_hat; true) / v(p_hat; sample), p_hat from sample."""
    p_hat = _optimized_params(sample_cov, ensemble)
    v_true = estimator_variance(p_hat, true_cov, ensemble)
    v_proj = estimator_variance(p_hat, sample_cov, ensemble)
    if v_proj <= 0:
        raise DegenerateVariance("projected variance must be positive")
    return v_true / v_proj


def round_allocation(params: MfmcHyperparams, ensemble: ModelEnsemble) -> MfmcHyperparams:
    """Integer allocation for an actual run: floor each n_i, n_0 floored at 2.

    Only for exporting a runnable plan; analysis paths stay on the
    continuous relaxation.
    """
    n = np.floor(np.asarray(params.n)).astype(float)
    n[0] = max(n[0], 2.0)
    n = np.maximum.accumulate(n)  # restore nestedness after the n_0 bump
    out = MfmcHyperparams(n=tuple(n), beta=params.beta)
    out.validate_budget(ensemble)
    return out


# ---------------------------------------------------------------------------
# Vectorized two-model fast path.
#
# The minimax machinery evaluates the discrepancy millions of times on
# two-model ensembles; these array versions avoid per-point object
# construction.  They must agree with the generic path to float precision
# (tested).
# ---------------------------------------------------------------------------

def bifid_allocation_arrays(rho_est, c0: float, c1: float, budget: float):
    """(n_0, n_1) minimizing variance for two models, vectorized over rho_est.

    Uses the closed form when c0/c1 > S_0/S_1 and the pooled
    n_0 = n_1 = C/(c_0+c_1) fallback otherwise; sign of rho is irrelevant.
    """
    rho2 = np.square(np.asarray(rho_est, dtype=float))
    s0 = np.maximum(1.0 - rho2, _S_FLOOR)
    s1 = np.maximum(rho2, _S_FLOOR)
    use_cf = c0 * s1 > s0 * c1
    r = np.sqrt((c0 * s1) / (c1 * s0))
    pooled = budget / (c0 + c1)
    n0 = np.where(use_cf, budget / (c0 + c1 * r), pooled)
    n1 = np.where(use_cf, n0 * r, n0)
    return n0, n1


def bifid_variance_arrays(n0, n1, beta, rho_true, sigma=(1.0, 1.0)):
    """v(p; Sigma) for two models, vectorized."""
    s0, s1 = sigma
    cv = beta * beta * s1 * s1 - 2.0 * beta * rho_true * s0 * s1
    return s0 * s0 / n0 + (1.0 / n0 - 1.0 / n1) * cv


def bifid_discrepancy(rho_est, rho_true, ensemble: ModelEnsemble,
                      sigma_est=None, sigma_true=(1.0, 1.0)):
    """Two-model discrepancy, vectorized over the estimated correlation.

    `sigma_est` (pair of arrays or None for unit) feeds the weights of the
    estimated-optimal hyperparameters; the allocation itself depends only on
    the correlation.  `rho_true`/`sigma_true` define the evaluation
    covariance.
    """
    c0, c1 = ensemble.costs
    budget = ensemble.budget
    rho_est = np.asarray(rho_est, dtype=float)
    if sigma_est is None:
        beta_est = rho_est * (sigma_true[0] / sigma_true[1])
    else:
        beta_est = rho_est * (np.asarray(sigma_est[0]) / np.asarray(sigma_est[1]))
    n0e, n1e = bifid_allocation_arrays(rho_est, c0, c1, budget)
    n0t, n1t = bifid_allocation_arrays(rho_true, c0, c1, budget)
    beta_true = np.asarray(rho_true) * (sigma_true[0] / sigma_true[1])
    v_est = bifid_variance_arrays(n0e, n1e, beta_est, rho_true, sigma_true)
    v_opt = bifid_variance_arrays(n0t, n1t, beta_true, rho_true, sigma_true)
    return np.log(v_est / v_opt)
