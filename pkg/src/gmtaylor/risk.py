"""Risk measures from mixture Taylor surrogates and Monte Carlo baselines.

Mean and variance combine per-component surrogate moments with the mixture
weights. CVaR_alpha = min_t t + E[(Q - t)^+]/(1-alpha) comes in three
flavors: the Gaussian closed form (linear surrogate, one component), the
mixture-of-Gaussians closed form with the minimizer found by bisection on
the monotone tail mass, and the sampling estimator for quadratic surrogates
whose piecewise-linear objective is minimized exactly at the weighted
empirical alpha-quantile. The Monte Carlo baseline evaluates the model on
measure (or mixture) samples and applies the same empirical estimator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .taylor import (
    TaylorSurrogate,
    sample_lowrank_quadratic,
    surrogate_mean,
    surrogate_second_moment,
)


@dataclass
class RiskEstimate:
    kind: str                 # mean | sd | cvar
    value: float
    method: str               # lin-gm | quad-gm | lin-single | quad-single | mc
    alpha: float | None = None
    var_t_star: float | None = None  # CVaR minimizer (the VaR estimate)
    sample_count: int = 0
    solve_count: int = 0
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("mean", "sd", "cvar"):
            raise ValueError(f"unknown risk kind {self.kind!r}")
        if self.kind == "cvar":
            if self.alpha is None or not 0.0 <= self.alpha < 1.0:
                raise ValueError("cvar requires alpha in [0, 1)")


@dataclass
class CVaRConfig:
    alpha: float = 0.95
    samples_per_component: int = 100_000
    root_tol: float = 1e-12
    bracket_factor: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie strictly inside (0, 1)")
        if self.samples_per_component < 1:
            raise ValueError("samples_per_component must be >= 1")


def _method_tag(surrogates: list[TaylorSurrogate]) -> str:
    order = surrogates[0].order
    stem = "lin" if order == 1 else "quad"
    return f"{stem}-single" if len(surrogates) == 1 else f"{stem}-gm"


def _check_weights(surrogates, weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    if len(w) != len(surrogates):
        raise ValueError("one weight per surrogate required")
    if abs(w.sum() - 1.0) > 1e-12:
        raise ValueError(f"weights sum to {w.sum()}, expected 1")
    return w


def mean_gm(surrogates: list[TaylorSurrogate], weights) -> RiskEstimate:
    """Mixture-weighted surrogate mean."""
    w = _check_weights(surrogates, weights)
    value = float(np.dot(w, [surrogate_mean(s) for s in surrogates]))
    return RiskEstimate(kind="mean", value=value,
                        method=_method_tag(surrogates))


def var_gm(surrogates: list[TaylorSurrogate], weights) -> RiskEstimate:
    """Mixture-weighted standard deviation (variance in diagnostics)."""
    w = _check_weights(surrogates, weights)
    second = float(np.dot(w, [surrogate_second_moment(s) for s in surrogates]))
    mean = float(np.dot(w, [surrogate_mean(s) for s in surrogates]))
    var = second - mean * mean
    floor = -1e-12 * max(abs(second), 1.0)
    if var < floor:
        raise ValueError(f"negative variance {var:.3e}: inconsistent surrogates")
    var = max(var, 0.0)
    return RiskEstimate(kind="sd", value=math.sqrt(var),
                        method=_method_tag(surrogates),
                        diagnostics={"variance": var})


def cvar_gaussian_analytic(mu: float, sigma: float, alpha: float,
                           method: str = "lin-single") -> RiskEstimate:
    """Closed-form CVaR of N(mu, sigma^2); alpha = 0 recovers the mean."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0.0:
        return RiskEstimate(kind="cvar", value=mu, method=method, alpha=alpha,
                            var_t_star=mu)
    z = norm.ppf(alpha)  # -inf at alpha = 0, where pdf(z) = 0 gives the mean
    value = mu + sigma * norm.pdf(z) / (1.0 - alpha)
    return RiskEstimate(kind="cvar", value=value, method=method, alpha=alpha,
                        var_t_star=float(mu + sigma * z))


def _gaussian_partial_expectation(mu, sigma, t):
    """E[(X - t)^+] for X ~ N(mu, sigma^2), elementwise over components."""
    out = np.maximum(mu - t, 0.0)
    pos = sigma > 0
    if np.any(pos):
        z = (t - mu[pos]) / sigma[pos]
        out = np.asarray(out, dtype=float)
        out[pos] = sigma[pos] * norm.pdf(z) + (mu[pos] - t) * norm.sf(z)
    return out


def _mixture_tail_mass(mu, sigma, w, t):
    """P[Q > t] under the Gaussian mixture (point masses where sigma = 0)."""
    mass = 0.0
    for m, s, wi in zip(mu, sigma, w):
        mass += wi * (norm.sf((t - m) / s) if s > 0 else float(m > t))
    return mass


def cvar_linear_gm(surrogates: list[TaylorSurrogate], weights,
                   config: CVaRConfig) -> RiskEstimate:
    """CVaR of the Gaussian mixture induced by linear surrogates.

    The minimizer t* solves sum_i w_i P[Q_i > t] = 1 - alpha (bisection on
    the monotone tail mass); the value then follows from the Gaussian
    partial-expectation formula. Degenerates to the weighted discrete
    superquantile when every component variance vanishes.
    """
    w = _check_weights(surrogates, weights)
    if any(s.order != 1 for s in surrogates):
        raise ValueError("cvar_linear_gm requires order-1 surrogates")
    alpha = config.alpha
    mu = np.array([surrogate_mean(s) for s in surrogates])
    sigma = np.array([math.sqrt(max(s.g_cov_g, 0.0)) for s in surrogates])

    if np.all(sigma == 0.0):
        t_star = float(weighted_quantile(mu, w, alpha))
    else:
        smax = sigma.max()
        lo = float(mu.min() - 12.0 * smax)
        hi = float(mu.max() + 12.0 * smax)
        target = 1.0 - alpha
        for _ in range(64):  # bracket sanity; expands only in edge cases
            if _mixture_tail_mass(mu, sigma, w, lo) >= target >= \
                    _mixture_tail_mass(mu, sigma, w, hi):
                break
            span = (hi - lo) * (config.bracket_factor - 1.0) / 2.0 + 1.0
            lo, hi = lo - span, hi + span
        else:
            raise RuntimeError("failed to bracket the VaR root")
        scale = max(abs(lo), abs(hi), 1.0)
        while hi - lo > config.root_tol * scale:
            mid = 0.5 * (lo + hi)
            if _mixture_tail_mass(mu, sigma, w, mid) > target:
                lo = mid
            else:
                hi = mid
        t_star = 0.5 * (lo + hi)

    tail = float(np.dot(w, _gaussian_partial_expectation(mu, sigma, t_star)))
    value = t_star + tail / (1.0 - alpha)
    return RiskEstimate(kind="cvar", value=value,
                        method=_method_tag(surrogates), alpha=alpha,
                        var_t_star=t_star)


def weighted_quantile(values: np.ndarray, weights: np.ndarray,
                      alpha: float) -> float:
    """Lower weighted quantile: smallest v with cumulative weight >= alpha."""
    order = np.argsort(values, kind="stable")
    v = np.asarray(values)[order]
    cum = np.cumsum(np.asarray(weights, dtype=float)[order])
    cum /= cum[-1]
    return float(v[np.searchsorted(cum, alpha, side="left")])


def empirical_cvar(values: np.ndarray, weights: np.ndarray, alpha: float
                   ) -> tuple[float, float]:
    """(t*, CVaR) of weighted samples; t* is the weighted lower quantile.

    The sample-average objective t + sum w (v - t)^+ / (1-alpha) is convex
    piecewise linear, so the weighted alpha-quantile minimizes it exactly.
    """
    w = np.asarray(weights, dtype=float)
    w = w / w.sum()
    t = weighted_quantile(values, w, alpha)
    tail = float(np.dot(w, np.maximum(values - t, 0.0)))
    return t, t + tail / (1.0 - alpha)


def cvar_quadratic_gm(surrogates: list[TaylorSurrogate], weights,
                      config: CVaRConfig, seed: int) -> RiskEstimate:
    """Sampling CVaR for quadratic surrogates, pooled across components.

    Draws `samples_per_component` fast-sampler values per component and
    minimizes the shared sample-average objective (exactly, through the
    weighted empirical quantile). Deterministic given `seed`.
    """
    w = _check_weights(surrogates, weights)
    if any(s.order != 2 for s in surrogates):
        raise ValueError("cvar_quadratic_gm requires order-2 surrogates")
    m_i = config.samples_per_component
    seeds = np.random.SeedSequence(seed).spawn(len(surrogates))
    pooled = np.empty(len(surrogates) * m_i)
    pw = np.empty_like(pooled)
    for i, s in enumerate(surrogates):
        draws = sample_lowrank_quadratic(s, seeds[i].generate_state(1)[0], m_i)
        pooled[i * m_i:(i + 1) * m_i] = draws
        pw[i * m_i:(i + 1) * m_i] = w[i] / m_i
    t_star, value = empirical_cvar(pooled, pw, config.alpha)
    n_tail = int(np.sum(pooled > t_star))
    diag = {"tail_samples": n_tail}
    if n_tail < 10:
        diag["tail_warning"] = (
            f"only {n_tail} pooled samples above t*; increase "
            "samples_per_component or lower alpha")
    return RiskEstimate(kind="cvar", value=value,
                        method=_method_tag(surrogates), alpha=config.alpha,
                        var_t_star=t_star, sample_count=len(pooled),
                        diagnostics=diag)


# -- Monte Carlo baseline -----------------------------------------------------


class MCFailureError(RuntimeError):
    pass


def _evaluate_samples(model, samples):
    values = np.empty(len(samples))
    failures = 0
    for i, m in enumerate(samples):
        try:
            values[i] = model.evaluate(m)
        except Exception:
            values[i] = np.nan
            failures += 1
    if failures > 0.01 * len(samples):
        raise MCFailureError(
            f"{failures}/{len(samples)} model evaluations failed")
    return values[np.isfinite(values)], failures


def sample_source(source, seed: int, count: int) -> np.ndarray:
    """Draws from a GaussianMeasure or a GaussianMixtureApprox."""
    if hasattr(source, "components"):  # mixture: multinomial over components
        rng = np.random.default_rng(seed)
        counts = rng.multinomial(count, source.weights)
        seeds = np.random.SeedSequence(seed).spawn(len(counts) + 1)
        blocks = [c.sample(seeds[i].generate_state(1)[0], k)
                  for i, (c, k) in enumerate(zip(source.components, counts))
                  if k > 0]
        X = np.vstack(blocks)
        rng.shuffle(X, axis=0)
        return X
    return source.sample(seed, count)


def mc_baseline(model, source, alphas, n_samples: int, seed: int,
                ) -> list[RiskEstimate]:
    """Plain Monte Carlo estimates of mean, sd, and CVaR per alpha.

    CVaR uses the empirical lower-quantile estimator without smoothing or
    bias correction. Aborts if more than 1% of model evaluations fail.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    samples = sample_source(source, seed, n_samples)
    values, failures = _evaluate_samples(model, samples)
    w = np.full(len(values), 1.0 / len(values))
    diag = {"failed_evaluations": failures}
    out = [
        RiskEstimate(kind="mean", value=float(values.mean()), method="mc",
                     sample_count=len(values), diagnostics=dict(diag)),
        RiskEstimate(kind="sd", value=float(values.std(ddof=1)), method="mc",
                     sample_count=len(values), diagnostics=dict(diag)),
    ]
    for alpha in alphas:
        t_star, value = empirical_cvar(values, w, alpha)
        out.append(RiskEstimate(kind="cvar", value=value, method="mc",
                                alpha=alpha, var_t_star=t_star,
                                sample_count=len(values),
                                diagnostics=dict(diag)))
    return out


def relative_error(estimate: float, reference: float) -> float:
    return abs(estimate - reference) / abs(reference)


def relative_rmse(estimates, reference: float) -> float:
    e = np.asarray(estimates, dtype=float)
    return float(np.sqrt(np.mean((e - reference) ** 2)) / abs(reference))


def mc_trials(model, source, n_samples: int, n_trials: int, seed: int,
              alpha: float | None = None) -> np.ndarray:
    """Independent mean (or CVaR) estimates across repeated MC trials."""
    seeds = np.random.SeedSequence(seed).spawn(n_trials)
    out = np.empty(n_trials)
    for t in range(n_trials):
        samples = sample_source(source, seeds[t].generate_state(1)[0], n_samples)
        values, _ = _evaluate_samples(model, samples)
        if alpha is None:
            out[t] = values.mean()
        else:
            w = np.full(len(values), 1.0 / len(values))
            out[t] = empirical_cvar(values, w, alpha)[1]
    return out


# -- error-bound diagnostics --------------------------------------------------


@dataclass
class BoundReport:
    """Evaluated right-hand sides of the mean and CVaR error bounds."""

    tv_bound: float
    mixture_term: float          # 2 sqrt(E_nu[Q^2] + E_mix[Q^2]) sqrt(TV)
    mean_taylor_term: float      # sum_i w_i |E_i[Q - Q_s,i]|
    cvar_taylor_term: float      # sum_i w_i E_i[|Q - Q_s,i|]
    alpha: float
    mean_bound: float
    cvar_bound: float
    observed_mean_error: float | None = None
    observed_cvar_error: float | None = None
    mean_within_bound: bool | None = None
    cvar_within_bound: bool | None = None


def bound_diagnostics(mix, second_moment_base: float, second_moment_mix: float,
                      taylor_mean_errors, taylor_abs_errors, alpha: float,
                      observed_mean_error: float | None = None,
                      observed_cvar_error: float | None = None) -> BoundReport:
    """Evaluate the mean / CVaR error bounds for a mixture Taylor estimator.

    `taylor_mean_errors` are per-component estimates of |E_i[Q - Q_s,i]| and
    `taylor_abs_errors` of E_i[|Q - Q_s,i|]; second moments are typically
    Monte Carlo estimates. Diagnostic only: reports the bound values and
    whether observed errors (when given) fall inside them.
    """
    w = mix.weights
    tv = max(float(mix.tv_bound), 0.0)
    mixture_term = 2.0 * math.sqrt(max(second_moment_base, 0.0)
                                   + max(second_moment_mix, 0.0)) * math.sqrt(tv)
    mean_taylor = float(np.dot(w, np.abs(taylor_mean_errors)))
    cvar_taylor = float(np.dot(w, np.abs(taylor_abs_errors)))
    mean_bound = mixture_term + mean_taylor
    cvar_bound = (mixture_term + cvar_taylor) / (1.0 - alpha)
    return BoundReport(
        tv_bound=tv, mixture_term=mixture_term,
        mean_taylor_term=mean_taylor, cvar_taylor_term=cvar_taylor,
        alpha=alpha, mean_bound=mean_bound, cvar_bound=cvar_bound,
        observed_mean_error=observed_mean_error,
        observed_cvar_error=observed_cvar_error,
        mean_within_bound=(None if observed_mean_error is None
                           else observed_mean_error <= mean_bound),
        cvar_within_bound=(None if observed_cvar_error is None
                           else observed_cvar_error <= cvar_bound))
