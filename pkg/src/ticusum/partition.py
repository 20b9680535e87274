"""Estimators for the log-partition ratio log(Z0/Z1).

The detection algorithm consumes an oracle emitting unbiased draws Y of
log(Z0/Z1).  The workhorse here is path sampling over the geometric bridge:
with beta ~ Uniform[0,1] and X ~ P_beta,

    E[ d/dbeta log P~beta(X) ] = log Z1 - log Z0,

and for the geometric bridge the integrand is just log w(X) = log P~1(X)
- log P~0(X), independent of beta.  One bridge draw therefore yields the
unbiased estimate  Y = -log w(X)  of log(Z0/Z1); the sign flip converts
the path-sampling identity (which targets log Z1 - log Z0) to the
convention the detector consumes.  Every oracle mode in this module emits
the log(Z0/Z1) convention.

Also provided: a self-normalized importance-sampling variant that reuses
draws from P0 (consistent, but biased at finite sample size), the two
naive plug-in estimators whose bias motivates the bridge construction,
and a computable variance bound  3*S^2 + S  with
S = D(P1,P0) + D(P0,P1) + 2|log(Z1/Z0)|.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from .errors import CapabilityError, DegenerateEstimateError, DegenerateWeightsError
from .models import POST_VS_PRE, PRE_VS_POST

__all__ = [
    "OracleDraw",
    "OracleBatch",
    "VarianceReport",
    "Oracle",
    "ExactPathOracle",
    "ImportanceOracle",
    "ConstantOracle",
    "make_oracle",
    "oracle_batch",
    "ti_single_draw",
    "ti_single_draw_is",
    "ti_is_grid_estimate",
    "normalized_path_weights",
    "is_normalizer_check",
    "naive_estimator_1",
    "naive_estimator_2",
    "theorem4_bound",
    "pair_variance_bound",
    "estimate_oracle_variance",
]

ORACLE_MODES = ("exact_path", "importance", "naive1", "naive2", "constant")


@dataclass(frozen=True)
class OracleDraw:
    """One estimate Y of log(Z0/Z1); beta_used is set for bridge modes only."""

    value: float
    mode: str
    beta_used: Optional[float] = None


@dataclass(frozen=True)
class OracleBatch:
    """The per-step average T of i independent oracle draws."""

    mean: float
    i: int
    draws: Optional[Tuple[float, ...]] = None


@dataclass(frozen=True)
class VarianceReport:
    sample_mean: float
    sample_variance: float
    std_error: float
    n: int
    theorem4_bound: Optional[float] = None


class Oracle:
    """Interface: a source of i.i.d. estimates of log(Z0/Z1).

    ``draw_values(rng, n)`` returns n draws as a flat array; batching is an
    implementation detail and every draw is independent of data samples.
    """

    mode: str

    def draw_values(self, rng, n):
        raise NotImplementedError

    def draw(self, rng):
        return OracleDraw(float(self.draw_values(rng, 1)[0]), self.mode)


class ExactPathOracle(Oracle):
    """Unbiased bridge-sampling oracle: beta ~ U[0,1], X ~ P_beta, Y = -log w(X)."""

    mode = "exact_path"

    def __init__(self, pair):
        if not pair.capabilities.exact_path_sampler:
            raise CapabilityError(
                f"model pair {pair.name!r} has no path sampler; use importance mode instead")
        self.pair = pair

    def draw_values(self, rng, n):
        betas = rng.uniform(size=n)
        x = self.pair.sample_path_batch(rng, betas)
        return -self.pair.log_weight(x)

    def draw(self, rng):
        beta = float(rng.uniform())
        x = self.pair.sample_path(rng, beta)
        return OracleDraw(float(-self.pair.log_weight(x)), self.mode, beta_used=beta)


class ImportanceOracle(Oracle):
    """Self-normalized importance-sampling oracle over K draws from P0.

    Each call draws beta ~ U[0,1] and K fresh base samples, then evaluates
    sum_j softmax(beta*log w)_j * log w_j, sign-flipped to the log(Z0/Z1)
    convention.  Consistent as K grows but biased at finite K (the
    self-normalization is a ratio of sample means); prefer the exact-path
    oracle whenever the pair has a bridge sampler.
    """

    mode = "importance"

    def __init__(self, pair, k=1000):
        if not pair.capabilities.exact_pre_sampler:
            raise CapabilityError("importance mode needs an exact pre-change sampler")
        if k < 1:
            raise ValueError("k must be at least 1")
        self.pair = pair
        self.k = int(k)

    def draw_values(self, rng, n):
        out = np.empty(n)
        # Chunked so base samples never exceed ~2^20 scalars at once.
        chunk = max(1, (1 << 20) // max(self.k * self.pair.dim, 1))
        pos = 0
        while pos < n:
            c = min(chunk, n - pos)
            betas = rng.uniform(size=c)
            base = self.pair.sample_pre(rng, c * self.k)
            logw = self.pair.log_weight(base).reshape(c, self.k)
            scaled = betas[:, None] * logw
            lse = logsumexp(scaled, axis=1)
            if not np.isfinite(lse).all():
                raise DegenerateWeightsError(
                    "all importance weights underflowed; reduce beta spread or increase k")
            w = np.exp(scaled - lse[:, None])
            out[pos:pos + c] = -np.einsum("ck,ck->c", w, logw)
            pos += c
        return out

    def draw(self, rng):
        beta = float(rng.uniform())
        base = self.pair.sample_pre(rng, self.k)
        return ti_single_draw_is(self.pair, base, beta)


class ConstantOracle(Oracle):
    """Deterministic oracle returning a fixed value.

    Used as the exact-oracle test double (value = analytic log(Z0/Z1)) and
    to plug one-shot naive estimates into the detector as constants.
    """

    def __init__(self, value, mode="constant"):
        if mode not in ORACLE_MODES:
            raise ValueError(f"unknown oracle mode {mode!r}")
        self.value = float(value)
        self.mode = mode

    def draw_values(self, rng, n):
        return np.full(n, self.value)


def make_oracle(pair, mode, rng=None, importance_k=1000, n_mc=None, constant_value=None):
    """Build an oracle by mode name.

    ``constant`` defaults to the pair's analytic log(Z0/Z1); ``naive1`` /
    ``naive2`` compute the one-shot plug-in estimate with ``rng`` and
    ``n_mc`` samples and freeze it as a constant.
    """
    if mode == "exact_path":
        return ExactPathOracle(pair)
    if mode == "importance":
        return ImportanceOracle(pair, k=importance_k)
    if mode == "constant":
        value = constant_value
        if value is None:
            value = pair.analytic_log_z_ratio()
            if value is None:
                raise CapabilityError("constant oracle needs an analytic log(Z0/Z1) or an explicit value")
        return ConstantOracle(value)
    if mode in ("naive1", "naive2"):
        if rng is None or n_mc is None:
            raise ValueError(f"{mode} oracle needs rng and n_mc to compute its one-shot estimate")
        est = naive_estimator_1(pair, n_mc, rng) if mode == "naive1" else naive_estimator_2(pair, n_mc, rng)
        return ConstantOracle(est, mode=mode)
    raise ValueError(f"unknown oracle mode {mode!r}; known: {ORACLE_MODES}")


def ti_single_draw(pair, rng):
    """One unbiased bridge draw of log(Z0/Z1) as an :class:`OracleDraw`."""
    return ExactPathOracle(pair).draw(rng)


def normalized_path_weights(log_w, beta):
    """softmax(beta * log_w): nonnegative, sums to one.

    Raises when every weight underflows to zero.
    """
    scaled = beta * np.asarray(log_w, dtype=float)
    lse = logsumexp(scaled)
    if not np.isfinite(lse):
        raise DegenerateWeightsError(
            "all importance weights underflowed; reduce beta spread or increase the sample count")
    return np.exp(scaled - lse)


def ti_single_draw_is(pair, base_samples, beta=None, rng=None):
    """Self-normalized estimate of log(Z0/Z1) from samples of P0.

    ``beta`` defaults to a fresh Uniform[0,1] draw from ``rng``.  The value
    is biased at finite sample size (documented on :class:`ImportanceOracle`).
    """
    if beta is None:
        if rng is None:
            raise ValueError("either beta or rng must be given")
        beta = float(rng.uniform())
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    base = np.asarray(base_samples, dtype=float)
    if base.ndim == 1:
        base = base[:, None]
    if base.shape[0] < 1:
        raise ValueError("need at least one base sample")
    logw = pair.log_weight(base)
    w = normalized_path_weights(logw, beta)
    return OracleDraw(float(-(w @ logw)), "importance", beta_used=beta)


def ti_is_grid_estimate(pair, base_samples, n_grid=50):
    """Diagnostic: trapezoid rule over a fixed beta grid, reusing one base set.

    log w does not change with beta, so the same P0 samples serve every
    grid point.  Not an unbiased oracle; offered for convergence checks.
    """
    if n_grid < 2:
        raise ValueError("need at least two grid points")
    base = np.asarray(base_samples, dtype=float)
    if base.ndim == 1:
        base = base[:, None]
    logw = pair.log_weight(base)
    grid = np.linspace(0.0, 1.0, n_grid)
    vals = np.empty(n_grid)
    for j, beta in enumerate(grid):
        w = normalized_path_weights(logw, beta)
        vals[j] = -(w @ logw)
    return float(np.trapezoid(vals, grid))


def is_normalizer_check(pair, base_samples, beta):
    """Monte Carlo estimate of E_{P0}[w(X)^beta], which equals Z_beta/Z0."""
    base = np.asarray(base_samples, dtype=float)
    if base.ndim == 1:
        base = base[:, None]
    logw = pair.log_weight(base)
    return float(np.exp(logsumexp(beta * logw) - math.log(base.shape[0])))


def oracle_batch(oracle, i, rng, keep_draws=False):
    """Average of ``i`` fresh oracle draws, as consumed once per detection step."""
    if i < 1:
        raise ValueError("i must be at least 1")
    values = oracle.draw_values(rng, i)
    return OracleBatch(
        mean=float(values.mean()),
        i=int(i),
        draws=tuple(float(v) for v in values) if keep_draws else None,
    )


def naive_estimator_1(pair, n_mc, rng):
    """Plug-in estimate log(Z0_hat / Z1_hat) with each Z integrated separately.

    Both integrals are importance-sampled against the same proposal draws
    (the pre-change sampler, with the unnormalized pre density as proposal
    weight -- the proposal's own normalizer cancels from the ratio).
    log of a sample mean, hence biased at finite n_mc.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be at least 1")
    x = pair.sample_pre(rng, n_mc)
    log_q = pair.log_ptilde_pre(x)
    log_z0 = logsumexp(pair.log_ptilde_pre(x) - log_q) - math.log(n_mc)
    log_z1 = logsumexp(pair.log_ptilde_post(x) - log_q) - math.log(n_mc)
    if not np.isfinite(log_z0) or not np.isfinite(log_z1):
        raise DegenerateEstimateError("a partition-function estimate collapsed to zero")
    return float(log_z0 - log_z1)


def naive_estimator_2(pair, n_mc, rng):
    """Plug-in estimate log( mean of P~0(X)/P~1(X) ) over X ~ P1.

    The inner mean is unbiased for Z0/Z1; taking its log makes the
    estimator biased at finite n_mc.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be at least 1")
    x = pair.sample_post(rng, n_mc)
    log_ratio = -pair.log_weight(x)
    est = logsumexp(log_ratio) - math.log(n_mc)
    if not np.isfinite(est):
        raise DegenerateEstimateError("the ratio mean underflowed to zero")
    return float(est)


def theorem4_bound(kl_post_pre, kl_pre_post, log_z_ratio):
    """Variance bound 3*S^2 + S for one bridge draw, S = sum of KLs + 2|log Z ratio|."""
    if kl_post_pre < 0 or kl_pre_post < 0:
        raise ValueError("KL divergences cannot be negative")
    s = kl_post_pre + kl_pre_post + 2.0 * abs(log_z_ratio)
    return 3.0 * s * s + s


def pair_variance_bound(pair):
    """The variance bound evaluated from a pair's analytic quantities, or None."""
    if not (pair.capabilities.analytic_kl and pair.capabilities.analytic_log_z_ratio):
        return None
    return theorem4_bound(
        pair.analytic_kl(POST_VS_PRE),
        pair.analytic_kl(PRE_VS_POST),
        pair.analytic_log_z_ratio(),
    )


def estimate_oracle_variance(pair, mode, n, rng, **oracle_options):
    """Pilot estimate of the oracle's per-draw variance, with the analytic bound attached."""
    if n < 2:
        raise ValueError("need at least two draws to estimate a variance")
    oracle = make_oracle(pair, mode, rng=rng, **oracle_options)
    values = oracle.draw_values(rng, n)
    var = float(values.var(ddof=1))
    return VarianceReport(
        sample_mean=float(values.mean()),
        sample_variance=var,
        std_error=math.sqrt(var / n),
        n=int(n),
        theorem4_bound=pair_variance_bound(pair),
    )
