"""Parameter selection and theoretical predictions for the oracle-backed detector.

The detector scale gamma trades false-alarm control against delay.  With
an oracle of per-draw variance sigma^2, averaging i draws per step and
taking

    gamma_0 = 1 - (sigma^2 + 2*eps) / (2 * i * D(P1, P0))

keeps the pre-change exponential moment of the increment at or below one
(for large enough i), which is the hypothesis driving the ARL >= e^b
guarantee.  Equivalently, a target gamma determines the number of oracle
draws needed per step:  1/i = 2 (1 - gamma) D(P1, P0) / (sigma^2 + 2 eps).
Since sigma^2 has no closed form for the bridge oracle, it is estimated
from a pilot run, and the resulting gamma_0 is always validated by a
direct Monte Carlo check of the exponential-moment condition.

Predicted delay for threshold b is b / (gamma * D(P1, P0)); with gamma=1
that is the classical first-order CUSUM delay.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import CalibrationError, CapabilityError
from .models import POST_VS_PRE
from .partition import make_oracle

__all__ = [
    "ConditionCheck",
    "CalibrationResult",
    "KlEstimate",
    "ScusumDelta",
    "gamma_zero",
    "required_i",
    "check_gamma_condition",
    "check_jensen_contraction",
    "predicted_cadd",
    "arl_lower_bound",
    "estimate_kl",
    "scusum_delta",
    "calibrate_pair",
]


def gamma_zero(sigma2, epsilon, i, kl):
    """Detector scale 1 - (sigma^2 + 2 eps) / (2 i kl); may come out nonpositive.

    The caller decides how to treat values <= 0 (too few oracle draws per
    step for this oracle variance); ``calibrate_pair`` aborts with a
    suggested i.
    """
    if kl <= 0:
        raise ValueError("kl must be positive; a zero-KL change is undetectable")
    if i < 1:
        raise ValueError("i must be at least 1")
    if sigma2 < 0:
        raise ValueError("sigma2 cannot be negative")
    if epsilon < 0:
        raise ValueError("epsilon cannot be negative")
    return 1.0 - (sigma2 + 2.0 * epsilon) / (2.0 * i * kl)


def required_i(sigma2, epsilon, gamma_target, kl):
    """Smallest i with gamma_zero(sigma2, epsilon, i, kl) >= gamma_target."""
    if not 0.0 < gamma_target < 1.0:
        raise ValueError("gamma_target must lie strictly in (0, 1); gamma = 1 needs sigma2 = 0")
    if kl <= 0:
        raise ValueError("kl must be positive")
    raw = (sigma2 + 2.0 * epsilon) / (2.0 * (1.0 - gamma_target) * kl)
    if not math.isfinite(raw):
        raise OverflowError("required i is unbounded for this gamma target")
    return max(1, math.ceil(raw))


@dataclass(frozen=True)
class ConditionCheck:
    """Monte Carlo check of E0[exp(gamma log w(X) + gamma T)] <= 1."""

    estimate: float
    std_error: float
    passed: bool
    note: Optional[str] = None


def check_gamma_condition(pair, gamma, i, mode, n_mc, rng, **oracle_options):
    """Estimate the pre-change exponential moment of the detector increment.

    Each trial pairs one pre-change sample with one fresh batch mean of i
    oracle draws.  Passes when the estimate is at most 1 + 3 standard
    errors.  Exponential overflow is reported as a failure (gamma too
    large), not an exception.
    """
    if n_mc < 2:
        raise ValueError("need at least two trials")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    oracle = make_oracle(pair, mode, rng=rng, **oracle_options)
    total = 0.0
    total_sq = 0.0
    done = 0
    chunk = max(1, (1 << 20) // max(i, 1))
    with np.errstate(over="ignore"):
        while done < n_mc:
            c = min(chunk, n_mc - done)
            x = pair.sample_pre(rng, c)
            log_w = pair.log_weight(x)
            t_bar = oracle.draw_values(rng, c * i).reshape(c, i).mean(axis=1)
            values = np.exp(gamma * log_w + gamma * t_bar)
            if not np.isfinite(values).all():
                return ConditionCheck(
                    estimate=math.inf, std_error=math.inf, passed=False,
                    note="exponential moment overflowed; gamma is too large for this pair")
            total += values.sum()
            total_sq += (values * values).sum()
            done += c
    mean = total / n_mc
    var = max(0.0, (total_sq - n_mc * mean * mean) / (n_mc - 1))
    se = math.sqrt(var / n_mc)
    return ConditionCheck(estimate=float(mean), std_error=float(se),
                          passed=bool(mean <= 1.0 + 3.0 * se))


def check_jensen_contraction(pair, gamma, i_values, mode, n_mc, rng, **oracle_options):
    """Check E0[exp(gamma * mean of i draws)] <= E0[exp(gamma * Y)] per i.

    Averaging oracle draws can only shrink the exponential moment (Jensen),
    so each i must satisfy lhs <= rhs up to 3 combined standard errors.
    Returns a dict i -> ConditionCheck where ``estimate`` is lhs - rhs.
    """
    oracle = make_oracle(pair, mode, rng=rng, **oracle_options)
    single = np.exp(gamma * oracle.draw_values(rng, n_mc))
    rhs = float(single.mean())
    rhs_se = float(single.std(ddof=1) / math.sqrt(n_mc))
    out = {}
    for i in i_values:
        t_bar = oracle.draw_values(rng, n_mc * i).reshape(n_mc, i).mean(axis=1)
        lhs_vals = np.exp(gamma * t_bar)
        lhs = float(lhs_vals.mean())
        lhs_se = float(lhs_vals.std(ddof=1) / math.sqrt(n_mc))
        se = math.sqrt(lhs_se ** 2 + rhs_se ** 2)
        out[i] = ConditionCheck(estimate=lhs - rhs, std_error=se,
                                passed=bool(lhs <= rhs + 3.0 * se))
    return out


def predicted_cadd(threshold_b, gamma, kl):
    """First-order detection-delay prediction b / (gamma * kl)."""
    if threshold_b <= 0:
        raise ValueError("threshold_b must be positive")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if kl <= 0:
        raise ValueError("kl must be positive")
    return threshold_b / (gamma * kl)


def arl_lower_bound(threshold_b):
    """Guaranteed pre-change average run length e^b for a well-tuned detector."""
    return math.exp(threshold_b)


@dataclass(frozen=True)
class KlEstimate:
    value: float
    std_error: float


def estimate_kl(pair, n_mc, rng, mode="exact_path", **oracle_options):
    """Monte Carlo D(P1, P0): mean of log w over post-change samples plus
    an oracle estimate of log(Z0/Z1)."""
    if n_mc < 2:
        raise ValueError("need at least two samples")
    x = pair.sample_post(rng, n_mc)
    log_w = pair.log_weight(x)
    oracle = make_oracle(pair, mode, rng=rng, **oracle_options)
    z_draws = oracle.draw_values(rng, n_mc)
    value = float(log_w.mean() + z_draws.mean())
    se = math.sqrt(log_w.var(ddof=1) / n_mc + z_draws.var(ddof=1) / n_mc)
    return KlEstimate(value=value, std_error=se)


@dataclass(frozen=True)
class ScusumDelta:
    delta: float
    note: Optional[str] = None


def scusum_delta(pair, n_mc, rng, bracket_top=1.0, tol=1e-3):
    """Largest delta in (0, bracket_top] keeping the score-based detector's
    pre-change exponential moment at or below one.

    One batch of pre-change score differences is reused across the whole
    bisection (common random numbers): the sample criterion is then convex
    in delta with value 1 at delta = 0, so its feasible set is an interval
    and bisection is exact for the sampled criterion.
    """
    if not pair.capabilities.analytic_score:
        raise CapabilityError("delta calibration needs Hyvarinen scores")
    if n_mc < 2:
        raise ValueError("need at least two samples")
    x = pair.sample_pre(rng, n_mc)
    w = pair.score("pre", x) - pair.score("post", x)

    def feasible(delta):
        with np.errstate(over="ignore"):
            vals = np.exp(delta * w)
        m = vals.mean()
        return math.isfinite(m) and m <= 1.0

    if feasible(bracket_top):
        return ScusumDelta(delta=float(bracket_top))
    lo, hi = 0.0, float(bracket_top)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    if lo < tol:
        return ScusumDelta(delta=0.0, note="no feasible delta > 0; the detector "
                                           "cannot be made safe on this pair")
    return ScusumDelta(delta=float(lo))


@dataclass(frozen=True)
class CalibrationResult:
    """Everything `run` and `sweep` need to deploy a calibrated detector."""

    gamma0: float
    sigma2_hat: float
    kl_hat: float
    epsilon: float
    i: int
    condition: ConditionCheck
    clamped: bool = False
    pair_name: str = ""
    oracle_mode: str = "exact_path"
    kl_is_analytic: bool = True
    pilot_draws: int = 0
    variance_bound: Optional[float] = None

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        data["condition"] = ConditionCheck(**data["condition"])
        return cls(**data)


def calibrate_pair(pair, i, rng, oracle_mode="exact_path", epsilon_fraction=0.05,
                   pilot_draws=10_000, condition_draws=100_000, **oracle_options):
    """Full calibration: pilot variance, KL, gamma_0, and the condition check.

    epsilon defaults to a fraction of the pilot variance (scale-aware slack
    keeping gamma_0 near its variance-only value).  Aborts when gamma_0
    would be nonpositive, suggesting the i needed for gamma_0 = 0.5.
    """
    from .partition import estimate_oracle_variance

    pilot = estimate_oracle_variance(pair, oracle_mode, pilot_draws, rng, **oracle_options)
    sigma2 = pilot.sample_variance
    kl = pair.analytic_kl(POST_VS_PRE)
    kl_is_analytic = kl is not None
    if not kl_is_analytic:
        kl = estimate_kl(pair, pilot_draws, rng, mode=oracle_mode, **oracle_options).value
    if kl <= 0:
        raise CalibrationError("estimated KL is not positive; the change is undetectable")
    epsilon = epsilon_fraction * sigma2
    raw = gamma_zero(sigma2, epsilon, i, kl)
    if raw <= 0:
        suggestion = required_i(sigma2, max(epsilon, 1e-12), 0.5, kl)
        raise CalibrationError(
            f"gamma_0 = {raw:.4f} <= 0 at i = {i}; use at least i = {suggestion} "
            f"(for gamma_0 = 0.5) with this oracle", required_i=suggestion)
    clamped = raw > 1.0
    g0 = min(raw, 1.0)
    condition = check_gamma_condition(pair, g0, i, oracle_mode, condition_draws, rng,
                                      **oracle_options)
    return CalibrationResult(
        gamma0=float(g0),
        sigma2_hat=float(sigma2),
        kl_hat=float(kl),
        epsilon=float(epsilon),
        i=int(i),
        condition=condition,
        clamped=clamped,
        pair_name=pair.name,
        oracle_mode=oracle_mode,
        kl_is_analytic=kl_is_analytic,
        pilot_draws=int(pilot_draws),
        variance_bound=pilot.theorem4_bound,
    )
