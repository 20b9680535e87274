"""Built-in invariant suites behind the ``selfcheck`` CLI subcommand.

Four families of checks at acceptance scale, on both bundled pairs where
applicable: oracle unbiasedness, the variance bound, the exponential-
moment condition for the calibrated gamma (plus the averaging/Jensen
contraction), and exact CUSUM/LPA path equivalence under a constant
oracle.  Every check is deterministic given the master seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .calibrate import calibrate_pair, check_jensen_contraction
from .detect import LpaConfig, cusum_step, initial_state, lpa_step
from .harness import StreamSpec, generate_stream
from .models import boltzmann, mvn10
from .partition import ConstantOracle, make_oracle, pair_variance_bound

__all__ = ["CheckResult", "run_selfcheck"]


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _rng(master_seed, *path):
    return np.random.default_rng(np.random.SeedSequence([master_seed, 14, *path]))


def _check_unbiasedness(pair, master_seed, tag, n=100_000):
    rng = _rng(master_seed, 1, tag)
    oracle = make_oracle(pair, "exact_path")
    values = oracle.draw_values(rng, n)
    mean = values.mean()
    se = values.std(ddof=1) / math.sqrt(n)
    target = pair.analytic_log_z_ratio()
    err = abs(mean - target)
    return CheckResult(
        name=f"ti-unbiasedness-{pair.name}",
        passed=bool(err <= 3 * se),
        detail=f"mean={mean:.6f} target={target:.6f} |err|={err:.2e} 3se={3 * se:.2e}",
    ), values


def _check_variance_bound(pair, values):
    var = values.var(ddof=1)
    bound = pair_variance_bound(pair)
    return CheckResult(
        name=f"variance-bound-{pair.name}",
        passed=bool(var <= bound),
        detail=f"sample_var={var:.4f} bound={bound:.4f}",
    )


def _check_gamma_condition(master_seed):
    pair = boltzmann()
    rng = _rng(master_seed, 2)
    result = calibrate_pair(pair, i=100, rng=rng)
    cond = result.condition
    checks = [CheckResult(
        name="gamma-condition-boltzmann",
        passed=cond.passed,
        detail=f"gamma0={result.gamma0:.4f} estimate={cond.estimate:.6f} "
               f"1+3se={1 + 3 * cond.std_error:.6f}",
    )]
    jensen = check_jensen_contraction(pair, result.gamma0, (2, 10, 100),
                                      "exact_path", 100_000, _rng(master_seed, 3))
    for i, chk in jensen.items():
        checks.append(CheckResult(
            name=f"jensen-contraction-i{i}",
            passed=chk.passed,
            detail=f"lhs-rhs={chk.estimate:.2e} 3se={3 * chk.std_error:.2e}",
        ))
    return checks


def _check_equivalence(pair, master_seed, tag, steps=10_000):
    stream = generate_stream(pair, StreamSpec(change_point=steps // 2, length=steps,
                                              seed=master_seed + tag))
    oracle = ConstantOracle(pair.analytic_log_z_ratio())
    cfg = LpaConfig(gamma=1.0, i=1, oracle=oracle)
    rng = _rng(master_seed, 4, tag)
    lzr = pair.analytic_log_z_ratio()
    s_cusum = initial_state("cusum")
    s_lpa = initial_state("lpa")
    identical = True
    for n in range(steps):
        x = stream[n]
        s_cusum = cusum_step(s_cusum, pair.log_weight(x) + lzr)
        s_lpa = lpa_step(s_lpa, x, pair, cfg, rng)
        if s_cusum.statistic != s_lpa.statistic:
            identical = False
            break
    return CheckResult(
        name=f"cusum-lpa-equivalence-{pair.name}",
        passed=identical,
        detail=f"{steps} steps bitwise identical" if identical
        else f"paths diverged at step {n + 1}",
    )


def run_selfcheck(master_seed=42):
    """Run every suite; returns results in print order."""
    results = []
    for tag, pair in enumerate((boltzmann(), mvn10())):
        unbiased, values = _check_unbiasedness(pair, master_seed, tag)
        results.append(unbiased)
        results.append(_check_variance_bound(pair, values))
    results.extend(_check_gamma_condition(master_seed))
    for tag, pair in enumerate((boltzmann(), mvn10())):
        results.append(_check_equivalence(pair, master_seed, tag))
    return results
