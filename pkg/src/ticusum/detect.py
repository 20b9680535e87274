"""Detector state machines sharing one step/threshold interface.

Three one-sided cumulative detectors over a sample stream:

* ``cusum``  -- classical reflected accumulation of exact log-likelihood
  ratios (needs the analytic log-partition ratio to form them),
* ``lpa``    -- the unnormalized variant: each step adds
  gamma * log w(x_n) + gamma * T_n, where T_n averages i fresh oracle
  draws of log(Z0/Z1); with gamma = 1 and an exact constant oracle the
  statistic path is identical to CUSUM's,
* ``scusum`` -- score-based baseline with increment
  delta * (S(x, pre) - S(x, post)) built from Hyvarinen scores.

All statistics reflect at zero and stop at the first n with value >= b.
The declared guarantee for a correctly tuned detector is an average run
length of at least e^b under pre-change data, so b is always the raw
statistic threshold here (never its exponential).

Oracle batches are drawn fresh at every step: the i draws consumed at
step n are independent of the sample x_n and of all earlier batches,
which is what the false-alarm guarantee leans on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import CapabilityError, DomainError
from .partition import Oracle, oracle_batch

__all__ = [
    "DetectorState",
    "LpaConfig",
    "StoppingReport",
    "initial_state",
    "cusum_step",
    "lpa_step",
    "scusum_step",
    "CusumDetector",
    "LpaDetector",
    "ScusumDetector",
    "run_detector",
    "run_detector_lazy",
]

_FIRST_BLOCK = 64
_MAX_BLOCK = 8192


@dataclass(frozen=True)
class DetectorState:
    statistic: float
    time: int
    kind: str


@dataclass(frozen=True)
class LpaConfig:
    """Oracle-backed detector parameters: scale gamma and draws-per-step i."""

    gamma: float
    i: int
    oracle: Oracle

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.i < 1:
            raise ValueError(f"i must be at least 1, got {self.i}")


@dataclass(frozen=True)
class StoppingReport:
    """Outcome of a threshold run: stop_time is 1-based, None when censored."""

    stop_time: Optional[int]
    threshold_b: float
    censored: bool
    steps: int


def initial_state(kind):
    return DetectorState(statistic=0.0, time=0, kind=kind)


def _check_kind(state, expected):
    if state.kind != expected:
        raise ValueError(f"state has kind {state.kind!r}, expected {expected!r}")


def cusum_step(state, log_lr):
    """One reflected accumulation step: (statistic + log_lr)+."""
    _check_kind(state, "cusum")
    if not np.isfinite(log_lr):
        raise DomainError(f"log-likelihood ratio is not finite at step {state.time + 1}")
    return DetectorState(max(0.0, state.statistic + float(log_lr)), state.time + 1, "cusum")


def lpa_step(state, x, pair, cfg, rng):
    """One oracle-backed step: (statistic + gamma*log w(x) + gamma*T)+.

    A fresh batch of cfg.i oracle draws is consumed every call.
    """
    _check_kind(state, "lpa")
    try:
        batch = oracle_batch(cfg.oracle, cfg.i, rng)
    except Exception as exc:
        raise type(exc)(f"oracle failed at step {state.time + 1}: {exc}") from exc
    log_w = pair.log_weight(x)
    increment = cfg.gamma * log_w + cfg.gamma * batch.mean
    return DetectorState(max(0.0, state.statistic + increment), state.time + 1, "lpa")


def scusum_step(state, x, pair, delta):
    """One score-based step with increment delta * (S(x, pre) - S(x, post))."""
    _check_kind(state, "scusum")
    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    increment = delta * (pair.score("pre", x) - pair.score("post", x))
    return DetectorState(max(0.0, state.statistic + increment), state.time + 1, "scusum")


class CusumDetector:
    """Exact-likelihood CUSUM over a pair with a known log-partition ratio."""

    kind = "cusum"

    def __init__(self, pair):
        self.pair = pair
        lzr = pair.analytic_log_z_ratio()
        if lzr is None:
            raise CapabilityError(
                "CUSUM needs exact log-likelihood ratios; the pair has no analytic log(Z0/Z1)")
        self.log_z_ratio = float(lzr)
        self.gamma = 1.0

    def increments(self, x_block, rng):
        return self.pair.log_weight(x_block) + self.log_z_ratio


class LpaDetector:
    """Oracle-backed detector; the vectorized counterpart of ``lpa_step``."""

    kind = "lpa"

    def __init__(self, pair, gamma, i, oracle):
        self.pair = pair
        self.cfg = LpaConfig(gamma=gamma, i=i, oracle=oracle)
        self.gamma = float(gamma)

    def increments(self, x_block, rng):
        m = x_block.shape[0]
        log_w = self.pair.log_weight(x_block)
        draws = self.cfg.oracle.draw_values(rng, m * self.cfg.i).reshape(m, self.cfg.i)
        t_bar = draws.mean(axis=1)
        return self.cfg.gamma * log_w + self.cfg.gamma * t_bar


class ScusumDetector:
    """Score-based baseline; delta comes from a separate calibration."""

    kind = "scusum"

    def __init__(self, pair, delta):
        if not pair.capabilities.analytic_score:
            raise CapabilityError("SCUSUM needs Hyvarinen scores; the pair has none")
        if delta < 0:
            raise ValueError(f"delta must be nonnegative, got {delta}")
        self.pair = pair
        self.delta = float(delta)
        self.gamma = 1.0

    def increments(self, x_block, rng):
        return self.delta * (self.pair.score("pre", x_block) - self.pair.score("post", x_block))


def _scan_block(carry, increments, threshold_b):
    """Reflected-walk scan over one block of increments.

    From statistic value ``carry``, the reflected recursion over the block
    equals  max(carry + C_n, C_n - min_{j<=n} C_j)  with C the running sum
    of increments, so a whole block is scanned with two cumulative passes.
    Returns (statistics array, index of first crossing or None).
    """
    c = np.cumsum(increments)
    m = np.minimum.accumulate(c)
    stats = np.maximum(carry + c, c - m)
    hits = np.nonzero(stats >= threshold_b)[0]
    hit = int(hits[0]) if hits.size else None
    return stats, hit


def _block_sizes():
    size = _FIRST_BLOCK
    while True:
        yield size
        size = min(size * 2, _MAX_BLOCK)


def run_detector_lazy(detector, sample_block, threshold_b, rng, max_len,
                      collect_trace=False):
    """Drive a detector against lazily generated samples until crossing.

    ``sample_block(rng, start, m)`` must return samples for stream
    positions start .. start+m-1 (0-based).  Samples and oracle draws are
    consumed block by block on a fixed size schedule, so a run is fully
    determined by the generator state.
    """
    if threshold_b <= 0:
        raise ValueError(f"threshold_b must be positive, got {threshold_b}")
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    carry = 0.0
    pos = 0
    trace_stats = [] if collect_trace else None
    trace_incs = [] if collect_trace else None
    for size in _block_sizes():
        m = min(size, max_len - pos)
        x = sample_block(rng, pos, m)
        inc = detector.increments(x, rng)
        stats, hit = _scan_block(carry, inc, threshold_b)
        if collect_trace:
            last = hit + 1 if hit is not None else m
            trace_stats.append(stats[:last])
            trace_incs.append(inc[:last])
        if hit is not None:
            report = StoppingReport(pos + hit + 1, threshold_b, False, pos + hit + 1)
            break
        carry = float(stats[-1])
        pos += m
        if pos >= max_len:
            report = StoppingReport(None, threshold_b, True, max_len)
            break
    if collect_trace:
        return report, np.concatenate(trace_stats), np.concatenate(trace_incs)
    return report


def run_detector(detector, stream, threshold_b, rng, collect_trace=False):
    """Run a detector over a realized stream; censored when it never crosses."""
    x = np.asarray(stream, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise ValueError("stream is empty")
    return run_detector_lazy(
        detector,
        lambda _rng, start, m: x[start:start + m],
        threshold_b,
        rng,
        max_len=x.shape[0],
        collect_trace=collect_trace,
    )
