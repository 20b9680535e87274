"""Monte Carlo benchmark harness: seeded streams, empirical ARL/CADD, sweeps.

Trials are embarrassingly parallel.  Reproducibility contract: trial t of
a given estimation run draws every random number from a generator seeded
by (master_seed, *context, purpose, t), so results are bitwise identical
for any worker count and block schedule; aggregation always happens in
trial-index order.

Empirical ARL is the mean stopping time over pre-change-only streams;
runs that never cross are censored at ``max_len`` and contribute that cap
(a conservative lower bound, with the censor count reported).  Empirical
CADD is the mean of (tau - nu) over trials with tau >= nu; trials that
alarm before the change point are discarded and counted, matching the
conditional-delay definition.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .calibrate import arl_lower_bound
from .detect import CusumDetector, LpaDetector, ScusumDetector, run_detector_lazy
from .errors import EstimationError
from .models import POST_VS_PRE
from .partition import ConstantOracle, make_oracle, naive_estimator_1, naive_estimator_2

__all__ = [
    "StreamSpec",
    "DetectorSpec",
    "ArlEstimate",
    "CaddEstimate",
    "SweepRow",
    "SWEEP_CSV_HEADER",
    "generate_stream",
    "estimate_arl",
    "estimate_cadd",
    "sweep",
    "write_sweep_csv",
]

_PURPOSE_ARL = 1
_PURPOSE_CADD = 2

SWEEP_CSV_HEADER = [
    "detector", "threshold_b", "arl_mean", "arl_se", "cadd_mean", "cadd_se",
    "trials", "censored", "discarded", "predicted_cadd", "arl_bound",
]


@dataclass(frozen=True)
class StreamSpec:
    """A synthetic stream: samples 1..nu-1 from the pre law, nu.. from the post law.

    ``change_point=None`` means the change never happens (ARL streams).
    """

    change_point: Optional[int]
    length: int
    seed: int

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("length must be at least 1")
        if self.change_point is not None:
            if self.change_point < 1:
                raise ValueError("change_point must be at least 1")
            if self.change_point > self.length:
                raise ValueError("change_point cannot exceed the stream length")


def generate_stream(pair, spec):
    """Materialize a stream; fully determined by ``spec.seed``."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    if spec.change_point is None:
        return pair.sample_pre(rng, spec.length)
    n_pre = spec.change_point - 1
    pre = pair.sample_pre(rng, n_pre)
    post = pair.sample_post(rng, spec.length - n_pre)
    return np.concatenate([pre, post], axis=0)


@dataclass(frozen=True)
class DetectorSpec:
    """Picklable detector description; built into a live detector per trial.

    ``naive1`` / ``naive2`` build an oracle-backed detector whose oracle is
    the one-shot plug-in estimate, computed once per trial run from the
    trial's generator (budget ``n_mc``, defaulting to i * nominal stream
    length so the naive detectors consume the same sampling budget the
    oracle-backed detector would).
    """

    id: str
    kind: str
    gamma: float = 1.0
    i: int = 1
    oracle_mode: str = "exact_path"
    importance_k: int = 1000
    delta: Optional[float] = None
    n_mc: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("cusum", "lpa", "scusum", "naive1", "naive2"):
            raise ValueError(f"unknown detector kind {self.kind!r}")

    def build(self, pair, rng, nominal_length=10_000):
        if self.kind == "cusum":
            return CusumDetector(pair)
        if self.kind == "lpa":
            oracle = make_oracle(pair, self.oracle_mode, importance_k=self.importance_k)
            return LpaDetector(pair, self.gamma, self.i, oracle)
        if self.kind == "scusum":
            if self.delta is None:
                raise ValueError(f"detector {self.id!r}: scusum needs a delta (run calibration)")
            return ScusumDetector(pair, self.delta)
        budget = self.n_mc if self.n_mc is not None else self.i * nominal_length
        if self.kind == "naive1":
            value = naive_estimator_1(pair, budget, rng)
        else:
            value = naive_estimator_2(pair, budget, rng)
        return LpaDetector(pair, 1.0, 1, ConstantOracle(value, mode=self.kind))


@dataclass(frozen=True)
class ArlEstimate:
    mean: float
    se: float
    censored: int


@dataclass(frozen=True)
class CaddEstimate:
    mean: float
    se: float
    discarded: int
    censored: int


def _trial_rng(master_seed, seed_path, purpose, trial):
    return np.random.default_rng(
        np.random.SeedSequence([int(master_seed), *map(int, seed_path), purpose, trial]))


def _arl_chunk(job):
    (pair, det_spec, threshold_b, max_len, nominal_length,
     master_seed, seed_path, lo, hi) = job
    out = []
    for trial in range(lo, hi):
        rng = _trial_rng(master_seed, seed_path, _PURPOSE_ARL, trial)
        detector = det_spec.build(pair, rng, nominal_length)
        report = run_detector_lazy(
            detector, lambda r, start, m: pair.sample_pre(r, m), threshold_b, rng, max_len)
        out.append((max_len if report.censored else report.stop_time, report.censored))
    return out


def _cadd_chunk(job):
    (pair, det_spec, threshold_b, nu, length,
     master_seed, seed_path, lo, hi) = job
    n_pre = nu - 1

    def sample_block(r, start, m):
        if start + m <= n_pre:
            return pair.sample_pre(r, m)
        if start >= n_pre:
            return pair.sample_post(r, m)
        k = n_pre - start
        return np.concatenate([pair.sample_pre(r, k), pair.sample_post(r, m - k)], axis=0)

    out = []
    for trial in range(lo, hi):
        rng = _trial_rng(master_seed, seed_path, _PURPOSE_CADD, trial)
        detector = det_spec.build(pair, rng, length)
        report = run_detector_lazy(detector, sample_block, threshold_b, rng, length)
        if report.censored:
            out.append(("censored", length - nu))
        elif report.stop_time < nu:
            out.append(("discarded", 0))
        else:
            out.append(("ok", report.stop_time - nu))
    return out


def _run_chunks(fn, job_base, trials, threads):
    chunk = max(1, math.ceil(trials / (max(1, threads) * 4)))
    bounds = [(lo, min(lo + chunk, trials)) for lo in range(0, trials, chunk)]
    jobs = [job_base + (lo, hi) for lo, hi in bounds]
    if threads <= 1:
        results = [fn(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(fn, jobs))
    merged = []
    for r in results:
        merged.extend(r)
    return merged


def estimate_arl(pair, det_spec, threshold_b, trials, master_seed,
                 max_len=100_000, threads=1, seed_path=(), nominal_length=10_000):
    """Empirical average run length over pre-change-only streams."""
    if trials < 2:
        raise ValueError("need at least two trials")
    job = (pair, det_spec, threshold_b, max_len, nominal_length, master_seed, tuple(seed_path))
    rows = _run_chunks(_arl_chunk, job, trials, threads)
    taus = np.array([t for t, _ in rows], dtype=float)
    censored = sum(1 for _, c in rows if c)
    return ArlEstimate(
        mean=float(taus.mean()),
        se=float(taus.std(ddof=1) / math.sqrt(trials)),
        censored=censored,
    )


def estimate_cadd(pair, det_spec, threshold_b, nu, trials, master_seed,
                  length=10_000, threads=1, seed_path=()):
    """Empirical conditional detection delay E[tau - nu | tau >= nu]."""
    if trials < 2:
        raise ValueError("need at least two trials")
    job = (pair, det_spec, threshold_b, nu, length, master_seed, tuple(seed_path))
    rows = _run_chunks(_cadd_chunk, job, trials, threads)
    delays = np.array([d for status, d in rows if status != "discarded"], dtype=float)
    discarded = sum(1 for status, _ in rows if status == "discarded")
    censored = sum(1 for status, _ in rows if status == "censored")
    if delays.size == 0:
        raise EstimationError(
            "every trial alarmed before the change point; use a larger threshold")
    se = float(delays.std(ddof=1) / math.sqrt(delays.size)) if delays.size > 1 else math.inf
    return CaddEstimate(mean=float(delays.mean()), se=se,
                        discarded=discarded, censored=censored)


@dataclass(frozen=True)
class SweepRow:
    """One (detector, threshold) cell of a sweep, ready for CSV emission."""

    detector: str
    threshold_b: float
    arl_mean: float
    arl_se: float
    cadd_mean: float
    cadd_se: float
    trials: int
    censored: int
    discarded: int
    predicted_cadd: float
    arl_bound: float


def sweep(pair, det_specs, thresholds, trials, master_seed,
          nu=500, length=10_000, max_len=100_000, threads=1, on_row=None):
    """One SweepRow per (detector, threshold); deterministic given master_seed.

    ``on_row`` is called with each finished row, which lets callers flush
    partial output when interrupted.
    """
    det_specs = list(det_specs)
    thresholds = list(thresholds)
    if not det_specs:
        raise ValueError("need at least one detector")
    if not thresholds:
        raise ValueError("need at least one threshold")
    kl = pair.analytic_kl(POST_VS_PRE)
    rows = []
    row_index = 0
    for spec in det_specs:
        for b in thresholds:
            arl = estimate_arl(pair, spec, b, trials, master_seed,
                               max_len=max_len, threads=threads,
                               seed_path=(row_index,), nominal_length=length)
            cadd = estimate_cadd(pair, spec, b, nu, trials, master_seed,
                                 length=length, threads=threads,
                                 seed_path=(row_index,))
            if spec.kind == "scusum" or kl is None:
                prediction = math.nan
            else:
                gamma = spec.gamma if spec.kind == "lpa" else 1.0
                prediction = b / (gamma * kl)
            row = SweepRow(
                detector=spec.id,
                threshold_b=float(b),
                arl_mean=arl.mean,
                arl_se=arl.se,
                cadd_mean=cadd.mean,
                cadd_se=cadd.se,
                trials=int(trials),
                censored=arl.censored + cadd.censored,
                discarded=cadd.discarded,
                predicted_cadd=prediction,
                arl_bound=arl_lower_bound(b),
            )
            rows.append(row)
            if on_row is not None:
                on_row(row)
            row_index += 1
    return rows


def _log10(x):
    with np.errstate(divide="ignore"):
        return float(np.log10(x))


def write_sweep_csv(rows, path, provenance=None, emit_log10=False):
    """Write sweep rows with the fixed header, preceded by provenance comments."""
    header = list(SWEEP_CSV_HEADER)
    if emit_log10:
        header += ["log10_arl_mean", "log10_cadd_mean"]
    with open(path, "w", newline="") as fh:
        for key, value in (provenance or {}).items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            record = [
                row.detector, repr(row.threshold_b), repr(row.arl_mean), repr(row.arl_se),
                repr(row.cadd_mean), repr(row.cadd_se), row.trials, row.censored,
                row.discarded, repr(row.predicted_cadd), repr(row.arl_bound),
            ]
            if emit_log10:
                record += [repr(_log10(row.arl_mean)), repr(_log10(row.cadd_mean))]
            writer.writerow(record)
