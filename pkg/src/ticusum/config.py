"""Run configuration: YAML schema, validation, and hashing.

Validation is all-at-once: every problem found is collected and reported
together, including capability mismatches between the chosen model and
the requested detectors/oracle, so a config is fixed in one pass.

The resolved config (defaults materialized, CLI overrides applied) is
hashed and stamped into every output file; re-running with the same hash
and master seed reproduces outputs bitwise.
"""

from __future__ import annotations

import hashlib
import importlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import yaml

from .errors import ConfigError
from .harness import DetectorSpec
from .models import BoltzmannPair, GaussianPair, get_pair

__all__ = ["RunConfig", "parse_config", "config_hash"]

_TOP_KEYS = {"master_seed", "model", "trials", "threads", "output_dir",
             "oracle", "calibration", "stream", "run", "detectors", "sweep"}
_ORACLE_KEYS = {"mode", "i", "importance_k"}
_CALIBRATION_KEYS = {"epsilon_fraction", "pilot_draws", "condition_draws"}
_STREAM_KEYS = {"change_point", "length", "max_len"}
_RUN_KEYS = {"threshold_b"}
_DETECTOR_KEYS = {"id", "kind", "gamma", "i", "oracle_mode", "importance_k",
                  "delta", "n_mc"}
_SWEEP_KEYS = {"thresholds", "emit_log10", "figure"}
_ORACLE_MODES = {"exact_path", "importance", "constant"}
_DETECTOR_KINDS = {"cusum", "lpa", "scusum", "naive1", "naive2"}


@dataclass
class DetectorConfig:
    """One detector entry; gamma/delta may be the literal string 'calibrated'."""

    id: str
    kind: str
    gamma: object = 1.0
    i: Optional[int] = None
    oracle_mode: Optional[str] = None
    importance_k: Optional[int] = None
    delta: object = None
    n_mc: Optional[int] = None


@dataclass
class RunConfig:
    master_seed: int
    model: object
    pair: object
    trials: int
    threads: int
    output_dir: str
    oracle_mode: str
    oracle_i: int
    importance_k: int
    epsilon_fraction: float
    pilot_draws: int
    condition_draws: int
    change_point: Optional[int]
    stream_length: int
    max_len: int
    run_threshold_b: float
    detectors: list
    sweep_thresholds: Optional[list]
    emit_log10: bool
    figure: bool
    resolved: dict = field(repr=False, default_factory=dict)

    @property
    def hash(self):
        return config_hash(self.resolved)

    def detector_specs(self, calibration=None, scusum_delta=None):
        """Resolve detector configs into picklable specs.

        ``calibration`` supplies gamma for entries marked 'calibrated';
        ``scusum_delta`` likewise for delta.  Raises when a calibrated
        value is needed but not provided.
        """
        specs = []
        for det in self.detectors:
            gamma = det.gamma
            if gamma == "calibrated":
                if calibration is None:
                    raise ConfigError([f"detector {det.id!r} needs a calibration artifact "
                                       f"for gamma; run the calibrate command first"])
                gamma = calibration.gamma0
            delta = det.delta
            if delta == "calibrated":
                if scusum_delta is None:
                    raise ConfigError([f"detector {det.id!r} needs a calibration artifact "
                                       f"for delta; run the calibrate command first"])
                delta = scusum_delta
            specs.append(DetectorSpec(
                id=det.id,
                kind=det.kind,
                gamma=float(gamma),
                i=det.i if det.i is not None else self.oracle_i,
                oracle_mode=det.oracle_mode or self.oracle_mode,
                importance_k=det.importance_k or self.importance_k,
                delta=None if delta is None else float(delta),
                n_mc=det.n_mc,
            ))
        return specs


def config_hash(resolved):
    canon = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _expect(table, allowed, where, errors):
    for key in table:
        if key not in allowed:
            errors.append(f"{where}: unknown key {key!r}")


def _get_int(table, key, default, where, errors, minimum=None):
    value = table.get(key, default)
    if not isinstance(value, int) or isinstance(value, bool):
        errors.append(f"{where}.{key}: expected an integer, got {value!r}")
        return default
    if minimum is not None and value < minimum:
        errors.append(f"{where}.{key}: must be >= {minimum}, got {value}")
        return default
    return value


def _get_float(table, key, default, where, errors, positive=False):
    value = table.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        errors.append(f"{where}.{key}: expected a number, got {value!r}")
        return default
    value = float(value)
    if positive and value <= 0:
        errors.append(f"{where}.{key}: must be positive, got {value}")
        return default
    return value


def _build_pair(model, errors):
    if isinstance(model, str):
        try:
            return get_pair(model)
        except ValueError as exc:
            errors.append(f"model: {exc}")
            return None
    if not isinstance(model, dict):
        errors.append(f"model: expected a name or a mapping, got {model!r}")
        return None
    kind = model.get("kind")
    try:
        if kind == "boltzmann":
            _expect(model, {"kind", "t_pre", "t_post"}, "model", errors)
            return BoltzmannPair(model.get("t_pre", 1.0), model.get("t_post", 1.2))
        if kind == "gaussian":
            _expect(model, {"kind", "mu_pre", "sigma_pre", "mu_post", "sigma_post", "name"},
                    "model", errors)
            return GaussianPair(
                np.asarray(model["mu_pre"], dtype=float),
                np.asarray(model["sigma_pre"], dtype=float),
                np.asarray(model["mu_post"], dtype=float),
                np.asarray(model["sigma_post"], dtype=float),
                name=model.get("name", "gaussian"),
            )
        if kind == "python":
            _expect(model, {"kind", "factory"}, "model", errors)
            target = model.get("factory", "")
            mod_name, _, attr = target.partition(":")
            if not mod_name or not attr:
                errors.append(f"model.factory: expected 'module:callable', got {target!r}")
                return None
            factory = getattr(importlib.import_module(mod_name), attr)
            return factory()
        errors.append(f"model.kind: expected boltzmann, gaussian, or python, got {kind!r}")
    except ConfigError:
        raise
    except Exception as exc:
        errors.append(f"model: could not build pair: {exc}")
    return None


def _capability_errors(pair, detectors, oracle_mode, change_point):
    errors = []
    caps = pair.capabilities
    if not caps.exact_pre_sampler:
        errors.append("model: harness runs need an exact pre-change sampler")
    if change_point is not None and not caps.exact_post_sampler:
        errors.append("model: streams with a change point need an exact post-change sampler")
    needs = {
        "cusum": ("analytic_log_z_ratio", "exact log-likelihood ratios"),
        "scusum": ("analytic_score", "Hyvarinen scores"),
        "naive1": ("exact_pre_sampler", "pre-change sampling"),
        "naive2": ("exact_post_sampler", "post-change sampling"),
    }
    mode_needs = {
        "exact_path": ("exact_path_sampler", "a path sampler"),
        "importance": ("exact_pre_sampler", "pre-change sampling"),
        "constant": ("analytic_log_z_ratio", "an analytic log(Z0/Z1)"),
    }
    for idx, det in enumerate(detectors):
        where = f"detectors[{idx}]"
        if det.kind in needs:
            flag, what = needs[det.kind]
            if not getattr(caps, flag):
                errors.append(f"{where}: {det.kind} needs {what}, which model "
                              f"{pair.name!r} does not provide")
        if det.kind == "lpa":
            mode = det.oracle_mode or oracle_mode
            flag, what = mode_needs[mode]
            if not getattr(caps, flag):
                errors.append(f"{where}: oracle mode {mode!r} needs {what}, which model "
                              f"{pair.name!r} does not provide")
    return errors


def parse_config(path, overrides=None):
    """Parse and validate a YAML config; raises ConfigError listing every problem."""
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(["top level: expected a mapping"])
    errors = []
    _expect(raw, _TOP_KEYS, "top level", errors)
    overrides = overrides or {}

    master_seed = raw.get("master_seed", 42)
    if "seed" in overrides and overrides["seed"] is not None:
        master_seed = overrides["seed"]
    if not isinstance(master_seed, int) or isinstance(master_seed, bool):
        errors.append(f"master_seed: expected an integer, got {master_seed!r}")
        master_seed = 42

    trials = _get_int(raw, "trials", 100, "top level", errors, minimum=2)
    if overrides.get("trials") is not None:
        trials = overrides["trials"]
    threads = _get_int(raw, "threads", 1, "top level", errors, minimum=1)
    if overrides.get("threads") is not None:
        threads = overrides["threads"]
    output_dir = raw.get("output_dir", "out")
    if overrides.get("output_dir") is not None:
        output_dir = overrides["output_dir"]

    oracle = raw.get("oracle", {}) or {}
    _expect(oracle, _ORACLE_KEYS, "oracle", errors)
    oracle_mode = oracle.get("mode", "exact_path")
    if oracle_mode not in _ORACLE_MODES:
        errors.append(f"oracle.mode: expected one of {sorted(_ORACLE_MODES)}, got {oracle_mode!r}")
        oracle_mode = "exact_path"
    oracle_i = _get_int(oracle, "i", 100, "oracle", errors, minimum=1)
    importance_k = _get_int(oracle, "importance_k", 1000, "oracle", errors, minimum=1)

    calibration = raw.get("calibration", {}) or {}
    _expect(calibration, _CALIBRATION_KEYS, "calibration", errors)
    epsilon_fraction = _get_float(calibration, "epsilon_fraction", 0.05, "calibration", errors,
                                  positive=True)
    pilot_draws = _get_int(calibration, "pilot_draws", 10_000, "calibration", errors, minimum=2)
    condition_draws = _get_int(calibration, "condition_draws", 100_000, "calibration", errors,
                               minimum=2)

    stream = raw.get("stream", {}) or {}
    _expect(stream, _STREAM_KEYS, "stream", errors)
    change_point = stream.get("change_point", 500)
    if change_point == "never":
        change_point = None
    elif change_point is not None and (not isinstance(change_point, int)
                                       or isinstance(change_point, bool) or change_point < 1):
        errors.append(f"stream.change_point: expected a positive integer or 'never', "
                      f"got {change_point!r}")
        change_point = 500
    stream_length = _get_int(stream, "length", 10_000, "stream", errors, minimum=1)
    max_len = _get_int(stream, "max_len", 100_000, "stream", errors, minimum=1)
    if change_point is not None and change_point > stream_length:
        errors.append("stream.change_point: cannot exceed stream.length")

    run_table = raw.get("run", {}) or {}
    _expect(run_table, _RUN_KEYS, "run", errors)
    run_threshold_b = _get_float(run_table, "threshold_b", math.log(200.0), "run", errors,
                                 positive=True)

    detector_entries = raw.get("detectors", [])
    if not isinstance(detector_entries, list) or not detector_entries:
        errors.append("detectors: expected a non-empty list")
        detector_entries = []
    detectors = []
    seen_ids = set()
    for idx, entry in enumerate(detector_entries):
        where = f"detectors[{idx}]"
        if not isinstance(entry, dict):
            errors.append(f"{where}: expected a mapping")
            continue
        _expect(entry, _DETECTOR_KEYS, where, errors)
        det_id = entry.get("id")
        if not isinstance(det_id, str) or not det_id:
            errors.append(f"{where}.id: expected a non-empty string")
            det_id = f"detector{idx}"
        if det_id in seen_ids:
            errors.append(f"{where}.id: duplicate detector id {det_id!r}")
        seen_ids.add(det_id)
        kind = entry.get("kind")
        if kind not in _DETECTOR_KINDS:
            errors.append(f"{where}.kind: expected one of {sorted(_DETECTOR_KINDS)}, got {kind!r}")
            continue
        gamma = entry.get("gamma", 1.0)
        if gamma != "calibrated" and (isinstance(gamma, bool)
                                      or not isinstance(gamma, (int, float))
                                      or not 0 < float(gamma) <= 1):
            errors.append(f"{where}.gamma: expected a number in (0, 1] or 'calibrated', "
                          f"got {gamma!r}")
            gamma = 1.0
        delta = entry.get("delta")
        if delta is not None and delta != "calibrated" and (
                isinstance(delta, bool) or not isinstance(delta, (int, float))):
            errors.append(f"{where}.delta: expected a number or 'calibrated', got {delta!r}")
            delta = None
        if kind == "scusum" and delta is None:
            errors.append(f"{where}.delta: scusum needs delta (a number or 'calibrated')")
        det_mode = entry.get("oracle_mode")
        if det_mode is not None and det_mode not in _ORACLE_MODES:
            errors.append(f"{where}.oracle_mode: expected one of {sorted(_ORACLE_MODES)}, "
                          f"got {det_mode!r}")
            det_mode = None
        detectors.append(DetectorConfig(
            id=det_id, kind=kind, gamma=gamma,
            i=entry.get("i"), oracle_mode=det_mode,
            importance_k=entry.get("importance_k"),
            delta=delta, n_mc=entry.get("n_mc"),
        ))

    sweep_table = raw.get("sweep", {}) or {}
    _expect(sweep_table, _SWEEP_KEYS, "sweep", errors)
    thresholds = sweep_table.get("thresholds")
    if thresholds is not None:
        if (not isinstance(thresholds, list) or not thresholds
                or not all(isinstance(b, (int, float)) and not isinstance(b, bool) and b > 0
                           for b in thresholds)):
            errors.append("sweep.thresholds: expected a non-empty list of positive numbers")
            thresholds = None
        else:
            thresholds = [float(b) for b in thresholds]
    emit_log10 = bool(sweep_table.get("emit_log10", False))
    figure = bool(sweep_table.get("figure", True))

    pair = _build_pair(raw.get("model", "boltzmann"), errors)
    if pair is not None:
        errors.extend(_capability_errors(pair, detectors, oracle_mode, change_point))

    if errors:
        raise ConfigError(errors)

    resolved = {
        "master_seed": master_seed,
        "model": raw.get("model", "boltzmann"),
        "trials": trials,
        "threads": threads,
        "oracle": {"mode": oracle_mode, "i": oracle_i, "importance_k": importance_k},
        "calibration": {"epsilon_fraction": epsilon_fraction, "pilot_draws": pilot_draws,
                        "condition_draws": condition_draws},
        "stream": {"change_point": change_point, "length": stream_length, "max_len": max_len},
        "run": {"threshold_b": run_threshold_b},
        "detectors": [
            {"id": d.id, "kind": d.kind, "gamma": d.gamma, "i": d.i,
             "oracle_mode": d.oracle_mode, "importance_k": d.importance_k,
             "delta": d.delta, "n_mc": d.n_mc}
            for d in detectors
        ],
        "sweep": {"thresholds": thresholds, "emit_log10": emit_log10, "figure": figure},
    }
    return RunConfig(
        master_seed=master_seed,
        model=raw.get("model", "boltzmann"),
        pair=pair,
        trials=trials,
        threads=threads,
        output_dir=str(output_dir),
        oracle_mode=oracle_mode,
        oracle_i=oracle_i,
        importance_k=importance_k,
        epsilon_fraction=epsilon_fraction,
        pilot_draws=pilot_draws,
        condition_draws=condition_draws,
        change_point=change_point,
        stream_length=stream_length,
        max_len=max_len,
        run_threshold_b=run_threshold_b,
        detectors=detectors,
        sweep_thresholds=thresholds,
        emit_log10=emit_log10,
        figure=figure,
        resolved=resolved,
    )
