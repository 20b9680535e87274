"""Command-line front end.

All randomness descends from the single ``master_seed`` in the config
(overridable with --seed); every output file is stamped with the resolved
config hash, the seed, and the package version, so re-running with the
same stamp reproduces outputs byte for byte.

Seed layout: the sweep derives per-trial generators inside the harness;
the remaining subcommands use fixed purpose tags (calibrate=10,
estimate-z=11, run stream=master itself, run detector k=13/k,
selfcheck=14, delta calibration=15).
"""

from __future__ import annotations

import csv
import json
import math
import os
import sys

import click
import numpy as np

from . import __version__
from .calibrate import CalibrationResult, calibrate_pair, scusum_delta
from .config import parse_config
from .detect import run_detector
from .errors import ConfigError, TicusumError
from .harness import StreamSpec, generate_stream, sweep as run_sweep, write_sweep_csv
from .partition import make_oracle, pair_variance_bound
from .selfcheck import run_selfcheck


def _derived_rng(master_seed, *path):
    return np.random.default_rng(np.random.SeedSequence([master_seed, *path]))


class _Context:
    def __init__(self, config_path, overrides):
        self.config_path = config_path
        self.overrides = overrides
        self._config = None

    def config(self):
        if self._config is None:
            if self.config_path is None:
                raise click.UsageError("this command needs --config")
            try:
                self._config = parse_config(self.config_path, self.overrides)
            except ConfigError as exc:
                raise click.ClickException(str(exc)) from exc
        return self._config


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="YAML run configuration.")
@click.option("--seed", type=int, default=None, help="Override master_seed.")
@click.option("--trials", type=int, default=None, help="Override trial count.")
@click.option("--threads", type=int, default=None, help="Override worker count.")
@click.option("--output-dir", envvar="TICUSUM_OUTPUT_DIR", default=None,
              help="Override output directory (env: TICUSUM_OUTPUT_DIR).")
@click.version_option(__version__)
@click.pass_context
def main(ctx, config_path, seed, trials, threads, output_dir):
    """Sequential change detection for unnormalized models."""
    ctx.obj = _Context(config_path, {
        "seed": seed, "trials": trials, "threads": threads, "output_dir": output_dir,
    })


def _provenance(cfg):
    return {"config_hash": cfg.hash, "master_seed": cfg.master_seed, "version": __version__}


def _out_path(cfg, name, override=None):
    if override:
        return override
    os.makedirs(cfg.output_dir, exist_ok=True)
    return os.path.join(cfg.output_dir, name)


def _artifact_path(cfg, override=None):
    return override or os.path.join(cfg.output_dir, "calibration.json")


def _load_artifact(cfg, path):
    """Read a persisted calibration artifact; never recomputes."""
    needs_gamma = any(d.gamma == "calibrated" for d in cfg.detectors)
    needs_delta = any(d.delta == "calibrated" for d in cfg.detectors)
    if not needs_gamma and not needs_delta:
        return None, None
    if not os.path.exists(path):
        raise click.ClickException(
            f"calibration artifact {path!r} not found; run `ticusum calibrate` first")
    with open(path) as fh:
        data = json.load(fh)
    calibration = CalibrationResult.from_dict(data["calibration"]) if data.get("calibration") else None
    delta = data.get("scusum_delta")
    if needs_gamma and calibration is None:
        raise click.ClickException(f"artifact {path!r} has no gamma calibration")
    if needs_delta and delta is None:
        raise click.ClickException(f"artifact {path!r} has no scusum delta")
    return calibration, delta


@main.command()
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Artifact path (default: <output_dir>/calibration.json).")
@click.pass_obj
def calibrate(obj, out_path):
    """Calibrate gamma for the configured oracle and persist the result."""
    cfg = obj.config()
    rng = _derived_rng(cfg.master_seed, 10)
    try:
        result = calibrate_pair(
            cfg.pair, i=cfg.oracle_i, rng=rng, oracle_mode=cfg.oracle_mode,
            epsilon_fraction=cfg.epsilon_fraction, pilot_draws=cfg.pilot_draws,
            condition_draws=cfg.condition_draws, importance_k=cfg.importance_k)
    except TicusumError as exc:
        raise click.ClickException(str(exc)) from exc
    artifact = {"provenance": _provenance(cfg), "calibration": result.to_dict(),
                "scusum_delta": None, "scusum_delta_note": None}
    if any(d.kind == "scusum" for d in cfg.detectors):
        ds = scusum_delta(cfg.pair, cfg.condition_draws, _derived_rng(cfg.master_seed, 15))
        artifact["scusum_delta"] = ds.delta
        artifact["scusum_delta_note"] = ds.note
        click.echo(f"scusum delta  = {ds.delta:.6f}" + (f"  ({ds.note})" if ds.note else ""))
    path = _artifact_path(cfg, out_path)
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as fh:
        json.dump(artifact, fh, indent=2, sort_keys=True)
        fh.write("\n")
    click.echo(f"gamma0        = {result.gamma0:.6f}" + ("  (clamped)" if result.clamped else ""))
    click.echo(f"sigma2_hat    = {result.sigma2_hat:.6f}")
    click.echo(f"kl_hat        = {result.kl_hat:.6f}"
               + ("  (analytic)" if result.kl_is_analytic else "  (estimated)"))
    click.echo(f"epsilon       = {result.epsilon:.6f}")
    click.echo(f"i             = {result.i}")
    click.echo(f"condition     = {'passed' if result.condition.passed else 'FAILED'} "
               f"(estimate {result.condition.estimate:.6f}, "
               f"1+3se {1 + 3 * result.condition.std_error:.6f})")
    click.echo(f"artifact      = {path}")
    if not result.condition.passed:
        sys.exit(1)


@main.command(name="estimate-z")
@click.option("--mode", type=click.Choice(["exact_path", "importance", "naive1", "naive2",
                                           "constant"]), default=None,
              help="Oracle mode (default: config oracle.mode).")
@click.option("--draws", type=int, default=100_000, show_default=True)
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="CSV path (default: <output_dir>/estimate_z.csv).")
@click.option("--figure/--no-figure", default=True, show_default=True)
@click.pass_obj
def estimate_z(obj, mode, draws, out_path, figure):
    """Estimate log(Z0/Z1) and report mean, SE, analytic value, and the variance bound."""
    cfg = obj.config()
    pair = cfg.pair
    mode = mode or cfg.oracle_mode
    rng = _derived_rng(cfg.master_seed, 11)
    try:
        oracle = make_oracle(pair, mode, rng=rng, importance_k=cfg.importance_k,
                             n_mc=draws)
        values = oracle.draw_values(rng, draws)
    except TicusumError as exc:
        raise click.ClickException(str(exc)) from exc
    mean = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(draws)) if draws > 1 else math.inf
    analytic = pair.analytic_log_z_ratio()
    bound = pair_variance_bound(pair)
    passed = None
    if analytic is not None:
        passed = abs(mean - analytic) <= 3 * se
    click.echo(f"model        = {pair.name}")
    click.echo(f"mode         = {mode}")
    click.echo(f"draws        = {draws}")
    click.echo(f"mean         = {mean:.6f}")
    click.echo(f"std_error    = {se:.6f}")
    click.echo(f"analytic     = {'n/a' if analytic is None else f'{analytic:.6f}'}")
    click.echo(f"var_bound    = {'n/a' if bound is None else f'{bound:.6f}'}")
    click.echo(f"sample_var   = {float(values.var(ddof=1)):.6f}")
    if passed is not None:
        click.echo(f"within_3se   = {'pass' if passed else 'FAIL'}")
    if pair.approximate_path_sampler:
        click.echo("caveat       = path draws come from an approximate (Metropolis) sampler")
    path = _out_path(cfg, "estimate_z.csv", out_path)
    with open(path, "w", newline="") as fh:
        for key, value in _provenance(cfg).items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        writer.writerow(["mode", "n", "mean", "se", "analytic", "theorem4_bound", "pass_3se"])
        writer.writerow([mode, draws, repr(mean), repr(se),
                         "" if analytic is None else repr(float(analytic)),
                         "" if bound is None else repr(float(bound)),
                         "" if passed is None else str(passed).lower()])
    click.echo(f"csv          = {path}")
    if figure:
        from .figures import zreport_figure
        fig_path = os.path.splitext(path)[0] + ".png"
        zreport_figure(values, analytic, mean, fig_path)
        click.echo(f"figure       = {fig_path}")
    if passed is False:
        sys.exit(1)


@main.command()
@click.option("--threshold", "threshold_b", type=float, default=None,
              help="Stopping threshold b (default: config run.threshold_b).")
@click.option("--calibration", "calibration_path", type=click.Path(), default=None)
@click.option("--trace", is_flag=True, help="Dump per-step statistic traces to CSV.")
@click.pass_obj
def run(obj, threshold_b, calibration_path, trace):
    """Run every configured detector once over a generated stream."""
    cfg = obj.config()
    b = threshold_b if threshold_b is not None else cfg.run_threshold_b
    calibration, delta = _load_artifact(cfg, _artifact_path(cfg, calibration_path))
    try:
        specs = cfg.detector_specs(calibration, delta)
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from exc
    stream = generate_stream(cfg.pair, StreamSpec(
        change_point=cfg.change_point, length=cfg.stream_length, seed=cfg.master_seed))
    nu = cfg.change_point
    click.echo(f"stream: length={cfg.stream_length} change_point={nu or 'never'} "
               f"threshold_b={b:.4f}")
    for idx, spec in enumerate(specs):
        rng = _derived_rng(cfg.master_seed, 13, idx)
        detector = spec.build(cfg.pair, rng, cfg.stream_length)
        result = run_detector(detector, stream, b, rng, collect_trace=trace)
        if trace:
            report, stats, incs = result
        else:
            report = result
        if report.censored:
            status = f"censored at {report.steps}"
        elif nu is not None and report.stop_time < nu:
            status = f"false alarm at {report.stop_time}"
        elif nu is not None:
            status = f"alarm at {report.stop_time} (delay {report.stop_time - nu})"
        else:
            status = f"alarm at {report.stop_time}"
        click.echo(f"  {spec.id:<12} {status}")
        if trace:
            path = _out_path(cfg, f"trace_{spec.id}.csv")
            with open(path, "w", newline="") as fh:
                for key, value in _provenance(cfg).items():
                    fh.write(f"# {key}={value}\n")
                writer = csv.writer(fh)
                writer.writerow(["n", "statistic", "increment"])
                for n, (s, inc) in enumerate(zip(stats, incs), start=1):
                    writer.writerow([n, repr(float(s)), repr(float(inc))])
            click.echo(f"               trace -> {path}")


@main.command()
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="CSV path (default: <output_dir>/sweep.csv).")
@click.option("--calibration", "calibration_path", type=click.Path(), default=None)
@click.option("--figure/--no-figure", default=None,
              help="Render the delay-vs-run-length figure next to the CSV.")
@click.pass_obj
def sweep(obj, out_path, calibration_path, figure):
    """Estimate ARL and CADD for every (detector, threshold) and emit CSV."""
    cfg = obj.config()
    if not cfg.sweep_thresholds:
        raise click.ClickException("config has no sweep.thresholds")
    calibration, delta = _load_artifact(cfg, _artifact_path(cfg, calibration_path))
    try:
        specs = cfg.detector_specs(calibration, delta)
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from exc
    path = _out_path(cfg, "sweep.csv", out_path)
    rows = []
    truncated = False
    try:
        run_sweep(cfg.pair, specs, cfg.sweep_thresholds, cfg.trials,
                  cfg.master_seed, nu=cfg.change_point or 1,
                  length=cfg.stream_length, max_len=cfg.max_len,
                  threads=cfg.threads, on_row=rows.append)
    except KeyboardInterrupt:
        truncated = True
    provenance = _provenance(cfg)
    if truncated:
        provenance = dict(provenance, truncated="true")
    write_sweep_csv(rows, path, provenance=provenance, emit_log10=cfg.emit_log10)
    click.echo(f"{'detector':<12} {'b':>8} {'arl':>12} {'cadd':>10} {'pred':>10}")
    for row in rows:
        click.echo(f"{row.detector:<12} {row.threshold_b:>8.4f} "
                   f"{row.arl_mean:>12.1f} {row.cadd_mean:>10.2f} {row.predicted_cadd:>10.2f}")
    click.echo(f"csv    = {path}")
    use_figure = cfg.figure if figure is None else figure
    if use_figure and rows:
        from .figures import sweep_figure
        fig_path = os.path.splitext(path)[0] + ".png"
        sweep_figure(rows, fig_path)
        click.echo(f"figure = {fig_path}")
    if truncated:
        click.echo("interrupted: partial CSV written with a truncation marker", err=True)
        sys.exit(130)


@main.command()
@click.pass_obj
def selfcheck(obj):
    """Run the built-in invariant suites and print one pass/fail line each."""
    master_seed = 42
    if obj.config_path is not None:
        master_seed = obj.config().master_seed
    if obj.overrides.get("seed") is not None:
        master_seed = obj.overrides["seed"]
    results = run_selfcheck(master_seed)
    first_failure = None
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        click.echo(f"{status}  {res.name}  ({res.detail})")
        if not res.passed and first_failure is None:
            first_failure = res.name
    if first_failure is not None:
        click.echo(f"FAILED: {first_failure}", err=True)
        sys.exit(1)
    click.echo("all checks passed")


if __name__ == "__main__":
    main()
