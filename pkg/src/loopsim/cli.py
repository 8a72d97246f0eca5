"""Command-line entry point: ``loopsim <subcommand> [options]``.

Exit status is 0 on success, 1 on configuration/validation errors and 2 on
runtime errors.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import SimulationConfig, default_config, load_config
from .errors import ConfigError, LoopSimError, ValidationError
from .hidden_variables import DetectorSpec, noise_timescale
from .loop_experiment import simulate
from .output import (
    atomic_write,
    analysis_bundle,
    analyze_files,
    detector_series,
    dumps_json,
    emit_results,
)
from .rng import MASK64, derive_seed
from .stats_analysis import (
    autocorrelation_estimate,
    compare_distributions,
    ensemble_summary,
    power_analysis,
    series_summary,
)

OUT_ENV = "LOOPSIM_OUT"


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value <= MASK64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _formats(text: str) -> tuple[str, ...]:
    return tuple(f.strip() for f in text.split(",") if f.strip())


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="config file (INI); defaults when omitted")
    p.add_argument("--seed", type=_u64, help="master seed (overrides [run] seed)")
    p.add_argument("--trials", type=int, help="trials per arm (overrides [run] trials)")
    p.add_argument("--out", type=Path, help=f"output directory (default: ${OUT_ENV} or [output] dir)")
    p.add_argument("--format", type=_formats, help="comma-separated subset of csv,json")
    p.add_argument("--threads", type=int, default=1, help="worker threads; never changes results")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="loopsim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a campaign and write ensemble + summary")
    _common(p)

    p = sub.add_parser("sweep", help="run the [sweep] section, one row per point")
    _common(p)

    p = sub.add_parser("power", help="Monte Carlo power analysis from the [power] section")
    _common(p)
    p.add_argument("--alpha-alt", type=float)
    p.add_argument("--significance", type=float)
    p.add_argument("--power-target", type=float)
    p.add_argument("--grid", help="comma-separated trial counts")
    p.add_argument("--replicates", type=int)

    p = sub.add_parser("analyze", help="recompute statistics from stored ensemble CSVs")
    p.add_argument("ensembles", nargs="+", type=Path)
    p.add_argument("--out", type=Path, help="write summary JSON here instead of stdout")

    p = sub.add_parser("estimate-tau-tilde", help="print the detector noise timescale")
    p.add_argument("--band-gap-ev", type=float, required=True)
    p.add_argument("--temperature-k", type=float, required=True)
    p.add_argument("--atoms", type=float, required=True)
    p.add_argument("--recomb-ns", type=float, required=True)
    return parser


def _load(args) -> SimulationConfig:
    cfg = load_config(args.config) if args.config else default_config()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.trials is not None:
        if args.trials < 0:
            raise ValidationError("--trials must be >= 0")
        overrides["trials"] = args.trials
    return cfg.with_values(**overrides) if overrides else cfg


def _out_dir(args, cfg: SimulationConfig) -> Path:
    if args.out is not None:
        return args.out
    return Path(os.environ.get(OUT_ENV) or cfg.output_dir)


def _threads(args) -> int:
    if args.threads < 1:
        raise ValidationError("--threads must be >= 1")
    return args.threads


def cmd_simulate(args) -> int:
    cfg = _load(args)
    threads = _threads(args)
    formats = args.format or cfg.formats
    ensembles = {
        model: simulate(cfg.experiment(model), cfg.trials, cfg.master_seed, threads=threads,
                        fingerprint=cfg.fingerprint())
        for model in cfg.models
    }
    bundle = analysis_bundle(cfg, ensembles, cfg.master_seed)
    for path in emit_results(cfg, ensembles, bundle, formats, _out_dir(args, cfg), cfg.master_seed):
        print(path)
    return 0


def sweep_rows(cfg: SimulationConfig, threads: int = 1) -> list[dict]:
    spec = cfg.sweep_spec()
    arm = "qm" if cfg.model == "qm" else "sdhv"
    rows = []
    for i, value in enumerate(spec.values):
        point = cfg.with_override(spec.parameter, repr(float(value)))
        seed = derive_seed(cfg.master_seed, "sweep", i)
        ens = simulate(point.experiment(arm), spec.trials, seed, threads=threads,
                       fingerprint=point.fingerprint())
        ref = simulate(point.experiment("qm"), spec.trials, derive_seed(seed, "qm-reference"),
                       threads=threads, fingerprint=point.fingerprint())
        summary = ensemble_summary(ens)
        values, dt = detector_series(point, arm, seed)
        try:
            fit = series_summary(autocorrelation_estimate(values, point.max_lag), dt, point.fit_floor)
        except ValueError:
            fit = {"tau_hat_s": None}
        ks = compare_distributions(ens, ref) if len(ens) and len(ref) else None
        rows.append({
            "parameter_value": float(value),
            "mean_exit_time_s": summary["mean_exit_time_s"],
            "mean_exit_time_stderr_s": summary["mean_exit_time_stderr_s"],
            "mean_exit_loops": summary["mean_exit_loops"],
            "tau_hat_s": fit["tau_hat_s"],
            "ks_p_vs_qm": ks.p_value if ks else None,
            "fingerprint": point.fingerprint(),
        })
    return rows


def cmd_sweep(args) -> int:
    cfg = _load(args)
    rows = sweep_rows(cfg, _threads(args))
    spec = cfg.sweep_spec()
    out = _out_dir(args, cfg)
    cols = list(rows[0])
    lines = [f"# sweep parameter={spec.parameter}", f"# master_seed={cfg.master_seed}",
             f"# trials_per_point={spec.trials}", f"# base_fingerprint={cfg.fingerprint()}"]
    lines += [f"# config.{s}.{k}={v}" for s, kv in cfg.echo().items() for k, v in kv.items()]
    lines.append(",".join(cols))
    for row in rows:
        lines.append(",".join("" if row[c] is None else (repr(row[c]) if isinstance(row[c], float)
                                                         else str(row[c])) for c in cols))
    formats = args.format or cfg.formats
    if "csv" in formats:
        print(atomic_write(out / "sweep.csv", "\n".join(lines) + "\n"))
    if "json" in formats:
        doc = {"parameter": spec.parameter, "master_seed": cfg.master_seed,
               "trials_per_point": spec.trials, "config": cfg.echo(), "rows": rows}
        print(atomic_write(out / "sweep.json", dumps_json(doc)))
    return 0


def cmd_power(args) -> int:
    cfg = _load(args)
    spec = cfg.power_spec()
    grid = [int(float(v)) for v in args.grid.split(",")] if args.grid else list(spec.trial_grid)
    result = power_analysis(
        cfg,
        alpha_alt=spec.alpha_alt if args.alpha_alt is None else args.alpha_alt,
        significance=spec.significance if args.significance is None else args.significance,
        power_target=spec.power_target if args.power_target is None else args.power_target,
        trial_grid=grid,
        replicates=spec.replicates if args.replicates is None else args.replicates,
        threads=_threads(args),
    )
    doc = {"fingerprint": cfg.fingerprint(), "master_seed": cfg.master_seed,
           "config": cfg.echo(), "power": result.to_dict()}
    text = dumps_json(doc)
    formats = args.format or cfg.formats
    if "json" in formats:
        print(atomic_write(_out_dir(args, cfg) / "power.json", text))
    else:
        sys.stdout.write(text)
    return 0


def cmd_analyze(args) -> int:
    doc = analyze_files(args.ensembles)
    text = dumps_json(doc)
    if args.out:
        print(atomic_write(args.out, text))
    else:
        sys.stdout.write(text)
    return 0


def cmd_estimate(args) -> int:
    spec = DetectorSpec(args.band_gap_ev, args.temperature_k, args.atoms, args.recomb_ns * 1e-9)
    print(f"tilde_tau_s={noise_timescale(spec)!r}")
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "power": cmd_power,
    "analyze": cmd_analyze,
    "estimate-tau-tilde": cmd_estimate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for bad usage; that is a validation failure here
        return 1 if exc.code == 2 else int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except (ValidationError, ConfigError) as exc:
        print(f"loopsim: validation error: {exc}", file=sys.stderr)
        return 1
    except (LoopSimError, OSError, json.JSONDecodeError) as exc:
        print(f"loopsim: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
