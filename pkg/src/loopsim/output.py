"""Ensemble/summary serialization and the statistics bundle behind ``simulate``."""
from __future__ import annotations

import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import LoopSimError
from .loop_experiment import EXIT_POINTS, TrialEnsemble
from .quantum_core import expectation
from .hidden_variables import measure_repeatedly
from .rng import RandomStream, derive_seed
from .stats_analysis import (
    autocorrelation_estimate,
    compare_distributions,
    ensemble_summary,
    series_summary,
)

CSV_COLUMNS = ("trial_index", "m", "exit_point", "exit_time_s", "model")
_EXIT_CODE = {name: i for i, name in enumerate(EXIT_POINTS)}


def atomic_write(path: Path, text: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def _header(meta: dict) -> list[str]:
    lines = []
    for key, value in meta.items():
        if isinstance(value, dict):
            for section, keys in value.items():
                for k, v in keys.items():
                    lines.append(f"# {key}.{section}.{k}={v}")
        else:
            lines.append(f"# {key}={value}")
    return lines


def _json_safe(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def dumps_json(obj) -> str:
    return json.dumps(_json_safe(obj), indent=2, sort_keys=False, allow_nan=False) + "\n"


def ensemble_csv(ensemble: TrialEnsemble, config_echo: dict | None = None) -> str:
    meta = {
        "loopsim_ensemble": 1,
        "fingerprint": ensemble.fingerprint,
        "master_seed": ensemble.master_seed,
        "model": ensemble.model,
        "loop_time_s": repr(float(ensemble.loop_time)),
    }
    if config_echo:
        meta["config"] = config_echo
    lines = _header(meta)
    lines.append(",".join(CSV_COLUMNS))
    model = ensemble.model
    lines.extend(
        f"{i},{m},{EXIT_POINTS[e]},{t!r},{model}"
        for i, m, e, t in zip(ensemble.trial_index.tolist(), ensemble.m.tolist(),
                              ensemble.exit_point.tolist(), ensemble.exit_time.tolist())
    )
    return "\n".join(lines) + "\n"


def read_ensemble_csv(path) -> tuple[TrialEnsemble, dict]:
    """Load an ensemble CSV; returns the ensemble and its header metadata."""
    meta: dict = {}
    idx, ms, eps, ts = [], [], [], []
    model = None
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key] = value
                continue
            if not line:
                continue
            fields = line.split(",")
            if tuple(fields) == CSV_COLUMNS:
                continue
            if len(fields) != len(CSV_COLUMNS):
                raise LoopSimError(f"{path}:{lineno}: expected {len(CSV_COLUMNS)} columns")
            try:
                idx.append(int(fields[0]))
                ms.append(int(fields[1]))
                eps.append(_EXIT_CODE[fields[2]])
                ts.append(float(fields[3]))
            except (ValueError, KeyError):
                raise LoopSimError(f"{path}:{lineno}: malformed record {line!r}") from None
            model = fields[4]
    ens = TrialEnsemble(
        model or meta.get("model", ""), idx, ms, eps, ts,
        fingerprint=meta.get("fingerprint", ""),
        master_seed=int(meta.get("master_seed", 0) or 0),
        loop_time=float(meta.get("loop_time_s", "nan")),
    )
    return ens, meta


def histogram_csv(ensemble: TrialEnsemble) -> str:
    lines = _header({"fingerprint": ensemble.fingerprint, "model": ensemble.model})
    lines.append("m,count")
    lines.extend(f"{m},{c}" for m, c in ensemble.histogram().items())
    return "\n".join(lines) + "\n"


def autocorr_csv(corr: np.ndarray, timestep: float, fingerprint: str, model: str) -> str:
    lines = _header({"fingerprint": fingerprint, "model": model, "timestep_s": repr(timestep)})
    lines.append("lag_seconds,corr")
    lines.extend(f"{k * timestep!r},{float(c)!r}" for k, c in enumerate(corr))
    return "\n".join(lines) + "\n"


def read_autocorr_csv(path) -> tuple[np.ndarray, float]:
    corr, timestep = [], None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("# timestep_s="):
                timestep = float(line.split("=", 1)[1])
            elif line and not line.startswith("#") and line != "lag_seconds,corr":
                corr.append(float(line.split(",")[1]))
    if timestep is None:
        raise LoopSimError(f"{path}: missing timestep header")
    return np.array(corr), timestep


def detector_series(config, model: str, seed: int) -> tuple[np.ndarray, float]:
    """Repeated detector-A measurements on the state that returns to A, one per loop.

    Returns the mean-removed outcome values and the timestep.
    """
    exp = config.experiment(model)
    eig_b = config.observable_b.eigensystem
    state = eig_b.eigenvectors[config.stay_outcome_b]
    obs = config.observable_a
    tau = exp.detector_taus[0] if model == "sdhv" else 0.0
    rng = RandomStream(derive_seed(seed, "series", model), 0)
    outcomes = measure_repeatedly(state, obs, config.series_length, tau, exp.loop_time, rng,
                                  outcome_index=config.stay_outcome_a,
                                  n_components=config.hidden_components)
    values = np.asarray(obs.eigensystem.eigenvalues)[outcomes] - expectation(state, obs)
    return values, exp.loop_time


def analysis_bundle(config, ensembles: dict[str, TrialEnsemble], seed: int) -> dict:
    """Statistics for a simulate run: per-model ensemble summary, series fit, KS comparison."""
    bundle = {"models": {}, "series": {}}
    for model, ens in ensembles.items():
        bundle["models"][model] = ensemble_summary(ens)
        values, dt = detector_series(config, model, seed)
        try:
            corr = autocorrelation_estimate(values, config.max_lag)
        except ValueError:
            corr = np.array([1.0])
        bundle["series"][model] = {"corr": corr, "timestep": dt}
    if "qm" in ensembles and "sdhv" in ensembles and len(ensembles["qm"]) and len(ensembles["sdhv"]):
        bundle["comparison"] = compare_distributions(ensembles["qm"], ensembles["sdhv"]).to_dict()
    return bundle


def summary_document(config_echo: dict, fingerprint: str, seed: int, bundle: dict,
                     floor: float) -> dict:
    doc = {
        "fingerprint": fingerprint,
        "master_seed": seed,
        "config": config_echo,
        "models": bundle["models"],
        "decay_fit": {
            model: series_summary(s["corr"], s["timestep"], floor)
            for model, s in bundle.get("series", {}).items()
        },
    }
    if "comparison" in bundle:
        doc["comparison"] = bundle["comparison"]
    return doc


def emit_results(config, ensembles: dict[str, TrialEnsemble], bundle: dict, formats,
                 out_dir, seed: int) -> list[Path]:
    """Write ensemble CSVs, histograms, autocorrelation curves and the JSON summary."""
    out_dir = Path(out_dir)
    echo = config.echo()
    fp = config.fingerprint()
    written = []
    if "csv" in formats:
        for model, ens in ensembles.items():
            written.append(atomic_write(out_dir / f"ensemble_{model}.csv", ensemble_csv(ens, echo)))
            written.append(atomic_write(out_dir / f"histogram_{model}.csv", histogram_csv(ens)))
        for model, s in bundle.get("series", {}).items():
            written.append(atomic_write(out_dir / f"autocorr_{model}.csv",
                                         autocorr_csv(s["corr"], s["timestep"], fp, model)))
    if "json" in formats:
        doc = summary_document(echo, fp, seed, bundle, config.fit_floor)
        written.append(atomic_write(out_dir / "summary.json", dumps_json(doc)))
    return written


def analyze_files(ensemble_paths, floor: float = 0.05) -> dict:
    """Recompute the summary from stored ensemble CSVs (and sibling autocorr files)."""
    ensembles, metas = {}, {}
    for p in ensemble_paths:
        ens, meta = read_ensemble_csv(p)
        ensembles[ens.model or meta.get("model", "")] = ens
        metas[ens.model] = (Path(p), meta)
    fps = {e.fingerprint for e in ensembles.values()}
    if len(fps) > 1:
        raise LoopSimError(f"ensembles come from different configs: {sorted(fps)}")
    bundle = {"models": {m: ensemble_summary(e) for m, e in ensembles.items()}, "series": {}}
    for model, (path, _) in metas.items():
        ac = path.with_name(f"autocorr_{model}.csv")
        if ac.exists():
            corr, dt = read_autocorr_csv(ac)
            bundle["series"][model] = {"corr": corr, "timestep": dt}
    if "qm" in ensembles and "sdhv" in ensembles and len(ensembles["qm"]) and len(ensembles["sdhv"]):
        bundle["comparison"] = compare_distributions(ensembles["qm"], ensembles["sdhv"]).to_dict()
    first_meta = next(iter(metas.values()))[1] if metas else {}
    echo = _echo_from_meta(first_meta)
    floor = float(echo.get("analysis", {}).get("fit_floor", floor))
    fp = next(iter(fps)) if fps else ""
    seed = next(iter(ensembles.values())).master_seed if ensembles else 0
    return summary_document(echo, fp, seed, bundle, floor)


def _echo_from_meta(meta: dict) -> dict:
    echo: dict = {}
    for key, value in meta.items():
        if key.startswith("config."):
            _, section, k = key.split(".", 2)
            echo.setdefault(section, {})[k] = value
    return echo
