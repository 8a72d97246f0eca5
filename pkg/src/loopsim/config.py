"""Simulation configuration: a sectioned key-value (INI) document.

Every key has a default; unknown sections or keys are errors. See
the README for the full key list.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, ValidationError
from .hidden_variables import (
    DEFAULT_ENVIRONMENT_SCALE_M,
    ROUGHNESS_MODES,
    DetectorSpec,
    RoughnessSpec,
    noise_timescale,
)
from .loop_experiment import (
    DEFAULT_COMMUTATOR_THRESHOLD,
    DEFAULT_MAX_LOOPS,
    SPEED_OF_LIGHT,
    LoopExperiment,
    LoopGeometry,
)
from .quantum_core import Observable, QubitState, commutator_norm
from .rng import MASK64

CONFIG_MODELS = ("qm", "sdhv", "both")

# section -> key -> default (as text). Order is the echo order.
SCHEMA: dict[str, dict[str, str]] = {
    "run": {
        "model": "qm",
        "trials": "1000",
        "seed": "0",
        "max_loops": str(DEFAULT_MAX_LOOPS),
    },
    "geometry": {
        "mirror_transmission": "0.01",
        "pass_prob_a": "derived",
        "pass_prob_b": "derived",
        "loop_length_m": "0.001",
        "particle_speed_m_s": repr(SPEED_OF_LIGHT),
    },
    "detector_a": {
        "band_gap_ev": "1.0",
        "temperature_k": "300.0",
        "atom_count": "1e15",
        "recombination_time_s": "1e-9",
    },
    "detector_b": {
        "band_gap_ev": "1.0",
        "temperature_k": "300.0",
        "atom_count": "1e15",
        "recombination_time_s": "1e-9",
    },
    "observables": {
        "a": "bloch 0 0 1",
        "b": "bloch 1 0 0",
        "initial_state": "bloch 1 0 0",
        "stay_outcome_a": "0",
        "stay_outcome_b": "0",
        "commutator_threshold": repr(DEFAULT_COMMUTATOR_THRESHOLD),
    },
    "sdhv": {
        "alpha": "1.0",
        "tilde_tau_s": "auto",
        "hidden_components": "1",
    },
    "roughness": {
        "dislocation_per_loop_m": "0.0",
        "environment_scale_m": repr(DEFAULT_ENVIRONMENT_SCALE_M),
        "mode": "literal",
    },
    "analysis": {
        "series_length": "10000",
        "max_lag": "200",
        "fit_floor": "0.05",
    },
    "output": {
        "dir": "results",
        "formats": "csv,json",
    },
    "sweep": {
        "parameter": "",
        "values": "",
        "logspace": "",
        "trials": "",
    },
    "power": {
        "alpha_alt": "1.0",
        "significance": "0.05",
        "power_target": "0.9",
        "trial_grid": "10,20,30,40,50,60,80,100,120,150,200,250,300,400",
        "replicates": "200",
    },
}

# sections that do not affect simulated physics
NON_PHYSICS = {"output", "sweep", "power", "analysis"}
NON_PHYSICS_KEYS = {("run", "trials"), ("run", "seed"), ("observables", "commutator_threshold")}

PATH_ALIASES = {"detectors.0": "detector_a", "detectors.1": "detector_b"}

FORMATS = ("csv", "json")


def _float(section, key, text) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected a number, got {text!r}") from None


def _int(section, key, text) -> int:
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected an integer, got {text!r}") from None
    if not value.is_integer():
        raise ConfigError(f"[{section}] {key}: expected an integer, got {text!r}")
    return int(value)


def _complex_pairs(section, key, text, count) -> list[complex]:
    parts = text.split()
    if len(parts) != count:
        raise ConfigError(f"[{section}] {key}: expected {count} 're,im' pairs, got {len(parts)}")
    out = []
    for part in parts:
        try:
            re, im = part.split(",")
            out.append(complex(float(re), float(im)))
        except ValueError:
            raise ConfigError(f"[{section}] {key}: bad 're,im' pair {part!r}") from None
    return out


def _split_where(where: str) -> tuple[str, str]:
    section, _, key = where.partition(" ")
    return section, key


def parse_observable(text: str, where: str = "observables") -> Observable:
    """``bloch nx ny nz`` (meaning n.sigma) or ``matrix r,i r,i r,i r,i`` (row-major)."""
    kind, _, rest = text.strip().partition(" ")
    if kind == "bloch":
        try:
            nx, ny, nz = (float(v) for v in rest.split())
        except ValueError:
            raise ConfigError(f"{where}: 'bloch' needs three numbers, got {rest!r}") from None
        return Observable.from_bloch(nx, ny, nz)
    if kind == "matrix":
        section, key = _split_where(where)
        entries = _complex_pairs(section, key, rest, 4)
        return Observable(np.array(entries).reshape(2, 2))
    raise ConfigError(f"{where}: observable must start with 'bloch' or 'matrix', got {text!r}")


def parse_state(text: str, where: str = "observables initial_state") -> QubitState:
    """``bloch nx ny nz`` (the +1 eigenvector of n.sigma) or ``amplitudes r,i r,i``.

    Amplitudes are normalized on input.
    """
    kind, _, rest = text.strip().partition(" ")
    if kind == "bloch":
        obs = parse_observable(text, where)
        return obs.eigensystem.eigenvectors[0]
    if kind == "amplitudes":
        section, key = _split_where(where)
        a0, a1 = _complex_pairs(section, key, rest, 2)
        return QubitState.normalized(a0, a1)
    raise ConfigError(f"{where}: state must start with 'bloch' or 'amplitudes', got {text!r}")


def _resolve_path(path: str) -> tuple[str, str]:
    for alias, section in PATH_ALIASES.items():
        if path.startswith(alias + "."):
            path = section + path[len(alias):]
    if path.count(".") != 1:
        raise ConfigError(f"parameter path {path!r} must look like 'section.key'")
    section, key = path.split(".")
    if section not in SCHEMA or key not in SCHEMA[section]:
        raise ConfigError(f"parameter path {path!r} does not name a config key")
    if section in ("sweep", "power", "output"):
        raise ConfigError(f"parameter path {path!r} is not a simulation parameter")
    return section, key


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple[float, ...]
    trials: int

    def __post_init__(self):
        _resolve_path(self.parameter)
        if not self.values:
            raise ConfigError("sweep needs at least one point")
        if self.trials < 0:
            raise ConfigError("sweep trials must be >= 0")


@dataclass(frozen=True)
class PowerSpec:
    alpha_alt: float
    significance: float
    power_target: float
    trial_grid: tuple[int, ...]
    replicates: int


@dataclass(frozen=True, eq=False)
class SimulationConfig:
    """Validated configuration. ``document`` holds the fully-defaulted key-value text."""

    document: dict = field(repr=False)
    model: str = "qm"
    trials: int = 1000
    master_seed: int = 0
    max_loops: int = DEFAULT_MAX_LOOPS
    geometry: LoopGeometry = None
    detectors: tuple[DetectorSpec, DetectorSpec] = None
    observable_a: Observable = None
    observable_b: Observable = None
    initial_state: QubitState = None
    stay_outcome_a: int = 0
    stay_outcome_b: int = 0
    commutator_threshold: float = DEFAULT_COMMUTATOR_THRESHOLD
    alpha: float = 1.0
    tilde_tau_override: Optional[float] = None
    hidden_components: int = 1
    roughness: RoughnessSpec = None
    series_length: int = 10000
    max_lag: int = 200
    fit_floor: float = 0.05
    output_dir: str = "results"
    formats: tuple[str, ...] = FORMATS

    # -- construction ---------------------------------------------------

    @classmethod
    def from_document(cls, doc: dict) -> "SimulationConfig":
        full = {s: dict(keys) for s, keys in SCHEMA.items()}
        for section, keys in doc.items():
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]")
            for key, value in keys.items():
                if key not in SCHEMA[section]:
                    raise ConfigError(f"[{section}] unknown key {key!r}")
                full[section][key] = str(value).strip()
        return cls._build(full)

    @classmethod
    def _build(cls, d: dict) -> "SimulationConfig":
        run, geo, obs, sd, rough, an, out = (
            d["run"], d["geometry"], d["observables"], d["sdhv"], d["roughness"],
            d["analysis"], d["output"])
        model = run["model"]
        if model not in CONFIG_MODELS:
            raise ConfigError(f"[run] model: must be one of {CONFIG_MODELS}, got {model!r}")
        trials = _int("run", "trials", run["trials"])
        seed = _int("run", "seed", run["seed"])
        max_loops = _int("run", "max_loops", run["max_loops"])
        if trials < 0:
            raise ValidationError("[run] trials must be >= 0")
        if not 0 <= seed <= MASK64:
            raise ValidationError("[run] seed must be an unsigned 64-bit integer")
        if max_loops < 1:
            raise ValidationError("[run] max_loops must be >= 1")

        def prob(key):
            text = geo[key]
            return None if text == "derived" else _float("geometry", key, text)

        geometry = LoopGeometry(
            mirror_transmission=_float("geometry", "mirror_transmission", geo["mirror_transmission"]),
            pass_prob_a=prob("pass_prob_a"),
            pass_prob_b=prob("pass_prob_b"),
            loop_length_m=_float("geometry", "loop_length_m", geo["loop_length_m"]),
            particle_speed_m_s=_float("geometry", "particle_speed_m_s", geo["particle_speed_m_s"]),
        )
        detectors = tuple(
            DetectorSpec(**{k: _float(name, k, v) for k, v in d[name].items()})
            for name in ("detector_a", "detector_b")
        )
        obs_a = parse_observable(obs["a"], "observables a")
        obs_b = parse_observable(obs["b"], "observables b")
        state = parse_state(obs["initial_state"])
        threshold = _float("observables", "commutator_threshold", obs["commutator_threshold"])
        if commutator_norm(obs_a, obs_b) <= threshold:
            raise ValidationError("observables commute: ||[A,B]||_F is below commutator_threshold")
        stays = []
        for key in ("stay_outcome_a", "stay_outcome_b"):
            v = _int("observables", key, obs[key])
            if v not in (0, 1):
                raise ValidationError(f"[observables] {key} must be 0 or 1")
            stays.append(v)

        alpha = _float("sdhv", "alpha", sd["alpha"])
        if not alpha >= 0:
            raise ValidationError(f"[sdhv] alpha must be >= 0, got {alpha!r}")
        tt = None if sd["tilde_tau_s"] == "auto" else _float("sdhv", "tilde_tau_s", sd["tilde_tau_s"])
        if tt is not None and not tt > 0:
            raise ValidationError("[sdhv] tilde_tau_s must be > 0")
        hidden = _int("sdhv", "hidden_components", sd["hidden_components"])
        if hidden < 1:
            raise ValidationError("[sdhv] hidden_components must be >= 1")
        if rough["mode"] not in ROUGHNESS_MODES:
            raise ValidationError(f"[roughness] mode must be one of {ROUGHNESS_MODES}")
        roughness = RoughnessSpec(
            _float("roughness", "dislocation_per_loop_m", rough["dislocation_per_loop_m"]),
            _float("roughness", "environment_scale_m", rough["environment_scale_m"]),
            rough["mode"],
        )
        formats = tuple(f.strip() for f in out["formats"].split(",") if f.strip())
        bad = [f for f in formats if f not in FORMATS]
        if bad:
            raise ConfigError(f"[output] formats: unknown format(s) {bad}")
        series_length = _int("analysis", "series_length", an["series_length"])
        max_lag = _int("analysis", "max_lag", an["max_lag"])
        if series_length < 2 or not 1 <= max_lag < series_length:
            raise ValidationError("[analysis] need series_length >= 2 and 1 <= max_lag < series_length")

        cfg = cls(
            document=d, model=model, trials=trials, master_seed=seed, max_loops=max_loops,
            geometry=geometry, detectors=detectors, observable_a=obs_a, observable_b=obs_b,
            initial_state=state, stay_outcome_a=stays[0], stay_outcome_b=stays[1],
            commutator_threshold=threshold, alpha=alpha, tilde_tau_override=tt,
            hidden_components=hidden, roughness=roughness, series_length=series_length,
            max_lag=max_lag, fit_floor=_float("analysis", "fit_floor", an["fit_floor"]),
            output_dir=out["dir"], formats=formats,
        )
        # validates probabilities derived from the observables
        cfg.experiment("qm" if model == "both" else model)
        return cfg

    # -- derived quantities --------------------------------------------

    @property
    def tilde_taus(self) -> tuple[float, float]:
        if self.tilde_tau_override is not None:
            return (self.tilde_tau_override, self.tilde_tau_override)
        return tuple(noise_timescale(d) for d in self.detectors)

    @property
    def detector_taus(self) -> tuple[float, float]:
        if self.alpha == 0:
            return (0.0, 0.0)
        return tuple(self.alpha * t for t in self.tilde_taus)

    @property
    def tau(self) -> float:
        return min(self.detector_taus)

    @property
    def models(self) -> tuple[str, ...]:
        return ("qm", "sdhv") if self.model == "both" else (self.model,)

    def experiment(self, model: Optional[str] = None) -> LoopExperiment:
        model = model or self.model
        if model == "both":
            raise ValidationError("config model is 'both'; choose 'qm' or 'sdhv'")
        return LoopExperiment(
            geometry=self.geometry,
            model=model,
            state0=self.initial_state,
            obs_a=self.observable_a,
            obs_b=self.observable_b,
            stay_outcome_a=self.stay_outcome_a,
            stay_outcome_b=self.stay_outcome_b,
            detector_taus=self.detector_taus if model == "sdhv" else (0.0, 0.0),
            roughness=self.roughness,
            max_loops=self.max_loops,
            hidden_components=self.hidden_components,
            commutator_threshold=self.commutator_threshold,
        )

    # -- overrides -----------------------------------------------------

    def with_override(self, path: str, value) -> "SimulationConfig":
        section, key = _resolve_path(path)
        doc = {s: dict(k) for s, k in self.document.items()}
        doc[section][key] = value if isinstance(value, str) else repr(value)
        return SimulationConfig._build(doc)

    def with_values(self, **values) -> "SimulationConfig":
        """Shortcut overrides: model, trials, seed, alpha, dislocation, max_loops."""
        paths = {"model": "run.model", "trials": "run.trials", "seed": "run.seed",
                 "alpha": "sdhv.alpha", "max_loops": "run.max_loops",
                 "dislocation": "roughness.dislocation_per_loop_m"}
        cfg = self
        for name, value in values.items():
            if name == "model":
                value = str(value)
            elif name in ("trials", "seed", "max_loops"):
                value = str(int(value))
            cfg = cfg.with_override(paths[name], value)
        return cfg

    # -- provenance ----------------------------------------------------

    def echo(self) -> dict:
        """All keys with defaults filled, plus derived timescales."""
        out = {s: dict(k) for s, k in self.document.items() if s not in ("sweep", "power")}
        taus = self.tilde_taus
        out["derived"] = {
            "tilde_tau_a_s": repr(taus[0]),
            "tilde_tau_b_s": repr(taus[1]),
            "tau_s": repr(self.tau),
            "loop_time_s": repr(self.experiment("qm").loop_time),
        }
        return out

    def fingerprint(self) -> str:
        physics = {
            s: {k: v for k, v in keys.items() if (s, k) not in NON_PHYSICS_KEYS}
            for s, keys in self.document.items() if s not in NON_PHYSICS
        }
        canonical = json.dumps(_canonicalize(physics), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    # -- auxiliary specs -----------------------------------------------

    def sweep_spec(self) -> SweepSpec:
        s = self.document["sweep"]
        if not s["parameter"]:
            raise ConfigError("[sweep] parameter is required for a sweep")
        if s["values"] and s["logspace"]:
            raise ConfigError("[sweep] give either values or logspace, not both")
        if s["values"]:
            values = tuple(_float("sweep", "values", v) for v in s["values"].split(","))
        elif s["logspace"]:
            parts = [p.strip() for p in s["logspace"].split(",")]
            if len(parts) != 3:
                raise ConfigError("[sweep] logspace: expected 'start, stop, count'")
            lo, hi = _float("sweep", "logspace", parts[0]), _float("sweep", "logspace", parts[1])
            num = _int("sweep", "logspace", parts[2])
            if lo <= 0 or hi <= 0 or num < 1:
                raise ConfigError("[sweep] logspace needs positive bounds and count >= 1")
            values = tuple(float(v) for v in np.logspace(math.log10(lo), math.log10(hi), num))
        else:
            raise ConfigError("[sweep] values or logspace is required")
        trials = _int("sweep", "trials", s["trials"]) if s["trials"] else self.trials
        return SweepSpec(s["parameter"], values, trials)

    def power_spec(self) -> PowerSpec:
        p = self.document["power"]
        grid = tuple(_int("power", "trial_grid", v) for v in p["trial_grid"].split(","))
        return PowerSpec(
            _float("power", "alpha_alt", p["alpha_alt"]),
            _float("power", "significance", p["significance"]),
            _float("power", "power_target", p["power_target"]),
            grid,
            _int("power", "replicates", p["replicates"]),
        )


def _canonicalize(physics: dict) -> dict:
    # numeric text is compared by value so '1e-3' and '0.001' fingerprint alike
    out = {}
    for s, keys in physics.items():
        out[s] = {}
        for k, v in keys.items():
            try:
                out[s][k] = repr(float(v))
            except ValueError:
                out[s][k] = " ".join(v.split())
    return out


def parse_config(text: str) -> SimulationConfig:
    """Parse and validate a config document."""
    parser = configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";"), empty_lines_in_values=False,
        default_section="__no_defaults__",
    )
    parser.optionxform = str
    try:
        parser.read_string(text, source="<config>")
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from None
    doc = {s: dict(parser.items(s)) for s in parser.sections()}
    return SimulationConfig.from_document(doc)


def load_config(path) -> SimulationConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def default_config(**sections) -> SimulationConfig:
    """Config with defaults; keyword arguments are ``section={key: value}`` overrides."""
    return SimulationConfig.from_document({s: {k: str(v) for k, v in kv.items()}
                                           for s, kv in sections.items()})
