"""Event-driven simulation of the looped consecutive-measurement apparatus.

A particle that has entered through the one-way mirror meets, in every
loop, detector A, detector B, the back mirror and then the one-way mirror
again. Passing both detectors and being reflected keeps it in the loop;
anything else ends the trial.

Randomness is counter-addressed (see :mod:`loopsim.rng`): the draw used for
a given encounter depends only on ``(seed, trial index, loop, slot)``. The
scalar :func:`run_trial` and the vectorized :meth:`LoopExperiment.run_batch`
therefore produce identical records.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .errors import ValidationError
from .hidden_variables import HiddenState, RoughnessSpec, refresh_probability
from .quantum_core import (
    Observable,
    QubitState,
    born_probability,
    collapse,
    commutator_norm,
)
from .rng import RandomStream, stream_keys, uniforms

SPEED_OF_LIGHT = 299_792_458.0
DEFAULT_MAX_LOOPS = 1_000_000
DEFAULT_COMMUTATOR_THRESHOLD = 1e-9

DETECTOR_A, DETECTOR_B, ONE_WAY_MIRROR, MAX_LOOPS_REACHED = 0, 1, 2, 3
EXIT_POINTS = ("detector_A", "detector_B", "one_way_mirror", "max_loops_reached")
MODELS = ("qm", "sdhv")

# fractional position within a loop of each element
POS_A, POS_B, POS_BACK, POS_MIRROR = 0.2, 0.4, 0.6, 0.8

# counter slots within one loop's block
_SLOT_A, _SLOT_B, _SLOT_MIRROR, _SLOT_ROUGH = 0, 1, 2, 3
_SLOT_HV = 4

CHUNK_SIZE = 1 << 16


def _check_open_prob(name: str, value: float) -> None:
    if not 0.0 < value < 1.0:
        raise ValidationError(f"probability out of range: {name}={value!r} must lie in (0, 1)")


@dataclass(frozen=True)
class LoopGeometry:
    """Loop optics. ``pass_prob_a``/``pass_prob_b`` = None means derive from observables."""

    mirror_transmission: float = 0.01
    pass_prob_a: Optional[float] = None
    pass_prob_b: Optional[float] = None
    loop_length_m: float = 1e-3
    particle_speed_m_s: float = SPEED_OF_LIGHT

    def __post_init__(self):
        _check_open_prob("mirror_transmission", self.mirror_transmission)
        for name in ("pass_prob_a", "pass_prob_b"):
            value = getattr(self, name)
            if value is not None:
                _check_open_prob(name, value)
        if not (self.loop_length_m > 0 and math.isfinite(self.loop_length_m)):
            raise ValidationError(f"loop_length_m must be > 0, got {self.loop_length_m!r}")
        if not (self.particle_speed_m_s > 0 and math.isfinite(self.particle_speed_m_s)):
            raise ValidationError(f"particle_speed_m_s must be > 0, got {self.particle_speed_m_s!r}")

    @property
    def derived(self) -> bool:
        return self.pass_prob_a is None or self.pass_prob_b is None


def loop_traversal_time(geom: LoopGeometry) -> float:
    return geom.loop_length_m / geom.particle_speed_m_s


@dataclass(frozen=True)
class TrialRecord:
    exit_loop_count: int
    exit_point: str
    exit_time: float
    model: str
    outcome_history: Optional[tuple] = None


@dataclass
class TrialEnsemble:
    """Columnar store of trial records sharing one config fingerprint."""

    model: str
    trial_index: np.ndarray
    m: np.ndarray
    exit_point: np.ndarray
    exit_time: np.ndarray
    fingerprint: str = ""
    master_seed: int = 0
    loop_time: float = float("nan")

    def __post_init__(self):
        self.trial_index = np.asarray(self.trial_index, dtype=np.int64)
        self.m = np.asarray(self.m, dtype=np.int64)
        self.exit_point = np.asarray(self.exit_point, dtype=np.int8)
        self.exit_time = np.asarray(self.exit_time, dtype=np.float64)

    def __len__(self):
        return int(self.m.size)

    @classmethod
    def empty(cls, model: str, **kw) -> "TrialEnsemble":
        return cls(model, [], [], [], [], **kw)

    @property
    def censored(self) -> np.ndarray:
        return self.exit_point == MAX_LOOPS_REACHED

    def records(self) -> Iterator[TrialRecord]:
        for m, ep, t in zip(self.m.tolist(), self.exit_point.tolist(), self.exit_time.tolist()):
            yield TrialRecord(m, EXIT_POINTS[ep], t, self.model)

    def histogram(self) -> dict[int, int]:
        if not len(self):
            return {}
        counts = np.bincount(self.m)
        return {int(k): int(c) for k, c in enumerate(counts) if c}

    def exit_point_counts(self) -> dict[str, int]:
        counts = np.bincount(self.exit_point, minlength=len(EXIT_POINTS))
        return {name: int(c) for name, c in zip(EXIT_POINTS, counts)}

    def survival_after_reflection(self, m_max: int) -> np.ndarray:
        """Fraction still in the loop after the m-th reflection and the next A, m = 0..m_max."""
        ms = np.arange(m_max + 1)
        after_a = (self.exit_point == DETECTOR_B) | (self.exit_point == ONE_WAY_MIRROR)
        beyond = self.m[None, :] > ms[:, None]
        at = (self.m[None, :] == ms[:, None]) & after_a[None, :]
        return (beyond | at).sum(axis=1) / max(len(self), 1)

    def back_mirror_arrivals(self, m_max: int) -> np.ndarray:
        """Fraction reaching the back mirror for the (m+1)-th time, m = 0..m_max."""
        ms = np.arange(m_max + 1)
        beyond = self.m[None, :] > ms[:, None]
        at = (self.m[None, :] == ms[:, None]) & (self.exit_point == ONE_WAY_MIRROR)[None, :]
        return (beyond | at).sum(axis=1) / max(len(self), 1)

    @staticmethod
    def concatenate(parts: list["TrialEnsemble"]) -> "TrialEnsemble":
        first = parts[0]
        return TrialEnsemble(
            first.model,
            np.concatenate([p.trial_index for p in parts]),
            np.concatenate([p.m for p in parts]),
            np.concatenate([p.exit_point for p in parts]),
            np.concatenate([p.exit_time for p in parts]),
            fingerprint=first.fingerprint,
            master_seed=first.master_seed,
            loop_time=first.loop_time,
        )


@dataclass(frozen=True)
class LoopExperiment:
    """Everything needed to run trials of one physics model.

    ``detector_taus`` are the correlation times of detectors A and B
    (ignored in ``qm`` mode). ``float('inf')`` freezes the hidden variables.
    """

    geometry: LoopGeometry
    model: str = "qm"
    state0: QubitState = None
    obs_a: Observable = None
    obs_b: Observable = None
    stay_outcome_a: int = 0
    stay_outcome_b: int = 0
    detector_taus: tuple[float, float] = (0.0, 0.0)
    roughness: RoughnessSpec = field(default_factory=RoughnessSpec)
    max_loops: int = DEFAULT_MAX_LOOPS
    hidden_components: int = 1
    commutator_threshold: float = DEFAULT_COMMUTATOR_THRESHOLD

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValidationError(f"model must be one of {MODELS}, got {self.model!r}")
        if self.max_loops < 1:
            raise ValidationError("max_loops must be >= 1")
        if self.hidden_components < 1:
            raise ValidationError("hidden_components must be >= 1")
        if any(t < 0 or math.isnan(t) for t in self.detector_taus):
            raise ValidationError("detector correlation times must be >= 0")
        if self.stay_outcome_a not in (0, 1) or self.stay_outcome_b not in (0, 1):
            raise ValidationError("stay outcomes must be 0 or 1")
        if self.obs_a is not None and self.obs_b is not None:
            if commutator_norm(self.obs_a, self.obs_b) <= self.commutator_threshold:
                raise ValidationError("observables commute: ||[A,B]||_F below threshold")
        if self.geometry.derived:
            if self.state0 is None or self.obs_a is None or self.obs_b is None:
                raise ValidationError(
                    "pass probabilities not given; initial state and both observables required"
                )
            for name, value in zip(("p_a", "p_b", "p_a (return)"), self._derived_probs()):
                _check_open_prob(name, value)

    def _derived_probs(self) -> tuple[float, float, float]:
        eig_a, eig_b = self.obs_a.eigensystem, self.obs_b.eigensystem
        a_state = eig_a.eigenvectors[self.stay_outcome_a]
        b_state = eig_b.eigenvectors[self.stay_outcome_b]
        first_a = born_probability(self.state0, eig_a, self.stay_outcome_a)
        p_b = born_probability(a_state, eig_b, self.stay_outcome_b)
        return_a = born_probability(b_state, eig_a, self.stay_outcome_a)
        return first_a, p_b, return_a

    @property
    def encounter_probabilities(self) -> tuple[float, float, float]:
        """Pass probabilities (first A, every B, every later A)."""
        g = self.geometry
        if g.derived:
            return self._derived_probs()
        return g.pass_prob_a, g.pass_prob_b, g.pass_prob_a

    @property
    def loop_time(self) -> float:
        return loop_traversal_time(self.geometry)

    @property
    def effective_tau(self) -> float:
        return min(self.detector_taus)

    @property
    def _stride(self) -> int:
        return _SLOT_HV + 4 * self.hidden_components

    def _refresh_probs(self):
        T = self.loop_time
        tau_a, tau_b = self.detector_taus
        return (
            (refresh_probability(POS_A * T, tau_a), refresh_probability(T, tau_a)),
            (refresh_probability(POS_B * T, tau_b), refresh_probability(T, tau_b)),
        )

    def _hv_slots(self, detector: int) -> np.ndarray:
        c = np.arange(self.hidden_components)
        return _SLOT_HV + (detector * self.hidden_components + c) * 2

    # ------------------------------------------------------------------
    # scalar path
    # ------------------------------------------------------------------

    def run_trial(self, rng: RandomStream, record_history: bool = False) -> TrialRecord:
        """Simulate one particle. Uses addressed draws from ``rng``."""
        T = self.loop_time
        p_escape = self.geometry.mirror_transmission
        first_a, p_b_fixed, return_a = self.encounter_probabilities
        sdhv = self.model == "sdhv"
        stride = self._stride
        q_rough = self.roughness.refresh_probability if sdhv else 0.0
        (qa0, qa), (qb0, qb) = self._refresh_probs()
        stays = (self.stay_outcome_a, self.stay_outcome_b)
        observables = (self.obs_a, self.obs_b)
        derived = self.geometry.derived
        state = self.state0

        hidden = []
        if sdhv:
            for d in (0, 1):
                values = rng.at(self._hv_slots(d) + 1)
                hidden.append(HiddenState(values, np.zeros(self.hidden_components)))
        forced = False
        last_seen = [0.0, 0.0]
        history = [] if record_history else None

        def encounter(d: int, k: int, base: int, t: float, p_pass: float) -> bool:
            nonlocal state
            if sdhv:
                hv = hidden[d]
                q = (qa0, qa)[k > 0] if d == 0 else (qb0, qb)[k > 0]
                slots = self._hv_slots(d)
                tests = rng.at(base + slots)
                values = rng.at(base + slots + 1)
                hit = (tests < q) | forced
                hv.components = np.where(hit, values, hv.components)
                hv.last_refresh = np.where(hit, t, hv.last_refresh)
                passed = bool(hv.effective < p_pass)
            else:
                passed = bool(rng.at(base + (_SLOT_A, _SLOT_B)[d])[()] < p_pass)
            last_seen[d] = t
            outcome = stays[d] if passed else 1 - stays[d]
            if derived:
                state = collapse(state, observables[d].eigensystem, outcome)
            if history is not None:
                history.append(("AB"[d], outcome))
            return passed

        k = 0
        while True:
            base = (k + 1) * stride
            t_a = (k + POS_A) * T
            if derived:
                p_a_now = born_probability(state, self.obs_a.eigensystem, stays[0])
            else:
                p_a_now = first_a if k == 0 else return_a
            if not encounter(0, k, base, t_a, p_a_now):
                return self._record(k, DETECTOR_A, t_a, history)
            t_b = (k + POS_B) * T
            if derived:
                p_b_now = born_probability(state, self.obs_b.eigensystem, stays[1])
            else:
                p_b_now = p_b_fixed
            if not encounter(1, k, base, t_b, p_b_now):
                return self._record(k, DETECTOR_B, t_b, history)
            forced = False
            if q_rough > 0:
                forced = bool(rng.at(base + _SLOT_ROUGH)[()] < q_rough)
            if rng.at(base + _SLOT_MIRROR)[()] < p_escape:
                return self._record(k, ONE_WAY_MIRROR, (k + POS_MIRROR) * T, history)
            k += 1
            if k >= self.max_loops:
                return self._record(k, MAX_LOOPS_REACHED, k * T, history)

    def _record(self, m, point, t, history) -> TrialRecord:
        return TrialRecord(m, EXIT_POINTS[point], t, self.model,
                           tuple(history) if history is not None else None)

    # ------------------------------------------------------------------
    # vectorized path
    # ------------------------------------------------------------------

    def run_batch(self, seed: int, trial_indices) -> TrialEnsemble:
        """Simulate the given trials in lockstep; identical to per-trial :meth:`run_trial`."""
        idx = np.asarray(trial_indices, dtype=np.int64)
        n = idx.size
        keys = stream_keys(seed, idx.astype(np.uint64))
        T = self.loop_time
        p_escape = self.geometry.mirror_transmission
        first_a, p_b, return_a = self.encounter_probabilities
        sdhv = self.model == "sdhv"
        stride = self._stride
        nhv = self.hidden_components
        q_rough = self.roughness.refresh_probability if sdhv else 0.0
        (qa0, qa), (qb0, qb) = self._refresh_probs()
        slots = (self._hv_slots(0), self._hv_slots(1))

        m_out = np.zeros(n, dtype=np.int64)
        ep_out = np.zeros(n, dtype=np.int8)
        t_out = np.zeros(n, dtype=np.float64)

        lam = None
        forced = np.zeros(n, dtype=bool)
        if sdhv:
            lam = np.empty((n, 2, nhv))
            for d in (0, 1):
                lam[:, d, :] = uniforms(keys[:, None], slots[d][None, :] + 1)

        act = np.arange(n)
        k = 0

        def finish(rows, point, t):
            m_out[rows] = k
            ep_out[rows] = point
            t_out[rows] = t

        def detector(d, base, p_pass, q):
            ka = keys[act]
            if sdhv:
                s = slots[d][None, :]
                tests = uniforms(ka[:, None], base + s)
                values = uniforms(ka[:, None], base + s + 1)
                hit = (tests < q) | forced[act][:, None]
                cur = np.where(hit, values, lam[act, d, :])
                lam[act, d, :] = cur
                eff = np.sum(cur, axis=1) % 1.0
                return eff < p_pass
            return uniforms(ka, base + (_SLOT_A, _SLOT_B)[d]) < p_pass

        while act.size:
            base = (k + 1) * stride
            passed = detector(0, base, first_a if k == 0 else return_a, qa0 if k == 0 else qa)
            finish(act[~passed], DETECTOR_A, (k + POS_A) * T)
            act = act[passed]
            if not act.size:
                break
            passed = detector(1, base, p_b, qb0 if k == 0 else qb)
            finish(act[~passed], DETECTOR_B, (k + POS_B) * T)
            act = act[passed]
            if not act.size:
                break
            if q_rough > 0:
                forced[act] = uniforms(keys[act], base + _SLOT_ROUGH) < q_rough
            elif sdhv:
                forced[act] = False
            escaped = uniforms(keys[act], base + _SLOT_MIRROR) < p_escape
            finish(act[escaped], ONE_WAY_MIRROR, (k + POS_MIRROR) * T)
            act = act[~escaped]
            k += 1
            if k >= self.max_loops and act.size:
                finish(act, MAX_LOOPS_REACHED, k * T)
                break

        return TrialEnsemble(self.model, idx, m_out, ep_out, t_out, loop_time=T)


def run_trial(geom: LoopGeometry, model: str, sdhv, state0: QubitState, obs_a: Observable,
              obs_b: Observable, rng: RandomStream, **options) -> TrialRecord:
    """Run a single trial; ``sdhv`` is an :class:`SdhvParams` (or None in qm mode)."""
    tau = sdhv.tau if sdhv is not None else 0.0
    options.setdefault("detector_taus", (tau, tau))
    exp = LoopExperiment(geom, model, state0, obs_a, obs_b, **options)
    return exp.run_trial(rng)


def simulate(experiment: LoopExperiment, n_trials: int, seed: int, threads: int = 1,
             fingerprint: str = "") -> TrialEnsemble:
    """Run trials ``0..n_trials-1``; results do not depend on ``threads``."""
    if n_trials < 0:
        raise ValidationError("n_trials must be >= 0")
    chunks = [np.arange(s, min(s + CHUNK_SIZE, n_trials)) for s in range(0, n_trials, CHUNK_SIZE)]
    if not chunks:
        out = TrialEnsemble.empty(experiment.model, loop_time=experiment.loop_time)
    elif threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: experiment.run_batch(seed, c), chunks))
        out = TrialEnsemble.concatenate(parts)
    else:
        out = TrialEnsemble.concatenate([experiment.run_batch(seed, c) for c in chunks])
    out.fingerprint = fingerprint
    out.master_seed = int(seed)
    return out


def run_campaign(config, n_trials: Optional[int] = None, master_seed: Optional[int] = None,
                 model: Optional[str] = None, threads: int = 1) -> TrialEnsemble:
    """Run a campaign for a :class:`~loopsim.config.SimulationConfig`.

    ``model`` picks the arm when the config says ``both``.
    """
    n = config.trials if n_trials is None else n_trials
    seed = config.master_seed if master_seed is None else master_seed
    experiment = config.experiment(model)
    return simulate(experiment, n, seed, threads=threads, fingerprint=config.fingerprint())


def survival_probability_qm(m: int, p: float, p_a: float, p_b: float) -> float:
    """``(1-p)^m (1-p_a)^(m+1) (1-p_b)^m``."""
    if m < 0:
        raise ValueError("m must be >= 0")
    return (1 - p) ** m * (1 - p_a) ** (m + 1) * (1 - p_b) ** m


def survival_probability_sdhv(m: int, p: float, p_a: float, p_b: float) -> float:
    """``(1-p)^m (1-p_a) (1-p_b)``; only meaningful for durations much shorter than tau."""
    if m < 0:
        raise ValueError("m must be >= 0")
    return (1 - p) ** m * (1 - p_a) * (1 - p_b)


def closed_form_survival(experiment: LoopExperiment, m: int, model: Optional[str] = None) -> float:
    """Closed-form survival for ``experiment``'s loop, with pass probabilities turned
    into the deflection probabilities the formulas are written in."""
    model = model or experiment.model
    first_a, p_b, return_a = experiment.encounter_probabilities
    if not math.isclose(first_a, return_a, rel_tol=0, abs_tol=1e-12):
        raise ValidationError("closed forms assume equal pass probability at every A encounter")
    p = experiment.geometry.mirror_transmission
    fn = survival_probability_qm if model == "qm" else survival_probability_sdhv
    return fn(m, p, 1 - first_a, 1 - p_b)


def frozen_alpha(experiment: LoopExperiment, tilde_tau: float, margin: float = 1e3,
                 horizon_loops: Optional[int] = None) -> float:
    """Alpha making tau exceed ``horizon_loops`` loop times by ``margin``."""
    loops = experiment.max_loops if horizon_loops is None else horizon_loops
    return margin * loops * experiment.loop_time / tilde_tau
