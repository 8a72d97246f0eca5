"""Super-deterministic hidden-variable model.

Outcomes are a threshold function of uniform hidden variables attached to
each detector. The variables refresh as a homogeneous Poisson process with
correlation time ``tau = alpha * tilde_tau``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NegativeAlpha, NoiseTimescaleOverflow, ValidationError
from .quantum_core import Observable, QubitState, born_probability
from .rng import RandomStream

BOLTZMANN_EV_PER_K = 8.617333262e-5
EXP_ARG_LIMIT = 700.0
DEFAULT_ENVIRONMENT_SCALE_M = 1e-10
ROUGHNESS_MODES = ("literal", "product")


@dataclass(frozen=True)
class DetectorSpec:
    band_gap_ev: float = 1.0
    temperature_k: float = 300.0
    atom_count: float = 1e15
    recombination_time_s: float = 1e-9

    def __post_init__(self):
        for name in ("band_gap_ev", "temperature_k", "atom_count", "recombination_time_s"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValidationError(f"detector {name} must be finite and > 0, got {value!r}")

    @property
    def gap_over_kt(self) -> float:
        return self.band_gap_ev / (BOLTZMANN_EV_PER_K * self.temperature_k)


@dataclass(frozen=True)
class SdhvParams:
    alpha: float
    tilde_tau: float

    def __post_init__(self):
        if not alpha_is_valid(self.alpha):
            raise NegativeAlpha(f"alpha must be >= 0, got {self.alpha!r}")
        if not self.tilde_tau > 0:
            raise ValidationError(f"tilde_tau must be > 0, got {self.tilde_tau!r}")

    @property
    def tau(self) -> float:
        return correlation_time(self.alpha, self.tilde_tau)


@dataclass(frozen=True)
class RoughnessSpec:
    dislocation_per_loop_m: float = 0.0
    environment_scale_m: float = DEFAULT_ENVIRONMENT_SCALE_M
    mode: str = "literal"

    def __post_init__(self):
        if not self.dislocation_per_loop_m >= 0:
            raise ValidationError("dislocation_per_loop_m must be >= 0")
        if not self.environment_scale_m > 0:
            raise ValidationError("environment_scale_m must be > 0")
        if self.mode not in ROUGHNESS_MODES:
            raise ValidationError(f"roughness mode must be one of {ROUGHNESS_MODES}, got {self.mode!r}")

    @property
    def refresh_probability(self) -> float:
        """Per-loop probability that the particle's effective hidden variables refresh."""
        return -math.expm1(-self.dislocation_per_loop_m / self.environment_scale_m)


@dataclass
class HiddenState:
    """Hidden-variable components of one detector with their refresh times."""

    components: np.ndarray
    last_refresh: np.ndarray = field(default=None)

    def __post_init__(self):
        self.components = np.asarray(self.components, dtype=float).reshape(-1)
        if self.last_refresh is None:
            self.last_refresh = np.zeros_like(self.components)
        else:
            self.last_refresh = np.asarray(self.last_refresh, dtype=float).reshape(-1)
        if self.components.shape != self.last_refresh.shape:
            raise ValidationError("components and last_refresh must have equal length")
        if self.components.size and not (
            np.all(self.components >= 0.0) and np.all(self.components < 1.0)
        ):
            raise ValidationError("hidden components must lie in [0, 1)")

    @classmethod
    def fresh(cls, n_components: int, rng: RandomStream, t: float = 0.0) -> "HiddenState":
        return cls(rng.random(n_components), np.full(n_components, float(t)))

    @property
    def effective(self) -> float:
        """Single effective variable: the sum of components mod 1 (uniform if they are)."""
        return float(np.sum(self.components) % 1.0)

    def copy(self) -> "HiddenState":
        return HiddenState(self.components.copy(), self.last_refresh.copy())


def alpha_is_valid(alpha: float) -> bool:
    return alpha >= 0 and not math.isnan(alpha)


def noise_timescale(spec: DetectorSpec) -> float:
    """Thermal noise time ``exp(dE / (k_B T)) * tau_r / N`` in seconds."""
    x = spec.gap_over_kt
    if x > EXP_ARG_LIMIT:
        raise NoiseTimescaleOverflow(
            f"band_gap/(k_B T) = {x:.6g} exceeds {EXP_ARG_LIMIT}; exp() would overflow"
        )
    return math.exp(x) * spec.recombination_time_s / spec.atom_count


def correlation_time(alpha: float, tilde_tau: float) -> float:
    if not alpha_is_valid(alpha):
        raise NegativeAlpha(f"alpha must be >= 0, got {alpha!r}")
    if alpha == 0:
        return 0.0
    return alpha * tilde_tau


def analytic_autocorrelation(kappa: float, tau: float) -> float:
    """``exp(-kappa / tau)`` with the tau = 0 limit taken explicitly."""
    if kappa < 0:
        raise ValueError(f"lag must be >= 0, got {kappa!r}")
    if kappa == 0:
        return 1.0
    if tau == 0:
        return 0.0
    return math.exp(-kappa / tau)


def roughness_correlation(kappa: float, m: int, params: SdhvParams, rough: RoughnessSpec) -> float:
    """Correlation including the per-loop surface-roughness term, clamped to [0, 1].

    ``literal`` mode adds the two decay terms; ``product`` mode multiplies them.
    """
    if m < 0 or kappa < 0:
        raise ValueError("m and kappa must be >= 0")
    drift = analytic_autocorrelation(kappa, params.tau)
    rough_term = math.exp(-m * rough.dislocation_per_loop_m / rough.environment_scale_m)
    if rough.mode == "literal":
        value = drift + rough_term
    else:
        value = drift * rough_term
    return min(1.0, max(0.0, value))


def deterministic_outcome(lambda_value: float, pass_probability: float) -> bool:
    """True (pass) iff ``lambda_value < pass_probability``."""
    if not 0.0 <= lambda_value < 1.0:
        raise ValueError(f"lambda_value must lie in [0, 1), got {lambda_value!r}")
    if not 0.0 <= pass_probability <= 1.0:
        raise ValueError(f"pass_probability must lie in [0, 1], got {pass_probability!r}")
    return lambda_value < pass_probability


def refresh_probability(dt: float, tau: float) -> float:
    """Probability of at least one Poisson refresh event in an interval ``dt``."""
    if dt < 0:
        raise ValueError(f"negative interval {dt!r}")
    if dt == 0:
        return 0.0
    if tau == 0:
        return 1.0
    if math.isinf(tau):
        return 0.0
    return -math.expm1(-dt / tau)


def evolve_hidden_state(hv: HiddenState, from_t: float, to_t: float, tau: float,
                        rng: RandomStream) -> HiddenState:
    """Advance ``hv`` from ``from_t`` to ``to_t``; returns a new state.

    Each component independently redraws with the interval refresh
    probability. Draws ``2 * n_components`` numbers from ``rng``.
    """
    if to_t < from_t:
        raise ValueError(f"cannot evolve backwards ({from_t!r} -> {to_t!r})")
    q = refresh_probability(to_t - from_t, tau)
    n = hv.components.size
    test = rng.random(n)
    new = rng.random(n)
    hit = test < q
    components = np.where(hit, new, hv.components)
    last = np.where(hit, to_t, hv.last_refresh)
    return HiddenState(components, last)


def measure_repeatedly(state: QubitState, obs: Observable, n: int, tau: float,
                       timestep: float, rng: RandomStream, outcome_index: int = 0,
                       n_components: int = 1) -> np.ndarray:
    """Outcome indices of ``n`` repeated measurements of ``obs`` on a frozen state.

    The detector's hidden variables start fresh and evolve between
    measurements spaced ``timestep`` apart. Outcome ``outcome_index`` is
    returned iff the effective variable falls below its Born probability;
    otherwise the other index. ``tau = 0`` refreshes before every
    measurement (indistinguishable from independent Born draws).
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if timestep <= 0:
        raise ValueError("timestep must be > 0")
    p = born_probability(state, obs.eigensystem, outcome_index)
    q = refresh_probability(timestep, tau)
    # per component: initial values, then one (test, value) pair per step
    u = rng.random((n_components, 1 + 2 * max(n - 1, 0)))
    initial = u[:, :1]
    tests = u[:, 1::2]
    values = u[:, 2::2]
    hit = tests < q
    # forward-fill the most recent refreshed value along each component row
    cand = np.concatenate([initial, np.where(hit, values, np.nan)], axis=1)
    idx = np.where(~np.isnan(cand), np.arange(cand.shape[1]), 0)
    np.maximum.accumulate(idx, axis=1, out=idx)
    comps = np.take_along_axis(cand, idx, axis=1)
    lam = np.sum(comps, axis=0) % 1.0 if n_components > 1 else comps[0]
    passed = lam[:n] < p
    other = 1 - outcome_index
    return np.where(passed, outcome_index, other).astype(np.int8)
