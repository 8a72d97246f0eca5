"""Estimators and tests for measurement series and trial ensembles."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .errors import AllCensored, EmptyEnsemble, NoDecaySignal, SeriesTooShort, ValidationError
from .loop_experiment import (
    TrialEnsemble,
    survival_probability_qm,
    survival_probability_sdhv,
)
from .rng import derive_seed

DEFAULT_FIT_FLOOR = 0.05
CENSORING_WARN_FRACTION = 0.01
MIN_REPLICATES = 200


@dataclass(frozen=True)
class OutcomeSeries:
    values: np.ndarray
    timestep: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=float).reshape(-1))
        if not self.timestep > 0:
            raise ValueError("timestep must be > 0")

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class DecayFit:
    tau_hat: float
    stderr: float
    lags_used: int
    goodness: float

    def to_dict(self) -> dict:
        return {"tau_hat_s": self.tau_hat, "stderr_s": self.stderr,
                "lags_used": self.lags_used, "r_squared": self.goodness}


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    test_name: str

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        return {"test": self.test_name, "statistic": self.statistic, "p_value": self.p_value}


@dataclass(frozen=True)
class ExitTimeSummary:
    mean: float
    stderr: float
    n_used: int
    n_censored: int


@dataclass
class PowerResult:
    required_trials: Optional[int]
    powers: dict = field(default_factory=dict)
    significance: float = 0.05
    power_target: float = 0.9
    replicates: int = 200

    @property
    def achievable(self) -> bool:
        return self.required_trials is not None

    @property
    def max_grid_power(self) -> float:
        return self.powers[max(self.powers)] if self.powers else float("nan")

    def to_dict(self) -> dict:
        return {
            "status": "ok" if self.achievable else "not_achievable",
            "required_trials": self.required_trials,
            "max_grid_power": self.max_grid_power,
            "powers": {str(n): p for n, p in self.powers.items()},
            "significance": self.significance,
            "power_target": self.power_target,
            "replicates": self.replicates,
        }


# ----------------------------------------------------------------------
# autocorrelation and decay fitting
# ----------------------------------------------------------------------

def autocorrelation_estimate(series, max_lag: int) -> np.ndarray:
    """Lag-k correlation of ``x`` over the overlapping window, k = 0..max_lag.

    ``sum_t x_t x_{t+k}`` is normalized by the root of the two windows'
    ``sum x^2``, so constant series give 1 at every lag and values stay in
    [-1, 1]. No mean removal; pass mean-removed outcomes.
    """
    x = series.values if isinstance(series, OutcomeSeries) else np.asarray(series, dtype=float)
    n = x.size
    if max_lag < 0:
        raise ValueError("max_lag must be >= 0")
    if n < 2 or n <= max_lag:
        raise SeriesTooShort(f"series of length {n} too short for max_lag={max_lag}")
    sq = np.concatenate([[0.0], np.cumsum(x * x)])
    if sq[-1] == 0:
        raise ValueError("all-zero series has no autocorrelation")
    corr = np.empty(max_lag + 1)
    corr[0] = 1.0
    for k in range(1, max_lag + 1):
        head, tail = sq[n - k], sq[n] - sq[k]
        denom = math.sqrt(head * tail)
        corr[k] = np.dot(x[:-k], x[k:]) / denom if denom > 0 else 0.0
    return corr


def fit_decay_time(corr: Sequence[float], timestep: float = 1.0,
                   floor: float = DEFAULT_FIT_FLOOR) -> DecayFit:
    """Weighted log-linear fit of ``corr[k] ~ exp(-k * timestep / tau)``.

    Uses the contiguous run of lags from 0 whose correlation exceeds
    ``floor``; weights are ``corr**2`` (inverse delta-method variance of
    ``log corr``). A non-negative slope means no decay inside the window
    and gives ``tau_hat = inf``.
    """
    c = np.asarray(corr, dtype=float)
    above = c > floor
    stop = int(np.argmin(above)) if not above.all() else c.size
    if stop < 2:
        raise NoDecaySignal(f"only {stop} lag(s) above floor {floor}")
    k = np.arange(stop, dtype=float)
    y = np.log(c[:stop])
    w = c[:stop] ** 2
    sw = w.sum()
    kbar = (w * k).sum() / sw
    ybar = (w * y).sum() / sw
    sxx = (w * (k - kbar) ** 2).sum()
    slope = (w * (k - kbar) * (y - ybar)).sum() / sxx
    intercept = ybar - slope * kbar
    resid = y - (intercept + slope * k)
    ss_res = float((w * resid ** 2).sum())
    ss_tot = float((w * (y - ybar) ** 2).sum())
    r2 = 1.0 if ss_tot == 0 else max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
    dof = stop - 2
    slope_se = math.sqrt(ss_res / dof / sxx) if dof > 0 else float("inf")
    if slope >= 0:
        return DecayFit(float("inf"), float("inf"), stop, r2)
    tau_hat = -timestep / slope
    stderr = timestep * slope_se / slope ** 2
    return DecayFit(float(tau_hat), float(stderr), stop, r2)


def estimate_decay_time(series, max_lag: int, floor: float = DEFAULT_FIT_FLOOR,
                        refine: Optional[float] = 0.1) -> DecayFit:
    """Decay time of a measurement series: pilot fit, then a refit on short lags.

    The pilot fit uses every lag up to ``max_lag`` above ``floor``. Long-lag
    estimates are strongly correlated and noisy, so the refit keeps lags up
    to ``refine * tau_pilot`` (at least 2). ``refine=None`` returns the pilot.
    """
    if not isinstance(series, OutcomeSeries):
        raise TypeError("series must be an OutcomeSeries")
    corr = autocorrelation_estimate(series, max_lag)
    return refit_curve(corr, series.timestep, floor, refine)


# ----------------------------------------------------------------------
# ensembles
# ----------------------------------------------------------------------

def _mean_and_stderr(values: np.ndarray) -> tuple[float, float]:
    n = values.size
    mean = float(np.mean(values))
    stderr = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, stderr


def _uncensored(ensemble: TrialEnsemble) -> np.ndarray:
    if not len(ensemble):
        raise EmptyEnsemble("ensemble has no records")
    keep = ~ensemble.censored
    n_cens = int((~keep).sum())
    if not keep.any():
        raise AllCensored(f"all {n_cens} records reached max_loops")
    if n_cens > CENSORING_WARN_FRACTION * len(ensemble):
        warnings.warn(f"{n_cens}/{len(ensemble)} records censored at max_loops", stacklevel=3)
    return keep


def mean_exit_time(ensemble: TrialEnsemble) -> ExitTimeSummary:
    """Sample mean and standard error of exit time over non-censored records."""
    keep = _uncensored(ensemble)
    mean, se = _mean_and_stderr(ensemble.exit_time[keep])
    return ExitTimeSummary(mean, se, int(keep.sum()), int((~keep).sum()))


def mean_exit_loops(ensemble: TrialEnsemble) -> ExitTimeSummary:
    keep = _uncensored(ensemble)
    mean, se = _mean_and_stderr(ensemble.m[keep].astype(float))
    return ExitTimeSummary(mean, se, int(keep.sum()), int((~keep).sum()))


def compare_distributions(a: TrialEnsemble, b: TrialEnsemble) -> TestResult:
    """Two-sample Kolmogorov-Smirnov test on exit loop counts.

    The ECDFs are right-continuous step functions over the integer counts;
    the p-value is the continuous-null one, conservative for discrete data.
    """
    if not len(a) or not len(b):
        raise EmptyEnsemble("both ensembles must be non-empty")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        res = stats.ks_2samp(a.m, b.m, alternative="two-sided", method="auto")
    return TestResult(float(res.statistic), float(min(1.0, max(0.0, res.pvalue))), "ks_2samp")


def ks_statistic(a, b) -> float:
    """Sup distance between the two ECDFs of integer samples."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    size = int(max(a.max(initial=0), b.max(initial=0))) + 1
    fa = np.cumsum(np.bincount(a, minlength=size)) / a.size
    fb = np.cumsum(np.bincount(b, minlength=size)) / b.size
    return float(np.max(np.abs(fa - fb)))


# ----------------------------------------------------------------------
# closed forms
# ----------------------------------------------------------------------

def reflection_survival(model: str, m: int, p: float, q_a: float, q_b: float) -> float:
    """P(at least m completed reflections), from the closed-form survival laws.

    ``q_a``, ``q_b`` are deflection probabilities, as in the survival formulas.
    """
    if m == 0:
        return 1.0
    if model == "qm":
        return survival_probability_qm(m - 1, p, q_a, q_b) * (1 - p) * (1 - q_b)
    return survival_probability_sdhv(m, p, q_a, q_b)


def analytic_exit_distribution(model: str, p: float, q_a: float, q_b: float,
                               m_max: int = 10_000) -> np.ndarray:
    """P(exit loop count = m), m = 0..m_max, for the frozen-sdhv or qm law."""
    surv = np.array([reflection_survival(model, m, p, q_a, q_b) for m in range(m_max + 2)])
    return surv[:-1] - surv[1:]


def analytic_mean_exit_loops(model: str, p: float, q_a: float, q_b: float,
                             tol: float = 1e-15) -> float:
    """E[m] = sum_{m>=1} P(m completed reflections), summed until terms drop below ``tol``."""
    total, m = 0.0, 1
    while True:
        term = reflection_survival(model, m, p, q_a, q_b)
        total += term
        if term < tol:
            return total
        m += 1


def two_proportion_sample_size(p1: float, p2: float, significance: float = 0.05,
                               power: float = 0.9) -> int:
    """Per-arm n for a two-sided two-proportion z-test (pooled null variance)."""
    if p1 == p2:
        raise ValueError("proportions must differ")
    z_a = stats.norm.ppf(1 - significance / 2)
    z_b = stats.norm.ppf(power)
    pbar = 0.5 * (p1 + p2)
    num = z_a * math.sqrt(2 * pbar * (1 - pbar)) + z_b * math.sqrt(p1 * (1 - p1) + p2 * (1 - p2))
    return int(math.ceil((num / (p1 - p2)) ** 2))


# ----------------------------------------------------------------------
# power analysis
# ----------------------------------------------------------------------

def power_analysis(config, alpha_alt: float, significance: float, power_target: float,
                   trial_grid: Sequence[int], replicates: int = 200,
                   seed: Optional[int] = None, threads: int = 1) -> PowerResult:
    """Monte Carlo power of :func:`compare_distributions` for qm vs sdhv(alpha_alt).

    For each grid point both arms are simulated ``replicates`` times with
    ``n`` trials per arm. Returns the smallest ``n`` whose rejection rate
    reaches ``power_target`` (``required_trials=None`` if none does).
    """
    from .loop_experiment import simulate

    if not 0 < significance < power_target < 1:
        raise ValidationError("need 0 < significance < power_target < 1")
    grid = [int(n) for n in trial_grid]
    if not grid or any(n < 1 for n in grid) or sorted(set(grid)) != grid:
        raise ValidationError("trial_grid must be a non-empty strictly increasing list of counts >= 1")
    if replicates < MIN_REPLICATES:
        raise ValidationError(f"replicates must be >= {MIN_REPLICATES}")
    seed = config.master_seed if seed is None else seed
    exp_qm = config.with_values(model="qm").experiment()
    exp_alt = config.with_values(model="sdhv", alpha=alpha_alt).experiment()

    powers = {}
    required = None
    for i, n in enumerate(grid):
        total = n * replicates
        arm_qm = simulate(exp_qm, total, derive_seed(seed, "power", i, "qm"), threads=threads)
        arm_alt = simulate(exp_alt, total, derive_seed(seed, "power", i, "alt"), threads=threads)
        rejections = 0
        for r in range(replicates):
            sl = slice(r * n, (r + 1) * n)
            a = TrialEnsemble("qm", arm_qm.trial_index[sl], arm_qm.m[sl],
                              arm_qm.exit_point[sl], arm_qm.exit_time[sl])
            b = TrialEnsemble("sdhv", arm_alt.trial_index[sl], arm_alt.m[sl],
                              arm_alt.exit_point[sl], arm_alt.exit_time[sl])
            rejections += compare_distributions(a, b).p_value < significance
        powers[n] = rejections / replicates
        if required is None and powers[n] >= power_target:
            required = n
    return PowerResult(required, powers, significance, power_target, replicates)


# ----------------------------------------------------------------------
# bundles
# ----------------------------------------------------------------------

def ensemble_summary(ensemble: TrialEnsemble) -> dict:
    """JSON-ready statistics computable from the ensemble records alone."""
    out = {
        "model": ensemble.model,
        "n": len(ensemble),
        "n_censored": int(ensemble.censored.sum()),
        "histogram": {str(k): v for k, v in ensemble.histogram().items()},
        "exit_points": ensemble.exit_point_counts(),
        "mean_exit_time_s": None,
        "mean_exit_time_stderr_s": None,
        "mean_exit_loops": None,
        "mean_exit_loops_stderr": None,
    }
    if not len(ensemble) or ensemble.censored.all():
        return out
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        t = mean_exit_time(ensemble)
        m = mean_exit_loops(ensemble)
    out.update({
        "mean_exit_time_s": t.mean,
        "mean_exit_time_stderr_s": t.stderr,
        "mean_exit_loops": m.mean,
        "mean_exit_loops_stderr": m.stderr,
    })
    if out["n_censored"] > CENSORING_WARN_FRACTION * len(ensemble):
        out["warning"] = "more than 1% of records censored at max_loops"
    return out


def refit_curve(corr: np.ndarray, timestep: float, floor: float = DEFAULT_FIT_FLOOR,
                refine: Optional[float] = 0.1) -> DecayFit:
    """:func:`estimate_decay_time` starting from an already estimated curve."""
    pilot = fit_decay_time(corr, timestep, floor)
    if refine is None or not math.isfinite(pilot.tau_hat):
        return pilot
    window = max(2, math.ceil(refine * pilot.tau_hat / timestep))
    if window >= pilot.lags_used - 1:
        return pilot
    return fit_decay_time(np.asarray(corr)[:window + 1], timestep, floor)


def series_summary(corr: np.ndarray, timestep: float, floor: float = DEFAULT_FIT_FLOOR) -> dict:
    try:
        fit = refit_curve(corr, timestep, floor)
    except NoDecaySignal:
        return {"status": "no_decay_signal", "tau_hat_s": 0.0, "stderr_s": None,
                "lags_used": int(np.count_nonzero(np.asarray(corr) > floor)), "r_squared": None}
    d = fit.to_dict()
    d["status"] = "ok" if math.isfinite(fit.tau_hat) else "no_decay_in_window"
    return d

