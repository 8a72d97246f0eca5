import math

import numpy as np
import pytest

from loopsim.errors import ValidationError
from loopsim.hidden_variables import RoughnessSpec, SdhvParams
from loopsim.loop_experiment import (
    EXIT_POINTS,
    SPEED_OF_LIGHT,
    LoopExperiment,
    LoopGeometry,
    TrialEnsemble,
    closed_form_survival,
    frozen_alpha,
    loop_traversal_time,
    run_campaign,
    run_trial,
    simulate,
    survival_probability_qm,
    survival_probability_sdhv,
)
from loopsim.config import default_config
from loopsim.quantum_core import SIGMA_X, SIGMA_Z, Observable, QubitState
from loopsim.rng import RandomStream
from loopsim.stats_analysis import compare_distributions

PLUS_X = QubitState.normalized(1, 1)


def direct(model="qm", taus=(0.0, 0.0), p=0.01, pa=0.5, pb=0.5, **kw):
    return LoopExperiment(LoopGeometry(p, pa, pb), model, PLUS_X, SIGMA_Z, SIGMA_X,
                          detector_taus=taus, **kw)


def test_traversal_time_examples():
    t = loop_traversal_time(LoopGeometry(loop_length_m=1e-3))
    assert t == pytest.approx(1e-3 / 299_792_458.0, rel=1e-15)
    assert t < 1e-11
    assert loop_traversal_time(LoopGeometry(loop_length_m=100.0)) == pytest.approx(3.3356e-7, rel=1e-4)
    with pytest.raises(ValidationError):
        LoopGeometry(loop_length_m=0.0)


def test_geometry_probability_ranges():
    with pytest.raises(ValidationError, match="probability out of range"):
        LoopGeometry(pass_prob_a=1.2)
    with pytest.raises(ValidationError):
        LoopGeometry(mirror_transmission=0.0)


def test_survival_closed_forms():
    assert survival_probability_qm(0, 0.01, 0.5, 0.5) == 0.5
    assert survival_probability_qm(1, 0.01, 0.5, 0.5) == pytest.approx(0.99 * 0.25 * 0.5, rel=1e-15)
    assert survival_probability_qm(1, 0.01, 0.5, 0.5) == pytest.approx(0.12375, rel=1e-12)
    assert survival_probability_qm(2, 0.01, 0.5, 0.5) == pytest.approx(0.9801 * 0.125 * 0.25, rel=1e-15)
    assert survival_probability_qm(2, 0.01, 0.5, 0.5) == pytest.approx(0.030628125, rel=1e-12)
    assert survival_probability_sdhv(0, 0.01, 0.5, 0.5) == 0.25
    assert survival_probability_sdhv(1, 0.01, 0.5, 0.5) == pytest.approx(0.2475, rel=1e-12)


def test_sdhv_to_qm_ratio_grows():
    ratios = [survival_probability_sdhv(m, 0.01, 0.4, 0.3) / survival_probability_qm(m, 0.01, 0.4, 0.3)
              for m in range(12)]
    assert all(b > a for a, b in zip(ratios, ratios[1:]))
    for m, r in enumerate(ratios):
        assert r == pytest.approx((0.6 * 0.7) ** (-m) * 0.7, rel=1e-12)


def test_commuting_observables_rejected():
    with pytest.raises(ValidationError, match="observables commute"):
        LoopExperiment(LoopGeometry(), "qm", PLUS_X, SIGMA_Z, SIGMA_Z)


def test_unknown_model_rejected():
    with pytest.raises(ValidationError):
        direct(model="classical")


def test_derived_probability_must_be_open():
    # the initial state is an A eigenstate: first pass probability is 1
    with pytest.raises(ValidationError, match="probability out of range"):
        LoopExperiment(LoopGeometry(), "qm", QubitState([1, 0]), SIGMA_Z, SIGMA_X)


def _scalar(exp, seed, n):
    return [exp.run_trial(RandomStream(seed, i)) for i in range(n)]


@pytest.mark.parametrize("exp", [
    direct("qm"),
    direct("sdhv", taus=(1e-11, 3e-11)),
    direct("sdhv", taus=(math.inf, math.inf)),
    direct("sdhv", taus=(5e-12, math.inf), roughness=RoughnessSpec(1e-11, 1e-10)),
    direct("sdhv", taus=(2e-11, 2e-11), hidden_components=3),
    LoopExperiment(LoopGeometry(0.05), "qm", PLUS_X, SIGMA_Z, Observable.from_bloch(0.6, 0, 0.8)),
    LoopExperiment(LoopGeometry(0.05), "sdhv", PLUS_X, SIGMA_Z, Observable.from_bloch(0.6, 0, 0.8),
                   detector_taus=(1e-11, 1e-11)),
], ids=["qm", "sdhv", "frozen", "roughness", "components", "derived-qm", "derived-sdhv"])
def test_scalar_and_batch_paths_agree(exp):
    n = 400
    batch = exp.run_batch(2024, np.arange(n))
    for rec, b in zip(_scalar(exp, 2024, n), batch.records()):
        assert rec == b


def test_exit_accounting_and_time_consistency():
    exp = direct("sdhv", taus=(2e-11, 2e-11))
    ens = simulate(exp, 50_000, 3)
    assert len(ens) == 50_000
    assert sum(ens.histogram().values()) == 50_000
    assert sum(ens.exit_point_counts().values()) == 50_000
    frac = ens.exit_time / exp.loop_time - ens.m
    assert np.all(frac >= 0) and np.all(frac < 1)
    assert np.array_equal(ens.trial_index, np.arange(50_000))


def test_exit_positions_within_loop():
    exp = direct("qm")
    T = exp.loop_time
    for rec in simulate(exp, 2000, 4).records():
        position = {"detector_A": 0.2, "detector_B": 0.4, "one_way_mirror": 0.8}[rec.exit_point]
        assert rec.exit_time == pytest.approx((rec.exit_loop_count + position) * T, rel=1e-12)


def test_max_loops_censoring():
    exp = direct("sdhv", taus=(math.inf, math.inf), p=0.001, max_loops=5)
    ens = simulate(exp, 5000, 5)
    cens = ens.censored
    assert cens.any()
    assert np.all(ens.m[cens] == 5)
    assert np.allclose(ens.exit_time[cens], 5 * exp.loop_time)
    assert ens.m.max() == 5
    assert EXIT_POINTS[3] == "max_loops_reached"


def test_history_records_every_encounter():
    exp = direct("qm")
    for i in range(200):
        rec = exp.run_trial(RandomStream(6, i), record_history=True)
        extra = {"detector_A": 1, "detector_B": 2, "one_way_mirror": 2}[rec.exit_point]
        assert len(rec.outcome_history) == 2 * rec.exit_loop_count + extra
        last = rec.outcome_history[-1]
        if rec.exit_point == "one_way_mirror":
            assert last == ("B", 0)
        else:
            assert last[1] == 1


def test_derived_and_direct_paths_agree():
    g_direct = LoopGeometry(0.01, 0.5, 0.5)
    g_derived = LoopGeometry(0.01)
    a = LoopExperiment(g_direct, "qm", PLUS_X, SIGMA_Z, SIGMA_X)
    b = LoopExperiment(g_derived, "qm", PLUS_X, SIGMA_Z, SIGMA_X)
    assert b.encounter_probabilities == pytest.approx((0.5, 0.5, 0.5), abs=1e-15)
    ea, eb = simulate(a, 20_000, 7), simulate(b, 20_000, 7)
    assert np.array_equal(ea.m, eb.m) and np.array_equal(ea.exit_point, eb.exit_point)


def test_derived_qm_survival_with_tilted_observable():
    theta = 0.7
    obs_b = Observable.from_bloch(math.sin(theta), 0, math.cos(theta))
    state0 = obs_b.eigensystem.eigenvectors[0]
    exp = LoopExperiment(LoopGeometry(0.02), "qm", state0, SIGMA_Z, obs_b)
    c2 = math.cos(theta / 2) ** 2
    assert exp.encounter_probabilities == pytest.approx((c2, c2, c2), abs=1e-12)
    n = 200_000
    surv = simulate(exp, n, 8).survival_after_reflection(6)
    for m, s in enumerate(surv):
        expected = closed_form_survival(exp, m)
        assert expected == pytest.approx((0.98 ** m) * c2 ** (2 * m + 1), rel=1e-12)
        assert abs(s - expected) < 3 * math.sqrt(expected * (1 - expected) / n)


def test_alpha_continuity():
    cfg = default_config(geometry={"pass_prob_a": 0.5, "pass_prob_b": 0.5})
    means = []
    for alpha in (0.0, 0.1, 1.0, 10.0):
        ens = run_campaign(cfg.with_values(model="sdhv", alpha=alpha), n_trials=100_000, master_seed=9)
        means.append((ens.m.mean(), ens.m.std(ddof=1) / math.sqrt(len(ens))))
    for (m0, s0), (m1, s1) in zip(means, means[1:]):
        assert m1 > m0 - 3 * math.hypot(s0, s1)
    assert means[-1][0] > means[0][0]


def test_strong_roughness_restores_qm_statistics():
    rough = RoughnessSpec(1e-9, 1e-10)
    frozen = direct("sdhv", taus=(math.inf, math.inf), roughness=rough)
    qm = direct("qm")
    res = compare_distributions(simulate(frozen, 100_000, 10), simulate(qm, 100_000, 11))
    assert res.p_value > 0.01


def test_run_campaign_contract():
    cfg = default_config(run={"trials": 3000, "seed": 42})
    assert len(run_campaign(cfg, n_trials=0)) == 0
    a, b = run_campaign(cfg), run_campaign(cfg)
    assert np.array_equal(a.m, b.m) and np.array_equal(a.exit_time, b.exit_time)
    assert a.fingerprint == cfg.fingerprint()
    c = run_campaign(cfg, master_seed=43)
    assert not np.array_equal(a.m, c.m)
    assert compare_distributions(a, c).p_value > 0.01


def test_order_and_chunk_independence():
    exp = direct("sdhv", taus=(1e-11, 1e-11))
    whole = exp.run_batch(12, np.arange(1000))
    parts = [exp.run_batch(12, np.arange(1000)[::-1][i::3]) for i in range(3)]
    by_index = {}
    for part in parts:
        for i, m, e in zip(part.trial_index, part.m, part.exit_point):
            by_index[int(i)] = (int(m), int(e))
    assert all(by_index[i] == (int(m), int(e))
               for i, m, e in zip(whole.trial_index, whole.m, whole.exit_point))


def test_run_trial_wrapper():
    rec = run_trial(LoopGeometry(0.01, 0.5, 0.5), "sdhv", SdhvParams(1.0, 1e-7), PLUS_X,
                    SIGMA_Z, SIGMA_X, RandomStream(13, 0))
    assert rec.model == "sdhv" and rec.exit_point in EXIT_POINTS


def test_frozen_alpha_margin():
    exp = direct("sdhv")
    alpha = frozen_alpha(exp, 6.3e-8, margin=1e3, horizon_loops=10_000)
    assert alpha * 6.3e-8 == pytest.approx(1e3 * 10_000 * exp.loop_time)


def test_empty_ensemble():
    ens = TrialEnsemble.empty("qm")
    assert len(ens) == 0
    assert ens.histogram() == {}
    assert sum(ens.exit_point_counts().values()) == 0


def test_simulate_rejects_negative_trials():
    with pytest.raises(ValidationError):
        simulate(direct(), -1, 0)


def test_speed_default():
    assert LoopGeometry().particle_speed_m_s == SPEED_OF_LIGHT
