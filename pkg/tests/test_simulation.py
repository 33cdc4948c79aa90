import math

import numpy as np
import pytest
from scipy import special, stats

from icmpr.errors import DomainError, SpecError
from icmpr.model import ModelSpec, ParamTriple, Theta, evaluate_parameters, log_marginal_survivor
from icmpr.simulation import (
    Scenario,
    calibrate_censoring,
    censored_fraction,
    draw_covariates,
    draw_frailty,
    draw_survival_time,
    make_interval,
    mean_survival,
    reference_truth,
    run_study,
    simulate_dataset,
)

NO_COV = np.zeros((1, 0))


def test_frailty_moments():
    rng = np.random.default_rng(1)
    u = draw_frailty(0.5, rng, size=1_000_000)
    assert abs(u.mean() - 1.0) < 0.003
    assert abs(u.var() - 0.5) < 0.01


def test_frailty_degenerate_limit():
    u = draw_frailty(1e-6, np.random.default_rng(2), size=100_000)
    assert u.var() < 1e-5


def test_frailty_domain():
    with pytest.raises(DomainError):
        draw_frailty(0.0, np.random.default_rng(0))


def test_survival_time_exponential_mean():
    T = draw_survival_time(ParamTriple(1.0, 1.0), 1.0, np.random.default_rng(3), size=1_000_000)
    assert abs(T.mean() - 1.0) < 0.003


def test_survival_time_weibull_mean():
    T = draw_survival_time(ParamTriple(1.0, 2.0), 1.0, np.random.default_rng(4), size=1_000_000)
    assert abs(T.mean() - special.gamma(1.5)) < 0.005


def test_marginal_draws_follow_closed_form_survivor():
    rng = np.random.default_rng(5)
    p = ParamTriple(0.8, 1.4, 0.5)
    u = draw_frailty(0.5, rng, size=10_000)
    T = draw_survival_time(p, u, rng, size=10_000)
    cdf = lambda t: -np.expm1(log_marginal_survivor(p, t))  # noqa: E731
    assert stats.kstest(T, cdf).pvalue > 0.01


def test_interval_width_law_and_containment():
    rng = np.random.default_rng(6)
    c = 0.8
    T = rng.uniform(5.0, 10.0, 1_000_000)  # far from zero so clamping never binds
    a, b = make_interval(T, c, rng)
    assert np.all((a < T) & (T <= b))
    assert np.all(b - a <= c + 1e-12)
    assert abs((b - a).mean() / (2 * c / 3) - 1) < 0.01


def test_interval_clamped_at_zero():
    rng = np.random.default_rng(7)
    T = rng.exponential(0.05, 100_000)
    a, b = make_interval(T, 1.0, rng)
    assert np.all(a >= 0) and np.all((a < T) & (T <= b))


def test_interval_deterministic_injection():
    a, b = make_interval(np.array([3.0]), 1.0, None, u1=np.array([0.5]), u2=np.array([0.5]))
    assert (a[0], b[0]) == (2.5, 3.5)


def test_mean_survival_closed_forms():
    assert mean_survival(ModelSpec("MPR"), Theta([0.0], [0.0]), NO_COV) == pytest.approx(1.0, rel=1e-8)
    assert mean_survival(ModelSpec("MPR"), Theta([0.0], [math.log(2)]), NO_COV) == pytest.approx(
        special.gamma(1.5), rel=1e-8)
    # gamma frailty with gamma = 1: E T = integral (1 + phi t)^(-1/phi) = 1 / (1 - phi)
    assert mean_survival(ModelSpec("PHF"), Theta([0.0], [0.0], [math.log(0.5)]), NO_COV) == pytest.approx(
        2.0, rel=1e-7)


def test_mean_survival_divergent():
    with pytest.raises(DomainError):
        mean_survival(ModelSpec("PHF"), Theta([0.0], [0.0], [0.5]), NO_COV)


def test_mean_survival_matches_monte_carlo():
    spec, theta = reference_truth("MPRF")
    sc = Scenario(100, spec, theta, d=0.1)
    rng = np.random.default_rng(8)
    cov = draw_covariates(sc.covariates, rng, 1_000_000)
    p = evaluate_parameters(spec, theta, cov)
    T = draw_survival_time(p, draw_frailty(p.phi, rng), rng)
    assert abs(sc.design.mean_time / T.mean() - 1) < 0.01


def test_calibration_exponential_closed_form():
    eta = calibrate_censoring(0.3, ModelSpec("MPR"), Theta([0.0], [0.0]), NO_COV)
    assert eta == pytest.approx(0.3 / 0.7, abs=1e-6)
    assert censored_fraction(eta, ModelSpec("MPR"), Theta([0.0], [0.0]), NO_COV) == pytest.approx(0.3, abs=1e-9)


def test_calibration_disabled_and_invalid():
    assert calibrate_censoring(0.0, ModelSpec("MPR"), Theta([0.0], [0.0]), NO_COV) is None
    with pytest.raises(DomainError):
        calibrate_censoring(1.0, ModelSpec("MPR"), Theta([0.0], [0.0]), NO_COV)


def test_scenario_validation():
    spec, theta = reference_truth("MPR")
    for kw in (dict(d=0.0), dict(p=1.0), dict(n=1)):
        args = dict(n=10, truth_spec=spec, truth=theta) | kw
        with pytest.raises(SpecError):
            Scenario(**args)
    with pytest.raises(SpecError):
        Scenario.from_dict({"n": 10, "model_type": "MPR", "scale": ["zz"], "truth": {"beta": [0, 0], "alpha": [0]}})


def test_scenario_dict_round_trip():
    spec, theta = reference_truth("MPRDM")
    sc = Scenario(50, spec, theta, d=0.3, p=0.2, replicates=3, seed=9)
    back = Scenario.from_dict(sc.to_dict())
    assert back.to_dict() == sc.to_dict()
    assert back.truth_spec == spec


def test_no_censoring_and_determinism():
    spec, theta = reference_truth("MPR")
    sc = Scenario(300, spec, theta, d=0.1, p=0.0, seed=12)
    d1 = simulate_dataset(sc, 4)
    assert not np.any(d1.right_censored)
    d2 = simulate_dataset(Scenario(300, spec, theta, d=0.1, p=0.0, seed=12), 4)
    for x, y in ((d1.left, d2.left), (d1.right, d2.right), (d1.covariates, d2.covariates)):
        assert x.tobytes() == y.tobytes()
    assert simulate_dataset(sc, 5).left.tobytes() != d1.left.tobytes()
    assert d1.meta["scenario"]["truth"]["beta"] == [2.0, 0.5, 0.3]


def test_realized_censoring_matches_target():
    spec, theta = reference_truth("MPRF")
    sc = Scenario(1000, spec, theta, d=0.5, p=0.3, seed=13)
    frac = np.mean([simulate_dataset(sc, r).right_censored.mean() for r in range(20)])
    assert abs(frac - 0.3) < 0.02


def test_run_study_summary_and_parallel_determinism():
    spec, theta = reference_truth("MPR")
    sc = Scenario(200, spec, theta, d=0.1, p=0.0, replicates=4, seed=14)
    s1 = run_study(sc)
    assert list(s1.table.columns) == ["truth", "median", "emp_se", "mean_model_se", "pct_bias"]
    assert s1.n_replicates == 4 and s1.convergence_rate == 1.0
    np.testing.assert_allclose(s1.table["truth"], theta.pack())
    s2 = run_study(sc, n_jobs=2)
    assert s1.table.equals(s2.table)


def test_run_study_frailty_reports_variance_row():
    spec, theta = reference_truth("MPRF")
    sc = Scenario(200, spec, theta, d=0.1, p=0.0, replicates=2, seed=15)
    tbl = run_study(sc).table
    assert tbl.loc["phi", "truth"] == pytest.approx(0.5)


def test_run_study_misspecified_fit():
    # fitting PH to MPR data: the summary covers only the fitted parameters
    spec, theta = reference_truth("MPR")
    sc = Scenario(200, spec, theta, d=0.1, p=0.0, replicates=2, seed=16)
    tbl = run_study(sc, fit_spec=ModelSpec("PH", (0, 1))).table
    assert len(tbl) == 4


def test_empirical_se_scales_with_root_n():
    # fivefold sample size should shrink empirical standard errors by about sqrt(5)
    spec, theta = reference_truth("MPR")
    se = {n: run_study(Scenario(n, spec, theta, d=0.1, p=0.0, replicates=150, seed=17)).table["emp_se"]
          for n in (200, 1000)}
    ratio = (se[200] / se[1000]).to_numpy()
    assert np.all((ratio > 1.8) & (ratio < 2.8)), ratio
