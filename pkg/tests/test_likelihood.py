import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from icmpr.data import Dataset
from icmpr.likelihood import (
    information_rank,
    log_interval_prob,
    log_likelihood,
    numerical_jacobian,
    observed_information,
    score,
)
from icmpr.model import ModelSpec, ParamTriple, Theta

from conftest import ALL_TYPES, naive_loglik, random_dataset, random_spec, random_theta


def fd_gradient(spec, theta, data, rel=1e-6):
    vec = theta.pack()
    out = np.empty_like(vec)
    for j in range(vec.size):
        h = rel * max(1.0, abs(vec[j]))
        vp, vm = vec.copy(), vec.copy()
        vp[j] += h
        vm[j] -= h
        out[j] = (log_likelihood(spec, vp, data).value - log_likelihood(spec, vm, data).value) / (2 * h)
    return out


# ---- interval probabilities --------------------------------------------------

def test_interval_prob_examples():
    assert abs(log_interval_prob(ParamTriple(1, 1, 0), 1.0, 2.0) - math.log(math.exp(-1) - math.exp(-2))) < 1e-10
    assert abs(log_interval_prob(ParamTriple(1, 1, 0), 1.0, 2.0) - (-1.45868)) < 1e-5
    assert abs(log_interval_prob(ParamTriple(1, 1, 1), 1.0, 2.0) - math.log(1 / 6)) < 1e-10
    assert abs(log_interval_prob(ParamTriple(1, 1, 0), 1.0, np.inf) - (-1.0)) < 1e-10


def test_interval_prob_degenerate():
    assert log_interval_prob(ParamTriple(1, 1, 0), 1.0, 1.0) == -np.inf
    # survivors equal to machine precision deep in the tail
    assert log_interval_prob(ParamTriple(1, 1, 0), 1e-20, 2e-20) < -40
    assert log_interval_prob(ParamTriple(1, 1, 0), 800.0, 900.0) == pytest.approx(-800.0, abs=1e-9)


def test_interval_prob_deep_right_tail_is_finite():
    # S(a) and S(b) both underflow in linear space; the log-space difference does not
    p = ParamTriple(1.0, 1.0, 0.0)
    val = log_interval_prob(p, 1000.0, 1001.0)
    assert val == pytest.approx(-1000.0 + math.log1p(-math.exp(-1.0)), abs=1e-9)


# ---- log-likelihood ------------------------------------------------------------

def test_additivity_two_identical_rows():
    spec = ModelSpec("MPR")
    data = Dataset([1.0, 1.0], [2.0, 2.0])
    res = log_likelihood(spec, Theta.zeros(spec), data)
    assert res.value == pytest.approx(2 * -1.4586751453870819, abs=1e-12)
    assert res.value == pytest.approx(res.per_obs.sum(), abs=0)
    assert np.all(res.per_obs <= 0)


@pytest.mark.parametrize("mt", ALL_TYPES)
def test_matches_naive_evaluator(mt, rng):
    for _ in range(5):
        data = random_dataset(rng, n=30, m=3)
        spec = random_spec(rng, mt, m=3)
        theta = random_theta(rng, spec)
        assert log_likelihood(spec, theta, data).value == pytest.approx(
            naive_loglik(spec, theta, data), rel=1e-10, abs=1e-10)


def test_right_censored_at_zero_leaves_loglik_unchanged(rng):
    data = random_dataset(rng, n=20)
    spec = ModelSpec("MPRDM", (0, 1), (0,), (1,))
    theta = random_theta(rng, spec)
    extra = Dataset(np.append(data.left, 0.0), np.append(data.right, np.inf),
                    np.vstack([data.covariates, [1.0, 0.3]]), data.column_names)
    assert log_likelihood(spec, theta, extra).value == log_likelihood(spec, theta, data).value


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.sampled_from(ALL_TYPES), st.permutations([0, 1, 2]), st.integers(0, 10_000))
def test_column_permutation_invariance(mt, perm, seed):
    rng = np.random.default_rng(seed)
    data = random_dataset(rng, n=25, m=3)
    spec = random_spec(rng, mt, m=3)
    theta = random_theta(rng, spec)
    # column j of the permuted data is original column perm[j]
    inv = {old: new for new, old in enumerate(perm)}
    new_spec = ModelSpec(spec.model_type, [inv[i] for i in spec.scale_idx],
                         [inv[i] for i in spec.shape_idx], [inv[i] for i in spec.disp_idx])
    a = log_likelihood(spec, theta, data)
    b = log_likelihood(new_spec, theta, data.permute_columns(perm))
    np.testing.assert_allclose(b.per_obs, a.per_obs, rtol=1e-13, atol=1e-13)


def test_nonfinite_term_propagates(rng):
    spec = ModelSpec("PH")
    data = Dataset([1.0, 1e-300], [2.0, 2e-300])
    assert log_likelihood(spec, Theta.zeros(spec), data).value == -np.inf


# ---- score ------------------------------------------------------------------------

def test_score_hand_example():
    spec = ModelSpec("MPR")
    data = Dataset([1.0], [2.0])
    e1, e2 = math.exp(-1), math.exp(-2)
    expected = (2 * e2 - e1) / (e1 - e2)
    g = score(spec, Theta.zeros(spec), data)
    assert g[0] == pytest.approx(expected, abs=1e-12)
    assert g[0] == pytest.approx(-0.41802, abs=1e-5)
    assert g[0] == pytest.approx(fd_gradient(spec, Theta.zeros(spec), data)[0], abs=1e-8)


@pytest.mark.parametrize("mt", ALL_TYPES)
def test_score_matches_finite_differences(mt, rng):
    for _ in range(6):
        data = random_dataset(rng, n=50)
        spec = random_spec(rng, mt)
        theta = random_theta(rng, spec)
        g = score(spec, theta, data)
        fd = fd_gradient(spec, theta, data)
        assert np.all(np.abs(g - fd) / np.maximum(1.0, np.abs(fd)) < 1e-6), (spec, g, fd)


def test_score_near_zero_frailty_matches_finite_differences(rng):
    # frailty variance small enough that the series branches are used
    data = random_dataset(rng, n=40)
    spec = ModelSpec("MPRDM", (0, 1), (0,), (1,))
    for psi0 in (-8.0, -12.0, -18.0):
        theta = Theta([0.1, 0.2, -0.1], [0.4, 0.1], [psi0, 0.3])
        g, fd = score(spec, theta, data), fd_gradient(spec, theta, data)
        assert np.all(np.abs(g - fd) / np.maximum(1.0, np.abs(fd)) < 1e-6)


def test_score_with_zero_left_endpoints():
    spec = ModelSpec("MPRF", (0,), (0,))
    data = Dataset([0.0, 0.0, 0.5], [1.0, 3.0, np.inf], [[1.0], [0.0], [1.0]])
    theta = Theta([0.1, 0.2], [0.3, -0.2], [-0.5])
    g = score(spec, theta, data)
    assert np.all(np.isfinite(g))
    np.testing.assert_allclose(g, fd_gradient(spec, theta, data), atol=1e-7)


# ---- observed information ---------------------------------------------------------

def test_information_recovers_quadratic_hessian():
    A = np.array([[4.0, 1.0, -0.5], [1.0, 3.0, 0.2], [-0.5, 0.2, 2.0]])
    c = np.array([0.3, -1.0, 2.0])
    spec = ModelSpec("PHF")  # three parameters
    data = Dataset([1.0], [2.0])
    # l(v) = -v'Av/2 + c'v has score c - Av and information A
    info = observed_information(spec, np.array([0.7, -0.2, 1.5]), data, score_fn=lambda v: c - A @ v)
    np.testing.assert_allclose(info, A, rtol=1e-9, atol=1e-9)


def test_information_exponential_one_parameter():
    # l(beta) = log(exp(-lam a) - exp(-lam b)), lam = e^beta; derivatives by hand:
    # l'  = lam N / D with A = e^{-lam a}, B = e^{-lam b}, D = A - B, N = b B - a A
    # l'' = l' + lam^2 (a^2 A - b^2 B) / D - l'^2
    spec = ModelSpec("PH")
    a_s, b_s = np.array([0.5, 1.0, 0.0, 2.0]), np.array([1.5, 2.0, 0.7, np.inf])
    data = Dataset(a_s, b_s)
    beta = -0.3
    lam = math.exp(beta)
    second = 0.0
    for a, b in zip(a_s, b_s):
        A = math.exp(-lam * a)
        B = 0.0 if math.isinf(b) else math.exp(-lam * b)
        bB = 0.0 if math.isinf(b) else b * B
        bbB = 0.0 if math.isinf(b) else b * b * B
        D = A - B
        d1 = lam * (bB - a * A) / D
        second += d1 + lam ** 2 * (a * a * A - bbB) / D - d1 ** 2
    info = observed_information(spec, Theta([beta], [0.0]), data)
    assert info[0, 0] == pytest.approx(-second, rel=1e-7)


def test_information_symmetric_and_rank(rng):
    data = random_dataset(rng, n=60)
    spec = ModelSpec("MPRDM", (0, 1), (0, 1), (0,))
    theta = random_theta(rng, spec)
    info = observed_information(spec, theta, data)
    np.testing.assert_array_equal(info, info.T)
    assert information_rank(info) == spec.n_params


def test_rank_deficient_flagged():
    spec = ModelSpec("PH", (0, 1))
    data = Dataset([0.5, 1.0, 0.2], [1.5, 2.0, 1.0], [[1.0, 1.0], [0.0, 0.0], [1.0, 1.0]])
    info = observed_information(spec, Theta.zeros(spec), data)
    assert information_rank(info) < spec.n_params


def test_numerical_jacobian_linear():
    M = np.array([[1.0, 2.0], [3.0, -4.0]])
    np.testing.assert_allclose(numerical_jacobian(lambda v: M @ v, np.array([1.0, 2.0])), M, atol=1e-9)
