import math

import numpy as np
import pytest

from icmpr.data import Dataset
from icmpr.model import ModelSpec, ModelType, Theta

ALL_TYPES = [t.value for t in ModelType]


def random_dataset(rng, n=50, m=2, right_frac=0.2, zero_left_frac=0.1):
    """Loosely realistic interval data: event times near 1, random inspection gaps."""
    cov = np.column_stack([rng.integers(0, 2, n).astype(float), rng.normal(0, 0.5, n)] +
                          [rng.normal(0, 1, n) for _ in range(m - 2)])[:, :m]
    T = rng.weibull(2.0, n) * rng.uniform(0.7, 1.5, n)
    width = rng.uniform(0.1, 0.8, n)
    a = np.maximum(T - rng.uniform(0, 1, n) * width, 0.0)
    b = a + width
    a = np.where(rng.random(n) < zero_left_frac, 0.0, a)
    b = np.where(rng.random(n) < right_frac, np.inf, b)
    return Dataset(a, b, cov, [f"x{j + 1}" for j in range(m)])


def random_spec(rng, model_type, m=2):
    mt = ModelType(model_type)

    def subset():
        return tuple(j for j in range(m) if rng.random() < 0.7)

    return ModelSpec.coerce(mt, subset() or (0,), subset(), subset())


def random_theta(rng, spec, spread=0.4):
    v = rng.normal(0, spread, spec.n_params)
    th = Theta.unpack(spec, v)
    th.alpha[0] = rng.uniform(-0.3, 0.6)
    if th.psi is not None:
        th.psi[0] = rng.uniform(-2.0, 0.5)
    return th


def naive_loglik(spec, theta, data):
    """Term-by-term interval likelihood in scalar arithmetic, sharing no code with the package."""
    total = 0.0
    for i in range(data.n):
        x = data.covariates[i]
        lp_b = theta.beta[0] + sum(theta.beta[1 + k] * x[j] for k, j in enumerate(spec.scale_idx))
        lp_a = theta.alpha[0] + sum(theta.alpha[1 + k] * x[j] for k, j in enumerate(spec.shape_idx))
        lam, gam = math.exp(lp_b), math.exp(lp_a)
        phi = 0.0
        if theta.psi is not None:
            lp_p = theta.psi[0] + sum(theta.psi[1 + k] * x[j] for k, j in enumerate(spec.disp_idx))
            phi = math.exp(lp_p)

        def S(t):
            if math.isinf(t):
                return 0.0
            L = lam * t ** gam
            return math.exp(-L) if phi == 0 else (1.0 + phi * L) ** (-1.0 / phi)

        total += math.log(S(data.left[i]) - S(data.right[i]))
    return total


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# ---- acceptance reporting ------------------------------------------------------
# Acceptance tests record one line per criterion; the lines are printed in the
# terminal summary so they survive output capture.

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def accept():
    def record(name, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
