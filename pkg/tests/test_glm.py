import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bipartite_gps import glm
from bipartite_gps.errors import LengthMismatch, SingularDesign
from oracles import least_squares, loglik, newton_logistic, newton_poisson


def spec(family, p):
    return glm.GlmSpec(family, tuple(f"x{k}" for k in range(p)))


def poisson_problem(rng, n=400, p=3):
    X = rng.normal(size=(n, p))
    off = np.log(rng.uniform(50, 500, n))
    beta = rng.normal(0, 0.3, p)
    y = rng.poisson(np.exp(-3 + X @ beta + off)).astype(float)
    return X, y, off


def test_two_point_line():
    f = glm.fit(spec("normal", 1), [[0.0], [1.0]], [1.0, 3.0])
    np.testing.assert_allclose(f.coefficients, [1.0, 2.0], atol=1e-12)


def test_logistic_symmetric_intercept_zero():
    x = np.array([-2.0, -1.0, -0.5, 0.5, 1.0, 2.0])
    y = np.array([0.0, 1.0, 0.0, 1.0, 0.0, 1.0])
    f = glm.fit(spec("logistic", 1), x[:, None], y)
    assert f.converged
    assert abs(f.coefficients[0]) < 1e-10


def test_poisson_intercept_only_closed_form():
    rng = np.random.default_rng(3)
    B = rng.uniform(100, 1000, 50)
    y = rng.poisson(B * 0.01).astype(float)
    f = glm.fit(glm.GlmSpec("poisson_offset", ()), np.empty((50, 0)), y, np.log(B))
    assert f.coefficients[0] == pytest.approx(math.log(y.sum() / B.sum()), abs=1e-10)


def test_normal_matches_normal_equations():
    rng = np.random.default_rng(9)
    for _ in range(20):
        n, p = 200, int(rng.integers(1, 11))
        X = rng.normal(size=(n, p)) * rng.uniform(0.1, 100, p) + rng.normal(0, 10, p)
        y = X @ rng.normal(size=p) + rng.normal(size=n)
        f = glm.fit(spec("normal", p), X, y)
        np.testing.assert_allclose(f.coefficients, least_squares(X, y), rtol=0, atol=1e-8)
        resid = y - np.column_stack([np.ones(n), X]) @ least_squares(X, y)
        assert f.residual_variance == pytest.approx(resid @ resid / (n - p - 1), rel=1e-10)


def test_logistic_matches_newton():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(500, 3))
    y = (rng.uniform(size=500) < 1 / (1 + np.exp(-(0.3 + X @ [1.0, -0.5, 0.2])))).astype(float)
    f = glm.fit(spec("logistic", 3), X, y)
    np.testing.assert_allclose(f.coefficients, newton_logistic(X, y), atol=1e-9)


def test_poisson_matches_newton():
    X, y, off = poisson_problem(np.random.default_rng(6))
    f = glm.fit(spec("poisson_offset", 3), X, y, off)
    np.testing.assert_allclose(f.coefficients, newton_poisson(X, y, off), atol=1e-9)


@pytest.mark.parametrize("family", ["logistic", "poisson_offset", "normal"])
def test_score_and_finite_difference(family):
    rng = np.random.default_rng(11)
    n, p = 300, 4
    X = rng.normal(size=(n, p))
    off = None
    if family == "logistic":
        y = (rng.uniform(size=n) < 1 / (1 + np.exp(-X @ [0.5, -1, 0.2, 0.1]))).astype(float)
    elif family == "poisson_offset":
        _, y, off = poisson_problem(rng, n, p)
        X = _
    else:
        y = X @ [1.0, 2.0, -1.0, 0.5] + rng.normal(size=n)
    f = glm.fit(spec(family, p), X, y, off)
    X1 = np.column_stack([np.ones(n), X])
    o = 0.0 if off is None else off
    mu = {"logistic": lambda e: 1 / (1 + np.exp(-e)), "poisson_offset": np.exp,
          "normal": lambda e: e}[family](X1 @ f.coefficients + o)
    score = X1.T @ (y - mu)
    assert np.abs(score).max() <= 1e-6
    assert f.max_abs_score <= 1e-6
    # the likelihood is flat to first order at the optimum
    h = 1e-5
    for k in range(p + 1):
        e = np.zeros(p + 1)
        e[k] = h
        fd = (loglik(family, X1, f.coefficients + e, y, o)
              - loglik(family, X1, f.coefficients - e, y, o)) / (2 * h)
        scale = max(1.0, np.abs(X1[:, k] * y).sum())
        assert abs(fd) / scale < 1e-4


def test_deviance_non_increasing():
    X, y, off = poisson_problem(np.random.default_rng(12), 800, 5)
    f = glm.fit(spec("poisson_offset", 5), X, y, off)
    trace = np.array(f.deviance_trace)
    assert (np.diff(trace) <= 1e-9 * np.abs(trace[:-1])).all()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 100), st.floats(-50, 50),
       st.sampled_from(["logistic", "poisson_offset", "normal"]))
def test_affine_rescaling_invariance(seed, a, b, family):
    rng = np.random.default_rng(seed)
    n = 200
    X = rng.normal(size=(n, 2))
    off = None
    if family == "logistic":
        y = (rng.uniform(size=n) < 1 / (1 + np.exp(-X @ [0.8, -0.4]))).astype(float)
    elif family == "poisson_offset":
        off = np.log(rng.uniform(10, 100, n))
        y = rng.poisson(np.exp(-2 + X @ [0.3, 0.2] + off)).astype(float)
    else:
        y = X @ [1.0, -1.0] + rng.normal(size=n)
    X2 = X.copy()
    X2[:, 0] = a * X[:, 0] + b
    f1 = glm.fit(spec(family, 2), X, y, off)
    f2 = glm.fit(spec(family, 2), X2, y, off)
    assert f2.coefficients[1] == pytest.approx(f1.coefficients[1] / a, rel=1e-7, abs=1e-10)
    e1, e2 = glm.linear_predictor(f1, X), glm.linear_predictor(f2, X2)
    np.testing.assert_allclose(e1, e2, atol=1e-8)


def test_offset_contract():
    rng = np.random.default_rng(13)
    X, y, off = poisson_problem(rng, 300, 2)
    f = glm.fit(spec("poisson_offset", 2), X, y, off)
    m1 = glm.predict_mean(f, X, off)
    m2 = glm.predict_mean(f, X, off + math.log(2.0))
    np.testing.assert_allclose(m2, 2 * m1, rtol=1e-12)


def test_predict_probability():
    f = glm.fit(spec("logistic", 1), [[-1.0], [0.0], [1.0], [2.0]], [0.0, 1.0, 0.0, 1.0])
    zero = glm.GlmFit(spec=f.spec, coefficients=np.zeros(2), converged=True, iterations=0,
                      max_abs_score=0.0, deviance=0.0, n_obs=0,
                      design_column_means=np.zeros(1), design_column_sds=np.ones(1))
    assert glm.predict_probability(zero, [3.0]) == 0.5
    big = glm.GlmFit(**{**zero.__dict__, "coefficients": np.array([40.0, 0.0])})
    assert glm.predict_probability(big, [0.0]) == 1 - 1e-12
    small = glm.GlmFit(**{**zero.__dict__, "coefficients": np.array([-40.0, 0.0])})
    assert glm.predict_probability(small, [0.0]) == 1e-12
    x = 0.37
    eta = f.coefficients[0] + f.coefficients[1] * x
    assert glm.predict_probability(f, [x]) == pytest.approx(1 / (1 + math.exp(-eta)), rel=1e-14)


def normal_fit(coef, var):
    p = len(coef) - 1
    return glm.GlmFit(spec=spec("normal", p), coefficients=np.asarray(coef, dtype=float),
                      converged=True, iterations=1, max_abs_score=0.0, deviance=0.0,
                      n_obs=0, design_column_means=np.zeros(p), design_column_sds=np.ones(p),
                      residual_variance=var)


def test_gps_density():
    f = normal_fit([0.5, 2.0], 1 / (2 * math.pi))
    assert glm.gps_density(f, [0.25], 1.0) == pytest.approx(1.0, rel=1e-14)
    assert glm.gps_density(f, [0.25], 1e6) == 0.0
    f = normal_fit([0.1, -0.3, 0.7], 0.04)
    x, g = [0.2, 1.5], 0.9
    m = 0.1 - 0.3 * 0.2 + 0.7 * 1.5
    expected = math.exp(-(g - m) ** 2 / (2 * 0.04)) / math.sqrt(2 * math.pi * 0.04)
    assert glm.gps_density(f, x, g) == pytest.approx(expected, rel=1e-13)


def test_predict_mean():
    pois = glm.GlmFit(**{**normal_fit([0.0, 0.0], 1.0).__dict__,
                         "spec": spec("poisson_offset", 1)})
    assert glm.predict_mean(pois, [5.0], math.log(10000)) == pytest.approx(10000, rel=1e-14)
    assert glm.predict_mean(normal_fit([1.0, 2.0], 1.0), [3.0]) == 7.0
    rng = np.random.default_rng(1)
    X, y, off = poisson_problem(rng, 200, 2)
    f = glm.fit(spec("poisson_offset", 2), X, y, off)
    x = np.array([0.3, -1.2])
    b = f.coefficients
    assert glm.predict_mean(f, x, 2.0) == pytest.approx(
        math.exp(b[0] + b[1] * x[0] + b[2] * x[1] + 2.0), rel=1e-13)


def test_separation_flagged():
    x = np.array([-3.0, -2.0, -1.0, 1.0, 2.0, 3.0])
    f = glm.fit(spec("logistic", 1), x[:, None], (x > 0).astype(float))
    assert f.separated and not f.converged


def test_all_zero_poisson_not_converged():
    f = glm.fit(glm.GlmSpec("poisson_offset", ()), np.empty((5, 0)), np.zeros(5),
                np.log(np.full(5, 100.0)))
    assert not f.converged


def test_rank_deficient_rejected():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 2))
    X = np.column_stack([X, X[:, 0] + 2 * X[:, 1]])
    with pytest.raises(SingularDesign):
        glm.fit(spec("normal", 3), X, rng.normal(size=30))
    with pytest.raises(SingularDesign):
        glm.fit(spec("normal", 1), np.ones((10, 1)), rng.normal(size=10))


def test_length_checks():
    with pytest.raises(LengthMismatch):
        glm.fit(spec("normal", 1), np.ones((4, 1)), np.ones(3))
    with pytest.raises(LengthMismatch):
        glm.fit(spec("poisson_offset", 0), np.empty((3, 0)), np.ones(3))
