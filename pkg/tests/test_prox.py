import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize_scalar

from robust_sensing.solvers import (block_soft_threshold, block_soft_threshold_rows, scalar_huber,
                                    vector_huber_cost)

vectors = st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=6).map(np.array)
lams = st.floats(0.0, 10.0, allow_nan=False)


def prox_cost(u, v, lam):
    return 0.5 * np.sum((v - u) ** 2) + lam * np.linalg.norm(u)


@settings(max_examples=200, deadline=None)
@given(vectors, lams)
def test_threshold_beats_line_search(v, lam):
    u = block_soft_threshold(v, lam)
    nv = np.linalg.norm(v)
    # the minimizer lies on the ray through v; search the step length directly
    if nv > 0:
        res = minimize_scalar(lambda t: prox_cost(t * v / nv, v, lam), bounds=(0.0, nv),
                              method="bounded", options={"xatol": 1e-12})
        assert prox_cost(u, v, lam) <= res.fun + 1e-10
    assert prox_cost(u, v, lam) <= prox_cost(np.zeros_like(v), v, lam) + 1e-12


@settings(max_examples=100, deadline=None)
@given(vectors, lams, st.integers(0, 2**32 - 1))
def test_threshold_beats_random_perturbations(v, lam, seed):
    u = block_soft_threshold(v, lam)
    g = np.random.default_rng(seed)
    best = prox_cost(u, v, lam)
    for scale in (1e-3, 1e-1, 1.0):
        w = u + scale * g.standard_normal(v.shape)
        assert best <= prox_cost(w, v, lam) + 1e-10


def test_threshold_tie_goes_to_zero():
    v = np.array([3.0, 4.0])
    assert not block_soft_threshold(v, 5.0).any()
    assert np.allclose(block_soft_threshold(v, 2.5), v * 0.5)


def test_rowwise_matches_single():
    g = np.random.default_rng(0)
    V = g.standard_normal((7, 3))
    lam = g.random(7) * 2
    rows = block_soft_threshold_rows(V, lam)
    for i in range(7):
        assert np.allclose(rows[i], block_soft_threshold(V[i], lam[i]))
    assert np.allclose(block_soft_threshold_rows(V, 0.7),
                       np.vstack([block_soft_threshold(r, 0.7) for r in V]))


@settings(max_examples=100, deadline=None)
@given(vectors, st.floats(0.01, 10.0))
def test_vector_huber_is_min_over_outlier(r, lam):
    u = block_soft_threshold(r, lam)
    direct = prox_cost(u, r, lam)
    assert np.isclose(vector_huber_cost([np.linalg.norm(r)], lam), direct, rtol=1e-10, atol=1e-12)


def test_vector_huber_pieces():
    assert vector_huber_cost([0.5, 3.0], 1.0) == pytest.approx(0.125 + 2.5)
    with pytest.raises(ValueError):
        vector_huber_cost([-1.0], 1.0)


def test_scalar_huber_is_vector_huber_in_one_dimension():
    r = np.linspace(-4, 4, 41)
    assert np.allclose(scalar_huber(r, 1.5), [vector_huber_cost([abs(x)], 1.5) for x in r])
