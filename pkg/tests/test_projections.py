import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aggsplit.errors import EmptySet
from aggsplit.projections import (
    dykstra_projection,
    fista_minimize,
    halfspace_projector,
    project_box_simplex,
    project_box_simplex_batch,
)
from oracles import box_simplex_active_set


def test_already_feasible_point_is_fixed():
    out = project_box_simplex(np.array([0.5, 0.5]), np.array([1.0, 1.0]), 1.0)
    assert np.array_equal(out, np.array([0.5, 0.5]))


def test_clamps_to_upper_cap():
    out = project_box_simplex(np.array([2.0, 0.0]), np.array([1.0, 1.0]), 1.0)
    assert np.array_equal(out, np.array([1.0, 0.0]))


def test_symmetric_overshoot_splits_evenly():
    out = project_box_simplex(np.array([0.9, 0.9]), np.array([1.0, 1.0]), 1.0)
    assert np.array_equal(out, np.array([0.5, 0.5]))


def test_empty_set_raises():
    with pytest.raises(EmptySet):
        project_box_simplex(np.zeros(2), np.array([0.3, 0.3]), 1.0)
    with pytest.raises(EmptySet):
        project_box_simplex(np.zeros(2), np.array([1.0, 1.0]), -0.5)


def test_matches_active_set_enumeration_randomized():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(300):
        n = int(rng.integers(1, 5))
        upper = rng.uniform(0.1, 1.5, n)
        total = float(rng.uniform(0.0, upper.sum()))
        v = rng.uniform(-2.0, 2.0, n)
        weights = rng.uniform(0.2, 5.0, n)
        got = project_box_simplex(v, upper, total, weights)
        want = box_simplex_active_set(v, upper, total, weights)
        worst = max(worst, float(np.max(np.abs(got - want))))
    assert worst <= 1e-10


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(-3, 3), min_size=1, max_size=6),
    st.integers(0, 10**6),
)
def test_output_always_feasible(v_list, seed):
    rng = np.random.default_rng(seed)
    v = np.array(v_list)
    upper = rng.uniform(0.05, 1.0, v.shape[0])
    total = float(rng.uniform(0.0, upper.sum()))
    x = project_box_simplex(v, upper, total)
    assert np.all(x >= 0.0) and np.all(x <= upper)
    assert abs(x.sum() - total) <= 1e-12


def test_projection_is_idempotent():
    rng = np.random.default_rng(7)
    for _ in range(50):
        v = rng.standard_normal(4)
        upper = rng.uniform(0.2, 1.0, 4)
        w = rng.uniform(0.5, 2.0, 4)
        once = project_box_simplex(v, upper, 1.0, w)
        twice = project_box_simplex(once, upper, 1.0, w)
        assert np.max(np.abs(once - twice)) <= 1e-12


def test_batch_matches_per_row_bitwise():
    rng = np.random.default_rng(3)
    V = rng.standard_normal((8, 4))
    U = rng.uniform(0.3, 1.0, (8, 4))
    totals = rng.uniform(0.1, 1.0, 8)
    W = rng.uniform(0.5, 2.0, (8, 4))
    batch = project_box_simplex_batch(V, U, totals, W)
    for i in range(8):
        single = project_box_simplex(V[i], U[i], totals[i], W[i])
        assert np.array_equal(batch[i], single)


def test_fista_solves_box_constrained_quadratic():
    rng = np.random.default_rng(0)
    M = rng.standard_normal((5, 5))
    H = M @ M.T + 2.0 * np.eye(5)
    c = rng.standard_normal(5)

    def grad(z):
        return H @ z - c

    def project(z):
        return np.clip(z, 0.0, 1.0)

    L = float(np.linalg.eigvalsh(H)[-1])
    mu = float(np.linalg.eigvalsh(H)[0])
    z = fista_minimize(grad, project, np.zeros(5), L, strong_convexity=mu, tol=1e-11)
    # optimality: natural residual at the solution
    assert np.linalg.norm(z - project(z - grad(z))) <= 1e-10


def test_dykstra_hits_intersection():
    box = lambda z: np.clip(z, 0.0, 1.0)
    half = halfspace_projector(np.array([1.0, 1.0]), 1.0)
    z = dykstra_projection(np.array([2.0, 2.0]), [box, half])
    # intersection point closest to (2, 2) on x+y<=1 within the unit box
    assert np.allclose(z, [0.5, 0.5], atol=1e-9)
