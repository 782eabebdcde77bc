import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from syntagraph.decoupling import dc_grad, dc_loss, decoupling_experiment, similarity_matrix


def random_rotation(d, rng):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def hand_loss(r):
    # Loop oracle: sum over ordered pairs i != j of (column_i . column_j)^2.
    k = r.shape[1]
    total = 0.0
    for i in range(k):
        for j in range(k):
            if i != j:
                dot = sum(r[a, i] * r[a, j] for a in range(r.shape[0]))
                total += dot * dot
    return total


def test_identity_is_orthogonal():
    assert dc_loss(np.eye(5)) == 0.0
    assert not np.any(dc_grad(np.eye(5)))


def test_all_ones_two_by_two():
    # Gram = [[2, 2], [2, 2]]; off-diagonal entries 2 and 2; 2^2 + 2^2 = 8
    assert dc_loss(np.ones((2, 2))) == 8.0


def test_single_relation():
    assert dc_loss(np.array([[3.0], [4.0]])) == 0.0


def test_matches_loop_oracle():
    r = np.random.default_rng(0).standard_normal((5, 4))
    assert dc_loss(r) == pytest.approx(hand_loss(r), rel=1e-12)


def test_gradient_central_differences():
    rng = np.random.default_rng(1)
    r = rng.standard_normal((4, 3))
    g = dc_grad(r)
    h = 1e-5
    for a in range(4):
        for b in range(3):
            e = np.zeros_like(r)
            e[a, b] = h
            numeric = (dc_loss(r + e) - dc_loss(r - e)) / (2 * h)
            assert abs(numeric - g[a, b]) <= 1e-6 * max(abs(numeric), abs(g[a, b]))


def test_gradient_homogeneity():
    r = np.random.default_rng(2).standard_normal((6, 4))
    assert np.allclose(dc_grad(2.5 * r), 2.5 ** 3 * dc_grad(r), rtol=1e-12, atol=0)


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        dc_loss(np.array([[np.nan, 1.0]]))
    with pytest.raises(ValueError):
        dc_loss(np.zeros((3, 0)))
    with pytest.raises(ValueError):
        dc_grad(np.array([1.0, 2.0]))


finite = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)),
                elements=st.floats(-3, 3, allow_nan=False))


@settings(max_examples=60, deadline=None)
@given(finite, st.floats(0.1, 4))
def test_homogeneity_property(r, c):
    base = dc_loss(r)
    assert dc_loss(c * r) == pytest.approx(c ** 4 * base, rel=1e-9, abs=1e-300)


@settings(max_examples=60, deadline=None)
@given(finite, st.integers(0, 2**32 - 1))
def test_rotation_invariance_property(r, seed):
    q = random_rotation(r.shape[0], np.random.default_rng(seed))
    assert dc_loss(q @ r) == pytest.approx(dc_loss(r), rel=1e-9, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(finite, st.integers(0, 2**32 - 1))
def test_directional_derivative(r, seed):
    v = np.random.default_rng(seed).standard_normal(r.shape)
    h = 1e-6
    numeric = (dc_loss(r + h * v) - dc_loss(r - h * v)) / (2 * h)
    analytic = float((dc_grad(r) * v).sum())
    # roundoff in the difference quotient scales with the loss itself
    floor = 1e-9 * (1.0 + dc_loss(r)) * float(np.abs(v).max())
    assert abs(numeric - analytic) <= 1e-6 * max(abs(analytic), abs(numeric)) + floor


def test_zero_iff_orthogonal():
    q = random_rotation(5, np.random.default_rng(3))[:, :3] * np.array([1.0, 2.0, 0.5])
    assert dc_loss(q) < 1e-24
    q[:, 1] += 0.1 * q[:, 0]
    assert dc_loss(q) > 0


def test_similarity_orthogonal_and_duplicate():
    rep = similarity_matrix(np.eye(4))
    assert rep.max_offdiag_abs == 0 and rep.mean_offdiag_abs == 0
    r = np.random.default_rng(0).standard_normal((5, 3))
    r[:, 2] = 3 * r[:, 0]
    rep = similarity_matrix(r)
    assert rep.matrix[0, 2] == pytest.approx(1.0, abs=1e-12)
    assert rep.max_offdiag_abs == pytest.approx(1.0, abs=1e-12)


def test_similarity_random_recomputed():
    r = np.random.default_rng(4).standard_normal((8, 6))
    rep = similarity_matrix(r)
    assert np.max(np.abs(rep.matrix - rep.matrix.T)) <= 1e-12
    assert np.max(np.abs(np.diag(rep.matrix) - 1)) <= 1e-12
    for i in range(6):
        for j in range(6):
            cos = r[:, i] @ r[:, j] / np.sqrt((r[:, i] @ r[:, i]) * (r[:, j] @ r[:, j]))
            assert rep.matrix[i, j] == pytest.approx(cos, abs=1e-12)


def test_similarity_zero_column_named():
    r = np.ones((3, 4))
    r[:, 2] = 0
    with pytest.raises(ValueError, match="column 2"):
        similarity_matrix(r)


def test_experiment_small():
    out = decoupling_experiment(k=6, d_r=8, steps=200, learning_rate=0.1, lambda_dc=1.0, seed=1)
    assert out.without_dc == similarity_matrix(out.initial)
    assert out.with_dc.mean_offdiag_abs < out.without_dc.mean_offdiag_abs
    assert np.all(np.diff(out.loss_trajectory) <= 1e-12)
    assert len(out.loss_trajectory) == 201


def test_experiment_deterministic_and_validated():
    a = decoupling_experiment(k=4, d_r=6, steps=10, seed=5)
    b = decoupling_experiment(k=4, d_r=6, steps=10, seed=5)
    assert a.with_dc == b.with_dc and np.array_equal(a.loss_trajectory, b.loss_trajectory)
    with pytest.raises(ValueError):
        decoupling_experiment(k=9, d_r=8)
    with pytest.raises(ValueError):
        decoupling_experiment(steps=0)
