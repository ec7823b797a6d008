import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gausscrop.loss import cosine_sim, nt_xent_grad, nt_xent_loss, nt_xent_loss_and_grad

from oracles import direct_nt_xent, finite_difference_grad


def random_batch(rng, n_pairs, dim):
    return rng.normal(size=(2 * n_pairs, dim))


def test_cosine_examples():
    assert cosine_sim([1, 0, 0], [1, 0, 0]) == 1.0
    assert cosine_sim([1, 0], [0, 1]) == 0.0
    assert cosine_sim([1, 1], [1, 0]) == pytest.approx(1 / math.sqrt(2), abs=1e-15)


def test_cosine_rejects_zero():
    with pytest.raises(ValueError):
        cosine_sim([0, 0], [1, 0])


def test_single_pair_loss_is_zero():
    z = np.array([[1.0, 2.0, 3.0], [-4.0, 0.5, 1.0]])
    rep = nt_xent_loss(z, 0.3)
    assert rep.loss == 0.0
    np.testing.assert_array_equal(nt_xent_grad(z, 0.3), 0.0)


def test_two_pair_hand_value():
    z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    rep = nt_xent_loss(z, 1.0)
    expected = math.log(1 + 2 / math.e)
    assert expected == pytest.approx(0.5514, abs=1e-4)
    np.testing.assert_allclose(rep.per_anchor, expected, atol=1e-14)
    assert rep.loss == pytest.approx(expected, abs=1e-14)


@pytest.mark.parametrize("tau", [0.1, 0.5, 1.0])
def test_matches_direct_summation(tau):
    rng = np.random.default_rng(0)
    for _ in range(20):
        z = random_batch(rng, rng.integers(1, 9), rng.integers(1, 17))
        assert abs(nt_xent_loss(z, tau).loss - direct_nt_xent(z.tolist(), tau)) <= 1e-10


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(10):
        z = random_batch(rng, rng.integers(2, 6), rng.integers(2, 9))
        tau = float(rng.choice([0.1, 0.5, 1.0]))
        analytic = nt_xent_grad(z, tau)
        numeric = finite_difference_grad(lambda x: nt_xent_loss(x, tau).loss, z)
        scale = max(np.abs(numeric).max(), 1e-8)
        assert np.abs(analytic - numeric).max() / scale <= 1e-4


def test_gradient_scales_inversely_with_batch_scale():
    rng = np.random.default_rng(2)
    z = random_batch(rng, 4, 6)
    rep1, g1 = nt_xent_loss_and_grad(z, 0.5)
    rep2, g2 = nt_xent_loss_and_grad(3.0 * z, 0.5)
    assert rep1.loss == pytest.approx(rep2.loss, abs=1e-12)
    np.testing.assert_allclose(g2, g1 / 3.0, atol=1e-12)


def test_loss_invariant_to_orthogonal_transform():
    rng = np.random.default_rng(3)
    z = random_batch(rng, 6, 10)
    q, _ = np.linalg.qr(rng.normal(size=(10, 10)))
    assert abs(nt_xent_loss(z, 0.5).loss - nt_xent_loss(z @ q, 0.5).loss) <= 1e-10


def test_loss_invariant_to_row_rescaling():
    rng = np.random.default_rng(4)
    z = random_batch(rng, 6, 10)
    scales = rng.uniform(0.01, 100, size=(12, 1))
    assert abs(nt_xent_loss(z, 0.2).loss - nt_xent_loss(z * scales, 0.2).loss) <= 1e-10


def test_moving_positive_toward_anchor_never_hurts():
    rng = np.random.default_rng(5)
    for _ in range(50):
        z = random_batch(rng, 4, 5)
        before = nt_xent_loss(z, 0.5).per_anchor[0]
        target = z[0] / np.linalg.norm(z[0]) * np.linalg.norm(z[1])
        for t in np.linspace(0.1, 1.0, 10):
            moved = z.copy()
            moved[1] = (1 - t) * z[1] + t * target
            after = nt_xent_loss(moved, 0.5).per_anchor[0]
            assert after <= before + 1e-12
            before = after


@given(
    arrays(np.float64, st.tuples(st.sampled_from([2, 4, 6, 8]), st.integers(1, 6)), elements=st.floats(-10, 10)),
    st.sampled_from([0.05, 0.5, 2.0]),
)
@settings(max_examples=200)
def test_loss_nonnegative(z, tau):
    if np.any(np.linalg.norm(z, axis=1) < 1e-6):
        return
    rep = nt_xent_loss(z, tau)
    assert rep.loss >= 0
    assert np.all(rep.per_anchor >= 0)
    assert rep.loss == pytest.approx(rep.per_anchor.mean())


def test_low_temperature_is_stable():
    rng = np.random.default_rng(6)
    z = random_batch(rng, 8, 16)
    rep = nt_xent_loss(z, 1e-3)
    assert np.isfinite(rep.loss)
    assert np.all(np.isfinite(nt_xent_grad(z, 1e-3)))


@pytest.mark.parametrize(
    "z, tau",
    [
        (np.ones((4, 3)), 0.0),
        (np.ones((4, 3)), -1.0),
        (np.ones((3, 3)), 0.5),
        (np.ones((1, 3)), 0.5),
        (np.array([[1.0, 0], [0, 0], [1, 1], [0, 1]]), 0.5),
        (np.array([[np.nan, 0], [1, 0]]), 0.5),
    ],
)
def test_rejects_bad_input(z, tau):
    with pytest.raises(ValueError):
        nt_xent_loss(z, tau)
