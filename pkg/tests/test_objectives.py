import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rtesnn import objectives as obj
from rtesnn import tensor as tn
from rtesnn.errors import ContractError, DimensionError
from rtesnn.objectives import LossConfig

from .oracles import central_difference, kl, softmax_rows

LN2 = math.log(2.0)


def logits_of(*probs):
    """Logit rows whose softmax is exactly (up to rounding) the given rows."""
    return np.log(np.asarray(probs, dtype=np.float64))


def test_softmax_examples():
    np.testing.assert_allclose(obj.softmax(tn.Tensor([0.0, 0.0])).data, [0.5, 0.5])
    np.testing.assert_allclose(obj.softmax(tn.Tensor([LN2, 0.0])).data, [2 / 3, 1 / 3], atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, 6, elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_shift_invariance(z, c):
    a = obj.softmax(tn.Tensor(z)).data
    b = obj.softmax(tn.Tensor(z + c)).data
    assert np.max(np.abs(a - b)) < 1e-12
    assert abs(a.sum() - 1) < 1e-9 and np.all(a >= 0)


def test_cross_entropy_examples():
    assert obj.cross_entropy_onehot(tn.Tensor([1.0, 0.0]), 0).item() == 0.0
    assert obj.cross_entropy_onehot(tn.Tensor([0.5, 0.5]), 0).item() == pytest.approx(0.693147, abs=1e-6)
    clamped = obj.cross_entropy_onehot(tn.Tensor([1.0, 0.0]), 1).item()
    assert clamped == pytest.approx(-math.log(1e-12))


def test_cross_entropy_label_out_of_range():
    with pytest.raises(ContractError):
        obj.cross_entropy_onehot(tn.Tensor([[0.5, 0.5]]), [2])


def test_kl_examples():
    assert obj.kl_divergence(tn.Tensor([0.3, 0.7]), tn.Tensor([0.3, 0.7])).item() == 0.0
    assert obj.kl_divergence(tn.Tensor([1.0, 0.0]), tn.Tensor([0.5, 0.5])).item() == pytest.approx(0.693147, abs=1e-6)


def test_kl_asymmetry():
    forward = obj.kl_divergence(tn.Tensor([0.9, 0.1]), tn.Tensor([0.5, 0.5])).item()
    reverse = obj.kl_divergence(tn.Tensor([0.5, 0.5]), tn.Tensor([0.9, 0.1])).item()
    assert forward == pytest.approx(kl([0.9, 0.1], [0.5, 0.5]), abs=1e-12)
    assert reverse == pytest.approx(kl([0.5, 0.5], [0.9, 0.1]), abs=1e-12)
    assert forward == pytest.approx(0.368064, abs=1e-6)
    assert reverse == pytest.approx(0.510826, abs=1e-6)
    assert forward != reverse


def test_kl_length_mismatch():
    with pytest.raises(DimensionError):
        obj.kl_divergence(tn.Tensor([0.5, 0.5]), tn.Tensor([0.2, 0.3, 0.5]))


def test_kl_differentiable_in_both_arguments():
    tape = tn.Tape()
    a = tape.watch(tn.Tensor([0.2, -0.4, 1.0]))
    b = tape.watch(tn.Tensor([0.1, 0.3, -0.2]))
    tn.backward(tape, obj.kl_divergence(tn.softmax(a), tn.softmax(b)))
    A, B = a.data.copy(), b.data.copy()
    num = central_difference(lambda: kl(softmax_rows(A), softmax_rows(B)), [A, B])
    np.testing.assert_allclose(a.grad, num[0], atol=1e-9)
    np.testing.assert_allclose(b.grad, num[1], atol=1e-9)


def test_tet_ce_single_timestep_is_plain_ce():
    logits = np.random.default_rng(0).standard_normal((1, 5, 3))
    y = np.array([0, 1, 2, 1, 0])
    want = np.mean([-math.log(softmax_rows(logits[0])[i, y[i]]) for i in range(5)])
    assert obj.tet_ce_loss(tn.Tensor(logits), y).item() == pytest.approx(want, abs=1e-12)


def test_tet_ce_identical_slices():
    one = np.random.default_rng(1).standard_normal((1, 4, 3))
    y = np.array([2, 0, 1, 1])
    single = obj.tet_ce_loss(tn.Tensor(one), y).item()
    assert obj.tet_ce_loss(tn.Tensor(np.repeat(one, 5, axis=0)), y).item() == pytest.approx(single, abs=1e-14)


def test_tet_ce_matches_oracle():
    rng = np.random.default_rng(2)
    logits = rng.standard_normal((4, 6, 5))
    y = rng.integers(0, 5, 6)
    total = 0.0
    for t in range(4):
        p = softmax_rows(logits[t])
        total += sum(-math.log(p[i, y[i]]) for i in range(6))
    assert abs(obj.tet_ce_loss(tn.Tensor(logits), y).item() - total / 24) < 1e-12


def test_rte_loss_gamma_zero_is_tet():
    rng = np.random.default_rng(3)
    clean, adv = rng.standard_normal((3, 4, 2)), rng.standard_normal((3, 4, 2))
    y = np.array([0, 1, 1, 0])
    got = obj.rte_loss(tn.Tensor(clean), tn.Tensor(adv), y, LossConfig(gamma=0.0)).item()
    assert got == obj.tet_ce_loss(tn.Tensor(clean), y).item()


def test_rte_loss_same_logits_is_tet():
    clean = np.random.default_rng(4).standard_normal((3, 4, 2))
    y = np.array([0, 1, 1, 0])
    got = obj.rte_loss(tn.Tensor(clean), tn.Tensor(clean), y, LossConfig(gamma=5.0)).item()
    assert got == pytest.approx(obj.tet_ce_loss(tn.Tensor(clean), y).item(), abs=1e-15)


def test_rte_loss_hand_case():
    clean = logits_of([0.7, 0.3], [0.6, 0.4])[:, None, :]
    adv = logits_of([0.5, 0.5], [0.6, 0.4])[:, None, :]
    want = 0.5 * ((-math.log(0.7) + kl([0.7, 0.3], [0.5, 0.5])) + (-math.log(0.6) + 0.0))
    got = obj.rte_loss(tn.Tensor(clean), tn.Tensor(adv), [0], LossConfig(gamma=1.0)).item()
    assert got == pytest.approx(want, abs=1e-12)


def test_rte_loss_direction_switch():
    clean = logits_of([0.7, 0.3])[:, None, :]
    adv = logits_of([0.5, 0.5])[:, None, :]
    cfg = LossConfig(gamma=2.0, kl_direction="adv-first")
    want = -math.log(0.7) + 2.0 * kl([0.5, 0.5], [0.7, 0.3])
    assert obj.rte_loss(tn.Tensor(clean), tn.Tensor(adv), [0], cfg).item() == pytest.approx(want, abs=1e-12)


def test_rte_loss_shape_mismatch():
    with pytest.raises(DimensionError):
        obj.rte_loss(tn.Tensor(np.zeros((2, 3, 2))), tn.Tensor(np.zeros((3, 3, 2))), [0, 1, 0])


def test_loss_config_validation():
    with pytest.raises(ContractError):
        LossConfig(gamma=-1)
    with pytest.raises(ContractError):
        LossConfig(kl_epsilon=0)
    with pytest.raises(ContractError):
        LossConfig(kl_direction="sideways")


def test_trades_loss_cases():
    rng = np.random.default_rng(5)
    clean, adv = rng.standard_normal((3, 4, 2)), rng.standard_normal((3, 4, 2))
    y = np.array([1, 0, 0, 1])
    ce_only = obj.aggregate_ce_loss(tn.Tensor(clean), y).item()
    assert obj.trades_loss(tn.Tensor(clean), tn.Tensor(adv), y, 0.0).item() == ce_only
    assert obj.trades_loss(tn.Tensor(clean), tn.Tensor(clean), y, 3.0).item() == pytest.approx(ce_only, abs=1e-15)


def test_trades_loss_hand_case():
    # two timesteps averaging to log(0.8/0.2) and log(0.5/0.5) margins
    clean = np.array([[[2 * math.log(4.0), 0.0]], [[0.0, 0.0]]])
    adv = np.array([[[0.0, 0.0]], [[0.0, 0.0]]])
    p = [0.8, 0.2]
    want = -math.log(0.8) + 1.5 * kl(p, [0.5, 0.5])
    assert obj.trades_loss(tn.Tensor(clean), tn.Tensor(adv), [0], 1.5).item() == pytest.approx(want, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_pinsker(n, seed):
    rng = np.random.default_rng(seed)
    p, q = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
    d = obj.kl_divergence(tn.Tensor(p), tn.Tensor(q)).item()
    assert d >= 0
    assert 0.5 * np.abs(p - q).sum() ** 2 <= d + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6), st.integers(2, 5), st.integers(0, 2**31 - 1))
def test_convexity_bound(T, C, seed):
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal((T, 1, C)) * 3
    y = [int(rng.integers(C))]
    agg = obj.aggregate_ce_loss(tn.Tensor(logits), y).item()
    assert agg <= obj.tet_ce_loss(tn.Tensor(logits), y).item() + 1e-12


def test_rte_loss_nonnegative_and_gradient_matches_fd():
    rng = np.random.default_rng(6)
    C, A = rng.standard_normal((3, 4, 3)), rng.standard_normal((3, 4, 3))
    y = np.array([0, 2, 1, 1])
    cfg = LossConfig(gamma=2.5)
    tape = tn.Tape()
    c, a = tape.watch(tn.Tensor(C)), tape.watch(tn.Tensor(A))
    loss = obj.rte_loss(c, a, y, cfg)
    assert loss.item() >= 0
    tn.backward(tape, loss)
    num = central_difference(lambda: obj.rte_loss(tn.Tensor(C), tn.Tensor(A), y, cfg).item(), [C, A])
    assert np.max(np.abs(c.grad - num[0])) < 1e-6
    assert np.max(np.abs(a.grad - num[1])) < 1e-6
