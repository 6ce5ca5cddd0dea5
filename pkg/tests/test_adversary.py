import math

import numpy as np
import pytest

from trendgcn import autodiff as ad
from trendgcn.adversary import (
    AdvConfig,
    MlpDiscriminator,
    bce_discriminator_loss,
    build_graph_sample,
    build_seq_sample,
    d_graph_loss,
    d_seq_loss,
    forward_difference,
    frozen,
    gen_adv_loss,
    l1_per_step,
    l1_prediction_loss,
    reflect_prediction,
    trend_loss,
)
from trendgcn.autodiff import Tensor
from trendgcn.errors import ShapeError
from trendgcn.selfcheck import toy_model

TWO_LN2 = 2 * math.log(2.0)


class ConstantCritic:
    """Scores every sample 0.5 (a stand-in with the discriminator call signature)."""

    def __init__(self, value=0.5):
        self.value = value

    def __call__(self, x):
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
        return ad.add(ad.scale(ad.sum(x, axis=1), 0.0), self.value)

    def parameters(self):
        return []


def test_seq_sample_definition_and_shape():
    s = build_seq_sample(np.array([[1.0], [2.0]]), np.array([[3.0]]))
    assert s.data.tolist() == [[1.0, 2.0, 3.0]]
    rng = np.random.default_rng(0)
    s = build_seq_sample(rng.normal(size=(5, 12, 7)), rng.normal(size=(5, 12, 7)))
    assert s.shape == (35, 24)


def test_seq_sample_rejects_mismatched_nodes():
    with pytest.raises(ShapeError):
        build_seq_sample(np.zeros((2, 3, 4)), np.zeros((2, 2, 5)))


def test_graph_sample_closed_forms():
    same = build_graph_sample(np.ones((3, 4))).data
    assert np.allclose(same, 0.25)
    g = build_graph_sample(np.array([[1.0, 0.0], [0.0, 1.0]])).data
    e = math.e
    assert np.allclose(g, [[e / (e + 1), 1 / (e + 1)], [1 / (e + 1), e / (e + 1)]])


def test_graph_sample_rows_sum_to_one():
    g = build_graph_sample(np.random.default_rng(0).normal(size=(4, 12, 9))).data
    assert np.allclose(g.sum(axis=-1), 1.0, atol=1e-6)


def test_discriminator_scores_strictly_inside_unit_interval():
    d = MlpDiscriminator(5, (8, 4), seed=0)
    big = 1e4 * np.random.default_rng(0).normal(size=(50, 5)).astype(np.float32)
    s = d(big).data
    assert s.shape == (50,)
    assert np.all(s > 0) and np.all(s < 1)
    with pytest.raises(ShapeError):
        d(np.zeros((3, 4)))


def test_half_critic_loss_is_two_ln2():
    c = ConstantCritic()
    x = np.random.default_rng(0).normal(size=(6, 4))
    assert abs(d_seq_loss(c, x, x).item() - TWO_LN2) < 1e-12
    g = np.random.default_rng(1).normal(size=(2, 3, 3))
    assert abs(d_graph_loss(c, g, g).item() - TWO_LN2) < 1e-12


def test_perfect_critic_loss_is_near_zero():
    loss = bce_discriminator_loss(Tensor(np.ones(4)), Tensor(np.zeros(4))).item()
    assert 0.0 <= loss < 1e-9


def test_label_flip_metamorphic():
    rng = np.random.default_rng(3)
    p_real, p_fake = rng.uniform(0.05, 0.95, 20), rng.uniform(0.05, 0.95, 20)
    flipped = bce_discriminator_loss(Tensor(1 - p_fake), Tensor(1 - p_real)).item()
    direct = bce_discriminator_loss(Tensor(p_real), Tensor(p_fake)).item()
    assert abs(flipped - direct) < 1e-12
    swapped = bce_discriminator_loss(Tensor(p_fake), Tensor(p_real)).item()
    expected = -np.mean(np.log(p_fake)) - np.mean(np.log(1 - p_real))
    assert abs(swapped - expected) < 1e-12


def test_gen_adv_loss_closed_form_with_half_critics():
    c = ConstantCritic()
    seq = np.zeros((4, 5))
    graph = np.zeros((1, 3, 3))
    loss = gen_adv_loss(c, c, seq, seq, graph, graph, AdvConfig(alpha=0.01, beta=1.0)).item()
    assert abs(loss - (0.01 * TWO_LN2 + TWO_LN2)) < 1e-12


def test_zero_weights_skip_critics():
    loss = gen_adv_loss(None, None, None, None, None, None, AdvConfig(alpha=0.0, beta=0.0))
    assert loss.item() == 0.0


def test_real_terms_do_not_change_generator_gradient():
    model, d_seq, d_graph, x, y = toy_model(0)
    adv = AdvConfig(alpha=0.3, beta=1.0)
    hist, fut = x[..., 0], y[..., 0]

    def grads(with_real):
        for p in model.parameters():
            p.grad = None
        with frozen(d_seq, d_graph):
            pred0 = model.forward(Tensor(x))[..., 0]
            fake_s, fake_g = build_seq_sample(hist, pred0), build_graph_sample(pred0)
            if with_real:
                loss = gen_adv_loss(d_seq, d_graph, build_seq_sample(hist, fut), fake_s,
                                    build_graph_sample(fut), fake_g, adv)
            else:
                seq_term = ad.scale(ad.mean(ad.log(d_seq(fake_s), floor=1e-12)), -adv.alpha)
                flat = ad.reshape(fake_g, (fake_g.shape[0], fake_g.shape[1] * fake_g.shape[2]))
                graph_term = ad.scale(ad.mean(ad.log(d_graph(flat), floor=1e-12)), -adv.beta)
                loss = ad.add(seq_term, graph_term)
            loss.backward()
        return [p.grad.copy() for p in model.parameters()]

    for a, b in zip(grads(True), grads(False)):
        assert np.max(np.abs(a - b)) <= 1e-10
    assert all(p.grad is None for p in d_seq.parameters())


def test_frozen_restores_flags():
    d = MlpDiscriminator(3, (4, 4))
    with frozen(d, None):
        assert not any(p.requires_grad for p in d.parameters())
    assert all(p.requires_grad for p in d.parameters())


# ---- prediction loss and trend oracle --------------------------------------

def test_l1_closed_forms():
    truth = np.random.default_rng(0).normal(size=(3, 12, 5, 1))
    assert l1_prediction_loss(truth, truth).item() == 0.0
    assert abs(l1_prediction_loss(truth, truth + 1).item() - 12 * 5) < 1e-9
    assert np.allclose(l1_per_step(truth, truth + 1), 5.0)


def test_l1_triangle_inequality():
    rng = np.random.default_rng(1)
    for _ in range(200):
        a, b, c = rng.normal(size=(3, 4, 6, 1))
        l_ac = l1_prediction_loss(a, c).item()
        assert l_ac <= l1_prediction_loss(a, b).item() + l1_prediction_loss(b, c).item() + 1e-12


def test_l1_respects_weights():
    truth = np.zeros((1, 2, 2, 1))
    pred = np.ones((1, 2, 2, 1))
    w = np.array([1.0, 0.0, 1.0, 0.0]).reshape(1, 2, 2, 1)
    assert l1_prediction_loss(truth, pred, w).item() == 2.0


def test_reflection_properties():
    rng = np.random.default_rng(2)
    # dyadic grid: 2t - p and the L1 sums are then exact in float64
    truth, pred = rng.integers(-2 ** 20, 2 ** 20, size=(2, 12, 4, 1)) / 2.0 ** 10
    assert np.array_equal(reflect_prediction(truth, truth), truth)
    refl = reflect_prediction(truth, pred)
    assert l1_prediction_loss(truth, pred).item() == l1_prediction_loss(truth, refl).item()
    m, m_hat, m_tilde = (forward_difference(v) for v in (truth, pred, refl))
    assert np.max(np.abs(m_tilde - (2 * m - m_hat))) <= 1e-12


def test_reflection_on_general_floats_matches_to_rounding():
    rng = np.random.default_rng(5)
    truth, pred = rng.normal(size=(2, 12, 4, 1))
    a = l1_prediction_loss(truth, pred).item()
    b = l1_prediction_loss(truth, reflect_prediction(truth, pred)).item()
    assert abs(a - b) <= 1e-12 * a


def test_trend_loss_properties():
    rng = np.random.default_rng(3)
    truth = rng.normal(size=(12, 4))
    assert trend_loss(truth, truth + 3.0) == pytest.approx(0.0, abs=1e-12)
    assert l1_prediction_loss(truth, truth + 3.0).item() > 0
    pred = truth + rng.normal(size=truth.shape)
    assert trend_loss(truth, pred) > 0
    assert trend_loss(truth, reflect_prediction(truth, pred)) == pytest.approx(trend_loss(truth, pred))


def test_single_spike_adds_twice_its_height():
    truth = np.linspace(0.0, 1.0, 12)[:, None]
    pred = truth.copy()
    pred[5, 0] += 4.0
    assert trend_loss(truth, pred) == pytest.approx(8.0)


def test_trend_loss_needs_two_steps():
    with pytest.raises(ShapeError):
        trend_loss(np.zeros((1, 3)), np.zeros((1, 3)))
