"""
Finite-difference audit of every differentiable primitive and of the composed
training loss on a tiny float64 model.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .adversary import (
    AdvConfig,
    MlpDiscriminator,
    build_graph_sample,
    build_seq_sample,
    gen_adv_loss,
    l1_prediction_loss,
)
from .autodiff import Tensor, check_gradients
from .dagg import GraphGenConfig
from .generator import ModelConfig, TrendGCN

GRAD_TOLERANCE = 1e-4


@dataclass
class GradCase:
    name: str
    max_rel_err: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= GRAD_TOLERANCE


def _leaf(rng, shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, shape), requires_grad=True)


def _away_from_zero(rng, shape, margin=0.1):
    v = rng.uniform(margin, 1.0, shape) * rng.choice([-1.0, 1.0], shape)
    return Tensor(v, requires_grad=True)


def _weighted(rng, out_shape):
    w = rng.normal(size=out_shape)
    return lambda y: ad.sum(ad.mul(y, Tensor(w)))


def _primitive_cases(rng) -> dict:
    """name -> (objective, inputs); each objective is a random linear functional of the primitive."""
    cases = {}

    def add_case(name, build: Callable, inputs, out_shape):
        proj = _weighted(rng, out_shape)
        cases[name] = (lambda: proj(build(*inputs)), inputs)

    a, b = _leaf(rng, (3, 4)), _leaf(rng, (3, 4))
    add_case("add", ad.add, [a, b], (3, 4))
    a, b = _leaf(rng, (3, 4)), _leaf(rng, (1, 4))
    add_case("add_broadcast", ad.add, [a, b], (3, 4))
    a, b = _leaf(rng, (3, 4)), _leaf(rng, (3, 4))
    add_case("subtract", ad.sub, [a, b], (3, 4))
    a, b = _leaf(rng, (3, 4)), _leaf(rng, (3, 4))
    add_case("hadamard", ad.mul, [a, b], (3, 4))
    a = _leaf(rng, (3, 4))
    add_case("scale", lambda x: ad.scale(x, -1.7), [a], (3, 4))
    a, b = _leaf(rng, (4, 5)), _leaf(rng, (5, 3))
    add_case("matmul", ad.matmul, [a, b], (4, 3))
    a, b = _leaf(rng, (2, 4, 5)), _leaf(rng, (5, 3))
    add_case("matmul_batched", ad.matmul, [a, b], (2, 4, 3))
    a = _leaf(rng, (3, 5), -2, 2)
    add_case("sigmoid", ad.sigmoid, [a], (3, 5))
    a = _leaf(rng, (3, 5), -2, 2)
    add_case("tanh", ad.tanh, [a], (3, 5))
    a = _away_from_zero(rng, (3, 5))
    add_case("leaky_relu", lambda x: ad.leaky_relu(x, 0.2), [a], (3, 5))
    a = _away_from_zero(rng, (3, 5))
    add_case("abs", ad.abs, [a], (3, 5))
    a = _leaf(rng, (3, 5), 0.2, 2.0)
    add_case("log", ad.log, [a], (3, 5))
    a = _leaf(rng, (3, 5))
    add_case("exp", ad.exp, [a], (3, 5))
    a = Tensor(rng.choice([-1.0, 1.0], (3, 5)) * rng.uniform(0.1, 0.4, (3, 5))
               + rng.choice([0.0, 1.0], (3, 5)), requires_grad=True)
    add_case("clip", lambda x: ad.clip(x, 0.0, 1.0), [a], (3, 5))
    a = _leaf(rng, (3, 5))
    add_case("sum", lambda x: ad.sum(x, axis=0), [a], (5,))
    a = _leaf(rng, (3, 5))
    add_case("mean", lambda x: ad.mean(x, axis=1), [a], (3,))
    a = _leaf(rng, (3, 4))
    add_case("reshape", lambda x: ad.reshape(x, (2, 6)), [a], (2, 6))
    a = _leaf(rng, (2, 3, 4))
    add_case("transpose", lambda x: ad.transpose(x, (2, 0, 1)), [a], (4, 2, 3))
    a, b = _leaf(rng, (3, 2)), _leaf(rng, (3, 4))
    add_case("concat", lambda x, y: ad.concat([x, y], axis=1), [a, b], (3, 6))
    a, b = _leaf(rng, (3, 2)), _leaf(rng, (3, 2))
    add_case("stack", lambda x, y: ad.stack([x, y], axis=0), [a, b], (2, 3, 2))
    a = _leaf(rng, (4, 5))
    add_case("getitem", lambda x: x[[0, 2, 2], 1:4], [a], (3, 3))
    a = _leaf(rng, (3, 5), -2, 2)
    add_case("softmax", lambda x: ad.softmax(x, axis=-1), [a], (3, 5))
    a, g, o = _leaf(rng, (4, 6)), _leaf(rng, (6,)), _leaf(rng, (6,))
    add_case("layer_norm", ad.layer_norm, [a, g, o], (4, 6))
    a = _leaf(rng, (6, 7))
    add_case("dropout", lambda x: ad.dropout(x, 0.3, training=True, seed=11), [a], (6, 7))
    return cases


def toy_model(seed: int = 0):
    """Four nodes, T=3, H=2, float64, dropout active (masks reproduced by resetting the RNG)."""
    cfg = ModelConfig(n_nodes=4, in_features=1, out_features=1, in_steps=3, horizon=2, hidden=4,
                      gru_layers=2, gcn_layers=2, d_e=2, graph=GraphGenConfig(dropout_rate=0.1))
    model = TrendGCN(cfg, seed=seed, dtype=np.float64)
    d_seq = MlpDiscriminator(cfg.in_steps + cfg.horizon, (6, 4), seed=seed + 1, dtype=np.float64)
    d_graph = MlpDiscriminator(cfg.n_nodes ** 2, (6, 4), seed=seed + 2, dtype=np.float64)
    rng = np.random.default_rng(seed + 3)
    x = rng.normal(size=(2, cfg.in_steps, cfg.n_nodes, 1))
    y = rng.normal(size=(2, cfg.horizon, cfg.n_nodes, 1))
    return model, d_seq, d_graph, x, y


def composed_loss_case(seed: int = 0):
    model, d_seq, d_graph, x, y = toy_model(seed)
    adv = AdvConfig(alpha=0.5, beta=1.0)
    hist, fut = x[..., 0], y[..., 0]

    def objective():
        model.dropout_rng.reset()
        pred = model.forward(Tensor(x), training=True)
        pred0 = pred[..., 0]
        l_adv = gen_adv_loss(d_seq, d_graph, build_seq_sample(hist, fut), build_seq_sample(hist, pred0),
                             build_graph_sample(fut), build_graph_sample(pred0), adv)
        return ad.add(l1_prediction_loss(y, pred), l_adv)

    inputs = model.parameters() + d_seq.parameters() + d_graph.parameters()
    return objective, inputs


def run_gradcheck(seed: int = 0, eps: float = 1e-5, include_model: bool = True) -> list:
    rng = np.random.default_rng(seed)
    results = []
    for name, (fn, inputs) in _primitive_cases(rng).items():
        results.append(GradCase(name, max(check_gradients(fn, inputs, eps))))
    if include_model:
        fn, inputs = composed_loss_case(seed)
        results.append(GradCase("composed_loss", max(check_gradients(fn, inputs, eps))))
    return results
