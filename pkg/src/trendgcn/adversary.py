"""
Discriminators, adversarial losses and the trend-discrepancy oracle.

Two MLP critics judge forecasts. The sequence critic sees one node's history
followed by its future (real or predicted); the graph critic sees the
row-softmax of the horizon Gram matrix across nodes. The generator's
objective is the summed L1 error plus the weighted adversarial terms.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

LOG_FLOOR = 1e-12


def _as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


class MlpDiscriminator:
    """Three affine layers, LeakyReLU between them, sigmoid on the scalar output."""

    def __init__(self, in_width: int, hidden=(64, 32), slope: float = 0.2, seed: int = 0, dtype=np.float32):
        if len(hidden) != 2:
            raise ConfigError("a discriminator has exactly three affine layers (two hidden widths)")
        rng = np.random.default_rng(seed)
        self.in_width = int(in_width)
        self.slope = slope
        widths = [self.in_width, *hidden, 1]
        self.weights, self.biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)).astype(dtype), requires_grad=True))
            self.biases.append(Tensor(rng.uniform(-bound, bound, (1, fan_out)).astype(dtype), requires_grad=True))
        self._eps = float(np.finfo(dtype).eps)

    def parameters(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def named_parameters(self, prefix: str) -> dict:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.{i}.weight"] = w
            out[f"{prefix}.{i}.bias"] = b
        return out

    def __call__(self, x) -> Tensor:
        """Scores in (0, 1) for a ``S x in_width`` batch of samples; returns shape ``(S,)``."""
        x = _as_tensor(x, self.weights[0].dtype)
        if x.ndim != 2 or x.shape[1] != self.in_width:
            raise ShapeError(f"discriminator expects (S, {self.in_width}), got {x.shape}")
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ad.add(ad.matmul(h, w), b)
            if i < last:
                h = ad.leaky_relu(h, self.slope)
        p = ad.sigmoid(ad.reshape(h, (h.shape[0],)))
        return ad.clip(p, self._eps, 1.0 - self._eps)


@contextlib.contextmanager
def frozen(*modules):
    """Temporarily stop gradients flowing into the given modules' parameters."""
    params = [p for m in modules if m is not None for p in m.parameters()]
    flags = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, f in zip(params, flags):
            p.requires_grad = f


@dataclass
class AdvConfig:
    alpha: float = 0.01
    beta: float = 1.0
    target_channel: int = 0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("alpha and beta must be non-negative")


@dataclass
class GanLossBundle:
    l_p: float
    l_d_seq: float
    l_d_graph: float
    l_adv: float
    l_total: float


# ---------------------------------------------------------------------------
# sample construction

def build_seq_sample(history, future) -> Tensor:
    """Per-node ``history || future`` sequences.

    ``history`` is ``[B] x T x N`` and ``future`` is ``[B] x H x N``; the result
    is ``(B*N) x (T+H)``.
    """
    history = _as_tensor(history)
    future = _as_tensor(future, history.dtype)
    if history.ndim == 2:
        history = ad.reshape(history, (1,) + history.shape)
    if future.ndim == 2:
        future = ad.reshape(future, (1,) + future.shape)
    if history.shape[0] != future.shape[0] or history.shape[2] != future.shape[2]:
        raise ShapeError(f"history {history.shape} and future {future.shape} disagree on batch/node count")
    seq = ad.concat([history, future], axis=1)                         # B (T+H) N
    b, length, n = seq.shape
    return ad.reshape(ad.transpose(seq, (0, 2, 1)), (b * n, length))


def build_graph_sample(future) -> Tensor:
    """Row-softmax of the horizon Gram matrix, ``[B] x N x N``."""
    future = _as_tensor(future)
    if future.shape[-2] == 0:
        raise ShapeError("graph sample needs a horizon of at least one step")
    gram = ad.matmul(ad.swapaxes(future, -1, -2), future)
    return ad.softmax(gram, axis=-1)


def _flatten_graphs(graphs: Tensor) -> Tensor:
    if graphs.ndim == 2:
        graphs = ad.reshape(graphs, (1,) + graphs.shape)
    return ad.reshape(graphs, (graphs.shape[0], graphs.shape[1] * graphs.shape[2]))


# ---------------------------------------------------------------------------
# losses

def _neg_log(p: Tensor) -> Tensor:
    return ad.scale(ad.mean(ad.log(p, floor=LOG_FLOOR)), -1.0)


def _neg_log1m(p: Tensor) -> Tensor:
    return ad.scale(ad.mean(ad.log(ad.sub(1.0, p), floor=LOG_FLOOR)), -1.0)


def bce_discriminator_loss(real_scores: Tensor, fake_scores: Tensor) -> Tensor:
    """``-E[log D(real)] - E[log(1 - D(fake))]`` on precomputed scores."""
    return ad.add(_neg_log(real_scores), _neg_log1m(fake_scores))


def d_seq_loss(d: MlpDiscriminator, real_samples, fake_samples) -> Tensor:
    return bce_discriminator_loss(d(real_samples), d(fake_samples))


def d_graph_loss(d: MlpDiscriminator, real_graphs, fake_graphs) -> Tensor:
    return bce_discriminator_loss(d(_flatten_graphs(_as_tensor(real_graphs))),
                                  d(_flatten_graphs(_as_tensor(fake_graphs))))


def gen_adv_loss(d_seq: Optional[MlpDiscriminator], d_graph: Optional[MlpDiscriminator],
                 real_seq, fake_seq, real_graph, fake_graph, cfg: AdvConfig) -> Tensor:
    """Generator-side adversarial objective.

    ``alpha * (-E[log(1 - D_seq(real))] - E[log D_seq(fake)])
    + beta * (-E[log(1 - D_graph(real))] - E[log D_graph(fake)])``.
    The real-sample terms do not depend on the generator; they are kept so the
    logged value matches the formula. A zero weight skips its critic entirely.
    """
    total = None
    if cfg.alpha > 0:
        seq_term = ad.add(_neg_log1m(d_seq(real_seq)), _neg_log(d_seq(fake_seq)))
        total = ad.scale(seq_term, cfg.alpha)
    if cfg.beta > 0:
        graph_term = ad.add(_neg_log1m(d_graph(_flatten_graphs(_as_tensor(real_graph)))),
                            _neg_log(d_graph(_flatten_graphs(_as_tensor(fake_graph)))))
        graph_term = ad.scale(graph_term, cfg.beta)
        total = graph_term if total is None else ad.add(total, graph_term)
    if total is None:
        dtype = fake_seq.dtype if isinstance(fake_seq, Tensor) else np.float64
        total = Tensor(np.zeros((), dtype=dtype))
    return total


def l1_prediction_loss(truth, pred, weights=None) -> Tensor:
    """Sum of absolute errors over horizon, nodes and outputs; averaged over a leading batch axis.

    ``weights`` (same shape, 1 = observed, 0 = missing) drops masked entries.
    """
    pred = _as_tensor(pred)
    truth = _as_tensor(truth, pred.dtype)
    if truth.shape != pred.shape:
        raise ShapeError(f"l1 loss: truth {truth.shape} vs prediction {pred.shape}")
    err = ad.abs(ad.sub(truth, pred))
    if weights is not None:
        err = ad.mul(err, Tensor(np.asarray(weights, dtype=pred.dtype)))
    if err.ndim == 4:
        return ad.scale(ad.sum(err), 1.0 / err.shape[0])
    return ad.sum(err)


def l1_per_step(truth, pred) -> np.ndarray:
    """Per-horizon L1 terms (numpy), averaged over a leading batch axis if present."""
    err = np.abs(np.asarray(truth, dtype=np.float64) - np.asarray(pred, dtype=np.float64))
    if err.ndim == 4:
        return err.sum(axis=(2, 3)).mean(axis=0)
    return err.reshape(err.shape[0], -1).sum(axis=1)


# ---------------------------------------------------------------------------
# trend oracle

def reflect_prediction(truth, pred):
    """Mirror ``pred`` about ``truth``: ``2*truth - pred``. Same L1 error, mirrored trend."""
    if isinstance(truth, Tensor) or isinstance(pred, Tensor):
        pred = _as_tensor(pred)
        truth = _as_tensor(truth, pred.dtype)
        if truth.shape != pred.shape:
            raise ShapeError(f"reflect: truth {truth.shape} vs prediction {pred.shape}")
        return ad.sub(ad.scale(truth, 2.0), pred)
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    if truth.shape != pred.shape:
        raise ShapeError(f"reflect: truth {truth.shape} vs prediction {pred.shape}")
    return 2 * truth - pred


def forward_difference(x, axis: int = 0) -> np.ndarray:
    x = np.asarray(x)
    return np.diff(x, axis=axis)


def trend_loss(truth, pred, axis: Optional[int] = None) -> float:
    """L1 distance between forward-difference trends along the horizon axis.

    The horizon axis defaults to 0 for ``H x ...`` inputs and 1 for batched
    ``B x H x N x O`` inputs (in which case the result is averaged over the batch).
    Diagnostic only: never part of the training objective.
    """
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if truth.shape != pred.shape:
        raise ShapeError(f"trend loss: truth {truth.shape} vs prediction {pred.shape}")
    if axis is None:
        axis = 1 if truth.ndim == 4 else 0
    if truth.shape[axis] < 2:
        raise ShapeError("trend loss needs a horizon of at least 2 steps")
    dev = np.abs(forward_difference(truth, axis) - forward_difference(pred, axis))
    if truth.ndim == 4:
        return float(dev.reshape(dev.shape[0], -1).sum(axis=1).mean())
    return float(dev.sum())
