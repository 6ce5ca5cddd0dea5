"""
Graph-convolutional GRU forecaster driven by dynamic adaptive graphs.

Each GRU gate is a stack of node-adaptive graph convolutions. Convolution
weights are not shared across nodes: every node contracts its combined
node/time embedding against a weight pool to get a private matrix, so the
parameters also change with the input step. The top layer's last hidden
state is projected to all ``H`` horizons at once.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import CounterRNG, Tensor
from .dagg import (
    DynamicAdjacency,
    EmbeddingBank,
    GraphGenConfig,
    build_adjacency,
    combined_width,
    node_time_embedding,
)
from .errors import ConfigError, InputError, ShapeError


@dataclass
class ModelConfig:
    n_nodes: int
    in_features: int = 1
    out_features: int = 1
    in_steps: int = 12
    horizon: int = 12
    hidden: int = 64
    gru_layers: int = 2
    gcn_layers: int = 2
    d_e: int = 6
    graph: GraphGenConfig = field(default_factory=GraphGenConfig)

    def __post_init__(self):
        for name in ("n_nodes", "in_features", "out_features", "in_steps", "horizon",
                     "hidden", "gru_layers", "gcn_layers", "d_e"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if isinstance(self.graph, dict):
            self.graph = GraphGenConfig(**self.graph)

    @property
    def embed_width(self) -> int:
        return combined_width(self.d_e, self.graph.delta1)

    @property
    def dropout_rate(self) -> float:
        return self.graph.dropout_rate


def _uniform(rng, fan_in, shape, dtype):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, shape).astype(dtype), requires_grad=True)


@dataclass
class GcnParamPool:
    weight: Tensor   # d' x F_in x F_out
    bias: Tensor     # d' x F_out

    @classmethod
    def init(cls, width, f_in, f_out, rng, dtype=np.float32):
        return cls(_uniform(rng, f_in, (width, f_in, f_out), dtype),
                   _uniform(rng, f_in, (width, f_out), dtype))

    @property
    def f_in(self) -> int:
        return self.weight.shape[1]

    @property
    def f_out(self) -> int:
        return self.weight.shape[2]


def node_adaptive_gcn(h_in: Tensor, adj: DynamicAdjacency, e_nt: Tensor, pool: GcnParamPool) -> Tensor:
    """One first-order graph convolution with per-node parameters.

    ``h_in`` is ``N x F_in`` or ``B x N x F_in``; returns the same leading
    shape with ``F_out`` features.
    """
    n = adj.propagation.shape[0]
    width, f_in, f_out = pool.weight.shape
    if h_in.shape[-2] != n or h_in.shape[-1] != f_in:
        raise ShapeError(f"gcn input {h_in.shape} does not match N={n}, F_in={f_in}")
    if e_nt.shape != (n, width):
        raise ShapeError(f"node/time embedding {e_nt.shape} does not match ({n}, {width})")
    batched = h_in.ndim == 3
    prop = ad.matmul(adj.propagation, h_in)                              # [B] N F_in
    w_nodes = ad.reshape(ad.matmul(e_nt, ad.reshape(pool.weight, (width, f_in * f_out))), (n, f_in, f_out))
    b_nodes = ad.matmul(e_nt, pool.bias)                                 # N F_out
    if batched:
        out = ad.transpose(ad.matmul(ad.transpose(prop, (1, 0, 2)), w_nodes), (1, 0, 2))
    else:
        out = ad.reshape(ad.matmul(ad.reshape(prop, (n, 1, f_in)), w_nodes), (n, f_out))
    return ad.add(out, b_nodes)


def gcn_stack(h: Tensor, adj, e_nt, pools) -> Tensor:
    for pool in pools:
        h = node_adaptive_gcn(h, adj, e_nt, pool)
    return h


@dataclass
class GruLayerParams:
    theta_z: list
    theta_r: list
    theta_c: list

    @classmethod
    def init(cls, width, f_x, hidden, gcn_layers, rng, dtype=np.float32):
        def gate():
            dims = [f_x + hidden] + [hidden] * gcn_layers
            return [GcnParamPool.init(width, dims[i], dims[i + 1], rng, dtype) for i in range(gcn_layers)]
        return cls(gate(), gate(), gate())

    @property
    def hidden(self) -> int:
        return self.theta_z[-1].f_out


def gru_step(x_t: Tensor, h_prev: Tensor, layer: GruLayerParams, adj: DynamicAdjacency, e_nt: Tensor) -> Tensor:
    """``h = z*h_prev + (1-z)*c`` with graph-convolutional gates."""
    xh = ad.concat([x_t, h_prev], axis=-1)
    z = ad.sigmoid(gcn_stack(xh, adj, e_nt, layer.theta_z))
    r = ad.sigmoid(gcn_stack(xh, adj, e_nt, layer.theta_r))
    xrh = ad.concat([x_t, ad.mul(r, h_prev)], axis=-1)
    c = ad.tanh(gcn_stack(xrh, adj, e_nt, layer.theta_c))
    return ad.add(ad.mul(z, h_prev), ad.mul(ad.sub(1.0, z), c))


@dataclass
class OutputHead:
    weight: Tensor      # F' x (H*O)
    bias: Tensor        # 1 x (H*O)
    ln_gain: Tensor
    ln_offset: Tensor

    @classmethod
    def init(cls, hidden, horizon, out_features, rng, dtype=np.float32):
        return cls(
            _uniform(rng, hidden, (hidden, horizon * out_features), dtype),
            _uniform(rng, hidden, (1, horizon * out_features), dtype),
            Tensor(np.ones(hidden, dtype=dtype), requires_grad=True),
            Tensor(np.zeros(hidden, dtype=dtype), requires_grad=True),
        )


class TrendGCN:
    """The forecaster: stacked graph-conv GRUs plus a one-shot multi-horizon head."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        width = cfg.embed_width
        self.bank = EmbeddingBank.init(cfg.n_nodes, cfg.in_steps, cfg.d_e, cfg.graph, rng, self.dtype)
        self.layers = [
            GruLayerParams.init(width, cfg.in_features if i == 0 else cfg.hidden, cfg.hidden,
                                cfg.gcn_layers, rng, self.dtype)
            for i in range(cfg.gru_layers)
        ]
        self.head = OutputHead.init(cfg.hidden, cfg.horizon, cfg.out_features, rng, self.dtype)
        self.dropout_rng = CounterRNG(seed + 7919)

    # -- parameters ---------------------------------------------------------
    def named_parameters(self) -> "OrderedDict[str, Tensor]":
        out = OrderedDict()
        out["bank.e_node"] = self.bank.e_node
        out["bank.e_time"] = self.bank.e_time
        out["bank.ln_gain"] = self.bank.ln_gain
        out["bank.ln_offset"] = self.bank.ln_offset
        for i, layer in enumerate(self.layers):
            for gate in ("z", "r", "c"):
                for k, pool in enumerate(getattr(layer, f"theta_{gate}")):
                    out[f"gru{i}.{gate}.{k}.weight"] = pool.weight
                    out[f"gru{i}.{gate}.{k}.bias"] = pool.bias
        out["head.weight"] = self.head.weight
        out["head.bias"] = self.head.bias
        out["head.ln_gain"] = self.head.ln_gain
        out["head.ln_offset"] = self.head.ln_offset
        return out

    def parameters(self) -> list:
        return list(self.named_parameters().values())

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self) -> dict:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise ShapeError(f"state is missing parameters: {sorted(missing)}")
        for name, p in params.items():
            arr = np.asarray(state[name])
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: expected shape {p.shape}, got {arr.shape}")
            p.data = arr.astype(self.dtype).copy()

    # -- forward ------------------------------------------------------------
    def graphs(self, training: bool = False) -> list:
        """Adjacency and node/time embedding for every input step, in order."""
        out = []
        for t in range(1, self.cfg.in_steps + 1):
            adj = build_adjacency(self.bank, t, self.cfg.graph, training=training, rng=self.dropout_rng)
            out.append((adj, node_time_embedding(self.bank, t, self.cfg.graph)))
        return out

    def forward(self, x, training: bool = False, initial_state: Optional[list] = None) -> Tensor:
        """Predict ``B x H x N x O`` from ``B x T x N x F`` (or unbatched ``T x N x F``)."""
        cfg = self.cfg
        x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=self.dtype))
        if not np.all(np.isfinite(x.data)):
            raise InputError("forward input contains non-finite values")
        unbatched = x.ndim == 3
        if unbatched:
            x = ad.reshape(x, (1,) + x.shape)
        if x.ndim != 4 or x.shape[1:] != (cfg.in_steps, cfg.n_nodes, cfg.in_features):
            raise ShapeError(f"expected input (B, {cfg.in_steps}, {cfg.n_nodes}, {cfg.in_features}), got {x.shape}")
        batch = x.shape[0]
        graphs = self.graphs(training)
        seq = [x[:, t] for t in range(cfg.in_steps)]
        for i, layer in enumerate(self.layers):
            if initial_state is not None:
                h = initial_state[i]
            else:
                h = Tensor(np.zeros((batch, cfg.n_nodes, cfg.hidden), dtype=x.dtype))
            hidden_seq = []
            for t, (adj, e_nt) in enumerate(graphs):
                h = gru_step(seq[t], h, layer, adj, e_nt)
                hidden_seq.append(h)
            seq = hidden_seq
        pred = self.project(seq[-1], training)
        return pred[0] if unbatched else pred

    __call__ = forward

    def project(self, h_last: Tensor, training: bool = False) -> Tensor:
        """Head: LN -> dropout -> linear, reshaped to ``B x H x N x O``."""
        cfg = self.cfg
        head = self.head
        z = ad.layer_norm(h_last, head.ln_gain, head.ln_offset, axis=-1)
        z = ad.dropout(z, cfg.dropout_rate, training=training, seed=self.dropout_rng)
        out = ad.add(ad.matmul(z, head.weight), head.bias)                 # B N (H*O)
        batch = out.shape[0]
        out = ad.reshape(out, (batch, cfg.n_nodes, cfg.horizon, cfg.out_features))
        return ad.transpose(out, (0, 2, 1, 3))
