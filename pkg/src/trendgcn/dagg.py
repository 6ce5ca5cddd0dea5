"""
Dynamic adaptive graph generation.

Spatial embeddings (one row per node) and temporal embeddings (one row per
input step) are coupled by a combine operator; pairwise inner products of the
layer-normalised combinations give a score matrix per time step, and the
propagation matrix is ``I + row_softmax(scores)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, ShapeError

ADD, HADAMARD, CONCAT = "add", "hadamard", "concat"
OPERATORS = (ADD, HADAMARD, CONCAT)
_ALIASES = {"+": ADD, "add": ADD, "*": HADAMARD, "hadamard": HADAMARD, "|": CONCAT, "||": CONCAT, "concat": CONCAT}

# graph-construction variants: (left operator, right operator)
VARIANTS = {
    "A": (CONCAT, CONCAT),
    "B": (HADAMARD, HADAMARD),
    "C": (ADD, HADAMARD),
    "D": (HADAMARD, ADD),
}


def parse_operator(op: str) -> str:
    try:
        return _ALIASES[str(op).lower()]
    except KeyError:
        raise ConfigError(f"unknown combine operator {op!r}; expected one of {OPERATORS}") from None


def combined_width(d_e: int, delta: str) -> int:
    return 2 * d_e if parse_operator(delta) == CONCAT else d_e


@dataclass
class GraphGenConfig:
    delta1: str = ADD
    delta2: str = ADD
    lam: float = 1.0
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    dropout_rate: float = 0.1
    layer_norm_enabled: bool = True
    # drop the time embedding from every combination (lambda2 = lambda3 = 0)
    static: bool = False

    def __post_init__(self):
        self.delta1 = parse_operator(self.delta1)
        self.delta2 = parse_operator(self.delta2)
        if (self.delta1 == CONCAT) != (self.delta2 == CONCAT):
            raise ConfigError("concat can only be paired with concat: factor lengths would differ")
        for name in ("lam", "lambda1", "lambda2", "lambda3"):
            if not np.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    @classmethod
    def for_variant(cls, variant: str, **kwargs) -> "GraphGenConfig":
        try:
            d1, d2 = VARIANTS[str(variant).upper()]
        except KeyError:
            raise ConfigError(f"unknown graph variant {variant!r}; expected one of {sorted(VARIANTS)}") from None
        return cls(delta1=d1, delta2=d2, **kwargs)


@dataclass
class EmbeddingBank:
    e_node: Tensor
    e_time: Tensor
    ln_gain: Tensor
    ln_offset: Tensor

    @classmethod
    def init(cls, n_nodes: int, n_steps: int, d_e: int, cfg: GraphGenConfig,
             rng: Optional[np.random.Generator] = None, dtype=np.float32) -> "EmbeddingBank":
        if d_e <= 0:
            raise ConfigError("embedding dimension must be positive")
        rng = rng or np.random.default_rng(0)
        bound = 1.0 / np.sqrt(d_e)
        width = combined_width(d_e, cfg.delta1)
        return cls(
            e_node=Tensor(rng.uniform(-bound, bound, (n_nodes, d_e)).astype(dtype), requires_grad=True),
            e_time=Tensor(rng.uniform(-bound, bound, (n_steps, d_e)).astype(dtype), requires_grad=True),
            ln_gain=Tensor(np.ones(width, dtype=dtype), requires_grad=True),
            ln_offset=Tensor(np.zeros(width, dtype=dtype), requires_grad=True),
        )

    @property
    def n_nodes(self) -> int:
        return self.e_node.shape[0]

    @property
    def n_steps(self) -> int:
        return self.e_time.shape[0]

    @property
    def d_e(self) -> int:
        return self.e_node.shape[1]

    def parameters(self) -> list:
        return [self.e_node, self.e_time, self.ln_gain, self.ln_offset]


@dataclass
class DynamicAdjacency:
    scores: Tensor
    normalized: Tensor
    propagation: Tensor
    time_step: int


def combine(e_node: Tensor, e_time: Tensor, delta: str) -> Tensor:
    """Couple node rows with a time row. Operands may be vectors or ``N x d_e`` against ``d_e``."""
    delta = parse_operator(delta)
    if e_node.shape[-1] != e_time.shape[-1]:
        raise ShapeError(f"combine: embedding lengths differ, {e_node.shape} vs {e_time.shape}")
    if delta == ADD:
        return ad.add(e_node, e_time)
    if delta == HADAMARD:
        return ad.mul(e_node, e_time)
    if e_node.ndim > e_time.ndim:
        e_time = ad.mul(e_time, Tensor(np.ones(e_node.shape[:-1] + (1,), dtype=e_time.dtype)))
    return ad.concat([e_node, e_time], axis=-1)


def _time_row(bank: EmbeddingBank, t: int, delta: str, static: bool) -> Tensor:
    if not 1 <= t <= bank.n_steps:
        raise ShapeError(f"time step {t} outside 1..{bank.n_steps}")
    if static:
        # operator identity: the combination collapses to the node embedding
        fill = np.ones if parse_operator(delta) == HADAMARD else np.zeros
        return Tensor(fill(bank.d_e, dtype=bank.e_time.dtype))
    return bank.e_time[t - 1]


def node_time_embedding(bank: EmbeddingBank, t: int, cfg: GraphGenConfig) -> Tensor:
    """``E_node (delta1) e_time^(t)``: the ``N x d'`` matrix that keys the parameter pools."""
    return combine(bank.e_node, _time_row(bank, t, cfg.delta1, cfg.static), cfg.delta1)


def _factor(bank, t, delta, cfg, training, rng):
    f = combine(bank.e_node, _time_row(bank, t, delta, cfg.static), delta)
    if cfg.layer_norm_enabled:
        f = ad.layer_norm(f, bank.ln_gain, bank.ln_offset, axis=-1)
    return ad.dropout(f, cfg.dropout_rate, training=training, seed=rng)


def build_adjacency(bank: EmbeddingBank, t: int, cfg: GraphGenConfig, training: bool = False,
                    rng=None) -> DynamicAdjacency:
    """Score, normalise and propagate the graph for input step ``t`` (1-based)."""
    dropout_active = training and cfg.dropout_rate > 0
    left = _factor(bank, t, cfg.delta1, cfg, training, rng)
    if cfg.delta1 == cfg.delta2 and not dropout_active:
        gram = ad.matmul(left, left.T)
        # bit-exact symmetry regardless of the BLAS summation order
        gram = ad.scale(ad.add(gram, gram.T), 0.5)
    else:
        right = _factor(bank, t, cfg.delta2, cfg, training, rng)
        gram = ad.matmul(left, right.T)
    scores = ad.scale(gram, cfg.lam)
    norm = ad.softmax(scores, axis=-1)
    eye = Tensor(np.eye(bank.n_nodes, dtype=norm.dtype))
    return DynamicAdjacency(scores=scores, normalized=norm, propagation=ad.add(eye, norm), time_step=t)


def build_variant_adjacency(bank: EmbeddingBank, t: int, variant: str, cfg: Optional[GraphGenConfig] = None,
                            training: bool = False, rng=None) -> DynamicAdjacency:
    """``build_adjacency`` with the operator pair of variant A, B, C or D."""
    base = cfg or GraphGenConfig()
    vcfg = GraphGenConfig.for_variant(
        variant, lam=base.lam, dropout_rate=base.dropout_rate,
        layer_norm_enabled=base.layer_norm_enabled, static=base.static,
    )
    return build_adjacency(bank, t, vcfg, training=training, rng=rng)


def expand_terms(bank: EmbeddingBank, t: int, cfg: GraphGenConfig):
    """Split additive-coupling scores into spatial, cross and temporal terms.

    Returns ``(<e_i, e_j>, <e_i, e_t> + <e_j, e_t>, <e_t, e_t> * 1)`` as ``N x N``
    tensors. Only exact for additive coupling without LN or dropout.
    """
    if cfg.delta1 != ADD or cfg.delta2 != ADD:
        raise ContractError("expand_terms requires additive coupling on both sides")
    if cfg.layer_norm_enabled or cfg.dropout_rate > 0:
        raise ContractError("expand_terms requires layer norm and dropout disabled")
    e = bank.e_node
    et = _time_row(bank, t, ADD, cfg.static)
    n = bank.n_nodes
    spatial = ad.matmul(e, e.T)
    proj = ad.matmul(e, ad.reshape(et, (bank.d_e, 1)))           # N x 1
    ones_row = Tensor(np.ones((1, n), dtype=e.dtype))
    cross = ad.add(ad.matmul(proj, ones_row), ad.matmul(proj, ones_row).T)
    temporal = ad.mul(ad.sum(ad.mul(et, et)), Tensor(np.ones((n, n), dtype=e.dtype)))
    return spatial, cross, temporal


def weighted_terms(terms, lambda1: float, lambda2: float, lambda3: float) -> Tensor:
    spatial, cross, temporal = terms
    return ad.add(ad.add(ad.scale(spatial, lambda1), ad.scale(cross, lambda2)), ad.scale(temporal, lambda3))


def export_adjacency(adj: DynamicAdjacency, path) -> tuple:
    """Write ``Norm(A^(t))`` as CSV (9 significant digits) and as an 8-bit PGM heatmap.

    ``path`` is a stem; ``.csv`` and ``.pgm`` are appended. Returns both paths.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mat = np.asarray(adj.normalized.data, dtype=np.float64)
    csv_path = path.with_name(path.name + ".csv")
    pgm_path = path.with_name(path.name + ".pgm")
    np.savetxt(csv_path, mat, fmt="%.9g", delimiter=",")
    lo, hi = mat.min(), mat.max()
    scaled = np.zeros_like(mat) if hi == lo else (mat - lo) / (hi - lo)
    pixels = np.round(scaled * 255).astype(np.uint8)
    n_rows, n_cols = pixels.shape
    with open(pgm_path, "wb") as fh:
        fh.write(f"P5\n{n_cols} {n_rows}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
    return csv_path, pgm_path
