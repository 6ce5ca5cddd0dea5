"""
Training, evaluation, ablation and robustness runs.

One optimisation step per batch: forward the generator, update each active
critic once on detached predictions, then update the generator on
``L1 + adversarial`` with the critics frozen. Each parameter group has its own
Adam state; all share one learning rate.
"""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import autodiff as ad
from .adversary import (
    AdvConfig,
    GanLossBundle,
    MlpDiscriminator,
    _flatten_graphs,
    bce_discriminator_loss,
    build_graph_sample,
    build_seq_sample,
    frozen,
    gen_adv_loss,
    l1_prediction_loss,
    reflect_prediction,
    trend_loss,
)
from .autodiff import Adam, Tensor, no_grad
from .checkpoint import load_checkpoint, save_checkpoint
from .dagg import GraphGenConfig, build_adjacency, export_adjacency
from .data import (
    DATASET_SPLITS,
    Scaler,
    SpatialTemporalSeries,
    format_increment,
    horizon_metrics,
    inject_gaussian_noise,
    make_windows,
    relative_increment,
    split,
)
from .errors import ConfigError, DivergenceError, ShapeError
from .generator import ModelConfig, TrendGCN

logger = logging.getLogger(__name__)

DATASET_EMBED_DIMS = {"PEMS03": 4, "PEMS04": 6, "PEMS07": 10, "PEMS08": 4, "METR-LA": 10, "PEMS-BAY": 10}

LOSS_LOG_COLUMNS = [
    "step", "l_p", "l_d_seq", "l_d_graph", "l_adv", "l_total",
    "d_seq_real_mean_score", "d_seq_fake_mean_score", "d_graph_real_mean_score", "d_graph_fake_mean_score",
]


def _as_bool(v) -> bool:
    if isinstance(v, bool):
        return v
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError(f"not a boolean: {v!r}")


@dataclass
class TrainConfig:
    lr: float = 0.003
    batch_size: int = 64
    epochs: int = 100
    seed: int = 0
    alpha: float = 0.01
    beta: float = 1.0
    d_e: Optional[int] = None
    dropout_rate: float = 0.1
    in_steps: int = 12
    horizon: int = 12
    hidden: int = 64
    gru_layers: int = 2
    gcn_layers: int = 2
    variant: Optional[str] = None
    delta1: str = "add"
    delta2: str = "add"
    static_graph: bool = False
    no_adv: bool = False
    seq_only: bool = False
    graph_only: bool = False
    patience: int = 15
    dataset: Optional[str] = None
    split: Optional[str] = None          # e.g. "6:2:2"; defaults per dataset
    mask_eps: float = 1.0
    dtype: str = "float32"
    max_batches: int = 0                 # per epoch; 0 = all
    d_seq_hidden: tuple = (64, 32)
    d_graph_hidden: tuple = (128, 64)

    def __post_init__(self):
        if self.seq_only and self.graph_only:
            raise ConfigError("seq_only and graph_only are mutually exclusive")
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("lr, batch_size and epochs must be positive")
        self.d_seq_hidden = tuple(int(v) for v in self.d_seq_hidden)
        self.d_graph_hidden = tuple(int(v) for v in self.d_graph_hidden)

    # -- derived --------------------------------------------------------------
    @property
    def embed_dim(self) -> int:
        if self.d_e is not None:
            return int(self.d_e)
        return DATASET_EMBED_DIMS.get((self.dataset or "").upper(), 6)

    @property
    def split_ratios(self) -> tuple:
        if self.split:
            parts = [float(p) for p in str(self.split).replace(",", ":").split(":")]
            total = sum(parts)
            return tuple(p / total for p in parts)
        return DATASET_SPLITS.get((self.dataset or "").upper(), (0.6, 0.2, 0.2))

    @property
    def adv(self) -> AdvConfig:
        alpha = 0.0 if (self.no_adv or self.graph_only) else self.alpha
        beta = 0.0 if (self.no_adv or self.seq_only) else self.beta
        return AdvConfig(alpha=alpha, beta=beta)

    def graph_config(self) -> GraphGenConfig:
        kw = dict(dropout_rate=self.dropout_rate, static=self.static_graph)
        if self.variant:
            return GraphGenConfig.for_variant(self.variant, **kw)
        return GraphGenConfig(delta1=self.delta1, delta2=self.delta2, **kw)

    def model_config(self, n_nodes: int, in_features: int) -> ModelConfig:
        return ModelConfig(n_nodes=n_nodes, in_features=in_features, out_features=1,
                           in_steps=self.in_steps, horizon=self.horizon, hidden=self.hidden,
                           gru_layers=self.gru_layers, gcn_layers=self.gcn_layers,
                           d_e=self.embed_dim, graph=self.graph_config())

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    # -- key=value files ------------------------------------------------------
    @classmethod
    def from_mapping(cls, mapping: dict) -> "TrainConfig":
        kinds = {f.name: f for f in dataclasses.fields(cls)}
        kw = {}
        for key, raw in mapping.items():
            key = key.strip().replace("-", "_")
            if key == "de":
                key = "d_e"
            if key not in kinds:
                raise ConfigError(f"unknown config key {key!r}")
            default = kinds[key].default
            if isinstance(raw, str):
                raw = raw.strip()
                if isinstance(default, bool):
                    val = _as_bool(raw)
                elif isinstance(default, int):
                    val = int(raw)
                elif isinstance(default, float):
                    val = float(raw)
                elif isinstance(default, tuple):
                    val = tuple(int(v) for v in raw.split(","))
                elif key == "d_e":
                    val = int(raw) if raw else None
                else:
                    val = raw or None
            else:
                val = raw
            kw[key] = val
        return cls(**kw)

    @classmethod
    def from_file(cls, path, overrides: Optional[dict] = None) -> "TrainConfig":
        mapping = {}
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            mapping[k.strip()] = v.strip()
        mapping.update(overrides or {})
        return cls.from_mapping(mapping)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["d_seq_hidden"] = list(self.d_seq_hidden)
        d["d_graph_hidden"] = list(self.d_graph_hidden)
        return d


# ---------------------------------------------------------------------------

@dataclass
class Prepared:
    scaler: Scaler
    train: object
    val: object
    test: object
    n_nodes: int
    in_features: int


def prepare(series: SpatialTemporalSeries, cfg: TrainConfig, scaler: Optional[Scaler] = None) -> Prepared:
    window = cfg.in_steps + cfg.horizon
    train_s, val_s, test_s = split(series, cfg.split_ratios, min_steps=window)
    scaler = scaler or Scaler.fit(train_s)
    dtype = np.dtype(cfg.dtype)
    mk = lambda s: make_windows(s, scaler, cfg.in_steps, cfg.horizon, dtype=dtype)  # noqa: E731
    return Prepared(scaler, mk(train_s), mk(val_s), mk(test_s), series.n_nodes, series.n_features)


class Trainer:
    """Holds the generator, the critics and their optimizers for one training context."""

    def __init__(self, cfg: TrainConfig, n_nodes: int, in_features: int, scaler: Scaler):
        self.cfg = cfg
        self.scaler = scaler
        self.dtype = np.dtype(cfg.dtype)
        self.model = TrendGCN(cfg.model_config(n_nodes, in_features), seed=cfg.seed, dtype=self.dtype)
        adv = cfg.adv
        self.adv = adv
        self.d_seq = (MlpDiscriminator(cfg.in_steps + cfg.horizon, cfg.d_seq_hidden, seed=cfg.seed + 1, dtype=self.dtype)
                      if adv.alpha > 0 else None)
        self.d_graph = (MlpDiscriminator(n_nodes * n_nodes, cfg.d_graph_hidden, seed=cfg.seed + 2, dtype=self.dtype)
                        if adv.beta > 0 else None)
        self.opt_g = Adam(self.model.parameters(), lr=cfg.lr)
        self.opt_ds = Adam(self.d_seq.parameters(), lr=cfg.lr) if self.d_seq else None
        self.opt_dg = Adam(self.d_graph.parameters(), lr=cfg.lr) if self.d_graph else None
        self.step = 0
        self.rng = np.random.default_rng(cfg.seed)

    # -- one optimisation step -----------------------------------------------
    def train_step(self, x, y, observed=None) -> dict:
        cfg, adv = self.cfg, self.adv
        history = x[..., adv.target_channel]
        y0 = y[..., 0]
        weights = None if observed is None else observed[..., None].astype(self.dtype)
        pred = self.model.forward(Tensor(x), training=True)
        pred0 = pred[..., 0]
        row = {k: float("nan") for k in LOSS_LOG_COLUMNS}
        row["l_d_seq"] = row["l_d_graph"] = 0.0

        real_seq = fake_seq_det = real_graph = fake_graph_det = None
        if self.d_seq is not None:
            real_seq = build_seq_sample(history, y0)
            fake_seq_det = build_seq_sample(history, pred0.data)
            s_real, s_fake = self.d_seq(real_seq), self.d_seq(fake_seq_det)
            loss = bce_discriminator_loss(s_real, s_fake)
            self.opt_ds.zero_grad()
            loss.backward()
            self.opt_ds.step()
            row.update(l_d_seq=loss.item(), d_seq_real_mean_score=float(s_real.data.mean()),
                       d_seq_fake_mean_score=float(s_fake.data.mean()))
        if self.d_graph is not None:
            real_graph = build_graph_sample(y0)
            fake_graph_det = build_graph_sample(pred0.data)
            s_real = self.d_graph(_flatten_graphs(real_graph))
            s_fake = self.d_graph(_flatten_graphs(fake_graph_det))
            loss = bce_discriminator_loss(s_real, s_fake)
            self.opt_dg.zero_grad()
            loss.backward()
            self.opt_dg.step()
            row.update(l_d_graph=loss.item(), d_graph_real_mean_score=float(s_real.data.mean()),
                       d_graph_fake_mean_score=float(s_fake.data.mean()))

        l_p = l1_prediction_loss(y, pred, weights)
        if not math.isfinite(l_p.item()):
            raise DivergenceError(f"prediction loss became non-finite at step {self.step}")
        with frozen(self.d_seq, self.d_graph):
            fake_seq = build_seq_sample(history, pred0) if self.d_seq is not None else None
            fake_graph = build_graph_sample(pred0) if self.d_graph is not None else None
            l_adv = gen_adv_loss(self.d_seq, self.d_graph, real_seq, fake_seq, real_graph, fake_graph, adv)
            total = ad.add(l_p, l_adv)
        self.opt_g.zero_grad()
        total.backward()
        self.opt_g.step()
        self.step += 1
        # logged total is the double-precision sum of the logged parts; the float32
        # tensor sum used for backward can differ from it by one ulp
        row.update(step=self.step, l_p=l_p.item(), l_adv=l_adv.item())
        row["l_total"] = row["l_p"] + row["l_adv"]
        return row

    def bundle(self, row: dict) -> GanLossBundle:
        return GanLossBundle(row["l_p"], row["l_d_seq"], row["l_d_graph"], row["l_adv"], row["l_total"])

    # -- prediction -----------------------------------------------------------
    def predict(self, windows, batch_size: Optional[int] = None) -> np.ndarray:
        """Raw-scale predictions ``count x H x N x 1`` for every window."""
        bs = batch_size or self.cfg.batch_size
        out = []
        with no_grad():
            for lo in range(0, len(windows), bs):
                x = np.ascontiguousarray(windows.inputs[lo:lo + bs])
                out.append(self.model.forward(Tensor(x), training=False).data)
        pred = np.concatenate(out, axis=0)
        return self.scaler.invert(pred, channels=[0])

    def val_mae(self, windows) -> float:
        pred = self.predict(windows)
        err = np.abs(pred - windows.raw_targets)
        if windows.target_mask is not None:
            keep = windows.target_mask[..., None]
            return float(err[np.broadcast_to(keep, err.shape)].mean())
        return float(err.mean())

    # -- state ---------------------------------------------------------------
    def tensors(self) -> dict:
        out = {f"gen.{k}": v.data for k, v in self.model.named_parameters().items()}
        if self.d_seq is not None:
            out.update({k: v.data for k, v in self.d_seq.named_parameters("d_seq").items()})
        if self.d_graph is not None:
            out.update({k: v.data for k, v in self.d_graph.named_parameters("d_graph").items()})
        return out

    def snapshot(self) -> dict:
        return {k: v.copy() for k, v in self.tensors().items()}

    def restore(self, snap: dict) -> None:
        params = dict((f"gen.{k}", v) for k, v in self.model.named_parameters().items())
        if self.d_seq is not None:
            params.update(self.d_seq.named_parameters("d_seq"))
        if self.d_graph is not None:
            params.update(self.d_graph.named_parameters("d_graph"))
        for name, p in params.items():
            if name not in snap:
                raise ShapeError(f"checkpoint lacks tensor {name}")
            arr = np.asarray(snap[name])
            if arr.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} vs model {p.shape}")
            p.data = arr.astype(self.dtype).copy()

    def save(self, path, extra_meta: Optional[dict] = None) -> Path:
        meta = {
            "train_config": self.cfg.to_dict(),
            "n_nodes": self.model.cfg.n_nodes,
            "in_features": self.model.cfg.in_features,
            "scaler": {"mean": self.scaler.mean.tolist(), "std": self.scaler.std.tolist()},
        }
        meta.update(extra_meta or {})
        return save_checkpoint(path, self.tensors(), meta)

    @classmethod
    def load(cls, path) -> "Trainer":
        tensors, meta = load_checkpoint(path)
        cfg = TrainConfig.from_mapping(meta["train_config"])
        scaler = Scaler(np.asarray(meta["scaler"]["mean"]), np.asarray(meta["scaler"]["std"]))
        trainer = cls(cfg, meta["n_nodes"], meta["in_features"], scaler)
        trainer.restore(tensors)
        trainer.meta = meta
        return trainer


@dataclass
class TrainResult:
    trainer: Trainer
    best_val_mae: float
    best_epoch: int
    history: list = field(default_factory=list)     # per-epoch dicts
    loss_log: list = field(default_factory=list)    # per-step rows
    prepared: Optional[Prepared] = None


def fit(cfg: TrainConfig, series: SpatialTemporalSeries, log_path=None, progress=None) -> TrainResult:
    """Train with early stopping on validation MAE; the best parameters are restored at the end."""
    prep = prepare(series, cfg)
    trainer = Trainer(cfg, prep.n_nodes, prep.in_features, prep.scaler)
    train_w = prep.train
    best, best_epoch, best_snap = math.inf, -1, trainer.snapshot()
    history, loss_log = [], []
    stale = 0
    log_fh = writer = None
    if log_path is not None:
        log_fh = open(log_path, "w", newline="")
        writer = csv.writer(log_fh)
        writer.writerow(LOSS_LOG_COLUMNS)
    try:
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            order = trainer.rng.permutation(len(train_w))
            batches = [order[i:i + cfg.batch_size] for i in range(0, len(order), cfg.batch_size)]
            if cfg.max_batches:
                batches = batches[:cfg.max_batches]
            rows = []
            for idx in batches:
                x, y, _, obs = train_w.batch(idx)
                row = trainer.train_step(x, y, obs)
                rows.append(row)
                if writer is not None:
                    writer.writerow([row[c] for c in LOSS_LOG_COLUMNS])
            loss_log.extend(rows)
            val = trainer.val_mae(prep.val)
            rec = {"epoch": epoch, "train_l_p": float(np.mean([r["l_p"] for r in rows])),
                   "val_mae": val, "seconds": time.perf_counter() - t0}
            history.append(rec)
            if progress is not None:
                progress(rec)
            logger.info("epoch %d  train_l_p=%.4f  val_mae=%.4f  (%.1fs)", epoch, rec["train_l_p"], val, rec["seconds"])
            if val < best:
                best, best_epoch, best_snap, stale = val, epoch, trainer.snapshot(), 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
    finally:
        if log_fh is not None:
            log_fh.close()
    trainer.restore(best_snap)
    return TrainResult(trainer, best, best_epoch, history, loss_log, prep)


# ---------------------------------------------------------------------------
# evaluation

@dataclass
class EvalReport:
    rows: list                 # (label, MAE, RMSE, MAPE)
    trend_loss: float
    reflected_mae: float
    reflected_trend_loss: float
    # trend distance between the prediction and its reflection (2x trend_loss)
    pred_vs_reflected_trend_loss: float
    d_seq_true_score: float = float("nan")
    d_seq_reflected_score: float = float("nan")

    @property
    def separation(self) -> float:
        return self.d_seq_true_score - self.d_seq_reflected_score

    @property
    def average(self) -> tuple:
        return self.rows[-1][1:]


def evaluate_predictions(truth, pred, mask_eps: float = 1.0, observed=None) -> EvalReport:
    """Metrics plus the trend diagnostics for raw-scale ``count x H x N x O`` arrays."""
    rows = horizon_metrics(truth, pred, mask_eps, observed)
    reflected = reflect_prediction(truth, pred)
    refl_mae = float(np.mean(np.abs(truth - reflected)))
    return EvalReport(rows, trend_loss(truth, pred), refl_mae, trend_loss(truth, reflected),
                      trend_loss(pred, reflected))


def evaluate(trainer: Trainer, windows, mask_eps: float = 1.0) -> EvalReport:
    pred = trainer.predict(windows)
    report = evaluate_predictions(windows.raw_targets, pred, mask_eps, windows.target_mask)
    if trainer.d_seq is not None:
        sc = trainer.scaler
        hist = windows.inputs[..., 0]
        truth_n = sc.apply(windows.raw_targets[..., 0], channels=0)
        refl_n = sc.apply(reflect_prediction(windows.raw_targets, pred)[..., 0], channels=0)
        dt = trainer.dtype
        with no_grad():
            s_true = trainer.d_seq(build_seq_sample(hist.astype(dt), truth_n.astype(dt))).data
            s_refl = trainer.d_seq(build_seq_sample(hist.astype(dt), refl_n.astype(dt))).data
        report.d_seq_true_score = float(s_true.mean())
        report.d_seq_reflected_score = float(s_refl.mean())
    return report


def check_extents(trainer: Trainer, series: SpatialTemporalSeries) -> None:
    m = trainer.model.cfg
    if series.n_nodes != m.n_nodes or series.n_features != m.in_features:
        raise ShapeError(f"checkpoint expects N={m.n_nodes}, F={m.in_features}; "
                         f"dataset has N={series.n_nodes}, F={series.n_features}")


def eval_split(trainer: Trainer, series: SpatialTemporalSeries, which: str = "test") -> EvalReport:
    check_extents(trainer, series)
    prep = prepare(series, trainer.cfg, scaler=trainer.scaler)
    try:
        windows = {"train": prep.train, "val": prep.val, "test": prep.test}[which]
    except KeyError:
        raise ConfigError(f"unknown split {which!r}") from None
    return evaluate(trainer, windows, trainer.cfg.mask_eps)


# ---------------------------------------------------------------------------
# ablation and robustness

ADV_MODES = {
    "full": {},
    "seq-only": {"seq_only": True},
    "graph-only": {"graph_only": True},
    "none": {"no_adv": True},
}


def ablation_variants(base: TrainConfig) -> list:
    """``(name, graph, adversarial, variant, config)`` for the ablation matrix."""
    out = []
    for graph, static in (("dynamic", False), ("static", True)):
        for mode, flags in ADV_MODES.items():
            reset = {"no_adv": False, "seq_only": False, "graph_only": False}
            cfg = base.replace(static_graph=static, variant=None, **{**reset, **flags})
            out.append((f"{graph}+{mode}", graph, mode, "", cfg))
    for v in ("A", "B", "C", "D"):
        cfg = base.replace(static_graph=False, no_adv=False, seq_only=False, graph_only=False, variant=v)
        out.append((f"variant-{v}", "dynamic", "full", v, cfg))
    return out


def run_variant(cfg: TrainConfig, series: SpatialTemporalSeries) -> dict:
    res = fit(cfg, series)
    rep = evaluate(res.trainer, res.prepared.test, cfg.mask_eps)
    mae, rmse, mape = rep.average
    return {"val_mae": res.best_val_mae, "test_mae": mae, "test_rmse": rmse, "test_mape": mape,
            "best_epoch": res.best_epoch, "epochs_run": len(res.history)}


def ablate(base: TrainConfig, series: SpatialTemporalSeries, names=None, progress=None) -> list:
    rows = []
    for name, graph, mode, variant, cfg in ablation_variants(base):
        if names is not None and name not in names:
            continue
        res = run_variant(cfg, series)
        row = {"name": name, "graph": graph, "adversarial": mode, "variant": variant, **res}
        rows.append(row)
        if progress is not None:
            progress(row)
    return rows


def write_ablation_csv(rows, path) -> Path:
    cols = ["name", "graph", "adversarial", "variant", "val_mae", "test_mae", "test_rmse", "test_mape",
            "best_epoch", "epochs_run"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({c: r.get(c, "") for c in cols})
    return Path(path)


@dataclass
class NoiseReport:
    sigma: float
    clean: tuple      # (MAE, RMSE)
    polluted: tuple

    @property
    def increments(self) -> tuple:
        return (relative_increment(self.clean[0], self.polluted[0]),
                relative_increment(self.clean[1], self.polluted[1]))

    def lines(self) -> list:
        mae_inc, rmse_inc = self.increments
        label = f"+N(0, {self.sigma ** 2:g})"
        return [
            ("clean", f"{self.clean[0]:.2f}/{self.clean[1]:.2f}"),
            (label, f"{self.polluted[0]:.2f}/{self.polluted[1]:.2f}"),
            ("+Δerrors", f"{format_increment(mae_inc)}/{format_increment(rmse_inc)}"),
        ]


def noise_run(cfg: TrainConfig, series: SpatialTemporalSeries, sigma: float, noise_seed: int = 0) -> NoiseReport:
    """Train and test on clean data and on the same data with Gaussian noise added to raw values."""
    clean = run_variant(cfg, series)
    polluted = run_variant(cfg, inject_gaussian_noise(series, sigma, noise_seed))
    return NoiseReport(sigma, (clean["test_mae"], clean["test_rmse"]), (polluted["test_mae"], polluted["test_rmse"]))


def write_noise_csv(report: NoiseReport, path) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "MAE/RMSE"])
        for label, val in report.lines():
            w.writerow([label, val])
    return Path(path)


# ---------------------------------------------------------------------------
# graph export

DEFAULT_EXPORT_STEPS = (2, 4, 6, 8, 10, 12)


def export_graphs(trainer: Trainer, out_dir, steps=DEFAULT_EXPORT_STEPS) -> list:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    with no_grad():
        for t in steps:
            adj = build_adjacency(trainer.model.bank, int(t), trainer.model.cfg.graph, training=False)
            written.append(export_adjacency(adj, out_dir / f"adjacency_t{int(t):02d}"))
    return written
