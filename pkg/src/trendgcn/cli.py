"""Command-line entry point: ``trendgcn <subcommand> ...``."""

from __future__ import annotations

import argparse
import contextlib
import logging
import math
import os
import sys
from pathlib import Path

from .errors import TrendGCNError

logger = logging.getLogger("trendgcn")


def _thread_limit():
    n = os.environ.get("TGCN_THREADS")
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=int(n))


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise SystemExit(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _config(args):
    from .training import TrainConfig
    overrides = _overrides(args.set)
    for key in ("epochs", "seed", "dataset", "lr", "batch_size", "alpha", "beta", "d_e", "variant",
                "hidden", "patience", "dropout_rate"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = str(val)
    for flag in ("static_graph", "no_adv", "seq_only", "graph_only"):
        if getattr(args, flag, False):
            overrides[flag] = "true"
    if args.config:
        return TrainConfig.from_file(args.config, overrides)
    return TrainConfig.from_mapping(overrides)


def _load_series(path):
    from .data import load_container
    return load_container(path)


def cmd_train(args) -> int:
    from .training import fit
    cfg = _config(args)
    series = _load_series(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = fit(cfg, series, log_path=out / "loss_log.csv",
              progress=lambda r: print(f"epoch {r['epoch']:3d}  l_p={r['train_l_p']:.4f}  "
                                       f"val_mae={r['val_mae']:.4f}  {r['seconds']:.1f}s", flush=True))
    ckpt = res.trainer.save(out / "model.ckpt", {"best_val_mae": res.best_val_mae, "best_epoch": res.best_epoch})
    print(f"best val MAE {res.best_val_mae:.4f} at epoch {res.best_epoch}; checkpoint {ckpt}")
    return 0


def cmd_eval(args) -> int:
    from .data import write_metrics_csv
    from .training import Trainer, eval_split
    trainer = Trainer.load(args.checkpoint)
    rep = eval_split(trainer, _load_series(args.data), args.split)
    out = write_metrics_csv(rep.rows, args.out)
    for label, mae, rmse, mape in rep.rows:
        print(f"{label:>4}  MAE {mae:.4f}  RMSE {rmse:.4f}  MAPE {mape:.2f}%")
    print(f"trend loss {rep.trend_loss:.4f}  reflected: MAE {rep.reflected_mae:.4f}  "
          f"trend loss {rep.reflected_trend_loss:.4f}  prediction vs reflection trend gap "
          f"{rep.pred_vs_reflected_trend_loss:.4f}")
    if not math.isnan(rep.d_seq_true_score):
        print(f"D_seq mean score: true {rep.d_seq_true_score:.4f}  reflected {rep.d_seq_reflected_score:.4f}")
    print(f"wrote {out}")
    return 0


def cmd_ablate(args) -> int:
    from .training import ablate, write_ablation_csv
    cfg = _config(args)
    rows = ablate(cfg, _load_series(args.data), names=args.only or None,
                  progress=lambda r: print(f"{r['name']:>20}  val {r['val_mae']:.4f}  test MAE {r['test_mae']:.4f}  "
                                           f"RMSE {r['test_rmse']:.4f}", flush=True))
    print(f"wrote {write_ablation_csv(rows, args.out)}")
    return 0


def cmd_noise(args) -> int:
    from .training import noise_run, write_noise_csv
    cfg = _config(args)
    rep = noise_run(cfg, _load_series(args.data), args.sigma, args.noise_seed)
    for label, val in rep.lines():
        print(f"{label:>12}  {val}")
    if args.out:
        print(f"wrote {write_noise_csv(rep, args.out)}")
    return 0


def cmd_gradcheck(args) -> int:
    from .selfcheck import GRAD_TOLERANCE, run_gradcheck
    results = run_gradcheck(seed=args.seed, include_model=not args.primitives_only)
    bad = 0
    for r in results:
        print(f"{r.name:>16}  max rel err {r.max_rel_err:.3e}  {'ok' if r.passed else 'FAIL'}")
        bad += not r.passed
    print(f"{len(results) - bad}/{len(results)} within {GRAD_TOLERANCE:g}")
    return 1 if bad else 0


def cmd_export_graphs(args) -> int:
    from .training import Trainer, export_graphs
    trainer = Trainer.load(args.checkpoint)
    for csv_path, pgm_path in export_graphs(trainer, args.out, args.steps):
        print(f"wrote {csv_path} and {pgm_path}")
    return 0


def cmd_synth(args) -> int:
    from .data import save_container, synthesize
    series, _ = synthesize(args.nodes, args.steps, args.seed, args.drift_period)
    path = save_container(series, args.out)
    print(f"wrote {path}: {series.steps} steps x {series.n_nodes} nodes x {series.n_features} features")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="trendgcn", description="Adversarial dynamic-graph traffic forecaster.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def training_opts(sp):
        sp.add_argument("--data", required=True, help="STTS container or CSV with .meta sidecar")
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--lr", type=float)
        sp.add_argument("--batch-size", dest="batch_size", type=int)
        sp.add_argument("--dataset", help="dataset name for default split and embedding size")
        sp.add_argument("--alpha", type=float, help="weight of the sequence critic term")
        sp.add_argument("--beta", type=float, help="weight of the graph critic term")
        sp.add_argument("--de", dest="d_e", type=int, help="embedding width")
        sp.add_argument("--variant", choices=list("ABCD"), help="graph-combination variant")
        sp.add_argument("--hidden", type=int)
        sp.add_argument("--patience", type=int)
        sp.add_argument("--dropout", dest="dropout_rate", type=float)
        sp.add_argument("--static-graph", dest="static_graph", action="store_true")
        sp.add_argument("--no-adv", dest="no_adv", action="store_true")
        sp.add_argument("--seq-only", dest="seq_only", action="store_true")
        sp.add_argument("--graph-only", dest="graph_only", action="store_true")

    sp = sub.add_parser("train", help="train and save the best checkpoint")
    training_opts(sp)
    sp.add_argument("--out", default="run", help="output directory")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="per-horizon metrics for a checkpoint")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--split", default="test", choices=["train", "val", "test"])
    sp.add_argument("--out", default="metrics.csv")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="train the ablation matrix")
    training_opts(sp)
    sp.add_argument("--only", action="append", help="restrict to named variants (repeatable)")
    sp.add_argument("--out", default="ablation.csv")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("noise", help="clean vs Gaussian-polluted training")
    training_opts(sp)
    sp.add_argument("--sigma", type=float, default=1.0)
    sp.add_argument("--noise-seed", dest="noise_seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_noise)

    sp = sub.add_parser("gradcheck", help="finite-difference audit of the gradients")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--primitives-only", action="store_true")
    sp.set_defaults(func=cmd_gradcheck)

    sp = sub.add_parser("export-graphs", help="write learned adjacency matrices as CSV and PGM")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--out", default="graphs")
    sp.add_argument("--steps", type=int, nargs="+", default=[2, 4, 6, 8, 10, 12])
    sp.set_defaults(func=cmd_export_graphs)

    sp = sub.add_parser("synth", help="write a synthetic drifting-graph dataset")
    sp.add_argument("--out", required=True)
    sp.add_argument("--nodes", type=int, default=16)
    sp.add_argument("--steps", type=int, default=2880)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--drift-period", dest="drift_period", type=float, default=96.0,
                    help="steps per adjacency cycle; 'inf' for a static graph")
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            return args.func(args)
    except (TrendGCNError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
