"""MAE / RMSE / MAPE on the raw scale, overall and per horizon."""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import InputError, ShapeError


def metrics(truth, pred, mask_eps: float = 1.0, observed: Optional[np.ndarray] = None) -> tuple:
    """Return ``(MAE, RMSE, MAPE%)``.

    ``observed`` (broadcastable to ``truth``; True = keep) removes missing entries
    from all three metrics. MAPE additionally skips entries with ``|truth| <= mask_eps``.
    """
    truth = np.asarray(truth, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if truth.shape != pred.shape:
        raise ShapeError(f"metrics: truth {truth.shape} vs prediction {pred.shape}")
    keep = np.ones(truth.shape, dtype=bool)
    if observed is not None:
        keep &= np.broadcast_to(np.asarray(observed, dtype=bool).reshape(
            np.asarray(observed).shape + (1,) * (truth.ndim - np.ndim(observed))), truth.shape)
    err = (pred - truth)[keep]
    if err.size == 0:
        raise InputError("metrics: no observed entries")
    mae = float(np.mean(np.abs(err)))
    rmse = float(np.sqrt(np.mean(err * err)))
    sel = keep & (np.abs(truth) > mask_eps)
    if not sel.any():
        raise InputError(f"MAPE undefined: no entries with |truth| > {mask_eps}")
    mape = float(np.mean(np.abs((pred[sel] - truth[sel]) / truth[sel])) * 100.0)
    return mae, rmse, mape


def horizon_metrics(truth, pred, mask_eps: float = 1.0, observed=None, axis: int = 1) -> list:
    """Rows ``(label, MAE, RMSE, MAPE)`` for horizons 1..H and ``"avg"`` over all entries."""
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    rows = []
    for h in range(truth.shape[axis]):
        obs_h = None if observed is None else np.take(observed, h, axis=axis)
        rows.append((str(h + 1), *metrics(np.take(truth, h, axis=axis), np.take(pred, h, axis=axis),
                                          mask_eps, obs_h)))
    rows.append(("avg", *metrics(truth, pred, mask_eps, observed)))
    return rows


def write_metrics_csv(rows, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["horizon", "MAE", "RMSE", "MAPE"])
        for label, mae, rmse, mape in rows:
            w.writerow([label, f"{mae:.6f}", f"{rmse:.6f}", f"{mape:.6f}"])
    return path
