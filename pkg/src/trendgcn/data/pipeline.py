"""Chronological splits, z-score scaling, sliding windows and noise injection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import ConfigError, ShapeError
from .container import SpatialTemporalSeries

logger = logging.getLogger(__name__)

# split ratios and embedding dimensions per benchmark
DATASET_SPLITS = {
    "PEMS03": (0.6, 0.2, 0.2),
    "PEMS04": (0.6, 0.2, 0.2),
    "PEMS07": (0.6, 0.2, 0.2),
    "PEMS08": (0.6, 0.2, 0.2),
    "METR-LA": (0.7, 0.1, 0.2),
    "PEMS-BAY": (0.7, 0.1, 0.2),
}


def split_bounds(steps: int, ratios) -> list:
    ratios = [float(r) for r in ratios]
    if any(r <= 0 for r in ratios):
        raise ConfigError(f"split ratios must be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {sum(ratios)}")
    bounds = [0]
    acc = 0.0
    for r in ratios[:-1]:
        acc += r
        bounds.append(int(math.floor(acc * steps + 1e-9)))
    bounds.append(steps)
    return bounds


def split(series: SpatialTemporalSeries, ratios=(0.6, 0.2, 0.2), min_steps: int = 24) -> tuple:
    """Contiguous train/val/test split; each part must hold at least ``min_steps`` steps."""
    bounds = split_bounds(series.steps, ratios)
    parts = []
    for name, lo, hi in zip(("train", "val", "test"), bounds[:-1], bounds[1:]):
        if hi - lo < min_steps:
            raise ShapeError(f"{name} split has {hi - lo} steps, fewer than the window length {min_steps}")
        parts.append(series.slice(lo, hi))
    return tuple(parts)


@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, train: SpatialTemporalSeries) -> "Scaler":
        data = np.asarray(train.data, dtype=np.float64)
        if train.missing_mask is not None:
            observed = ~train.missing_mask
            vals = data[observed]                      # count x F
        else:
            vals = data.reshape(-1, data.shape[-1])
        mean = vals.mean(axis=0)
        std = vals.std(axis=0)
        if np.any(std < 1e-8):
            logger.warning("zero-variance channel(s) %s: std clamped to 1e-8",
                           np.flatnonzero(std < 1e-8).tolist())
        return cls(mean, np.maximum(std, 1e-8))

    def apply(self, x: np.ndarray, channels=None) -> np.ndarray:
        m, s = self._params(channels)
        return ((np.asarray(x, dtype=np.float64) - m) / s)

    def invert(self, x: np.ndarray, channels=None) -> np.ndarray:
        m, s = self._params(channels)
        return np.asarray(x, dtype=np.float64) * s + m

    def _params(self, channels):
        if channels is None:
            return self.mean, self.std
        return self.mean[channels], self.std[channels]


@dataclass
class WindowedSamples:
    """Stride-1 windows over a (normalised) series; arrays are views, not copies."""

    inputs: np.ndarray        # count x T x N x F
    targets: np.ndarray       # count x H x N x O (normalised scale)
    raw_targets: np.ndarray   # count x H x N x O (raw scale)
    target_mask: Optional[np.ndarray] = None   # count x H x N, True = observed

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def batch(self, idx):
        mask = None if self.target_mask is None else self.target_mask[idx]
        return (np.ascontiguousarray(self.inputs[idx]), np.ascontiguousarray(self.targets[idx]),
                np.ascontiguousarray(self.raw_targets[idx]), mask)


def _windows(arr: np.ndarray, start: int, length: int, count: int) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(arr, length, axis=0)  # (steps-length+1) x ... x length
    view = view[start:start + count]
    return np.moveaxis(view, -1, 1)


def make_windows(series: SpatialTemporalSeries, scaler: Scaler, in_steps: int = 12, horizon: int = 12,
                 target_channels=(0,), dtype=np.float32) -> WindowedSamples:
    """All windows of ``in_steps`` inputs followed by ``horizon`` targets.

    Window ``k`` reads inputs from steps ``k .. k+T-1`` and targets from
    ``k+T .. k+T+H-1``; there are ``steps - (T+H) + 1`` windows.
    """
    steps = series.steps
    count = steps - (in_steps + horizon) + 1
    if count < 1:
        raise ShapeError(f"series of {steps} steps is shorter than one window ({in_steps + horizon})")
    channels = list(target_channels)
    norm = scaler.apply(series.data).astype(dtype)
    raw = np.asarray(series.data, dtype=np.float64)[:, :, channels]
    inputs = _windows(norm, 0, in_steps, count)
    targets = _windows(norm[:, :, channels], in_steps, horizon, count)
    raw_targets = _windows(raw, in_steps, horizon, count)
    mask = None
    if series.missing_mask is not None:
        mask = _windows(~series.missing_mask, in_steps, horizon, count)
    return WindowedSamples(inputs, targets, raw_targets, mask)


def inject_gaussian_noise(series: SpatialTemporalSeries, sigma: float, seed: int = 0) -> SpatialTemporalSeries:
    """Add i.i.d. N(0, sigma^2) to the raw values (missing entries stay zero)."""
    if sigma < 0:
        raise ConfigError("noise sigma must be non-negative")
    if sigma == 0:
        return series.with_data(series.data.copy())
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=series.data.shape)
    noisy = np.asarray(series.data, dtype=np.float64) + noise
    if series.missing_mask is not None:
        noisy[series.missing_mask] = 0.0
    return series.with_data(noisy.astype(series.data.dtype))


def relative_increment(clean: float, polluted: float) -> float:
    """Percentage change from ``clean`` to ``polluted``."""
    return 100.0 * (polluted - clean) / clean


def format_increment(pct: float) -> str:
    pct = 0.0 if abs(pct) < 5e-3 else pct
    return f"{pct:+.2f}%"
