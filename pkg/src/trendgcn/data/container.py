"""
Series containers.

Binary ``STTS`` layout (all integers little-endian u32)::

    magic "STTS" | version | steps | N | F | granularity_minutes | flags
    steps*N*F float32 LE values, row-major (step, node, feature)
    if flags & 1: steps*N uint8 missing-mask bytes (1 = missing)

CSV layout: one header line, then one row per step with N*F columns ordered
node-major (n0_f0, n0_f1, ..., n1_f0, ...). A sidecar ``<file>.meta`` holds
``key=value`` lines: ``nodes=`` (count or comma-separated ids), ``features=``
(count or comma-separated names) and ``granularity_minutes=``. Empty or NaN
cells are treated as missing.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import InputError, ShapeError

MAGIC = b"STTS"
VERSION = 1
_HEADER = struct.Struct("<4s6I")
FLAG_MASK = 1


@dataclass
class SpatialTemporalSeries:
    data: np.ndarray                       # steps x N x F
    granularity_minutes: int = 5
    node_ids: list = field(default_factory=list)
    feature_names: list = field(default_factory=list)
    missing_mask: Optional[np.ndarray] = None   # steps x N, True = missing

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ShapeError(f"series data must be steps x N x F, got shape {self.data.shape}")
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        steps, n, f = self.data.shape
        if self.granularity_minutes <= 0:
            raise InputError("granularity must be a positive number of minutes")
        if not self.node_ids:
            self.node_ids = [str(i) for i in range(n)]
        if not self.feature_names:
            self.feature_names = [f"f{j}" for j in range(f)]
        if len(self.node_ids) != n or len(self.feature_names) != f:
            raise ShapeError("node_ids / feature_names do not match the data extents")
        bad = ~np.isfinite(self.data)
        if bad.any():
            holes = bad.any(axis=2)
            self.data = np.where(bad, 0.0, self.data).astype(self.data.dtype)
            self.missing_mask = holes if self.missing_mask is None else (np.asarray(self.missing_mask, bool) | holes)
        if self.missing_mask is not None:
            self.missing_mask = np.asarray(self.missing_mask, dtype=bool)
            if self.missing_mask.shape != (steps, n):
                raise ShapeError(f"missing mask must be {(steps, n)}, got {self.missing_mask.shape}")

    @property
    def steps(self) -> int:
        return self.data.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.data.shape[1]

    @property
    def n_features(self) -> int:
        return self.data.shape[2]

    def slice(self, start: int, stop: int) -> "SpatialTemporalSeries":
        mask = None if self.missing_mask is None else self.missing_mask[start:stop]
        return SpatialTemporalSeries(self.data[start:stop], self.granularity_minutes,
                                     list(self.node_ids), list(self.feature_names), mask)

    def with_data(self, data: np.ndarray) -> "SpatialTemporalSeries":
        return SpatialTemporalSeries(data, self.granularity_minutes, list(self.node_ids),
                                     list(self.feature_names), self.missing_mask)


def save_container(series: SpatialTemporalSeries, path) -> Path:
    path = Path(path)
    steps, n, f = series.data.shape
    flags = FLAG_MASK if series.missing_mask is not None else 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, steps, n, f, int(series.granularity_minutes), flags))
        fh.write(np.ascontiguousarray(series.data, dtype="<f4").tobytes())
        if flags & FLAG_MASK:
            fh.write(np.ascontiguousarray(series.missing_mask, dtype=np.uint8).tobytes())
    return path


def _load_binary(path: Path) -> SpatialTemporalSeries:
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise InputError(f"{path}: truncated header")
    magic, version, steps, n, f, gran, flags = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise InputError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise InputError(f"{path}: unsupported container version {version}")
    count = steps * n * f
    need = _HEADER.size + 4 * count + (steps * n if flags & FLAG_MASK else 0)
    if len(raw) < need:
        raise InputError(f"{path}: truncated payload ({len(raw)} bytes, expected {need})")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=_HEADER.size).reshape(steps, n, f)
    mask = None
    if flags & FLAG_MASK:
        mask = np.frombuffer(raw, dtype=np.uint8, count=steps * n, offset=_HEADER.size + 4 * count)
        mask = mask.reshape(steps, n).astype(bool)
    return SpatialTemporalSeries(data.astype(np.float32), int(gran), missing_mask=mask)


def _read_meta(path: Path) -> dict:
    meta = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InputError(f"{path}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        meta[k.strip()] = v.strip()
    return meta


def _names(value: str, prefix: str) -> list:
    value = value.strip()
    if value.isdigit():
        return [f"{prefix}{i}" for i in range(int(value))]
    return [v.strip() for v in value.split(",") if v.strip()]


def meta_path_for(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta")


def _load_csv(path: Path) -> SpatialTemporalSeries:
    meta_file = meta_path_for(path)
    if not meta_file.exists():
        raise InputError(f"{path}: missing metadata sidecar {meta_file.name}")
    meta = _read_meta(meta_file)
    try:
        node_ids = _names(meta["nodes"], "")
        features = _names(meta["features"], "f")
        gran = int(meta.get("granularity_minutes", 5))
    except KeyError as exc:
        raise InputError(f"{meta_file}: missing key {exc.args[0]}") from None
    n, f = len(node_ids), len(features)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n * f:
                raise InputError(f"{path}:{lineno}: expected {n * f} columns, found {len(row)}")
            rows.append([float(c) if c.strip() not in ("", "nan", "NaN") else np.nan for c in row])
    if not rows:
        raise InputError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=np.float64).reshape(len(rows), n, f).astype(np.float32)
    return SpatialTemporalSeries(data, gran, node_ids, features)


def save_csv(series: SpatialTemporalSeries, path) -> Path:
    path = Path(path)
    steps, n, f = series.data.shape
    flat = series.data.reshape(steps, n * f).astype(np.float64)
    if series.missing_mask is not None:
        flat = np.where(np.repeat(series.missing_mask, f, axis=1), np.nan, flat)
    header = [f"{node}_{feat}" for node in series.node_ids for feat in series.feature_names]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in flat:
            w.writerow(["" if np.isnan(v) else repr(float(v)) for v in row])
    meta_path_for(path).write_text(
        f"nodes={','.join(series.node_ids)}\n"
        f"features={','.join(series.feature_names)}\n"
        f"granularity_minutes={series.granularity_minutes}\n"
    )
    return path


def load_container(path) -> SpatialTemporalSeries:
    """Read an ``STTS`` binary container, or a CSV file with its ``.meta`` sidecar."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"{path}: no such file")
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == MAGIC:
        return _load_binary(path)
    if path.suffix.lower() == ".csv":
        return _load_csv(path)
    raise InputError(f"{path}: bad magic {head!r}, expected {MAGIC!r}")
