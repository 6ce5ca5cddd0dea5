"""
Synthetic sensor-network traffic with drifting spatial dependencies.

Sensors sit at random points of the unit square and are linked when close
(plus a link to each sensor's nearest neighbour). Every sensor carries a
daily sinusoid around its own base level. On top of that a deviation process
diffuses over the graph,

    u(t) = persistence * u(t-1) + coupling * A(t) u(t-1) + innovation(t),

where ``A(t)`` is the row-normalised weight matrix whose edge weights rotate
with period ``drift_period``. Observation noise and sparse outlier spikes are
added last.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from .container import SpatialTemporalSeries

DAY_STEPS = 288


@dataclass
class AdjacencySchedule:
    """Ground-truth time-varying adjacency ``A(t)`` of a synthetic series."""

    base: np.ndarray       # N x N distance weights on edges, 0 elsewhere
    phase: np.ndarray      # N x N edge phase offsets
    drift_period: float

    def at(self, t: int) -> np.ndarray:
        if math.isinf(self.drift_period):
            angle = self.phase
        else:
            angle = 2 * np.pi * (t % self.drift_period) / self.drift_period + self.phase
        w = self.base * 0.5 * (1.0 + np.cos(angle))
        rows = w.sum(axis=1, keepdims=True)
        return np.divide(w, rows, out=np.zeros_like(w), where=rows > 0)

    @property
    def is_static(self) -> bool:
        return math.isinf(self.drift_period)


def random_geometric_graph(n_nodes: int, rng: np.random.Generator, radius=None):
    pos = rng.uniform(0.0, 1.0, (n_nodes, 2))
    if radius is None:
        radius = math.sqrt(4.0 / (math.pi * n_nodes))
    dist = np.sqrt(((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1))
    adj = (dist <= radius) & ~np.eye(n_nodes, dtype=bool)
    masked = dist + np.eye(n_nodes) * 1e9
    nearest = masked.argmin(axis=1)
    adj[np.arange(n_nodes), nearest] = True
    adj |= adj.T
    weights = np.where(adj, np.exp(-(dist / radius) ** 2), 0.0)
    return pos, weights


def synthesize(n_nodes: int = 16, steps: int = 2880, seed: int = 0, drift_period: float = 96.0, *,
               coupling: float = 0.4, persistence: float = 0.5, noise_std: float = 1.0,
               daily_amplitude: float = 15.0, base_level: float = 50.0, spike_prob: float = 0.002,
               spike_scale: float = 15.0, granularity_minutes: int = 5):
    """Return ``(series, schedule)`` for a seeded synthetic network.

    ``noise_std`` sets the innovation scale; observation noise is half of it.
    ``drift_period=math.inf`` keeps the true adjacency static.
    """
    if n_nodes < 2:
        raise ConfigError("synthetic network needs at least two nodes")
    if persistence + coupling >= 1.0:
        raise ConfigError("persistence + coupling must stay below 1 for a stable diffusion")
    rng = np.random.default_rng(seed)
    _, base = random_geometric_graph(n_nodes, rng)
    phase = rng.uniform(0, 2 * np.pi, (n_nodes, n_nodes))
    schedule = AdjacencySchedule(base, phase, float(drift_period))

    levels = base_level * rng.uniform(0.7, 1.3, n_nodes)
    amps = daily_amplitude * rng.uniform(0.6, 1.4, n_nodes)
    offsets = rng.uniform(-0.5, 0.5, n_nodes)
    tt = np.arange(steps)
    daily = levels + amps * np.sin(2 * np.pi * (tt % DAY_STEPS)[:, None] / DAY_STEPS + offsets)

    innovations = rng.normal(0.0, 1.0, (steps, n_nodes)) * noise_std
    obs_noise = rng.normal(0.0, 1.0, (steps, n_nodes)) * (0.5 * noise_std)
    spikes = (rng.random((steps, n_nodes)) < spike_prob) * rng.choice([-1.0, 1.0], (steps, n_nodes)) * spike_scale

    dev = np.zeros((steps, n_nodes))
    u = np.zeros(n_nodes)
    static_a = schedule.at(0) if schedule.is_static else None
    for t in range(steps):
        a = static_a if static_a is not None else schedule.at(t)
        u = persistence * u + coupling * (a @ u) + innovations[t]
        dev[t] = u
    values = daily + dev + obs_noise + spikes
    series = SpatialTemporalSeries(values[:, :, None].astype(np.float32), granularity_minutes,
                                   feature_names=["flow"])
    return series, schedule
