"""Disjoint- and sliding-blocks statistics and the empirical cluster measure.

Conventions: blocks have size r, m = floor(n/r) of them fit, and the
series is truncated to m*r for blockwise sums (the discarded tail length
is exposed).  "Interior" variants restrict block sums to j = 2..m-1.  All
functional evaluations happen on the threshold-scaled series, so the
threshold never reaches the functionals themselves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .functionals import ClusterFunctional
from .models import MagnitudeSeries


@dataclass(frozen=True)
class BlockConfig:
    """Block size r, threshold u, marginal exceedance probability w."""

    r: int
    u: float
    w: float
    interior_only: bool = False

    def __post_init__(self):
        if self.r < 2:
            raise ConfigError("block size r must be >= 2")
        if self.u <= 0:
            raise ConfigError("threshold u must be positive")
        if not 0.0 < self.w < 1.0:
            raise ConfigError("w must lie strictly between 0 and 1")


def truncated_length(n: int, r: int) -> tuple[int, int]:
    """(m, discarded tail length) for blocks of size r in a series of n."""
    m = n // r
    return m, n - m * r


def _scaled(series: MagnitudeSeries, cfg: BlockConfig) -> np.ndarray:
    return series.values / cfg.u


def _positions(scaled: np.ndarray) -> np.ndarray:
    """1-based exceedance positions of the scaled series."""
    return np.flatnonzero(scaled > 1.0) + 1


def window_values_at(scaled: np.ndarray, pos: np.ndarray, starts: np.ndarray,
                     r: int, h: ClusterFunctional) -> np.ndarray:
    """H over the windows [s, s+r-1] for every 1-based start in `starts`.

    Pattern-backed functionals are computed from the exceedance positions
    alone; anything else falls back to per-window evaluation.
    """
    starts = np.asarray(starts, dtype=np.int64)
    if h.pattern_value is not None:
        lo = np.searchsorted(pos, starts, side="left")
        hi = np.searchsorted(pos, starts + r - 1, side="right")
        counts = hi - lo
        if pos.size:
            first = pos[np.minimum(lo, pos.size - 1)]
            last = pos[np.maximum(hi - 1, 0)]
            lengths = np.where(counts > 0, last - first + 1, 0)
        else:
            lengths = np.zeros_like(counts)
        return np.asarray(h.pattern_value(counts, lengths), dtype=float)
    out = np.empty(starts.size, dtype=float)
    for i, s in enumerate(starts):
        w = scaled[s - 1: s - 1 + r]
        out[i] = h.evaluator(w) if np.any(w > 1.0) else 0.0
    return out


def block_values(series: MagnitudeSeries, cfg: BlockConfig, h: ClusterFunctional) -> np.ndarray:
    """Per-block H values H(u^-1 X_{(j-1)r+1..jr}), j = 1..m."""
    m, _ = truncated_length(len(series), cfg.r)
    if m < 1:
        raise ConfigError("series shorter than one block")
    scaled = _scaled(series, cfg)
    pos = _positions(scaled)
    starts = np.arange(m, dtype=np.int64) * cfg.r + 1
    return window_values_at(scaled, pos, starts, cfg.r, h)


def sliding_values(series: MagnitudeSeries, cfg: BlockConfig, h: ClusterFunctional) -> np.ndarray:
    """Per-start H values over all n-r+1 windows (brute-force reference)."""
    n = len(series)
    if cfg.r > n:
        raise ConfigError("block size exceeds series length")
    scaled = _scaled(series, cfg)
    pos = _positions(scaled)
    starts = np.arange(1, n - cfg.r + 2, dtype=np.int64)
    return window_values_at(scaled, pos, starts, cfg.r, h)


def disjoint_stat(series: MagnitudeSeries, cfg: BlockConfig, h: ClusterFunctional) -> float:
    """Normalized disjoint-blocks statistic, (1/(n_eff w)) sum_j H(block_j).

    With interior_only, the sum runs over j = 2..m-1 (same normalization).
    """
    vals = block_values(series, cfg, h)
    m = vals.size
    n_eff = m * cfg.r
    if cfg.interior_only:
        if m < 3:
            raise ConfigError("interior variant needs at least 3 blocks")
        vals = vals[1:m - 1]
    return float(vals.sum() / (n_eff * cfg.w))


def sliding_stat(series: MagnitudeSeries, cfg: BlockConfig, h: ClusterFunctional) -> float:
    """Normalized sliding-blocks statistic.

    Full variant: (1/(n r w)) sum over all window starts.  Interior
    variant: starts restricted to blocks j = 2..m-1, normalized by the
    truncated length.
    """
    n = len(series)
    if cfg.interior_only:
        m, _ = truncated_length(n, cfg.r)
        if m < 3:
            raise ConfigError("interior variant needs at least 3 blocks")
        scaled = _scaled(series, cfg)
        pos = _positions(scaled)
        starts = np.arange(cfg.r + 1, (m - 1) * cfg.r + 1, dtype=np.int64)
        total = window_values_at(scaled, pos, starts, cfg.r, h).sum()
        return float(total / (m * cfg.r * cfg.r * cfg.w))
    total = sliding_values(series, cfg, h).sum()
    return float(total / (n * cfg.r * cfg.w))


def empirical_cluster_measure(series: MagnitudeSeries, cfg: BlockConfig,
                              h: ClusterFunctional) -> float:
    """Disjoint-block average of H scaled by 1/(r w).

    For the indicator functional this estimates the candidate extremal
    index.
    """
    vals = block_values(series, cfg, h)
    return float(vals.mean() / (cfg.r * cfg.w))
