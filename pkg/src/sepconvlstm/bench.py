"""Wall-clock timing of single cell forward steps."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from . import cells
from .cells import CellConfig, CellState, CellWeights
from .flops import analytic_flops


@dataclass(frozen=True)
class BenchStats:
    config: CellConfig
    dx: int
    dy: int
    repeat: int
    median_ms: float
    p10_ms: float
    p90_ms: float
    flops: int

    @property
    def gflops_per_s(self) -> float:
        return self.flops / (self.median_ms * 1e6) if self.median_ms > 0 else float("inf")


def time_forward(config: CellConfig, dx: int, dy: int, repeat: int = 10, warmup: int = 2,
                 seed: int = 0, dtype=np.float64, threads: int | None = 1) -> BenchStats:
    """Median / p10 / p90 wall-clock of one forward step, BLAS pinned to ``threads``."""
    if repeat < 1:
        raise ValueError("repeat must be >= 1")
    rng = np.random.default_rng(seed)
    weights = CellWeights.random(config, rng, scale=0.1, dtype=dtype)
    x = rng.standard_normal((config.in_channels, dx, dy)).astype(dtype)
    state = CellState.zeros(config, dx, dy, dtype=dtype)
    samples = []
    with threadpool_limits(limits=threads):
        for _ in range(warmup):
            cells.forward(config, weights, x, state)
        for _ in range(repeat):
            t0 = time.perf_counter()
            cells.forward(config, weights, x, state)
            samples.append((time.perf_counter() - t0) * 1e3)
    p10, median, p90 = np.percentile(samples, [10, 50, 90])
    return BenchStats(config, dx, dy, repeat, float(median), float(p10), float(p90),
                      analytic_flops(config, dx, dy).total)
