"""Central finite-difference check of :func:`sepconvlstm.cells.backward`."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import cells
from .cells import CellConfig, CellState, CellWeights


@dataclass(frozen=True)
class GroupResult:
    name: str
    rel_error: float
    passed: bool


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)``; zero when both gradients vanish."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def _numeric_grad(f, arr: np.ndarray, eps: float) -> np.ndarray:
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + eps
        up = f()
        flat[k] = orig - eps
        down = f()
        flat[k] = orig
        gflat[k] = (up - down) / (2 * eps)
    return grad


def check_cell_gradients(config: CellConfig, seed: int = 0, eps: float = 1e-5,
                         tol: float = 1e-4, height: int = 4, width: int = 4,
                         scale: float = 0.5) -> list[GroupResult]:
    """Compare analytic and numeric gradients of ``sum(Gh*H') + sum(Gc*C')``.

    One result per weight tensor, bias, the input ``x`` and both state tensors.
    """
    rng = np.random.default_rng(seed)
    weights = CellWeights.random(config, rng, scale=scale)
    x = rng.standard_normal((config.in_channels, height, width))
    h0 = rng.standard_normal((config.out_channels, height, width))
    c0 = rng.standard_normal((config.out_channels, height, width))
    gh = rng.standard_normal(h0.shape)
    gc = rng.standard_normal(c0.shape)

    def objective() -> float:
        h, state = cells.forward(config, weights, x, CellState(h0, c0))
        return float(np.sum(gh * h) + np.sum(gc * state.c))

    _, _, cache = cells.forward_cached(config, weights, x, CellState(h0, c0))
    dx, dstate, dweights = cells.backward(config, weights, cache, gh, gc)

    analytic = dict(dweights, x=dx, h_prev=dstate.h, c_prev=dstate.c)
    targets = dict(weights.params, x=x, h_prev=h0, c_prev=c0)
    results = []
    for name, arr in targets.items():
        err = relative_error(analytic[name], _numeric_grad(objective, arr, eps))
        results.append(GroupResult(name, err, err < tol))
    return results
