"""Closed-form FLOP model for one convLSTM cell step, plus an instrumented
counterpart that tallies what the tensor kernels actually execute.

Conventions: a multiply-accumulate is 2 FLOPs; sigmoid and tanh cost
:data:`~sepconvlstm.tensor.ACTIVATION_FLOPS` each; every gate sums its two
paths and its bias (2 additions) and the cell update adds once more, so
there are 9 additions per output element.

The convolution term is written for general ``I`` and ``O``.  With
``I == O`` (and ``Kx == Ky`` for the spatial variant) the totals are::

    standard   (16*Kx*Ky*I + 37) * O * Dx * Dy
    spatial    (32*Kx*I + 37) * O * Dx * Dy
    depthwise  (16*Kx*Ky + 37) * O * Dx * Dy
    separable  (16*Kx*Ky + 16*I + 37) * O * Dx * Dy
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import cells
from .cells import CellConfig, CellVariant
from .tensor import ACTIVATION_FLOPS, FlopCounter

CSV_HEADER = "variant,kx,ky,in,out,dx,dy,conv,hadamard,sigmoid,tanh,add,total"

HADAMARDS = 3
SIGMOIDS = 3
TANHS = 2
ADDITIONS = 9


@dataclass(frozen=True)
class FlopReport:
    variant: CellVariant
    kx: int
    ky: int
    in_channels: int
    out_channels: int
    dx: int
    dy: int
    convolutions: int
    hadamard: int
    sigmoid: int
    tanh: int
    additions: int

    @property
    def feature_map(self) -> tuple[int, int]:
        return self.dx, self.dy

    @property
    def total(self) -> int:
        return self.convolutions + self.hadamard + self.sigmoid + self.tanh + self.additions

    def as_row(self) -> dict[str, object]:
        return {
            "variant": self.variant.value, "kx": self.kx, "ky": self.ky,
            "in": self.in_channels, "out": self.out_channels, "dx": self.dx, "dy": self.dy,
            "conv": self.convolutions, "hadamard": self.hadamard, "sigmoid": self.sigmoid,
            "tanh": self.tanh, "add": self.additions, "total": self.total,
        }

    def to_csv(self) -> str:
        return ",".join(str(v) for v in self.as_row().values())

    @classmethod
    def from_csv(cls, line: str) -> FlopReport:
        fields = line.strip().split(",")
        names = CSV_HEADER.split(",")
        if len(fields) != len(names):
            raise ValueError(f"expected {len(names)} CSV fields, got {len(fields)}")
        row = dict(zip(names, fields))
        report = cls(
            variant=CellVariant.parse(row["variant"]),
            kx=int(row["kx"]), ky=int(row["ky"]),
            in_channels=int(row["in"]), out_channels=int(row["out"]),
            dx=int(row["dx"]), dy=int(row["dy"]),
            convolutions=int(row["conv"]), hadamard=int(row["hadamard"]),
            sigmoid=int(row["sigmoid"]), tanh=int(row["tanh"]), additions=int(row["add"]),
        )
        if report.total != int(row["total"]):
            raise ValueError(f"total {row['total']} does not match component sum {report.total}")
        return report


def _report(config: CellConfig, dx: int, dy: int, conv: int) -> FlopReport:
    elems = config.out_channels * dx * dy
    return FlopReport(
        variant=config.variant, kx=config.kx, ky=config.ky,
        in_channels=config.in_channels, out_channels=config.out_channels, dx=dx, dy=dy,
        convolutions=conv,
        hadamard=HADAMARDS * elems,
        sigmoid=SIGMOIDS * ACTIVATION_FLOPS * elems,
        tanh=TANHS * ACTIVATION_FLOPS * elems,
        additions=ADDITIONS * elems,
    )


def _with_variant(config: CellConfig, variant: CellVariant) -> CellConfig:
    return dataclasses.replace(config, variant=variant)


def flops_standard(config: CellConfig, dx: int, dy: int) -> FlopReport:
    config = _with_variant(config, CellVariant.STANDARD)
    i, o, kx, ky = config.in_channels, config.out_channels, config.kx, config.ky
    # 4 gates x (I->O input path + O->O state path)
    return _report(config, dx, dy, 8 * kx * ky * (i + o) * o * dx * dy)


def flops_spatial(config: CellConfig, dx: int, dy: int) -> FlopReport:
    config = _with_variant(config, CellVariant.SPATIAL)
    i, o, kx, ky = config.in_channels, config.out_channels, config.kx, config.ky
    # per gate: Kx x 1 (I->O) then 1 x Ky (O->O) on the input path,
    # Kx x 1 (O->O) then 1 x Ky (O->O) on the state path
    return _report(config, dx, dy, 8 * o * dx * dy * (kx * (i + o) + 2 * ky * o))


def flops_depthwise(config: CellConfig, dx: int, dy: int) -> FlopReport:
    config = _with_variant(config, CellVariant.DEPTHWISE)
    i, o, kx, ky = config.in_channels, config.out_channels, config.kx, config.ky
    return _report(config, dx, dy, 8 * kx * ky * (i + o) * dx * dy)


def flops_separable(config: CellConfig, dx: int, dy: int) -> FlopReport:
    config = _with_variant(config, CellVariant.SEPARABLE)
    i, o, kx, ky = config.in_channels, config.out_channels, config.kx, config.ky
    depthwise = 8 * kx * ky * (i + o) * dx * dy
    pointwise = 8 * (i + o) * o * dx * dy
    return _report(config, dx, dy, depthwise + pointwise)


_ANALYTIC = {
    CellVariant.STANDARD: flops_standard,
    CellVariant.SPATIAL: flops_spatial,
    CellVariant.DEPTHWISE: flops_depthwise,
    CellVariant.SEPARABLE: flops_separable,
}


def analytic_flops(config: CellConfig, dx: int, dy: int) -> FlopReport:
    return _ANALYTIC[config.variant](config, dx, dy)


def ratio_vs_standard(config: CellConfig, dx: int = 1, dy: int = 1) -> float:
    """Cost of ``config`` relative to a standard cell of the same shape."""
    return analytic_flops(config, dx, dy).total / flops_standard(config, dx, dy).total


def approx_ratio(config: CellConfig) -> float:
    """Large-``I`` approximation of :func:`ratio_vs_standard`."""
    v = config.variant
    if v is CellVariant.STANDARD:
        return 1.0
    if v is CellVariant.SPATIAL:
        return (config.kx + config.ky) / (config.kx * config.ky)
    if v is CellVariant.DEPTHWISE:
        return 1.0 / config.in_channels
    return 1.0 / config.in_channels + 1.0 / (config.kx * config.ky)


def measured_flops(config: CellConfig, dx: int, dy: int, seed: int = 0) -> FlopReport:
    """Run one instrumented forward step and return the executed FLOPs."""
    rng = np.random.default_rng(seed)
    weights = cells.CellWeights.random(config, rng, scale=0.5)
    x = rng.standard_normal((config.in_channels, dx, dy))
    state = cells.CellState(
        rng.standard_normal((config.out_channels, dx, dy)),
        rng.standard_normal((config.out_channels, dx, dy)),
    )
    with FlopCounter() as counter:
        cells.forward(config, weights, x, state)
    c = counter.report()
    return FlopReport(
        variant=config.variant, kx=config.kx, ky=config.ky,
        in_channels=config.in_channels, out_channels=config.out_channels, dx=dx, dy=dy,
        convolutions=c["conv"], hadamard=c["hadamard"], sigmoid=c["sigmoid"],
        tanh=c["tanh"], additions=c["add"],
    )
