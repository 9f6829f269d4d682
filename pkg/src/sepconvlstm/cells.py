"""Convolutional LSTM cells: standard, spatially separable, depthwise, and
depthwise separable.

All four variants share the gate wiring::

    I = sigmoid(Px_i(X) + Ph_i(H) + b_i)
    F = sigmoid(Px_f(X) + Ph_f(H) + b_f)
    J = tanh   (Px_c(X) + Ph_c(H) + b_c)
    O = sigmoid(Px_o(X) + Ph_o(H) + b_o)
    C' = F * C + I * J
    H' = O * tanh(C')

and differ only in the convolution path ``P``:

* standard:   ``W * Y``
* spatial:    ``Ww * (Wh * Y)`` with ``Wh`` of size Kx x 1 and ``Ww`` of size 1 x Ky
* depthwise:  ``W (*) Y`` (per-channel filters)
* separable:  ``W1x1 * (W (*) Y)``

No peephole connections.  The spatial intermediate keeps the path's output
width ``O``.  Depthwise cells require ``O == I``.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Iterator, Sequence

import numpy as np

from . import tensor as T
from .errors import DimensionError, SpecError, UsageError

GATES = ("i", "f", "c", "o")
PATHS = ("x", "h")


class CellVariant(enum.Enum):
    STANDARD = "standard"
    SPATIAL = "spatial"
    DEPTHWISE = "depthwise"
    SEPARABLE = "separable"

    @property
    def code(self) -> int:
        return list(CellVariant).index(self)

    @classmethod
    def from_code(cls, code: int) -> CellVariant:
        try:
            return list(cls)[code]
        except IndexError:
            raise SpecError(f"unknown variant code {code}") from None

    @classmethod
    def parse(cls, name: str | CellVariant) -> CellVariant:
        if isinstance(name, CellVariant):
            return name
        key = name.strip().lower()
        if key in _ALIASES:
            return _ALIASES[key]
        raise SpecError(f"unknown cell variant {name!r}; expected one of {sorted(_ALIASES)}")


_ALIASES = {
    "standard": CellVariant.STANDARD,
    "std": CellVariant.STANDARD,
    "spatial": CellVariant.SPATIAL,
    "depthwise": CellVariant.DEPTHWISE,
    "depth": CellVariant.DEPTHWISE,
    "separable": CellVariant.SEPARABLE,
    "sep": CellVariant.SEPARABLE,
}


@dataclass(frozen=True)
class CellConfig:
    variant: CellVariant
    in_channels: int
    out_channels: int
    kx: int = 3
    ky: int = 3

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", CellVariant.parse(self.variant))
        for name in ("in_channels", "out_channels", "kx", "ky"):
            if int(getattr(self, name)) < 1:
                raise SpecError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.kx % 2 == 0 or self.ky % 2 == 0:
            raise SpecError(f"kernel size must be odd, got {self.kx}x{self.ky}")
        if self.variant is CellVariant.DEPTHWISE and self.in_channels != self.out_channels:
            raise SpecError(
                "depthwise cells need out_channels == in_channels "
                f"(got I={self.in_channels}, O={self.out_channels})"
            )

    def path_in_channels(self, path: str) -> int:
        return self.in_channels if path == "x" else self.out_channels


def weight_shapes(config: CellConfig) -> dict[str, tuple[int, ...]]:
    """Ordered parameter names and shapes.

    The order is the checkpoint order: gates i, f, c, o; input path before
    state path; the first-applied factor before the second; biases last.
    """
    o, kx, ky = config.out_channels, config.kx, config.ky
    shapes: dict[str, tuple[int, ...]] = {}
    for g in GATES:
        for p in PATHS:
            cin = config.path_in_channels(p)
            v = config.variant
            if v is CellVariant.STANDARD:
                shapes[f"W_{p}{g}"] = (o, cin, kx, ky)
            elif v is CellVariant.SPATIAL:
                shapes[f"W_{p}{g}_h"] = (o, cin, kx, 1)
                shapes[f"W_{p}{g}_w"] = (o, o, 1, ky)
            elif v is CellVariant.DEPTHWISE:
                shapes[f"W_{p}{g}"] = (cin, 1, kx, ky)
            else:
                shapes[f"W_{p}{g}_dw"] = (cin, 1, kx, ky)
                shapes[f"W_{p}{g}_pw"] = (o, cin, 1, 1)
    for g in GATES:
        shapes[f"b_{g}"] = (o,)
    return shapes


def param_count(config: CellConfig) -> int:
    """Closed-form number of trainable scalars in one cell."""
    i, o, kx, ky = config.in_channels, config.out_channels, config.kx, config.ky
    v = config.variant
    if v is CellVariant.STANDARD:
        weights = (i * o + o * o) * kx * ky
    elif v is CellVariant.SPATIAL:
        weights = kx * o * (i + o) + 2 * ky * o * o
    elif v is CellVariant.DEPTHWISE:
        weights = (o + o) * kx * ky
    else:
        weights = (i + o) * kx * ky + (i + o) * o
    return 4 * weights + 4 * o


@dataclass
class CellWeights:
    """Parameter set of one cell, keyed by the names of :func:`weight_shapes`."""

    config: CellConfig
    params: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        expected = weight_shapes(self.config)
        if set(expected) != set(self.params):
            missing = sorted(set(expected) - set(self.params))
            extra = sorted(set(self.params) - set(expected))
            raise DimensionError(f"weight names mismatch: missing={missing} extra={extra}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise DimensionError(
                    f"{name}: expected shape {shape}, got {self.params[name].shape}"
                )
        self.params = {name: self.params[name] for name in expected}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    @property
    def size(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> CellWeights:
        return CellWeights(self.config, {k: v.copy() for k, v in self.params.items()})

    @classmethod
    def zeros(cls, config: CellConfig, dtype=np.float64) -> CellWeights:
        return cls(config, {k: np.zeros(s, dtype) for k, s in weight_shapes(config).items()})

    @classmethod
    def random(cls, config: CellConfig, rng: np.random.Generator, scale: float = 1.0,
               dtype=np.float64) -> CellWeights:
        """Standard normal entries times ``scale``; for tests and benchmarks."""
        return cls(
            config,
            {k: (scale * rng.standard_normal(s)).astype(dtype) for k, s in weight_shapes(config).items()},
        )

    @classmethod
    def init(cls, config: CellConfig, rng: np.random.Generator) -> CellWeights:
        """Training init: U(-s, s), s = 1/sqrt(fan_in) per kernel; forget bias 1."""
        params = {}
        for name, shape in weight_shapes(config).items():
            if name.startswith("b_"):
                params[name] = np.full(shape, 1.0 if name == "b_f" else 0.0)
            else:
                fan_in = shape[1] * shape[2] * shape[3]
                s = 1.0 / np.sqrt(fan_in)
                params[name] = rng.uniform(-s, s, size=shape)
        return cls(config, params)


@dataclass
class CellState:
    h: np.ndarray
    c: np.ndarray

    def __post_init__(self) -> None:
        T.check_tensor(self.h, "state.h")
        if self.h.shape != self.c.shape:
            raise DimensionError(f"state h {self.h.shape} and c {self.c.shape} differ")

    @classmethod
    def zeros(cls, config: CellConfig, height: int, width: int, dtype=np.float64) -> CellState:
        shape = (config.out_channels, height, width)
        return cls(np.zeros(shape, dtype), np.zeros(shape, dtype))


@dataclass
class ForwardCache:
    """Activations retained by :func:`forward_cached` for :func:`backward`."""

    x: np.ndarray
    h_prev: np.ndarray
    c_prev: np.ndarray
    gates: dict[str, np.ndarray]
    c: np.ndarray
    tanh_c: np.ndarray
    mids: dict[str, np.ndarray] = field(default_factory=dict)


def _path_forward(config: CellConfig, w: CellWeights, name: str, y: np.ndarray,
                  mids: dict[str, np.ndarray]) -> np.ndarray:
    v = config.variant
    if v is CellVariant.STANDARD:
        return T.conv2d(y, w[name])
    if v is CellVariant.DEPTHWISE:
        return T.depthwise_conv2d(y, w[name])
    if v is CellVariant.SPATIAL:
        mid = T.conv2d(y, w[name + "_h"])
        mids[name] = mid
        return T.conv2d(mid, w[name + "_w"])
    mid = T.depthwise_conv2d(y, w[name + "_dw"])
    mids[name] = mid
    return T.conv2d(mid, w[name + "_pw"])


def _path_backward(config: CellConfig, w: CellWeights, name: str, y: np.ndarray,
                   mids: dict[str, np.ndarray], grad: np.ndarray,
                   dparams: dict[str, np.ndarray]) -> np.ndarray:
    v = config.variant
    if v is CellVariant.STANDARD:
        dy, dparams[name] = T.conv2d_backward(y, w[name], grad)
    elif v is CellVariant.DEPTHWISE:
        dy, dparams[name] = T.depthwise_conv2d_backward(y, w[name], grad)
    elif v is CellVariant.SPATIAL:
        dmid, dparams[name + "_w"] = T.conv2d_backward(mids[name], w[name + "_w"], grad)
        dy, dparams[name + "_h"] = T.conv2d_backward(y, w[name + "_h"], dmid)
    else:
        dmid, dparams[name + "_pw"] = T.conv2d_backward(mids[name], w[name + "_pw"], grad)
        dy, dparams[name + "_dw"] = T.depthwise_conv2d_backward(y, w[name + "_dw"], dmid)
    return dy


def _check_step(config: CellConfig, weights: CellWeights, x: np.ndarray, state: CellState) -> None:
    if weights.config != config:
        raise DimensionError(f"weights were built for {weights.config}, not {config}")
    T.check_tensor(x, "x")
    if x.shape[0] != config.in_channels:
        raise DimensionError(f"x has {x.shape[0]} channels, cell expects {config.in_channels}")
    expected = (config.out_channels, *x.shape[1:])
    if state.h.shape != expected:
        raise DimensionError(f"state shape {state.h.shape} does not match expected {expected}")


def forward_cached(config: CellConfig, weights: CellWeights, x: np.ndarray,
                   state: CellState) -> tuple[np.ndarray, CellState, ForwardCache]:
    _check_step(config, weights, x, state)
    mids: dict[str, np.ndarray] = {}
    gates = {}
    for g in GATES:
        zx = _path_forward(config, weights, f"W_x{g}", x, mids)
        zh = _path_forward(config, weights, f"W_h{g}", state.h, mids)
        z = T.add_bias(T.add(zx, zh), weights[f"b_{g}"])
        gates[g] = T.tanh(z) if g == "c" else T.sigmoid(z)
    c = T.add(T.hadamard(gates["f"], state.c), T.hadamard(gates["i"], gates["c"]))
    tanh_c = T.tanh(c)
    h = T.hadamard(gates["o"], tanh_c)
    cache = ForwardCache(x=x, h_prev=state.h, c_prev=state.c, gates=gates, c=c,
                         tanh_c=tanh_c, mids=mids)
    return h, CellState(h, c), cache


def forward(config: CellConfig, weights: CellWeights, x: np.ndarray,
            state: CellState) -> tuple[np.ndarray, CellState]:
    """One time step: ``(x, (H, C)) -> (H', (H', C'))``."""
    h, new_state, _ = forward_cached(config, weights, x, state)
    return h, new_state


def backward(config: CellConfig, weights: CellWeights, cache: ForwardCache | None,
             dh: np.ndarray, dc: np.ndarray | None = None
             ) -> tuple[np.ndarray, CellState, dict[str, np.ndarray]]:
    """Reverse-mode gradients of one step.

    ``dh`` and ``dc`` are the upstream gradients w.r.t. the emitted ``H'`` and
    ``C'``.  Returns ``(dx, CellState(dh_prev, dc_prev), dweights)``.
    """
    if cache is None:
        raise UsageError("backward needs the cache returned by forward_cached")
    gi, gf, gj, go = (cache.gates[g] for g in GATES)
    if dc is None:
        dc = np.zeros_like(cache.c)
    dc_total = dc + dh * go * (1.0 - cache.tanh_c ** 2)
    dz = {
        "i": dc_total * gj * gi * (1.0 - gi),
        "f": dc_total * cache.c_prev * gf * (1.0 - gf),
        "c": dc_total * gi * (1.0 - gj ** 2),
        "o": dh * cache.tanh_c * go * (1.0 - go),
    }
    dc_prev = dc_total * gf

    dparams: dict[str, np.ndarray] = {}
    dx = np.zeros_like(cache.x, dtype=np.result_type(cache.x, dh))
    dh_prev = np.zeros_like(cache.h_prev, dtype=np.result_type(cache.h_prev, dh))
    for g in GATES:
        dparams[f"b_{g}"] = dz[g].sum(axis=(1, 2))
        dx += _path_backward(config, weights, f"W_x{g}", cache.x, cache.mids, dz[g], dparams)
        dh_prev += _path_backward(config, weights, f"W_h{g}", cache.h_prev, cache.mids, dz[g], dparams)
    dparams = {name: dparams[name] for name in weights}
    return dx, CellState(dh_prev, dc_prev), dparams


def rollout(config: CellConfig, weights: CellWeights, sequence: Sequence[np.ndarray],
            initial: CellState | None = None) -> tuple[list[np.ndarray], CellState]:
    """Fold :func:`forward` over ``sequence``; a missing ``initial`` state is all zeros."""
    if len(sequence) == 0:
        raise UsageError("rollout needs at least one frame")
    first = sequence[0]
    for t, frame in enumerate(sequence):
        if frame.shape != first.shape:
            raise DimensionError(f"frame {t} has shape {frame.shape}, frame 0 has {first.shape}")
    state = initial if initial is not None else CellState.zeros(config, *first.shape[1:], dtype=first.dtype)
    outputs = []
    for frame in sequence:
        h, state = forward(config, weights, frame, state)
        outputs.append(h)
    return outputs, state


# --- CLSW checkpoint format -------------------------------------------------

WEIGHTS_MAGIC = b"CLSW"
WEIGHTS_VERSION = 1
_CFG = struct.Struct("<4sBB4I")


def _as_tensor(name: str, arr: np.ndarray) -> np.ndarray:
    # kernels flatten their (out, in) pair; biases become (O, 1, 1)
    if arr.ndim == 1:
        return arr.reshape(-1, 1, 1)
    return arr.reshape(arr.shape[0] * arr.shape[1], arr.shape[2], arr.shape[3])


def write_weights(fh: BinaryIO, weights: CellWeights) -> None:
    cfg = weights.config
    fh.write(_CFG.pack(WEIGHTS_MAGIC, WEIGHTS_VERSION, cfg.variant.code,
                       cfg.in_channels, cfg.out_channels, cfg.kx, cfg.ky))
    for name, arr in weights.params.items():
        T.write_tensor(fh, _as_tensor(name, arr))


def read_weights(fh: BinaryIO) -> CellWeights:
    header = fh.read(_CFG.size)
    if len(header) != _CFG.size:
        raise ValueError("truncated weight checkpoint header")
    magic, version, code, i, o, kx, ky = _CFG.unpack(header)
    if magic != WEIGHTS_MAGIC:
        raise ValueError(f"bad weight checkpoint magic {magic!r}")
    if version != WEIGHTS_VERSION:
        raise ValueError(f"unsupported weight checkpoint version {version}")
    config = CellConfig(CellVariant.from_code(code), i, o, kx, ky)
    params = {}
    for name, shape in weight_shapes(config).items():
        arr = T.read_tensor(fh)
        if arr.size != int(np.prod(shape)):
            raise ValueError(f"{name}: stored {arr.shape} cannot hold {shape}")
        params[name] = arr.reshape(shape)
    return CellWeights(config, params)


def save_weights(path, weights: CellWeights) -> None:
    with open(path, "wb") as fh:
        write_weights(fh, weights)


def load_weights(path) -> CellWeights:
    with open(path, "rb") as fh:
        return read_weights(fh)
