"""Dense (channels, height, width) tensor primitives.

Tensors are plain numpy arrays of shape ``(C, H, W)``; kernels are
``(out_channels, in_channels, kh, kw)``.  Depthwise kernels use
``in_channels == 1``.  All convolutions are stride-1 cross-correlations
with SAME zero padding, so spatial size is preserved.

Every primitive reports the work it performs to the active
:class:`FlopCounter`, if any.  Counting is scoped to a context variable,
so concurrent evaluations never share a counter.
"""

from __future__ import annotations

import contextvars
import struct
from typing import BinaryIO

import numpy as np

from .errors import DimensionError, UsageError

# FLOPs charged per sigmoid / tanh element.
ACTIVATION_FLOPS = 5

FLOP_KINDS = ("conv", "hadamard", "sigmoid", "tanh", "add")

_active_counter: contextvars.ContextVar[FlopCounter | None] = contextvars.ContextVar(
    "active_flop_counter", default=None
)


class FlopCounter:
    """Tally of floating point operations performed inside a ``with`` block.

    >>> with FlopCounter() as fc:
    ...     _ = sigmoid(np.zeros((1, 2, 2)))
    >>> fc.counts["sigmoid"]
    20
    """

    def __init__(self) -> None:
        self.counts = dict.fromkeys(FLOP_KINDS, 0)
        self._token: contextvars.Token | None = None
        self._used = False

    def __enter__(self) -> FlopCounter:
        if self._token is not None:
            raise UsageError("FlopCounter is already active")
        self._token = _active_counter.set(self)
        self._used = True
        return self

    def __exit__(self, *exc) -> None:
        _active_counter.reset(self._token)
        self._token = None

    def add(self, kind: str, n: int) -> None:
        self.counts[kind] += int(n)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def report(self) -> dict[str, int]:
        if not self._used:
            raise UsageError("instrumentation disabled: enter the FlopCounter before reading it")
        return dict(self.counts, total=self.total)


def _tally(kind: str, n: int) -> None:
    counter = _active_counter.get()
    if counter is not None:
        counter.add(kind, n)


def check_tensor(x: np.ndarray, name: str = "tensor") -> np.ndarray:
    if x.ndim != 3:
        raise DimensionError(f"{name} must be (channels, height, width), got shape {x.shape}")
    if min(x.shape) < 1:
        raise DimensionError(f"{name} has an empty dimension: {x.shape}")
    return x


def _check_kernel(kernel: np.ndarray) -> tuple[int, int, int, int]:
    if kernel.ndim != 4:
        raise DimensionError(f"kernel must be (out, in, kh, kw), got shape {kernel.shape}")
    out_c, in_c, kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise DimensionError(f"kernel spatial size must be odd for SAME padding, got {kh}x{kw}")
    return out_c, in_c, kh, kw


def _check_bias(bias: np.ndarray | None, channels: int) -> None:
    if bias is not None and bias.shape != (channels,):
        raise DimensionError(f"bias must have shape ({channels},), got {bias.shape}")


def _pad(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    return np.pad(x, ((0, 0), (kh // 2, kh // 2), (kw // 2, kw // 2)))


def conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """Multi-channel SAME cross-correlation, accumulated one kernel tap at a time."""
    check_tensor(x, "input")
    out_c, in_c, kh, kw = _check_kernel(kernel)
    if in_c != x.shape[0]:
        raise DimensionError(
            f"conv2d: kernel expects {in_c} input channels, input has {x.shape[0]}"
        )
    _check_bias(bias, out_c)
    _, h, w = x.shape
    xp = _pad(x, kh, kw)
    out = np.zeros((out_c, h, w), dtype=np.result_type(x, kernel))
    for a in range(kh):
        for b in range(kw):
            out += np.tensordot(kernel[:, :, a, b], xp[:, a : a + h, b : b + w], axes=1)
    _tally("conv", 2 * kh * kw * in_c * out_c * h * w)
    if bias is not None:
        out += bias[:, None, None]
        _tally("add", out.size)
    return out


def depthwise_conv2d(
    x: np.ndarray, kernel: np.ndarray, bias: np.ndarray | None = None
) -> np.ndarray:
    """Per-channel SAME cross-correlation; output channel c sees only input channel c."""
    check_tensor(x, "input")
    out_c, in_c, kh, kw = _check_kernel(kernel)
    if in_c != 1 or out_c != x.shape[0]:
        raise DimensionError(
            f"depthwise_conv2d: kernel {kernel.shape} incompatible with {x.shape[0]} channels"
        )
    _check_bias(bias, out_c)
    c, h, w = x.shape
    xp = _pad(x, kh, kw)
    out = np.zeros((c, h, w), dtype=np.result_type(x, kernel))
    for a in range(kh):
        for b in range(kw):
            out += kernel[:, 0, a, b][:, None, None] * xp[:, a : a + h, b : b + w]
    _tally("conv", 2 * kh * kw * c * h * w)
    if bias is not None:
        out += bias[:, None, None]
        _tally("add", out.size)
    return out


def conv2d_backward(
    x: np.ndarray, kernel: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of :func:`conv2d` (bias excluded) w.r.t. input and kernel."""
    _, _, kh, kw = kernel.shape
    _, h, w = x.shape
    xp = _pad(x, kh, kw)
    dxp = np.zeros_like(xp, dtype=np.result_type(x, grad_out))
    dk = np.empty_like(kernel, dtype=np.result_type(kernel, grad_out))
    for a in range(kh):
        for b in range(kw):
            dk[:, :, a, b] = np.tensordot(grad_out, xp[:, a : a + h, b : b + w], axes=([1, 2], [1, 2]))
            dxp[:, a : a + h, b : b + w] += np.tensordot(kernel[:, :, a, b], grad_out, axes=([0], [0]))
    ph, pw = kh // 2, kw // 2
    return dxp[:, ph : ph + h, pw : pw + w], dk


def depthwise_conv2d_backward(
    x: np.ndarray, kernel: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    _, _, kh, kw = kernel.shape
    _, h, w = x.shape
    xp = _pad(x, kh, kw)
    dxp = np.zeros_like(xp, dtype=np.result_type(x, grad_out))
    dk = np.empty_like(kernel, dtype=np.result_type(kernel, grad_out))
    for a in range(kh):
        for b in range(kw):
            window = xp[:, a : a + h, b : b + w]
            dk[:, 0, a, b] = np.sum(grad_out * window, axis=(1, 2))
            dxp[:, a : a + h, b : b + w] += kernel[:, 0, a, b][:, None, None] * grad_out
    ph, pw = kh // 2, kw // 2
    return dxp[:, ph : ph + h, pw : pw + w], dk


def _same_shape(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_shape("hadamard", a, b)
    _tally("hadamard", a.size)
    return a * b


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _same_shape("add", a, b)
    _tally("add", a.size)
    return a + b


def add_bias(a: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Add a per-channel bias, charged as one addition per element."""
    _check_bias(bias, a.shape[0])
    _tally("add", a.size)
    return a + bias[:, None, None]


def sigmoid(a: np.ndarray) -> np.ndarray:
    _tally("sigmoid", ACTIVATION_FLOPS * a.size)
    # tanh form avoids exp overflow for large |a|
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def tanh(a: np.ndarray) -> np.ndarray:
    _tally("tanh", ACTIVATION_FLOPS * a.size)
    return np.tanh(a)


# --- TNSR binary format -----------------------------------------------------

TENSOR_MAGIC = b"TNSR"
TENSOR_VERSION = 1
_HEADER = struct.Struct("<4sB3I")


def write_tensor(fh: BinaryIO, x: np.ndarray) -> None:
    check_tensor(x)
    fh.write(_HEADER.pack(TENSOR_MAGIC, TENSOR_VERSION, *x.shape))
    fh.write(np.ascontiguousarray(x, dtype="<f8").tobytes())


def read_tensor(fh: BinaryIO) -> np.ndarray:
    header = fh.read(_HEADER.size)
    if len(header) != _HEADER.size:
        raise ValueError("truncated tensor header")
    magic, version, c, h, w = _HEADER.unpack(header)
    if magic != TENSOR_MAGIC:
        raise ValueError(f"bad tensor magic {magic!r}")
    if version != TENSOR_VERSION:
        raise ValueError(f"unsupported tensor version {version}")
    nbytes = 8 * c * h * w
    payload = fh.read(nbytes)
    if len(payload) != nbytes:
        raise ValueError(f"truncated tensor payload: expected {nbytes} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f8").reshape(c, h, w).astype(np.float64)


def save_tensor(path, x: np.ndarray) -> None:
    with open(path, "wb") as fh:
        write_tensor(fh, x)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_tensor(fh)
