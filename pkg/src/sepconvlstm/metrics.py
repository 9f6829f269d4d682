"""Temporal flicker metrics (mFP, mFIP) and per-frame accuracy / mIoU.

A segmentation sequence is an integer array of shape ``(T + 1, h, w)``
with class ids in ``0..N-1``.  Flicker metrics sum over the ``T``
consecutive frame pairs and are reported in per-mille of the image area.

mFP compares *error maps* rather than raw predictions so that genuine
object motion (which the ground truth also shows) is not counted.  The
error map stores ``class + 1`` where the prediction is wrong and ``0``
where it is right; shifting the classes keeps "wrong, predicted class 0"
distinguishable from "correct".
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import BinaryIO, Sequence

import numpy as np

from .errors import DimensionError

PER_MILLE = 1000.0
NO_ERROR = 0


@dataclass
class SegSequence:
    frames: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 3 or min(self.frames.shape) < 1:
            raise DimensionError(f"segmentation sequence must be (T+1, h, w), got {self.frames.shape}")
        if not np.issubdtype(self.frames.dtype, np.integer):
            raise DimensionError(f"class ids must be integers, got {self.frames.dtype}")
        if self.num_classes < 1:
            raise DimensionError("num_classes must be >= 1")
        if self.frames.size and (self.frames.min() < 0 or self.frames.max() >= self.num_classes):
            raise DimensionError(f"class ids must lie in 0..{self.num_classes - 1}")

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]


def _frames(seq) -> np.ndarray:
    arr = seq.frames if isinstance(seq, SegSequence) else np.asarray(seq)
    if arr.ndim != 3:
        raise DimensionError(f"expected a (T+1, h, w) sequence, got shape {arr.shape}")
    return arr


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"segmentation shapes differ: {a.shape} vs {b.shape}")


def neq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """1 where the two class maps disagree, 0 where they agree."""
    a, b = np.asarray(a), np.asarray(b)
    _same_shape(a, b)
    return (a != b).astype(np.uint8)


def diff_image(s: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Error map: predicted class + 1 at mismatched pixels, ``NO_ERROR`` elsewhere."""
    s, g = np.asarray(s), np.asarray(g)
    return neq(s, g) * (s.astype(np.int64) + 1)


def _reduce(count: int, area: int, pairs: int, reduction: str) -> float:
    # integer count first so every code path rounds identically
    value = count / area * PER_MILLE
    if reduction == "sum":
        return value
    if reduction == "mean":
        return value / pairs
    raise ValueError(f"reduction must be 'sum' or 'mean', got {reduction!r}")


def mfip(pred, reduction: str = "sum") -> float:
    """Mean flickering image pixels, independent of any ground truth."""
    s = _frames(pred)
    if s.shape[0] < 2:
        raise DimensionError("mFIP needs at least two frames")
    count = int(np.count_nonzero(s[1:] != s[:-1]))
    return _reduce(count, s.shape[1] * s.shape[2], s.shape[0] - 1, reduction)


def mfp(pred, gt, reduction: str = "sum") -> float:
    """Mean flickering pixels of the error maps of ``pred`` against ``gt``."""
    s, g = _frames(pred), _frames(gt)
    _same_shape(s, g)
    if s.shape[0] < 2:
        raise DimensionError("mFP needs at least two frames")
    d = diff_image(s, g)
    count = int(np.count_nonzero(d[1:] != d[:-1]))
    return _reduce(count, s.shape[1] * s.shape[2], s.shape[0] - 1, reduction)


class FlickerMeter:
    """Streaming mFIP / mFP accumulator holding only the previous frame."""

    def __init__(self) -> None:
        self._prev_pred: np.ndarray | None = None
        self._prev_diff: np.ndarray | None = None
        self._fip = 0
        self._fp = 0
        self.pairs = 0
        self.area = 0

    def update(self, pred: np.ndarray, gt: np.ndarray | None = None) -> None:
        pred = np.asarray(pred)
        diff = diff_image(pred, gt) if gt is not None else None
        if self._prev_pred is not None:
            _same_shape(pred, self._prev_pred)
            self._fip += int(np.count_nonzero(pred != self._prev_pred))
            if diff is not None and self._prev_diff is not None:
                self._fp += int(np.count_nonzero(diff != self._prev_diff))
            self.pairs += 1
        self.area = pred.size
        self._prev_pred, self._prev_diff = pred, diff

    def mfip(self, reduction: str = "sum") -> float:
        return self._value(self._fip, reduction)

    def mfp(self, reduction: str = "sum") -> float:
        if self.pairs and self._prev_diff is None:
            raise DimensionError("mFP needs ground truth for every frame")
        return self._value(self._fp, reduction)

    def _value(self, count: int, reduction: str) -> float:
        if self.pairs == 0:
            raise DimensionError("flicker metrics need at least two frames")
        return _reduce(count, self.area, self.pairs, reduction)


def pixel_accuracy(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = np.asarray(pred), np.asarray(gt)
    _same_shape(pred, gt)
    return float(np.mean(pred == gt))


def confusion_matrix(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray],
                     num_classes: int) -> np.ndarray:
    """Rows are ground-truth classes, columns predicted classes."""
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    if len(preds) != len(gts):
        raise DimensionError(f"{len(preds)} predictions for {len(gts)} ground-truth maps")
    for p, g in zip(preds, gts):
        p, g = np.asarray(p), np.asarray(g)
        _same_shape(p, g)
        cm += np.bincount(g.ravel().astype(np.int64) * num_classes + p.ravel(),
                          minlength=num_classes * num_classes).reshape(num_classes, num_classes)
    return cm


def miou(preds: Sequence[np.ndarray], gts: Sequence[np.ndarray], num_classes: int) -> float:
    """Mean IoU over classes present in the prediction or the ground truth."""
    cm = confusion_matrix(preds, gts, num_classes)
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    present = union > 0
    if not present.any():
        return 1.0
    return float(np.mean(tp[present] / union[present]))


# --- SEGQ binary format -----------------------------------------------------

SEGQ_MAGIC = b"SEGQ"
SEGQ_VERSION = 1
_HEADER = struct.Struct("<4sB4I")


def write_segq(fh: BinaryIO, seq: SegSequence) -> None:
    if seq.num_classes > 65536:
        raise ValueError("SEGQ stores class ids as u16")
    n, h, w = seq.frames.shape
    fh.write(_HEADER.pack(SEGQ_MAGIC, SEGQ_VERSION, h, w, n, seq.num_classes))
    fh.write(np.ascontiguousarray(seq.frames, dtype="<u2").tobytes())


def read_segq(fh: BinaryIO) -> SegSequence:
    header = fh.read(_HEADER.size)
    if len(header) != _HEADER.size:
        raise ValueError("truncated SEGQ header")
    magic, version, h, w, n, num_classes = _HEADER.unpack(header)
    if magic != SEGQ_MAGIC:
        raise ValueError(f"bad SEGQ magic {magic!r}")
    if version != SEGQ_VERSION:
        raise ValueError(f"unsupported SEGQ version {version}")
    nbytes = 2 * n * h * w
    payload = fh.read(nbytes)
    if len(payload) != nbytes:
        raise ValueError(f"truncated SEGQ payload: expected {nbytes} bytes, got {len(payload)}")
    frames = np.frombuffer(payload, dtype="<u2").reshape(n, h, w).astype(np.int64)
    return SegSequence(frames, num_classes)


def save_segq(path, seq: SegSequence) -> None:
    with open(path, "wb") as fh:
        write_segq(fh, seq)


def load_segq(path) -> SegSequence:
    with open(path, "rb") as fh:
        return read_segq(fh)
