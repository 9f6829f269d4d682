"""Toy per-pixel segmentation model with an optional convLSTM cell.

    image --3x3 conv + tanh--> features --[cell]--> 1x1 conv --> softmax

Without a cell the model is a stateless per-frame classifier.  With a cell
the recurrent layer sits directly before the classifier.  Training follows
the usual video protocol: 4-frame windows, zero initial cell state,
cross-entropy on the last frame only, SGD with momentum 0.9, L2 weight
decay 1e-4 and a poly learning-rate schedule.  Batch size is 1.
"""

from __future__ import annotations

import csv
import logging
import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Sequence

import numpy as np

from . import cells, metrics
from . import tensor as T
from .cells import CellConfig, CellState, CellVariant, CellWeights
from .dataset import Scene
from .errors import DimensionError, TrainingDivergedError
from .metrics import SegSequence

log = logging.getLogger(__name__)


@dataclass
class ToyModel:
    stem_w: np.ndarray  # (F, C, 3, 3)
    stem_b: np.ndarray  # (F,)
    head_w: np.ndarray  # (N, F, 1, 1)
    head_b: np.ndarray  # (N,)
    cell: CellWeights | None = None

    @classmethod
    def init(cls, in_channels: int, num_classes: int, features: int = 8,
             variant: CellVariant | str | None = None, seed: int = 0,
             kernel: int = 3) -> ToyModel:
        rng = np.random.default_rng(seed)
        s_stem = 1.0 / np.sqrt(in_channels * 9)
        s_head = 1.0 / np.sqrt(features)
        cell = None
        if variant is not None:
            cell = CellWeights.init(CellConfig(variant, features, features, kernel, kernel), rng)
        return cls(
            stem_w=rng.uniform(-s_stem, s_stem, (features, in_channels, 3, 3)),
            stem_b=np.zeros(features),
            head_w=rng.uniform(-s_head, s_head, (num_classes, features, 1, 1)),
            head_b=np.zeros(num_classes),
            cell=cell,
        )

    @property
    def in_channels(self) -> int:
        return self.stem_w.shape[1]

    @property
    def features(self) -> int:
        return self.stem_w.shape[0]

    @property
    def num_classes(self) -> int:
        return self.head_w.shape[0]

    @property
    def variant(self) -> CellVariant | None:
        return None if self.cell is None else self.cell.config.variant

    def parameters(self) -> dict[str, np.ndarray]:
        """Live references to every trainable array, keyed by a dotted name."""
        params = {"stem.w": self.stem_w, "stem.b": self.stem_b}
        if self.cell is not None:
            params.update({f"cell.{k}": v for k, v in self.cell.params.items()})
        params.update({"head.w": self.head_w, "head.b": self.head_b})
        return params

    def copy(self) -> ToyModel:
        return ToyModel(self.stem_w.copy(), self.stem_b.copy(), self.head_w.copy(),
                        self.head_b.copy(), None if self.cell is None else self.cell.copy())


@dataclass
class _Step:
    x: np.ndarray
    s: np.ndarray
    feat: np.ndarray
    cell_cache: cells.ForwardCache | None = None


def _forward(model: ToyModel, frames: Sequence[np.ndarray]) -> tuple[np.ndarray, list[_Step]]:
    """Logits of the last frame, plus per-step activations for backprop."""
    if model.cell is None:
        frames = frames[-1:]
    steps = []
    state = None
    for x in frames:
        s = np.tanh(T.conv2d(x, model.stem_w, model.stem_b))
        cache = None
        if model.cell is not None:
            cfg = model.cell.config
            if state is None:
                state = CellState.zeros(cfg, *s.shape[1:])
            feat, state, cache = cells.forward_cached(cfg, model.cell, s, state)
        else:
            feat = s
        steps.append(_Step(x, s, feat, cache))
    logits = T.conv2d(steps[-1].feat, model.head_w, model.head_b)
    return logits, steps


def predict_logits(model: ToyModel, frames: Sequence[np.ndarray]) -> np.ndarray:
    return _forward(model, frames)[0]


def cross_entropy(logits: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean per-pixel cross-entropy and its gradient w.r.t. ``logits``."""
    if logits.shape[1:] != target.shape:
        raise DimensionError(f"logits {logits.shape} do not match target {target.shape}")
    shifted = logits - logits.max(axis=0, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=0, keepdims=True))
    log_p = shifted - log_z
    rows, cols = np.indices(target.shape)
    pixels = target.size
    loss = -log_p[target, rows, cols].sum() / pixels
    grad = np.exp(log_p)
    grad[target, rows, cols] -= 1.0
    return float(loss), grad / pixels


def loss_and_grads(model: ToyModel, frames: Sequence[np.ndarray], target: np.ndarray
                   ) -> tuple[float, dict[str, np.ndarray], list[np.ndarray]]:
    """Last-frame loss, parameter gradients and gradients w.r.t. every input frame."""
    logits, steps = _forward(model, frames)
    loss, dlogits = cross_entropy(logits, target)
    grads = {k: np.zeros_like(v) for k, v in model.parameters().items()}
    dframes = [np.zeros_like(x) for x in frames]
    offset = len(frames) - len(steps)

    dfeat, grads["head.w"] = T.conv2d_backward(steps[-1].feat, model.head_w, dlogits)
    grads["head.b"] = dlogits.sum(axis=(1, 2))

    dh, dc = dfeat, None
    for k in range(len(steps) - 1, -1, -1):
        step = steps[k]
        if model.cell is not None:
            ds, dstate, dcell = cells.backward(model.cell.config, model.cell, step.cell_cache, dh, dc)
            for name, g in dcell.items():
                grads[f"cell.{name}"] += g
            dh, dc = dstate.h, dstate.c
        else:
            ds = dh
        dz = ds * (1.0 - step.s ** 2)
        dx, dw = T.conv2d_backward(step.x, model.stem_w, dz)
        grads["stem.w"] += dw
        grads["stem.b"] += dz.sum(axis=(1, 2))
        dframes[offset + k] = dx
    return loss, grads, dframes


@dataclass
class TrainConfig:
    steps: int = 300
    base_lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    power: float = 0.9
    seq_len: int = 4
    seed: int = 0

    def lr(self, step: int) -> float:
        return self.base_lr * (1.0 - step / self.steps) ** self.power


@dataclass
class TrainResult:
    model: ToyModel
    curve: list[tuple[int, float, float]] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [loss for _, loss, _ in self.curve]


def sample_window(scenes: Sequence[Scene], seq_len: int, rng: np.random.Generator
                  ) -> tuple[np.ndarray, np.ndarray]:
    scene = scenes[int(rng.integers(len(scenes)))]
    start = int(rng.integers(0, scene.spec.frames - seq_len + 1))
    frames = scene.frames[start : start + seq_len]
    return frames, scene.labels.frames[start + seq_len - 1]


def train(model: ToyModel, scenes: Sequence[Scene], config: TrainConfig) -> TrainResult:
    """SGD with momentum on a copy of ``model``; the input model is untouched."""
    short = [s for s in scenes if s.spec.frames < config.seq_len]
    if short:
        raise DimensionError(f"{len(short)} scene(s) are shorter than seq_len={config.seq_len}")
    model = model.copy()
    params = model.parameters()
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    rng = np.random.default_rng(config.seed)
    result = TrainResult(model)
    for step in range(config.steps):
        frames, target = sample_window(scenes, config.seq_len, rng)
        loss, grads, _ = loss_and_grads(model, frames, target)
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"loss became {loss} at step {step} (lr={config.lr(step):.3g}); "
                "lower base_lr or check the input data"
            )
        lr = config.lr(step)
        for name, p in params.items():
            g = grads[name] + config.weight_decay * p
            velocity[name] *= config.momentum
            velocity[name] += g
            p -= lr * velocity[name]
        result.curve.append((step, loss, lr))
        if step % 50 == 0:
            log.debug("step %d loss %.4f lr %.4g", step, loss, lr)
    return result


def predict(model: ToyModel, frames: np.ndarray, window: int = 4) -> np.ndarray:
    """Class map per frame; frame t sees frames ``max(0, t-window+1)..t`` from a zero state."""
    out = []
    for t in range(len(frames)):
        logits = predict_logits(model, frames[max(0, t - window + 1) : t + 1])
        out.append(np.argmax(logits, axis=0))
    return np.stack(out)


def score(preds: Sequence[SegSequence], gts: Sequence[SegSequence]) -> dict[str, float]:
    """Accuracy and mIoU over all frames; flicker metrics averaged over sequences.

    ``mfip`` / ``mfp`` are per-pair averages in per-mille; the ``*_sum``
    entries are the summed-over-pairs values, also averaged over sequences.
    """
    if len(preds) != len(gts) or not preds:
        raise DimensionError(f"need matching non-empty prediction/ground-truth lists, got {len(preds)}/{len(gts)}")
    n = gts[0].num_classes
    flat_p = [f for p in preds for f in p.frames]
    flat_g = [f for g in gts for f in g.frames]
    return {
        "accuracy": float(np.mean([metrics.pixel_accuracy(p, g) for p, g in zip(flat_p, flat_g)])),
        "miou": metrics.miou(flat_p, flat_g, n),
        "mfip": float(np.mean([metrics.mfip(p, "mean") for p in preds])),
        "mfp": float(np.mean([metrics.mfp(p, g, "mean") for p, g in zip(preds, gts)])),
        "mfip_sum": float(np.mean([metrics.mfip(p) for p in preds])),
        "mfp_sum": float(np.mean([metrics.mfp(p, g) for p, g in zip(preds, gts)])),
    }


def evaluate(model: ToyModel, scenes: Sequence[Scene], window: int = 4
             ) -> tuple[dict[str, float], list[SegSequence]]:
    preds = [SegSequence(predict(model, s.frames, window), s.labels.num_classes) for s in scenes]
    return score(preds, [s.labels for s in scenes]), preds


def write_curve(path, curve: Sequence[tuple[int, float, float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "lr"])
        for step, loss, lr in curve:
            writer.writerow([step, repr(loss), repr(lr)])


# --- TOYM checkpoint --------------------------------------------------------

MODEL_MAGIC = b"TOYM"
MODEL_VERSION = 1
_HEADER = struct.Struct("<4sBB3I")


def write_model(fh: BinaryIO, model: ToyModel) -> None:
    f, c, n = model.features, model.in_channels, model.num_classes
    fh.write(_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, int(model.cell is not None), c, f, n))
    T.write_tensor(fh, model.stem_w.reshape(f * c, 3, 3))
    T.write_tensor(fh, model.stem_b.reshape(f, 1, 1))
    if model.cell is not None:
        cells.write_weights(fh, model.cell)
    T.write_tensor(fh, model.head_w.reshape(n * f, 1, 1))
    T.write_tensor(fh, model.head_b.reshape(n, 1, 1))


def read_model(fh: BinaryIO) -> ToyModel:
    header = fh.read(_HEADER.size)
    if len(header) != _HEADER.size:
        raise ValueError("truncated model checkpoint header")
    magic, version, has_cell, c, f, n = _HEADER.unpack(header)
    if magic != MODEL_MAGIC or version != MODEL_VERSION:
        raise ValueError(f"not a version-{MODEL_VERSION} model checkpoint")
    stem_w = T.read_tensor(fh).reshape(f, c, 3, 3)
    stem_b = T.read_tensor(fh).reshape(f)
    cell = cells.read_weights(fh) if has_cell else None
    head_w = T.read_tensor(fh).reshape(n, f, 1, 1)
    head_b = T.read_tensor(fh).reshape(n)
    return ToyModel(stem_w, stem_b, head_w, head_b, cell)


def save_model(path, model: ToyModel) -> None:
    with open(path, "wb") as fh:
        write_model(fh, model)


def load_model(path) -> ToyModel:
    with open(path, "rb") as fh:
        return read_model(fh)
