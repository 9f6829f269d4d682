"""Deterministic moving-shapes video segmentation data.

Images have one channel per class: channel ``c`` is ``1 + jitter`` where
the rendered label is ``c`` and ``jitter`` elsewhere (Gaussian, sigma 0.1).
Labels are the exact geometry.  A second label stream applies iid flips
with probability ``noise`` (a flipped pixel takes a uniformly chosen
*different* class).  With ``noisy_frames`` the images are rendered from the
noisy stream, which makes per-frame classifiers flicker.

Randomness comes from numpy's PCG64 seeded through ``SeedSequence(seed)``,
spawned into independent streams for label noise and image jitter.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .errors import SpecError
from .metrics import SegSequence
from .tensor import load_tensor, save_tensor

JITTER_SIGMA = 0.1


@dataclass(frozen=True)
class Shape:
    """A moving object.

    ``size`` is ``(height, width)`` for rectangles and ``(radius,)`` for
    disks.  ``position`` is the top-left corner of a rectangle or the centre
    of a disk at frame 0, in ``(row, col)``; ``velocity`` is in px/frame.
    """

    class_id: int
    geometry: str
    size: tuple[int, ...]
    position: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)


@dataclass(frozen=True)
class SceneSpec:
    height: int
    width: int
    frames: int
    num_classes: int
    shapes: tuple[Shape, ...] = ()
    noise: float = 0.0
    seed: int = 0
    noisy_frames: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "shapes", tuple(_as_shape(s) for s in self.shapes))
        if self.height < 1 or self.width < 1 or self.frames < 1:
            raise SpecError("height, width and frames must be >= 1")
        if self.num_classes < 2:
            raise SpecError("need at least two classes (background + one object)")
        if not 0.0 <= self.noise < 1.0:
            raise SpecError(f"noise must lie in [0, 1), got {self.noise}")
        for k, shape in enumerate(self.shapes):
            _validate_shape(k, shape, self)


def _as_shape(s) -> Shape:
    if not isinstance(s, Shape):
        s = Shape(**s)
    return Shape(int(s.class_id), s.geometry, tuple(int(v) for v in s.size),
                 tuple(float(v) for v in s.position), tuple(float(v) for v in s.velocity))


def _validate_shape(k: int, shape: Shape, spec: SceneSpec) -> None:
    if not 0 < shape.class_id < spec.num_classes:
        raise SpecError(f"shape {k}: class_id must lie in 1..{spec.num_classes - 1}")
    r, c = shape.position
    if shape.geometry == "rectangle":
        if len(shape.size) != 2 or min(shape.size) < 1:
            raise SpecError(f"shape {k}: rectangle size must be (height, width) >= 1")
        hh, ww = shape.size
        inside = r >= 0 and c >= 0 and r + hh <= spec.height and c + ww <= spec.width
    elif shape.geometry == "disk":
        if len(shape.size) != 1 or shape.size[0] < 0:
            raise SpecError(f"shape {k}: disk size must be (radius,)")
        rad = shape.size[0]
        inside = r - rad >= 0 and c - rad >= 0 and r + rad < spec.height and c + rad < spec.width
    else:
        raise SpecError(f"shape {k}: unknown geometry {shape.geometry!r}")
    if not inside:
        raise SpecError(f"shape {k} does not fit inside the {spec.height}x{spec.width} frame at t=0")


@dataclass
class Scene:
    spec: SceneSpec
    frames: np.ndarray  # (T, N, h, w)
    labels: SegSequence
    noisy_labels: SegSequence = field(repr=False, default=None)


def render_labels(spec: SceneSpec, t: int) -> np.ndarray:
    labels = np.zeros((spec.height, spec.width), dtype=np.int64)
    rows = np.arange(spec.height)[:, None]
    cols = np.arange(spec.width)[None, :]
    for shape in spec.shapes:
        r0 = shape.position[0] + shape.velocity[0] * t
        c0 = shape.position[1] + shape.velocity[1] * t
        if shape.geometry == "rectangle":
            top, left = int(round(r0)), int(round(c0))
            mask = ((rows >= top) & (rows < top + shape.size[0])
                    & (cols >= left) & (cols < left + shape.size[1]))
        else:
            mask = (rows - r0) ** 2 + (cols - c0) ** 2 <= shape.size[0] ** 2
        labels[mask] = shape.class_id
    return labels


def render_images(labels: np.ndarray, num_classes: int, rng: np.random.Generator) -> np.ndarray:
    """One-hot images with Gaussian jitter for a ``(T, h, w)`` label stack."""
    t, h, w = labels.shape
    images = JITTER_SIGMA * rng.standard_normal((t, num_classes, h, w))
    images += np.moveaxis(np.eye(num_classes)[labels], -1, 1)
    return images


def generate(spec: SceneSpec) -> Scene:
    noise_rng, jitter_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(2))
    labels = np.stack([render_labels(spec, t) for t in range(spec.frames)])

    n = spec.num_classes
    flip = noise_rng.random(labels.shape) < spec.noise
    offset = noise_rng.integers(1, n, size=labels.shape)
    noisy = np.where(flip, (labels + offset) % n, labels)

    images = render_images(noisy if spec.noisy_frames else labels, n, jitter_rng)
    return Scene(spec, images, SegSequence(labels, n), SegSequence(noisy, n))


def random_scene_spec(seed: int, height: int = 16, width: int = 16, frames: int = 8,
                      num_classes: int = 3, num_shapes: int = 2, max_speed: int = 1,
                      noise: float = 0.0, noisy_frames: bool = False) -> SceneSpec:
    """A scene with ``num_shapes`` random rectangles/disks that fit at t=0."""
    rng = np.random.default_rng(seed)
    shapes = []
    for _ in range(num_shapes):
        cls = int(rng.integers(1, num_classes))
        vel = (float(rng.integers(-max_speed, max_speed + 1)),
               float(rng.integers(-max_speed, max_speed + 1)))
        if rng.random() < 0.5:
            hh = int(rng.integers(2, max(3, height // 2) + 1))
            ww = int(rng.integers(2, max(3, width // 2) + 1))
            hh, ww = min(hh, height), min(ww, width)
            pos = (float(rng.integers(0, height - hh + 1)), float(rng.integers(0, width - ww + 1)))
            shapes.append(Shape(cls, "rectangle", (hh, ww), pos, vel))
        else:
            rad = int(rng.integers(1, max(2, min(height, width) // 4) + 1))
            rad = min(rad, (min(height, width) - 1) // 2)
            pos = (float(rng.integers(rad, height - rad)), float(rng.integers(rad, width - rad)))
            shapes.append(Shape(cls, "disk", (rad,), pos, vel))
    return SceneSpec(height, width, frames, num_classes, tuple(shapes), noise, seed, noisy_frames)


def flicker_scenes(count: int, seed: int, height: int = 16, width: int = 16, frames: int = 8,
                   num_classes: int = 3, noise: float = 0.15) -> list[Scene]:
    """Scenes whose images are rendered from the noisy label stream."""
    seeds = np.random.SeedSequence(seed).generate_state(count)
    return [
        generate(random_scene_spec(int(s), height, width, frames, num_classes,
                                   noise=noise, noisy_frames=True))
        for s in seeds
    ]


def save_scene(directory, scene: Scene) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "spec.json").write_text(json.dumps(asdict(scene.spec), indent=2))
    metrics.save_segq(d / "labels.segq", scene.labels)
    metrics.save_segq(d / "noisy_labels.segq", scene.noisy_labels)
    for t, image in enumerate(scene.frames):
        save_tensor(d / f"frame_{t:03d}.tnsr", image)


def load_scene(directory) -> Scene:
    d = Path(directory)
    spec = SceneSpec(**json.loads((d / "spec.json").read_text()))
    frames = np.stack([load_tensor(d / f"frame_{t:03d}.tnsr") for t in range(spec.frames)])
    labels = metrics.load_segq(d / "labels.segq")
    noisy_path = d / "noisy_labels.segq"
    noisy = metrics.load_segq(noisy_path) if noisy_path.exists() else None
    return Scene(spec, frames, labels, noisy)


def save_dataset(directory, scenes: list[Scene]) -> list[Path]:
    paths = []
    for k, scene in enumerate(scenes):
        path = Path(directory) / f"seq_{k:03d}"
        save_scene(path, scene)
        paths.append(path)
    return paths


def load_dataset(directory) -> list[Scene]:
    dirs = sorted(p for p in Path(directory).glob("seq_*") if p.is_dir())
    if not dirs:
        raise FileNotFoundError(f"no seq_* directories under {directory}")
    return [load_scene(p) for p in dirs]
