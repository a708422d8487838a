"""Synthetic ambiguous-image benchmark.

Each image shows one filled red, green or blue circle or ellipse on a black
background. Colors are interpolated along the cyclic edges red->green,
green->blue, blue->red and shapes between circle and ellipse, so the exact
label distribution of every image is known from its generation parameters.

Class order: red-circle, red-ellipse, green-circle, green-ellipse,
blue-circle, blue-ellipse (``index = 2 * color + shape``).
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    BadMagicError,
    DimensionMismatchError,
    FormatError,
    TruncatedFileError,
    ValidationError,
)
from .labels import SoftLabel

NUM_CLASSES = 6
COLOR_NAMES = ("red", "green", "blue")
SHAPE_NAMES = ("circle", "ellipse")
CLASS_NAMES = tuple(f"{c}-{s}" for c in COLOR_NAMES for s in SHAPE_NAMES)
COLOR_EDGES = ((0, 1), (1, 2), (2, 0))
ANCHORS = np.array([[255, 0, 0], [0, 255, 0], [0, 0, 255]], dtype=np.float64)

SPLITS = ("train", "val", "test")
SPLIT_CODES = {name: code for code, name in enumerate(SPLITS)}

GENERATOR_VERSION = "sld-gen-1"
MAGIC = b"SLD1"
_HEADER = struct.Struct("<4sIIIII")

# sample kinds: 0..5 pure class, then the three interpolation families
KIND_COLOR, KIND_SHAPE, KIND_JOINT = 6, 7, 8

# independent random streams derived from the manifest seed
_STREAM_PLAN, _STREAM_SPLIT, _STREAM_STATE, _STREAM_RENDER = 1, 2, 3, 4

SUPERSAMPLE = 4


@dataclass(frozen=True)
class InterpolationState:
    color_edge: tuple[int, int]
    t_color: float
    t_shape: float

    def __post_init__(self):
        object.__setattr__(self, "color_edge", tuple(int(c) for c in self.color_edge))
        if self.color_edge not in COLOR_EDGES:
            raise ValidationError(f"color edge {self.color_edge} is not a cyclic neighbour pair")
        if not (0.0 <= self.t_color <= 1.0 and 0.0 <= self.t_shape <= 1.0):
            raise ValidationError("interpolation weights must lie in [0, 1]")

    @property
    def is_pure(self) -> bool:
        return self.t_color in (0.0, 1.0) and self.t_shape in (0.0, 1.0)


@dataclass(frozen=True)
class SyntheticSample:
    state: InterpolationState | None
    image: np.ndarray
    soft_label: SoftLabel
    split: str


@dataclass(frozen=True)
class DatasetManifest:
    seed: int = 0
    count: int = 15000
    pure_fraction: float = 0.4
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    image_size: tuple[int, int] = (32, 32)
    generator_version: str = GENERATOR_VERSION

    def __post_init__(self):
        object.__setattr__(self, "split_fractions", tuple(float(f) for f in self.split_fractions))
        object.__setattr__(self, "image_size", tuple(int(s) for s in self.image_size))
        if len(self.split_fractions) != 3 or min(self.split_fractions) < 0:
            raise ValidationError("split_fractions must be three non-negative numbers")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValidationError(f"split fractions must sum to 1, got {sum(self.split_fractions)}")
        if not 0.0 <= self.pure_fraction <= 1.0:
            raise ValidationError("pure_fraction must lie in [0, 1]")
        if self.count < 1:
            raise ValidationError("count must be positive")
        if min(self.image_size) < 16:
            raise ValidationError("image dimensions must be at least 16")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        data = json.loads(text)
        data["split_fractions"] = tuple(data["split_fractions"])
        data["image_size"] = tuple(data["image_size"])
        return cls(**data)


def _exact_counts(total: int, fractions: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment of ``total`` over ``fractions``."""
    raw = [total * f for f in fractions]
    counts = [int(np.floor(r + 1e-9)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: total - sum(counts)]:
        counts[i] += 1
    return counts


def _even_counts(total: int, parts: int) -> list[int]:
    return [total // parts + (1 if i < total % parts else 0) for i in range(parts)]


@lru_cache(maxsize=32)
def _kind_plan(seed: int, count: int, pure_fraction: float) -> np.ndarray:
    n_pure = int(round(count * pure_fraction))
    kinds = []
    for cls, n in enumerate(_even_counts(n_pure, NUM_CLASSES)):
        kinds += [cls] * n
    for kind, n in zip((KIND_COLOR, KIND_SHAPE, KIND_JOINT), _even_counts(count - n_pure, 3)):
        kinds += [kind] * n
    rng = np.random.default_rng([seed, _STREAM_PLAN])
    plan = np.asarray(kinds, dtype=np.int8)[rng.permutation(count)]
    plan.setflags(write=False)
    return plan


def split_assignment(
    count: int,
    fractions: Sequence[float],
    seed: int,
    resplit_seed: int | None = None,
) -> np.ndarray:
    """Count-exact split codes (0 train, 1 val, 2 test) for ``count`` items.

    ``resplit_seed`` draws an alternative permutation over the same pool.
    """
    sizes = _exact_counts(count, fractions)
    codes = np.repeat(np.arange(3, dtype=np.uint8), sizes)
    key = [seed, _STREAM_SPLIT] if resplit_seed is None else [seed, _STREAM_SPLIT, resplit_seed]
    return codes[np.random.default_rng(key).permutation(count)]


def sample_state(rng_seed: int, index: int, pure_fraction: float, count: int) -> InterpolationState:
    """State of item ``index`` in a ``count``-item dataset.

    Which items are pure (and of which class) and which interpolate color,
    shape or both is fixed by a count-exact permutation; the continuous
    parameters come from a per-item stream, so the result depends only on
    ``(rng_seed, index)`` for a given dataset size.
    """
    if not 0.0 <= pure_fraction <= 1.0:
        raise ValidationError("pure_fraction must lie in [0, 1]")
    if not 0 <= index < count:
        raise ValidationError(f"index {index} outside [0, {count})")
    kind = int(_kind_plan(rng_seed, count, float(pure_fraction))[index])
    rng = np.random.default_rng([rng_seed, _STREAM_STATE, index])
    if kind < NUM_CLASSES:
        color, shape = divmod(kind, 2)
        return InterpolationState(COLOR_EDGES[color], 0.0, float(shape))
    if kind == KIND_COLOR:
        edge = COLOR_EDGES[rng.integers(3)]
        return InterpolationState(edge, float(rng.random()), float(rng.integers(2)))
    if kind == KIND_SHAPE:
        edge = COLOR_EDGES[rng.integers(3)]
        return InterpolationState(edge, 0.0, float(rng.random()))
    edge = COLOR_EDGES[rng.integers(3)]
    return InterpolationState(edge, float(rng.random()), float(rng.random()))


def label_array(state: InterpolationState) -> np.ndarray:
    color = np.zeros(3)
    a, b = state.color_edge
    color[a] += 1.0 - state.t_color
    color[b] += state.t_color
    shape = np.array([1.0 - state.t_shape, state.t_shape])
    return np.outer(color, shape).ravel()


def soft_label_of(state: InterpolationState) -> SoftLabel:
    return SoftLabel(tuple(label_array(state)))


def fill_color(state: InterpolationState) -> np.ndarray:
    a, b = state.color_edge
    return (1.0 - state.t_color) * ANCHORS[a] + state.t_color * ANCHORS[b]


def ellipse_coverage(
    height: int, width: int, cx: float, cy: float, a: float, b: float, theta: float
) -> np.ndarray:
    """Fraction of each pixel covered by a rotated filled ellipse.

    Coverage is measured on a fixed 4x4 grid of sub-pixel samples.
    """
    offsets = (np.arange(SUPERSAMPLE) + 0.5) / SUPERSAMPLE
    ys = (np.arange(height)[:, None] + offsets[None, :]).ravel()
    xs = (np.arange(width)[:, None] + offsets[None, :]).ravel()
    dx = xs[None, :] - cx
    dy = ys[:, None] - cy
    c, s = np.cos(theta), np.sin(theta)
    u = (dx * c + dy * s) / a
    v = (-dx * s + dy * c) / b
    inside = (u * u + v * v) <= 1.0
    return inside.reshape(height, SUPERSAMPLE, width, SUPERSAMPLE).mean(axis=(1, 3))


def render(state: InterpolationState, height: int = 32, width: int = 32, rng_seed=0) -> np.ndarray:
    """Render ``state`` to an ``(height, width, 3)`` uint8 image.

    Geometry (sizes in pixels at 32x32, scaled proportionally otherwise):
    semi-major axis U(8, 12), centre jitter +-3, rotation U(0, pi), minor
    axis ``a * (1 - 0.5 * t_shape)``.
    """
    if height < 16 or width < 16:
        raise ValidationError(f"image must be at least 16x16, got {height}x{width}")
    scale = min(height, width) / 32.0
    rng = np.random.default_rng(rng_seed)
    a = rng.uniform(8.0, 12.0) * scale
    cx = width / 2.0 + rng.uniform(-3.0, 3.0) * scale
    cy = height / 2.0 + rng.uniform(-3.0, 3.0) * scale
    theta = rng.uniform(0.0, np.pi)
    b = a * (1.0 - 0.5 * state.t_shape)
    cover = ellipse_coverage(height, width, cx, cy, a, b, theta)
    pixels = np.rint(cover[:, :, None] * fill_color(state)[None, None, :])
    return pixels.astype(np.uint8)


@dataclass(eq=False)
class SyntheticDataset:
    """Column-oriented dataset: images, exact soft labels and split codes.

    ``states`` is only available for freshly generated data; the binary
    file format does not carry interpolation parameters.
    """

    images: np.ndarray  # (N, H, W, 3) uint8
    labels: np.ndarray  # (N, 6) float32
    splits: np.ndarray  # (N,) uint8
    states: list[InterpolationState] | None = None
    manifest: DatasetManifest | None = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.images)

    def indices(self, split: str) -> np.ndarray:
        if split not in SPLIT_CODES:
            raise ValidationError(f"unknown split {split!r}")
        return np.flatnonzero(self.splits == SPLIT_CODES[split])

    def subset(self, split: str) -> "SyntheticDataset":
        idx = self.indices(split)
        states = None if self.states is None else [self.states[i] for i in idx]
        return SyntheticDataset(self.images[idx], self.labels[idx], self.splits[idx], states, self.manifest)

    def with_splits(self, splits: np.ndarray) -> "SyntheticDataset":
        return SyntheticDataset(self.images, self.labels, np.asarray(splits, np.uint8), self.states, self.manifest)

    def samples(self) -> Iterator[SyntheticSample]:
        for i in range(len(self)):
            state = None if self.states is None else self.states[i]
            label = self.labels[i].astype(np.float64)
            yield SyntheticSample(state, self.images[i], SoftLabel(tuple(label)), SPLITS[self.splits[i]])

    def to_bytes(self) -> bytes:
        n, h, w, c = self.images.shape
        head = _HEADER.pack(MAGIC, n, h, w, c, self.labels.shape[1])
        record = np.empty(n, dtype=_record_dtype(h, w, self.labels.shape[1]))
        record["split"] = self.splits
        record["pixels"] = self.images
        record["label"] = self.labels
        return head + record.tobytes()


def _record_dtype(h: int, w: int, k: int) -> np.dtype:
    return np.dtype([("split", "u1"), ("pixels", "u1", (h, w, 3)), ("label", "<f4", (k,))])


def generate_dataset(manifest: DatasetManifest) -> SyntheticDataset:
    h, w = manifest.image_size
    n = manifest.count
    images = np.empty((n, h, w, 3), dtype=np.uint8)
    labels = np.empty((n, NUM_CLASSES), dtype=np.float32)
    states = []
    for i in range(n):
        state = sample_state(manifest.seed, i, manifest.pure_fraction, n)
        states.append(state)
        images[i] = render(state, h, w, rng_seed=[manifest.seed, _STREAM_RENDER, i])
        labels[i] = label_array(state)
    splits = split_assignment(n, manifest.split_fractions, manifest.seed)
    return SyntheticDataset(images, labels, splits, states, manifest)


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest.json")


def write_dataset(path, dataset: SyntheticDataset) -> None:
    path = Path(path)
    path.write_bytes(dataset.to_bytes())
    if dataset.manifest is not None:
        manifest_path(path).write_text(dataset.manifest.to_json(), encoding="utf-8")


def read_dataset(path) -> SyntheticDataset:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < _HEADER.size:
        raise TruncatedFileError(f"{path}: truncated header")
    _, n, h, w, c, k = _HEADER.unpack_from(raw)
    if c != 3 or k != NUM_CLASSES:
        raise DimensionMismatchError(f"{path}: expected 3 channels and {NUM_CLASSES} classes, got {c} and {k}")
    dtype = _record_dtype(h, w, k)
    expected = _HEADER.size + n * dtype.itemsize
    if len(raw) < expected:
        raise TruncatedFileError(f"{path}: header announces {n} samples but payload is short")
    if len(raw) > expected:
        raise DimensionMismatchError(f"{path}: {len(raw) - expected} trailing bytes after payload")
    record = np.frombuffer(raw, dtype=dtype, count=n, offset=_HEADER.size)
    splits = record["split"].copy()
    if np.any(splits > 2):
        raise FormatError(f"{path}: invalid split tag")
    manifest = None
    if manifest_path(path).exists():
        manifest = DatasetManifest.from_json(manifest_path(path).read_text(encoding="utf-8"))
    return SyntheticDataset(record["pixels"].copy(), record["label"].copy(), splits, None, manifest)
