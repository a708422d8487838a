"""Label representations, annotation aggregation and annotator simulation.

Human annotations are one-hot votes. They collapse either to a hard label
(relative majority vote) or to a soft label (the vote average). Ties in the
majority vote always go to the lowest class index, which is also what
``numpy.argmax`` does, so ``majority_vote == argmax(average)`` holds exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError

SUM_TOL = 1e-6


@dataclass(frozen=True)
class SoftLabel:
    probs: tuple[float, ...]

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "probs", probs)
        if len(probs) < 2:
            raise ValidationError("a soft label needs at least two classes")
        if not all(np.isfinite(probs)) or min(probs) < 0.0:
            raise ValidationError(f"soft label entries must be finite and >= 0: {probs}")
        if abs(sum(probs) - 1.0) > SUM_TOL:
            raise ValidationError(f"soft label must sum to 1, got {sum(probs)!r}")

    @property
    def k(self) -> int:
        return len(self.probs)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=np.float64)

    @classmethod
    def one_hot(cls, index: int, k: int) -> "SoftLabel":
        if not 0 <= index < k:
            raise ValidationError(f"class index {index} outside [0, {k})")
        probs = [0.0] * k
        probs[index] = 1.0
        return cls(tuple(probs))


@dataclass(frozen=True)
class HardLabel:
    class_index: int
    k: int

    def __post_init__(self):
        if not 0 <= self.class_index < self.k:
            raise ValidationError(f"class index {self.class_index} outside [0, {self.k})")


@dataclass(frozen=True)
class AnnotationSet:
    """Ordered one-hot annotations for one item, stored as class indices."""

    classes: tuple[int, ...]
    k: int

    def __post_init__(self):
        classes = tuple(int(c) for c in self.classes)
        object.__setattr__(self, "classes", classes)
        if self.k < 2:
            raise ValidationError("k must be at least 2")
        bad = [c for c in classes if not 0 <= c < self.k]
        if bad:
            raise ValidationError(f"annotation indices outside [0, {self.k}): {bad}")

    def __len__(self) -> int:
        return len(self.classes)

    def counts(self) -> np.ndarray:
        return np.bincount(np.asarray(self.classes, dtype=np.int64), minlength=self.k)


def majority_vote(annotations: AnnotationSet) -> HardLabel:
    if len(annotations) == 0:
        raise ValidationError("no annotations")
    # argmax returns the first maximum, i.e. the lowest tied class index
    return HardLabel(int(np.argmax(annotations.counts())), annotations.k)


def average(annotations: AnnotationSet) -> SoftLabel:
    if len(annotations) == 0:
        raise ValidationError("no annotations")
    counts = annotations.counts()
    return SoftLabel(tuple(counts / counts.sum()))


def hard_targets(probs: np.ndarray) -> np.ndarray:
    """Row-wise argmax of a label matrix, returned as one-hot rows."""
    probs = np.asarray(probs)
    out = np.zeros_like(probs)
    out[np.arange(len(probs)), np.argmax(probs, axis=1)] = 1
    return out


def simulate_annotation_matrix(
    probs: np.ndarray,
    n_annotators: int,
    rng_seed,
    flip_rate: float = 0.0,
) -> np.ndarray:
    """Draw ``n_annotators`` iid votes per row of ``probs``.

    Returns an ``(items, n_annotators)`` integer matrix. With ``flip_rate``
    > 0 each vote is replaced, with that probability, by a uniformly chosen
    different class.
    """
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    if n_annotators < 1:
        raise ValidationError("n_annotators must be >= 1")
    if not 0.0 <= flip_rate <= 1.0:
        raise ValidationError("flip_rate must lie in [0, 1]")
    if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > SUM_TOL):
        raise ValidationError("every row must be a probability distribution")
    n_items, k = probs.shape
    rng = np.random.default_rng(rng_seed)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random((n_items, n_annotators))
    votes = (u[:, :, None] >= cdf[:, None, :]).sum(axis=2)
    # guard against cdf[-1] rounding below 1 and against zero-mass tails
    votes = np.minimum(votes, k - 1)
    last_support = k - 1 - np.argmax(probs[:, ::-1] > 0, axis=1)
    bad = np.take_along_axis(probs, votes, axis=1) == 0
    votes = np.where(bad, last_support[:, None], votes)
    if flip_rate > 0:
        flip = rng.random((n_items, n_annotators)) < flip_rate
        shift = rng.integers(1, k, size=(n_items, n_annotators))
        votes = np.where(flip, (votes + shift) % k, votes)
    return votes.astype(np.int64)


def simulate_annotations(
    truth: SoftLabel, n_annotators: int = 15, rng_seed=0, flip_rate: float = 0.0
) -> AnnotationSet:
    votes = simulate_annotation_matrix(
        np.asarray(truth.probs)[None, :], n_annotators, rng_seed, flip_rate
    )
    return AnnotationSet(tuple(votes[0].tolist()), truth.k)


def aggregate_matrix(votes: np.ndarray, k: int, mode: str) -> np.ndarray:
    """Aggregate an ``(items, annotators)`` vote matrix to soft or hard rows."""
    votes = np.asarray(votes, dtype=np.int64)
    counts = np.zeros((len(votes), k), dtype=np.float64)
    np.add.at(counts, (np.repeat(np.arange(len(votes)), votes.shape[1]), votes.ravel()), 1.0)
    soft = counts / votes.shape[1]
    if mode == "soft":
        return soft
    if mode == "hard":
        return hard_targets(soft)
    raise ValidationError(f"unknown aggregation mode {mode!r}")


def sample_prior_soft_label(
    class_priors: Sequence[float],
    concentration: float,
    pure_prob: float,
    rng_seed,
) -> SoftLabel:
    """Draw a label distribution around ``class_priors``.

    With probability ``pure_prob`` the result is one-hot (class drawn from
    the priors), otherwise it is Dirichlet with parameters
    ``concentration * priors * k``. Used to mimic imbalanced real-world
    label profiles such as 70/15/15.
    """
    priors = np.asarray(class_priors, dtype=np.float64)
    if priors.ndim != 1 or len(priors) < 2:
        raise ValidationError("class_priors must be a vector with k >= 2 entries")
    if np.any(priors < 0) or abs(priors.sum() - 1.0) > SUM_TOL:
        raise ValidationError("class_priors must form a distribution")
    if not concentration > 0:
        raise ValidationError("concentration must be positive")
    if not 0.0 <= pure_prob <= 1.0:
        raise ValidationError("pure_prob must lie in [0, 1]")
    k = len(priors)
    rng = np.random.default_rng(rng_seed)
    if rng.random() < pure_prob:
        return SoftLabel.one_hot(int(rng.choice(k, p=priors)), k)
    if np.any(priors == 0):
        raise ValidationError("Dirichlet sampling needs strictly positive priors")
    draw = rng.dirichlet(concentration * priors * k)
    return SoftLabel(tuple(draw / draw.sum()))


ANNOTATION_HEADER = ("item_index", "annotator_index", "class_index")


def write_annotations(path, votes: np.ndarray) -> None:
    votes = np.asarray(votes, dtype=np.int64)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ANNOTATION_HEADER)
        for item, row in enumerate(votes):
            for annotator, cls in enumerate(row):
                writer.writerow((item, annotator, int(cls)))


def read_annotations(path, k: int) -> list[AnnotationSet]:
    """Read an annotation table back into one AnnotationSet per item."""
    by_item: dict[int, dict[int, int]] = {}
    with open(Path(path), encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != ANNOTATION_HEADER:
            raise ValidationError(f"unexpected annotation header {header!r}")
        for line_no, row in enumerate(reader, start=2):
            try:
                item, annotator, cls = (int(v) for v in row)
            except ValueError as exc:
                raise ValidationError(f"line {line_no}: {exc}") from None
            by_item.setdefault(item, {})[annotator] = cls
    if not by_item:
        return []
    n_items = max(by_item) + 1
    return [
        AnnotationSet(tuple(v for _, v in sorted(by_item.get(i, {}).items())), k)
        for i in range(n_items)
    ]


def stack_sets(sets: Iterable[AnnotationSet]) -> np.ndarray:
    """Vote matrix from equally sized annotation sets."""
    rows = [s.classes for s in sets]
    if len({len(r) for r in rows}) > 1:
        raise ValidationError("annotation sets differ in size")
    return np.asarray(rows, dtype=np.int64)
