"""Training-set assembly from a partially labelled batch.

Labelled samples are kept and each gets one noisy copy; unlabelled samples
receive a pseudo label only when every ensemble member is confident and all
members agree on the class.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np

from .fuzzy_core import confidences
from .rule_evolution import Provenance


@dataclass
class Da3Config:
    conf_threshold: float = 0.55
    noise_std: float = math.sqrt(0.001)
    rng_seed: int = 0
    augment: bool = True

    def __post_init__(self):
        if not 0.5 < self.conf_threshold < 1.0:
            raise ValueError("conf_threshold must lie in (0.5, 1)")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


@dataclass
class TrainingSample:
    x: np.ndarray
    y: np.ndarray
    provenance: int


@dataclass
class TrainingBatch:
    """Struct-of-arrays training set; ``provenance`` uses :class:`Provenance` codes."""

    X: np.ndarray
    Y: np.ndarray
    provenance: np.ndarray

    def __len__(self) -> int:
        return self.X.shape[0]

    def __iter__(self) -> Iterator[TrainingSample]:
        for x, y, p in zip(self.X, self.Y, self.provenance):
            yield TrainingSample(x, y, int(p))

    @property
    def labels(self) -> np.ndarray:
        return self.Y.argmax(axis=1) if len(self) else np.empty(0, dtype=int)

    def count(self, kind: int) -> int:
        return int((self.provenance == kind).sum())

    @classmethod
    def empty(cls, n_inputs: int, n_classes: int) -> "TrainingBatch":
        return cls(np.empty((0, n_inputs)), np.empty((0, n_classes)), np.empty(0, dtype=np.int8))

    @classmethod
    def concat(cls, parts) -> "TrainingBatch":
        parts = list(parts)
        return cls(np.vstack([p.X for p in parts]), np.vstack([p.Y for p in parts]),
                   np.concatenate([p.provenance for p in parts]))


def augment(X: np.ndarray, Y: np.ndarray, noise_std: float, rng: np.random.Generator):
    """One noisy copy per labelled sample, clamped to [0, 1]; labels unchanged."""
    X = np.asarray(X, dtype=float)
    if noise_std == 0.0:
        return X.copy(), np.array(Y, copy=True)
    noisy = X + rng.normal(0.0, noise_std, size=X.shape)
    return np.clip(noisy, 0.0, 1.0), np.array(Y, copy=True)


def pseudo_label(per_learner_outputs, conf_threshold: float = 0.55) -> Optional[int]:
    """Class index for one unlabelled sample, or ``None`` when the gate fails.

    ``per_learner_outputs`` has shape (M, O).
    """
    outs = np.atleast_2d(np.asarray(per_learner_outputs, dtype=float))
    mask, cls = pseudo_label_mask(outs[None], conf_threshold)
    return int(cls[0]) if mask[0] else None


def pseudo_label_mask(outputs: np.ndarray, conf_threshold: float = 0.55):
    """Vectorised gate over (N, M, O) learner outputs: (accepted mask, class)."""
    classes = outputs.argmax(axis=2)                        # (N, M)
    agree = (classes == classes[:, :1]).all(axis=1)
    min_conf = confidences(outputs).min(axis=1)
    return agree & (min_conf >= conf_threshold), classes[:, 0]


def assemble_training_batch(X, Y, label_mask, per_learner_outputs, config: Da3Config,
                            rng: np.random.Generator, allow_pseudo: bool = True):
    """Originals interleaved with their augmented copies, then pseudo samples.

    Returns the :class:`TrainingBatch` and the counts ``(n_label, n_aug, n_pseudo)``.
    """
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    label_mask = np.asarray(label_mask, dtype=bool)
    n_cls = Y.shape[1]

    Xl, Yl = X[label_mask], Y[label_mask]
    n_label = Xl.shape[0]
    if config.augment and n_label:
        Xa, Ya = augment(Xl, Yl, config.noise_std, rng)
        Xo = np.empty((2 * n_label, X.shape[1]))
        Yo = np.empty((2 * n_label, n_cls))
        Xo[0::2], Xo[1::2] = Xl, Xa
        Yo[0::2], Yo[1::2] = Yl, Ya
        prov = np.tile(np.array([Provenance.ORIGINAL, Provenance.AUGMENTED], dtype=np.int8), n_label)
        n_aug = n_label
    else:
        Xo, Yo = Xl, Yl
        prov = np.full(n_label, Provenance.ORIGINAL, dtype=np.int8)
        n_aug = 0

    n_pseudo = 0
    if allow_pseudo and per_learner_outputs is not None and (~label_mask).any():
        unl = ~label_mask
        ok, cls = pseudo_label_mask(np.asarray(per_learner_outputs)[unl], config.conf_threshold)
        n_pseudo = int(ok.sum())
        if n_pseudo:
            Xp = X[unl][ok]
            Yp = np.eye(n_cls)[cls[ok]]
            Xo = np.vstack((Xo, Xp))
            Yo = np.vstack((Yo, Yp))
            prov = np.concatenate((prov, np.full(n_pseudo, Provenance.PSEUDO, dtype=np.int8)))

    return TrainingBatch(Xo, Yo, prov), (n_label, n_aug, n_pseudo)
