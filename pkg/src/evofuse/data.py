"""Stream sources: CSV ingestion, label masking and synthetic drift streams.

Every source yields raw :class:`Batch` objects; :class:`RunningNormalizer`
maps features into [0, 1] with the min/max seen so far.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy.stats import norm

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


class UnknownClassError(DataError):
    pass


@dataclass
class Batch:
    X: np.ndarray
    labels: np.ndarray
    index: int = 0

    def __len__(self) -> int:
        return self.X.shape[0]


class RunningNormalizer:
    """Min-max scaling with bounds widened by every batch before it is scaled."""

    def __init__(self):
        self.lo = None
        self.hi = None

    def update(self, X: np.ndarray) -> None:
        lo, hi = X.min(axis=0), X.max(axis=0)
        if self.lo is None:
            self.lo, self.hi = lo.astype(float), hi.astype(float)
        else:
            self.lo = np.minimum(self.lo, lo)
            self.hi = np.maximum(self.hi, hi)

    def transform(self, X: np.ndarray) -> np.ndarray:
        span = self.hi - self.lo
        safe = np.where(span > 0, span, 1.0)
        # a constant column maps to 0
        return np.where(span > 0, (X - self.lo) / safe, 0.0)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        self.update(X)
        return self.transform(X)


class ClassIndex:
    """Label -> column map, growing until locked."""

    def __init__(self, declared=None):
        self.mapping: dict = {}
        self.locked = False
        if declared is not None:
            for c in declared:
                self.mapping.setdefault(c, len(self.mapping))
            self.locked = True

    def encode(self, raw_labels) -> np.ndarray:
        out = np.empty(len(raw_labels), dtype=np.int64)
        for i, c in enumerate(raw_labels):
            idx = self.mapping.get(c)
            if idx is None:
                if self.locked:
                    raise UnknownClassError(f"unknown class {c!r} after the class set was locked")
                idx = self.mapping[c] = len(self.mapping)
            out[i] = idx
        return out

    def lock(self) -> None:
        self.locked = True

    @property
    def n_classes(self) -> int:
        return len(self.mapping)


@dataclass
class CsvStats:
    rows: int = 0
    rejected: int = 0


def _is_header(row) -> bool:
    try:
        [float(v) for v in row]
        return False
    except ValueError:
        return True


def count_rows(path) -> int:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None:
            return 0
        n = sum(1 for row in reader if row)
        return n + (0 if _is_header(first) else 1)


def resolve_batch_size(n_rows: int, setting: str) -> int:
    from .config import SETTINGS
    return max(8, math.ceil(n_rows / SETTINGS[setting]))


def ingest_csv(path, batch_size: int, stats: CsvStats | None = None) -> Iterator[tuple[np.ndarray, list]]:
    """Yield raw ``(X, labels)`` chunks of ``batch_size`` rows in file order.

    The last column is the class label; the rest must be numeric.  Rows with
    a non-numeric feature or a wrong column count are skipped and counted.
    """
    stats = stats if stats is not None else CsvStats()
    width = None
    rows_x, rows_y = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, 1):
            if not row:
                continue
            if lineno == 1 and _is_header(row):
                continue
            if width is None:
                width = len(row)
                if width < 2:
                    raise DataError("CSV needs at least one feature and a label column")
            try:
                if len(row) != width:
                    raise ValueError("column count")
                feats = [float(v) for v in row[:-1]]
                if not all(math.isfinite(v) for v in feats):
                    raise ValueError("non-finite")
            except ValueError:
                stats.rejected += 1
                log.warning("line %d rejected: %r", lineno, row[:4])
                continue
            label = row[-1].strip()
            try:
                label = int(float(label))
            except ValueError:
                pass
            rows_x.append(feats)
            rows_y.append(label)
            stats.rows += 1
            if len(rows_x) == batch_size:
                yield np.asarray(rows_x, dtype=float), rows_y
                rows_x, rows_y = [], []
    if rows_x:
        yield np.asarray(rows_x, dtype=float), rows_y


def mask_labels(n: int, proportion: float, seed: int, batch_index: int) -> np.ndarray:
    """Boolean mask with ``ceil(proportion * n)`` labelled positions."""
    if not 0.0 < proportion <= 1.0:
        raise ValueError("proportion must lie in (0, 1]")
    k = min(n, math.ceil(proportion * n - 1e-9))
    rng = np.random.default_rng(np.random.SeedSequence([seed, batch_index, 0xA5]))
    mask = np.zeros(n, dtype=bool)
    mask[rng.choice(n, size=k, replace=False)] = True
    return mask


# -- synthetic Gaussian streams ----------------------------------------------

@dataclass
class Regime:
    means: np.ndarray              # (O, u)
    std: np.ndarray                # (O,) isotropic std per class
    priors: np.ndarray             # (O,)
    label_map: np.ndarray | None = None   # emitted label for each generating cluster

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        n_cls = self.means.shape[0]
        self.std = np.broadcast_to(np.asarray(self.std, dtype=float), (n_cls,)).copy()
        self.priors = np.asarray(self.priors, dtype=float) if self.priors is not None else np.full(n_cls, 1 / n_cls)
        if np.any(~np.isfinite(self.std)) or np.any(self.std <= 0):
            raise DataError("degenerate covariance: every class std must be positive")
        if self.priors.shape != (n_cls,) or np.any(self.priors < 0) or not np.isclose(self.priors.sum(), 1.0):
            raise DataError("priors must be non-negative and sum to 1, one per class")
        if self.label_map is None:
            self.label_map = np.arange(n_cls)
        self.label_map = np.asarray(self.label_map, dtype=np.int64)

    def sample(self, n: int, rng: np.random.Generator):
        cluster = rng.choice(self.means.shape[0], size=n, p=self.priors)
        X = self.means[cluster] + rng.normal(size=(n, self.means.shape[1])) * self.std[cluster, None]
        return X, self.label_map[cluster]


@dataclass
class StreamSpec:
    n_batches: int
    batch_size: int
    regimes: list
    # (start_batch, regime_index, ramp_batches); ramp 0 is an abrupt switch
    schedule: list = field(default_factory=lambda: [(0, 0, 0)])
    kind: str = "gaussian"
    n_classes: int = 2

    def regime_weights(self, t: np.ndarray) -> np.ndarray:
        """Probability of each regime at fractional batch positions ``t``."""
        w = np.zeros((t.shape[0], len(self.regimes)))
        w[:, self.schedule[0][1]] = 1.0
        for start, reg, ramp in self.schedule[1:]:
            mix = np.clip((t - start) / ramp, 0.0, 1.0) if ramp > 0 else (t >= start).astype(float)
            w *= (1.0 - mix)[:, None]
            w[:, reg] += mix
        return w


def parse_stream_spec(obj) -> StreamSpec:
    """Build a :class:`StreamSpec` from a dict or JSON text."""
    if isinstance(obj, (str, bytes)):
        obj = json.loads(obj)
    try:
        if obj.get("kind") == "poker":
            return StreamSpec(int(obj["n_batches"]), int(obj["batch_size"]), [], kind="poker", n_classes=10)
        regimes = [Regime(r["means"], r.get("std", 0.1), r.get("priors"), r.get("label_map"))
                   for r in obj["regimes"]]
        schedule = [tuple(s) for s in obj.get("schedule", [[0, 0, 0]])]
        for s in schedule:
            if len(s) != 3 or not 0 <= s[1] < len(regimes):
                raise DataError(f"bad schedule entry {s}")
        n_cls = int(max(r.label_map.max() for r in regimes) + 1)
        spec = StreamSpec(int(obj["n_batches"]), int(obj["batch_size"]), regimes, schedule, n_classes=n_cls)
    except (KeyError, TypeError) as exc:
        raise DataError(f"invalid stream spec: {exc}") from exc
    if spec.batch_size < 8 or spec.n_batches < 1:
        raise DataError("batch_size must be >= 8 and n_batches >= 1")
    dims = {r.means.shape[1] for r in regimes}
    if len(dims) != 1:
        raise DataError("all regimes must share the feature dimension")
    return spec


def synthetic_stream(spec: StreamSpec | dict | str, seed: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Reproducible raw ``(X, labels)`` batches following the regime schedule."""
    if not isinstance(spec, StreamSpec):
        spec = parse_stream_spec(spec)
    for k in range(spec.n_batches):
        rng = np.random.default_rng(np.random.SeedSequence([seed, k, 0x5D]))
        if spec.kind == "poker":
            yield poker_hands(spec.batch_size, rng)
            continue
        t = k + np.arange(spec.batch_size) / spec.batch_size
        w = spec.regime_weights(t)
        u = rng.random(spec.batch_size)
        reg = (u[:, None] > np.cumsum(w, axis=1)).sum(axis=1)
        reg = np.minimum(reg, len(spec.regimes) - 1)
        X = np.empty((spec.batch_size, spec.regimes[0].means.shape[1]))
        y = np.empty(spec.batch_size, dtype=np.int64)
        for r in np.unique(reg):
            idx = np.flatnonzero(reg == r)
            X[idx], y[idx] = spec.regimes[r].sample(idx.size, rng)
        yield X, y


def bayes_accuracy(regime: Regime, n: int = 200_000, seed: int = 0) -> float:
    """Accuracy of the Bayes classifier for one regime.

    Two equiprobable classes with a shared std use the closed form
    ``Phi(||m1 - m0|| / (2 std))``; anything else is estimated by sampling.
    """
    means, std, priors = regime.means, regime.std, regime.priors
    if means.shape[0] == 2 and std[0] == std[1] and np.allclose(priors, 0.5) \
            and regime.label_map[0] != regime.label_map[1]:
        return float(norm.cdf(np.linalg.norm(means[1] - means[0]) / (2 * std[0])))
    rng = np.random.default_rng(seed)
    X, y = regime.sample(n, rng)
    u = means.shape[1]
    d2 = ((X[:, None, :] - means[None]) ** 2).sum(axis=2)
    logp = np.log(np.maximum(priors, 1e-300)) - u * np.log(std) - d2 / (2 * std ** 2)
    # posterior of an emitted label is the sum over its clusters
    n_lab = int(regime.label_map.max()) + 1
    post = np.zeros((n, n_lab))
    p = np.exp(logp - logp.max(axis=1, keepdims=True))
    for c, lab in enumerate(regime.label_map):
        post[:, lab] += p[:, c]
    return float((post.argmax(axis=1) == y).mean())


# -- poker hands --------------------------------------------------------------

def poker_hands(n: int, rng: np.random.Generator, chunk: int = 50_000):
    """``n`` random five-card deals as (suit, rank) x 5 features with the hand class.

    Classes: 0 nothing, 1 pair, 2 two pairs, 3 three of a kind, 4 straight,
    5 flush, 6 full house, 7 four of a kind, 8 straight flush, 9 royal flush.
    """
    Xs, ys = [], []
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        cards = np.argsort(rng.random((m, 52)), axis=1)[:, :5]
        suits, ranks = cards // 13 + 1, cards % 13 + 1
        X = np.empty((m, 10))
        X[:, 0::2], X[:, 1::2] = suits, ranks
        Xs.append(X)
        ys.append(score_hands(suits, ranks))
    return np.vstack(Xs), np.concatenate(ys)


def score_hands(suits: np.ndarray, ranks: np.ndarray) -> np.ndarray:
    m = ranks.shape[0]
    counts = np.zeros((m, 14), dtype=np.int64)
    np.add.at(counts, (np.repeat(np.arange(m), 5), ranks.ravel()), 1)
    shape = np.sort(counts, axis=1)[:, ::-1]
    top, second = shape[:, 0], shape[:, 1]
    flush = (suits == suits[:, :1]).all(axis=1)
    srt = np.sort(ranks, axis=1)
    distinct = top == 1
    run = distinct & (srt[:, 4] - srt[:, 0] == 4)
    broadway = distinct & (srt == np.array([1, 10, 11, 12, 13])).all(axis=1)
    straight = run | broadway

    y = np.zeros(m, dtype=np.int64)
    y[top == 2] = 1
    y[(top == 2) & (second == 2)] = 2
    y[top == 3] = 3
    y[straight] = 4
    y[flush] = 5
    y[(top == 3) & (second == 2)] = 6
    y[top == 4] = 7
    y[straight & flush] = 8
    y[broadway & flush] = 9
    return y


# -- presets -------------------------------------------------------------------

def preset(name: str, **kw) -> dict:
    """Named stream specs used by the tests and the CLI (``--synthetic name``)."""
    nb = kw.get("n_batches", 20)
    T = kw.get("batch_size", 1000)
    if name == "two-clusters":
        reg = {"means": [[0.25] * 4, [0.75] * 4], "std": 0.08}
        return {"n_batches": nb, "batch_size": T, "regimes": [reg]}
    if name == "label-swap":
        # unequal priors make the swap visible in the input distribution
        a = {"means": [[0.3] * 4, [0.7] * 4], "std": 0.1, "priors": [0.8, 0.2]}
        b = {"means": [[0.3] * 4, [0.7] * 4], "std": 0.1, "priors": [0.2, 0.8], "label_map": [1, 0]}
        return {"n_batches": nb, "batch_size": T, "regimes": [a, b],
                "schedule": [[0, 0, 0], [kw.get("drift_at", 5), 1, 0]]}
    if name == "drifting":
        a = {"means": [[0.3, 0.3, 0.5], [0.7, 0.7, 0.5]], "std": 0.12}
        b = {"means": [[0.3, 0.7, 0.2], [0.7, 0.3, 0.8]], "std": 0.12}
        c = {"means": [[0.5, 0.2, 0.7], [0.5, 0.8, 0.3]], "std": 0.12}
        return {"n_batches": nb, "batch_size": T, "regimes": [a, b, c],
                "schedule": [[0, 0, 0], [nb // 3, 1, 0], [2 * nb // 3, 2, 2]]}
    if name == "noisy-pseudo":
        # heavily overlapping classes: confident predictions are often wrong
        a = {"means": [[0.45] * 3, [0.55] * 3], "std": 0.12}
        b = {"means": [[0.55] * 3, [0.45] * 3], "std": 0.12}
        return {"n_batches": nb, "batch_size": T, "regimes": [a, b],
                "schedule": [[0, 0, 0], [nb // 2, 1, 0]]}
    if name == "poker":
        return {"kind": "poker", "n_batches": kw.get("n_batches", 6), "batch_size": kw.get("batch_size", 170_835)}
    raise DataError(f"unknown preset {name!r}")


def load_stream_spec(ref: str, **kw) -> StreamSpec:
    """A preset name, a JSON file path or inline JSON."""
    if ref.lstrip().startswith("{"):
        return parse_stream_spec(ref)
    path = Path(ref)
    if path.suffix == ".json" or path.exists():
        return parse_stream_spec(path.read_text())
    return parse_stream_spec(preset(ref, **kw))
