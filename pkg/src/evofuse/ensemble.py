"""Ensemble bookkeeping: voting weights, weighted vote, drift detection, pruning."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .rule_evolution import BaseLearner

COMPATIBILITY_LEVEL = 0.6065
# keeps repeated penalties from underflowing to an exact zero weight
BETA_FLOOR = 1e-12
CUT_FRACTIONS = (0.25, 0.5, 0.75)


@dataclass
class DriftVerdict:
    status: str = "stable"
    cut_fraction: Optional[float] = None
    statistic_gap: float = 0.0
    epsilon: float = 0.0

    @property
    def is_drift(self) -> bool:
        return self.status == "drift"


@dataclass
class Ensemble:
    learners: list = field(default_factory=list)
    betas: np.ndarray = field(default_factory=lambda: np.empty(0))
    input_min: Optional[np.ndarray] = None
    input_max: Optional[np.ndarray] = None
    fac: float = 0.3
    delta: float = 1e-3

    @property
    def size(self) -> int:
        return len(self.learners)

    def winner_index(self) -> int:
        return int(np.argmax(self.betas))

    def add(self, learner: BaseLearner, beta: float = 1.0) -> None:
        self.learners.append(learner)
        self.betas = np.append(self.betas, beta)

    def observe_inputs(self, X: np.ndarray) -> None:
        lo, hi = X.min(axis=0), X.max(axis=0)
        if self.input_min is None:
            self.input_min, self.input_max = lo, hi
        else:
            self.input_min = np.minimum(self.input_min, lo)
            self.input_max = np.maximum(self.input_max, hi)

    def statistic_range(self) -> tuple[float, float]:
        if self.input_min is None:
            return 0.0, 1.0
        return float(self.input_min.mean()), float(self.input_max.mean())

    def total_rules(self) -> int:
        return sum(m.n_rules for m in self.learners)


def vote_update(beta: float, max_firing: float, fac: float) -> float:
    """Reward a learner covering the sample, penalise one that does not."""
    if max_firing >= COMPATIBILITY_LEVEL:
        return min(beta * (1.0 + fac), 1.0)
    return max(beta * fac, BETA_FLOOR)


def compatibility_and_vote_update(learner_index: int, max_firing: float, ensemble: Ensemble) -> float:
    beta = vote_update(float(ensemble.betas[learner_index]), max_firing, ensemble.fac)
    ensemble.betas[learner_index] = beta
    return beta


def vote_sequence(beta: float, max_firing: np.ndarray, fac: float) -> float:
    """Apply :func:`vote_update` for every sample of a partition in order."""
    for mf in max_firing:
        beta = vote_update(beta, float(mf), fac)
    return beta


def aggregate_partition_votes(per_partition_betas) -> np.ndarray:
    return np.asarray(per_partition_betas, dtype=float).mean(axis=0)


def ensemble_output(per_learner_outputs, betas) -> tuple[np.ndarray, int]:
    """Weighted vote for one sample: scores (O,) and the class (first maximum)."""
    scores = np.asarray(betas, dtype=float) @ np.asarray(per_learner_outputs, dtype=float)
    return scores, int(np.argmax(scores))


def ensemble_scores(outputs: np.ndarray, betas) -> np.ndarray:
    """Batched weighted vote; ``outputs`` has shape (N, M, O)."""
    return np.einsum("m,tmo->to", np.asarray(betas, dtype=float), outputs)


def hoeffding_epsilon(size: int, cut_fraction: float, T: int, delta: float, a: float, b: float) -> float:
    """``(b - a) * sqrt(size / (2 * cut * T) * ln(1 / delta))``."""
    if b <= a:
        return 0.0
    return (b - a) * math.sqrt(size / (2.0 * cut_fraction * T) * math.log(1.0 / delta))


def _radius(n: int, delta: float, a: float, b: float) -> float:
    # the bound above with a unit-size block and a prefix holding n of T samples:
    # the usual Hoeffding radius of an n-sample mean
    return hoeffding_epsilon(1, n, 1, delta, a, b)


def _detect_one_sided(stats: np.ndarray, delta: float, a: float, b: float) -> DriftVerdict:
    T = stats.shape[0]
    x_mean = float(stats.mean())
    eps_x = _radius(T, delta, a, b)
    best = None
    for cut in CUT_FRACTIONS:
        n_a = int(round(cut * T))
        A, C = stats[:n_a], stats[n_a:]
        a_mean = float(A.mean())
        if x_mean + eps_x <= a_mean + _radius(n_a, delta, a, b):
            gap = abs(a_mean - float(C.mean()))
            eps = max(_radius(n_a, delta, a, b), _radius(T - n_a, delta, a, b))
            if best is None or gap > best.statistic_gap:
                best = DriftVerdict("stable", cut, gap, eps)
    if best is None:
        return DriftVerdict("stable", None, 0.0, 0.0)
    if best.statistic_gap >= best.epsilon and best.statistic_gap > 0.0:
        best.status = "drift"
    else:
        best.cut_fraction = None
    return best


def detect_drift(batch_statistics, delta: float, a: float, b: float, two_sided: bool = True) -> DriftVerdict:
    """Hoeffding-bound change detection over three candidate cut points.

    A candidate cut must satisfy the switching condition (the prefix mean plus
    its bound is no lower than the whole window's); among those the one with
    the widest prefix/suffix gap is tested against the larger of the two
    bounds.  With ``two_sided`` the reflected statistics ``a + b - s`` are
    tested as well so that shifts in either direction are caught.
    """
    stats = np.asarray(batch_statistics, dtype=float)
    if stats.shape[0] < 8:
        raise ValueError("drift detection needs at least 8 statistics")
    verdict = _detect_one_sided(stats, delta, a, b)
    if two_sided:
        mirrored = _detect_one_sided(a + b - stats, delta, a, b)
        if mirrored.is_drift and (not verdict.is_drift or mirrored.statistic_gap > verdict.statistic_gap):
            verdict = mirrored
    return verdict


def prune_learners(ensemble: Ensemble) -> list[int]:
    """Drop learners whose weight is at or below ``mean - std`` of all weights."""
    if ensemble.size < 2:
        return []
    betas = ensemble.betas
    mu, sigma = float(betas.mean()), float(betas.std())
    threshold = mu - sigma
    tol = 1e-12 * max(1.0, abs(mu))
    doomed = [i for i, b in enumerate(betas) if b <= threshold + tol]
    if len(doomed) == ensemble.size:
        doomed.remove(int(np.argmax(betas)))
    keep = [i for i in range(ensemble.size) if i not in doomed]
    ensemble.learners = [ensemble.learners[i] for i in keep]
    ensemble.betas = betas[keep]
    return doomed


def integrate_model(ensemble: Ensemble, fused: BaseLearner, verdict: DriftVerdict) -> Ensemble:
    """Append the fused learner on drift, otherwise replace the current winner."""
    if verdict.is_drift or ensemble.size == 0:
        ensemble.add(fused, 1.0)
    else:
        ensemble.learners[ensemble.winner_index()] = fused
    return ensemble
