"""Partition-parallel execution of testing and training.

The driver splits a batch into ``P`` contiguous partitions and hands each one,
together with an immutable snapshot of the models, to a worker.  Workers
never share state; results come back by value and are concatenated in stream
order.  With ``worker_count == 1`` everything runs inline, which is bitwise
identical to the pooled path because each task depends only on its inputs.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .ensemble import aggregate_partition_votes, ensemble_scores, vote_sequence
from .fuzzy_core import extend, infer_sequence
from .rule_evolution import BaseLearner, NonFiniteStateError, TrainStats

log = logging.getLogger(__name__)


class BatchAbortedError(RuntimeError):
    """A partition task failed twice; the batch produces no results."""


@dataclass
class RuntimeConfig:
    P: int = 6
    worker_count: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.P < 1 or self.worker_count < 1:
            raise ValueError("P and worker_count must be >= 1")


@dataclass
class PartitionPlan:
    P: int
    assignments: list

    def slices(self):
        return [slice(a, b) for a, b in self.assignments]

    def sizes(self):
        return [b - a for a, b in self.assignments]


@dataclass
class WorkerResult:
    partition_index: int
    predictions: np.ndarray | None = None
    max_firing: np.ndarray | None = None
    partial_betas: np.ndarray | None = None
    learner: BaseLearner | None = None
    rule_accuracies: np.ndarray | None = None
    stats: TrainStats = field(default_factory=TrainStats)
    timing: float = 0.0


@dataclass
class TestOutcome:
    __test__ = False
    outputs: np.ndarray           # (N, M, O) per-learner outputs in stream order
    scores: np.ndarray            # (N, O) weighted vote with the incoming betas
    predictions: np.ndarray       # (N,)
    betas: np.ndarray             # partition-mean updated betas
    timing: float = 0.0


def partition(T: int, P: int) -> PartitionPlan:
    """Contiguous ranges covering ``range(T)`` whose sizes differ by at most one."""
    if T < 1:
        raise ValueError("cannot partition an empty batch")
    P = min(int(P), int(T))
    base, extra = divmod(T, P)
    bounds, start = [], 0
    for p in range(P):
        stop = start + base + (1 if p < extra else 0)
        bounds.append((start, stop))
        start = stop
    return PartitionPlan(P, bounds)


def partition_seed(seed: int, batch_index: int, partition_index: int, purpose: int) -> np.random.Generator:
    """Generator seeded from the (run seed, batch, partition, purpose) tuple."""
    return np.random.default_rng(np.random.SeedSequence([seed, batch_index, partition_index, purpose]))


# -- worker tasks (top-level so they pickle) ---------------------------------

def _test_task(index, learners, betas, X, fac) -> WorkerResult:
    t0 = time.perf_counter()
    XE = extend(X)
    outs, fires = [], []
    for m in learners:
        o, mf = infer_sequence(XE, m.W, m.config.gamma)
        outs.append(o)
        fires.append(mf)
    partial = np.array([vote_sequence(float(b), mf, fac) for b, mf in zip(betas, fires)])
    return WorkerResult(index, predictions=np.stack(outs, axis=1), max_firing=np.stack(fires, axis=1),
                        partial_betas=partial, timing=time.perf_counter() - t0)


def _train_task(index, seed_learner, X, Y, provenance, regularize) -> WorkerResult:
    t0 = time.perf_counter()
    learner = seed_learner.clone()
    stats = learner.partial_fit(X, Y, provenance, regularize=regularize)
    accs = learner.rule_accuracies(X, Y.argmax(axis=1)) if len(X) else np.zeros(learner.n_rules)
    return WorkerResult(index, learner=learner, rule_accuracies=accs, stats=stats,
                        timing=time.perf_counter() - t0)


class WorkerPool:
    """Runs partition tasks inline or on a process pool with retry-once semantics."""

    def __init__(self, worker_count: int = 1):
        self.worker_count = int(worker_count)
        self._pool = ProcessPoolExecutor(self.worker_count) if self.worker_count > 1 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def run(self, fn, tasks: list[tuple]) -> list[WorkerResult]:
        if self._pool is None:
            results = [self._attempt(fn, args) for args in tasks]
        else:
            futures = [self._pool.submit(fn, *args) for args in tasks]
            results = []
            for args, fut in zip(tasks, futures):
                try:
                    results.append(fut.result())
                except (NonFiniteStateError, FloatingPointError, ValueError) as exc:
                    log.warning("partition %s failed (%s); retrying", args[0], exc)
                    results.append(self._retry(fn, args, exc))
        return sorted(results, key=lambda r: r.partition_index)

    def _attempt(self, fn, args):
        try:
            return fn(*args)
        except (NonFiniteStateError, FloatingPointError, ValueError) as exc:
            log.warning("partition %s failed (%s); retrying", args[0], exc)
            return self._retry(fn, args, exc)

    @staticmethod
    def _retry(fn, args, first_exc):
        try:
            return fn(*args)
        except Exception as exc:
            raise BatchAbortedError(f"partition {args[0]} failed twice: {exc}") from first_exc


def test_distributed(learners, betas, plan: PartitionPlan, X, fac: float,
                     pool: WorkerPool | None = None) -> TestOutcome:
    """Per-partition inference with every learner; fan in outputs and votes."""
    t0 = time.perf_counter()
    pool = pool or WorkerPool(1)
    betas = np.asarray(betas, dtype=float)
    tasks = [(p, learners, betas, X[s], fac) for p, s in enumerate(plan.slices())]
    results = pool.run(_test_task, tasks)
    outputs = np.concatenate([r.predictions for r in results], axis=0)
    scores = ensemble_scores(outputs, betas)
    new_betas = aggregate_partition_votes([r.partial_betas for r in results])
    return TestOutcome(outputs, scores, scores.argmax(axis=1), new_betas, time.perf_counter() - t0)


test_distributed.__test__ = False  # not a pytest test despite the name


def train_distributed(seed_learner: BaseLearner, parts, regularize: bool = True,
                      pool: WorkerPool | None = None) -> list[WorkerResult]:
    """Train one clone of ``seed_learner`` per partition training batch."""
    pool = pool or WorkerPool(1)
    tasks = [(p, seed_learner, b.X, b.Y, b.provenance, regularize) for p, b in enumerate(parts)]
    return pool.run(_train_task, tasks)
