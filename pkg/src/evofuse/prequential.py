"""Prequential test-then-train driver.

Each batch is first predicted by the current ensemble (accuracy is scored on
every sample against the withheld truth), then used to update the ensemble:
vote update, learner pruning, drift detection, training-set assembly,
partition-parallel training of a copy of the winner, fusion, integration.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .annotation import assemble_training_batch, pseudo_label_mask
from .config import ExperimentConfig
from .data import (ClassIndex, CsvStats, RunningNormalizer, count_rows, ingest_csv, load_stream_spec,
                   mask_labels, resolve_batch_size, synthetic_stream)
from .ensemble import DriftVerdict, Ensemble, detect_drift, integrate_model, prune_learners
from .fusion import fuse
from .metrics import MetricsRecord
from .rule_evolution import BaseLearner
from .runtime import WorkerPool, partition, partition_seed, test_distributed, train_distributed

log = logging.getLogger(__name__)

PURPOSE_AUGMENT = 1
PURPOSE_PROBE = 2


@dataclass
class RunResult:
    trace: list
    ensemble: Ensemble
    config: ExperimentConfig
    n_classes: int = 0
    rejected_rows: int = 0
    verdicts: list = field(default_factory=list)


def open_stream(cfg: ExperimentConfig):
    """Raw batch iterator and the class index for the configured source."""
    if cfg.dataset_path:
        T = cfg.batch_size or resolve_batch_size(count_rows(cfg.dataset_path), cfg.setting)
        stats = CsvStats()
        declared = range(cfg.n_classes) if cfg.n_classes else None
        return ingest_csv(cfg.dataset_path, T, stats), ClassIndex(declared), stats
    if cfg.synthetic:
        spec = load_stream_spec(cfg.synthetic)
        return synthetic_stream(spec, cfg.seed), ClassIndex(range(spec.n_classes)), CsvStats()
    raise ValueError("config names neither a dataset nor a synthetic stream")


def _probe_set(X, labels, mask, plan, seed, k):
    idx = []
    for p, s in enumerate(plan.slices()):
        cand = np.flatnonzero(mask[s]) + s.start
        if cand.size:
            idx.append(int(partition_seed(seed, k, p, PURPOSE_PROBE).choice(cand)))
    idx = np.asarray(idx, dtype=np.int64)
    return X[idx], labels[idx]


def run_prequential(cfg: ExperimentConfig, stream: Iterable | None = None,
                    classes: ClassIndex | None = None, pool: WorkerPool | None = None) -> RunResult:
    """Run the full test-then-train loop and return the per-batch trace."""
    csv_stats = CsvStats()
    if stream is None:
        stream, classes, csv_stats = open_stream(cfg)
    classes = classes or ClassIndex()
    own_pool = pool is None
    pool = pool or WorkerPool(cfg.workers)
    da3 = cfg.da3_config()
    fcfg = cfg.fusion_config()
    norm = RunningNormalizer()
    ens = Ensemble(fac=cfg.fac, delta=cfg.delta)
    result = RunResult([], ens, cfg)
    prev_stats = None
    try:
        for k, (X_raw, raw_labels) in enumerate(stream, 1):
            if cfg.max_batches and k > cfg.max_batches:
                break
            labels = classes.encode(raw_labels)
            if k == 1:
                classes.lock()
            n_cls = classes.n_classes
            X = norm(np.asarray(X_raw, dtype=float))
            ens.observe_inputs(X)
            Y = np.eye(n_cls)[labels]
            mask = mask_labels(len(X), cfg.label_proportion, cfg.seed, k)
            plan = partition(len(X), cfg.effective_partitions)
            stats_k = X.mean(axis=1)

            verdict, outputs, acc, test_time = DriftVerdict(), None, None, 0.0
            if k == 1:
                seed_learner = BaseLearner(X.shape[1], n_cls, cfg.learner_config())
            else:
                outcome = test_distributed(ens.learners, ens.betas, plan, X, cfg.fac, pool)
                test_time = outcome.timing
                acc = float((outcome.predictions == labels).mean())
                ens.betas = outcome.betas
                removed = prune_learners(ens)
                keep = [i for i in range(outcome.outputs.shape[1]) if i not in removed]
                outputs = outcome.outputs[:, keep, :]
                window = stats_k if prev_stats is None else np.concatenate((prev_stats, stats_k))
                a, b = ens.statistic_range()
                verdict = detect_drift(window, cfg.delta, a, b)
                seed_learner = ens.learners[ens.winner_index()]
            result.verdicts.append(verdict)

            t0 = time.perf_counter()
            parts, n_label, n_aug, n_pseudo, n_wrong = [], 0, 0, 0, 0
            for p, s in enumerate(plan.slices()):
                rng = partition_seed(cfg.seed, k, p, PURPOSE_AUGMENT)
                outs_p = outputs[s] if outputs is not None else None
                batch, (nl, na, npse) = assemble_training_batch(
                    X[s], Y[s], mask[s], outs_p, da3, rng, allow_pseudo=outputs is not None)
                parts.append(batch)
                n_label, n_aug, n_pseudo = n_label + nl, n_aug + na, n_pseudo + npse
                if npse:
                    unl = ~mask[s]
                    ok, cls = pseudo_label_mask(outs_p[unl], da3.conf_threshold)
                    n_wrong += int((cls[ok] != labels[s][unl][ok]).sum())

            report = None
            if sum(len(b) for b in parts) == 0:
                log.warning("batch %d: empty training set, ensemble unchanged", k)
            else:
                results = train_distributed(seed_learner, parts, not cfg.disable_regularization, pool)
                learners = [r.learner for r in results]
                X_probe, y_probe = _probe_set(X, labels, mask, plan, cfg.seed, k)
                fused, report = fuse(learners, [r.rule_accuracies for r in results],
                                     X_probe, y_probe, fcfg)
                integrate_model(ens, fused, verdict)
            train_time = time.perf_counter() - t0
            prev_stats = stats_k

            if k >= 2:
                rec = MetricsRecord(
                    batch_index=k, accuracy=acc, n_models=ens.size, n_rules_total=ens.total_rules(),
                    n_label=n_label, n_aug=n_aug, n_pseudo=n_pseudo, n_pseudo_wrong=n_wrong,
                    drift_verdict=verdict.status,
                    n_extracted=report.n_extracted if report else 0,
                    n_fused=report.n_fused if report else 0,
                    chosen_z=report.chosen_z if report else 0,
                    train_time_s=train_time, test_time_s=test_time)
                result.trace.append(rec)
                log.info("batch %d acc=%.4f models=%d rules=%d pseudo=%d drift=%s",
                         k, acc, ens.size, rec.n_rules_total, n_pseudo, verdict.status)
    finally:
        if own_pool:
            pool.close()
    result.n_classes = classes.n_classes
    result.rejected_rows = csv_stats.rejected
    return result
