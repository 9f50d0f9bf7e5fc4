"""Data-free fusion of partition-trained learners into one compact learner.

Rules extracted from the partition models are ranked by their training
accuracy, minor-support rules are dropped, and the remainder is merged into
the ``Z`` best rules by hyperplane distance and dihedral angle.  ``Z`` is
picked from a few candidates with a tiny labelled probe set.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .fuzzy_core import extend
from .rule_evolution import BaseLearner, Rule, bias_variance

log = logging.getLogger(__name__)


@dataclass
class FusionConfig:
    k4: float = 0.4
    k5: float = 0.6
    support_floor: float = 0.02
    z_candidates: tuple = (3, 5, 8, 10)

    def __post_init__(self):
        if not (0 < self.k4 < 1 and 0 < self.k5 < 1):
            raise ValueError("k4 and k5 must lie in (0, 1)")
        self.z_candidates = tuple(sorted(int(z) for z in self.z_candidates))
        if not self.z_candidates:
            raise ValueError("z_candidates must not be empty")


@dataclass
class ScoredRule:
    rule: Rule
    train_accuracy: float
    source_partition: int
    order: int = 0


@dataclass
class FusionReport:
    n_extracted: int = 0
    n_after_elimination: int = 0
    chosen_z: int = 0
    n_fused: int = 0
    scores: list = field(default_factory=list)
    merges: list = field(default_factory=list)


def _column_pair(W_a, W_b, class_index):
    return np.asarray(W_a)[:, class_index], np.asarray(W_b)[:, class_index]


def sim_distance(W_a, W_b, class_index: int) -> float:
    """``||a - b|| / ||a + b||`` for the class columns; ``inf`` when undefined."""
    a, b = _column_pair(W_a, W_b, class_index)
    num = float(np.linalg.norm(a - b))
    den = float(np.linalg.norm(a + b))
    if den == 0.0:
        return 0.0 if num == 0.0 else math.inf
    return num / den


def sim_angle(W_a, W_b, class_index: int) -> float:
    """Dihedral angle between the hyperplanes' normals, divided by pi."""
    a, b = _column_pair(W_a, W_b, class_index)
    na = np.append(a[1:], -1.0)
    nb = np.append(-b[1:], 1.0)
    cos = float(na @ nb / (np.linalg.norm(na) * np.linalg.norm(nb)))
    return math.acos(min(1.0, max(-1.0, cos))) / math.pi


def similarity(W_a, W_b) -> tuple[float, float]:
    """Distance and angle similarities averaged over class columns."""
    n_cls = np.asarray(W_a).shape[1]
    d = [sim_distance(W_a, W_b, o) for o in range(n_cls)]
    g = [sim_angle(W_a, W_b, o) for o in range(n_cls)]
    return float(np.mean(d)), float(np.mean(g))


def extract_rules(learners, rule_accuracies) -> list[ScoredRule]:
    """Flatten the partition learners' rules, absorbing exact duplicates.

    ``rule_accuracies[p]`` holds one training accuracy per rule of learner ``p``.
    """
    out: list[ScoredRule] = []
    seen: dict[bytes, ScoredRule] = {}
    for p, (learner, accs) in enumerate(zip(learners, rule_accuracies)):
        for rule, acc in zip(learner.rules, accs):
            # +0.0 folds -0.0 so the byte key matches array equality
            key = (rule.W + 0.0).tobytes()
            twin = seen.get(key)
            if twin is not None:
                twin.rule.support += rule.support
                twin.rule.firing_sum = max(twin.rule.firing_sum, rule.firing_sum)
                twin.train_accuracy = max(twin.train_accuracy, float(acc))
                continue
            seen[key] = ScoredRule(rule, float(acc), p, len(out))
            out.append(seen[key])
    return out


def eliminate_minor_rules(rules: list[ScoredRule], support_floor: float = 0.02) -> list[ScoredRule]:
    if len(rules) <= 1:
        return list(rules)
    supports = np.array([s.rule.support for s in rules])
    floor = support_floor * supports.sum()
    kept = [s for s in rules if s.rule.support >= floor]
    if not kept:
        kept = [rules[int(np.argmax(supports))]]
    return kept


def rank_rules(rules: list[ScoredRule]) -> list[ScoredRule]:
    """Descending training accuracy; extraction order breaks ties."""
    return sorted(rules, key=lambda s: (-s.train_accuracy, s.order))


def merge_models(scored_rules: list[ScoredRule], Z: int, config: FusionConfig,
                 merges: list | None = None) -> list[Rule]:
    """Merge every non-dominant rule into its closest admissible dominant.

    ``scored_rules`` must already be ranked.  The result keeps extraction order
    so a model fused from identical copies reproduces its source exactly.
    """
    Z = min(Z, len(scored_rules))
    dominants = [ScoredRule(s.rule.copy(), s.train_accuracy, s.source_partition, s.order)
                 for s in scored_rules[:Z]]
    retained: list[ScoredRule] = []
    for cand in scored_rules[Z:]:
        best, best_d = None, math.inf
        for i, dom in enumerate(dominants):
            d, g = similarity(dom.rule.W, cand.rule.W)
            if d <= config.k4 and g >= config.k5 and d < best_d:
                best, best_d = i, d
        if best is None:
            retained.append(cand)
            continue
        dom = dominants[best].rule
        share = cand.rule.support / (dom.support + cand.rule.support)
        # convex step; exact when the candidate equals the dominant
        dom.W = dom.W + share * (cand.rule.W - dom.W)
        dom.anchor_W = dom.anchor_W + share * (cand.rule.anchor_W - dom.anchor_W)
        dom.support += cand.rule.support
        dom.firing_sum = max(dom.firing_sum, cand.rule.firing_sum)
        if merges is not None:
            merges.append((dominants[best].order, cand.order, best_d))
    final = sorted(dominants + retained, key=lambda s: s.order)
    return [s.rule for s in final]


def probe_score(learner: BaseLearner, X, labels) -> float:
    """``|bias * variance| / accuracy`` of a learner on the probe samples."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    labels = np.asarray(labels)
    outputs, _ = learner.predict_outputs(X)
    acc = float((outputs.argmax(axis=1) == labels).mean())
    if acc == 0.0:
        return math.inf
    mu_e = extend(X.mean(axis=0))
    contrib = np.einsum("j,rjo->ro", mu_e, learner.W)
    Y = np.eye(learner.n_classes)[labels]
    bias = float(np.mean([bias_variance(contrib, y)[0] for y in Y]))
    var = bias_variance(contrib, Y[0])[1]
    return abs(bias * var) / acc


def online_model_select(candidates: dict, X_probe, y_probe) -> tuple[int, list]:
    """Pick the ``Z`` whose fused learner scores lowest on the probe set.

    ``candidates`` maps ``Z`` to a learner.  Ties and an empty probe go to the
    smallest ``Z``.
    """
    zs = sorted(candidates)
    if X_probe is None or len(y_probe) == 0:
        return zs[0], []
    scores = [probe_score(candidates[z], X_probe, y_probe) for z in zs]
    best = min(range(len(zs)), key=lambda i: (scores[i], zs[i]))
    return zs[best], scores


def fuse(learners, rule_accuracies, X_probe, y_probe, config: FusionConfig | None = None,
         template: BaseLearner | None = None) -> tuple[BaseLearner, FusionReport]:
    """Fuse partition learners into one learner (extraction -> elimination -> merge -> select)."""
    config = config or FusionConfig()
    template = template or learners[0]
    report = FusionReport()
    extracted = extract_rules(learners, rule_accuracies)
    report.n_extracted = sum(m.n_rules for m in learners)
    survivors = rank_rules(eliminate_minor_rules(extracted, config.support_floor))
    report.n_after_elimination = len(survivors)

    candidates, merge_logs = {}, {}
    for z in config.z_candidates:
        merge_logs[z] = []
        rules = merge_models(survivors, z, config, merge_logs[z])
        candidates[z] = BaseLearner.from_rules(rules, template)
    z, scores = online_model_select(candidates, X_probe, y_probe)
    fused = candidates[z]
    fused.t = max(m.t for m in learners)
    report.chosen_z, report.scores, report.merges = z, scores, merge_logs[z]
    report.n_fused = fused.n_rules
    log.debug("fusion: %d extracted, %d kept, Z=%d -> %d rules",
              report.n_extracted, report.n_after_elimination, z, report.n_fused)
    return fused, report
