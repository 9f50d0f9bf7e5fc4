"""Structural and parametric learning of a single base learner.

A :class:`BaseLearner` keeps its rules as stacked arrays so one training step
updates every rule with a handful of vectorised operations.  :class:`Rule` is
the per-rule view used by fusion and serialisation.

Structure evolves through the network-significance gates: a rising bias of
the expected output grows a rule, a rising variance prunes the weakest one.
The expected output is taken at a forgetting mean of the inputs whose
forgetting factor follows the drift rate measured inside each partition.
Consequents are fitted by fuzzily weighted generalised RLS; samples carrying a
pseudo label use an anchored variant that pulls important rules back towards
their last clean solution.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import _kernels
from .fuzzy_core import (
    EmptyModelError,
    extend,
    feedback_signal,
    firing_strengths,
    hyperplane_norms,
    infer_sequence,
    uniform_signal,
)


class NSAction(Enum):
    NONE = "none"
    GROW = "grow"
    PRUNE = "prune"


class Provenance:
    ORIGINAL = 0
    AUGMENTED = 1
    PSEUDO = 2


@dataclass
class LearnerConfig:
    gamma: float = 0.7
    k3: float = 0.2
    omega_init: float = 1e5
    alpha: float = 3e-7
    min_rules: int = 1
    # samples after a gate reset during which the minimum trackers follow the
    # running statistics instead of gating
    ns_warmup: int = 20
    hist_bins: int = 10

    def __post_init__(self):
        if self.gamma <= 0 or self.omega_init <= 0 or self.alpha < 0:
            raise ValueError("gamma and omega_init must be positive, alpha non-negative")
        if self.min_rules < 1:
            raise ValueError("min_rules must be >= 1")


@dataclass
class Rule:
    W: np.ndarray
    omega: np.ndarray
    anchor_W: np.ndarray
    support: float = 1.0
    birth_index: int = 0
    firing_sum: float = 0.0

    def copy(self) -> "Rule":
        return Rule(self.W.copy(), self.omega.copy(), self.anchor_W.copy(),
                    float(self.support), int(self.birth_index), float(self.firing_sum))


@dataclass
class NSState:
    mean_bias: float = 0.0
    std_bias: float = 0.0
    mean_var: float = 0.0
    std_var: float = 0.0
    min_mean_bias: float = math.inf
    min_std_bias: float = math.inf
    min_mean_var: float = math.inf
    min_std_var: float = math.inf
    sample_count: int = 0
    # Welford accumulators and samples since the last gate reset
    m2_bias: float = 0.0
    m2_var: float = 0.0
    since_reset: int = 0


@dataclass
class ForgettingState:
    mu: np.ndarray
    F: float = 1.0
    f: float = 1.0
    rate: float = 0.0

    @classmethod
    def fresh(cls, n_inputs: int) -> "ForgettingState":
        return cls(mu=np.full(n_inputs, 0.5))


def update_forgetting_mean(state: ForgettingState, x) -> ForgettingState:
    """``F <- F + f``; ``mu <- mu + (f / F) (x - mu)``."""
    F = state.F + state.f
    mu = state.mu + (state.f / F) * (np.asarray(x, dtype=float) - state.mu)
    return ForgettingState(mu=mu, F=F, f=state.f, rate=state.rate)


def forgetting_factor(rate: float) -> float:
    """Map a drift rate in [0, 1] to a forgetting factor in [0.9, 1].

    ``exp(-rate)`` is rescaled linearly so rate 0 gives 1 and rate 1 gives 0.9.
    """
    rate = min(max(float(rate), 0.0), 1.0)
    lo = math.exp(-1.0)
    return 0.9 + 0.1 * (math.exp(-rate) - lo) / (1.0 - lo)


def total_variation(a: np.ndarray, b: np.ndarray, bins: int = 10) -> float:
    """Mean over features of the histogram TV distance between two samples in [0, 1]."""
    edges = np.linspace(0.0, 1.0, bins + 1)
    tv = []
    for j in range(a.shape[1]):
        p, _ = np.histogram(np.clip(a[:, j], 0.0, 1.0), bins=edges)
        q, _ = np.histogram(np.clip(b[:, j], 0.0, 1.0), bins=edges)
        tv.append(0.5 * np.abs(p / p.sum() - q / q.sum()).sum())
    return float(np.mean(tv)) if tv else 0.0


def drift_rate(X, bins: int = 10) -> tuple[float, float]:
    """Drift rate between the two halves of a partition and its forgetting factor."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        return 0.0, 1.0
    half = X.shape[0] // 2
    rate = total_variation(X[:half], X[half:], bins)
    return rate, forgetting_factor(rate)


def expected_output(W, mu_e) -> tuple[np.ndarray, np.ndarray]:
    """Per-rule contribution ``mu_e @ W_i`` (R, O) and their sum over rules (O,)."""
    W = np.asarray(W, dtype=float)
    if W.ndim == 2:
        W = W[None]
    contrib = np.einsum("j,rjo->ro", np.asarray(mu_e, dtype=float), W)
    return contrib, contrib.sum(axis=0)


def bias_variance(contrib: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Network bias and variance from the rule contributions at the input mean.

    The rules are read as equally likely local models: the expected output is
    their mean and the variance is the spread of their contributions, both
    summed over classes.
    """
    mean = contrib.mean(axis=0)
    bias = float(((y - mean) ** 2).sum())
    var = float(max(((contrib ** 2).mean(axis=0) - mean ** 2).sum(), 0.0))
    return bias, var


def _adaptive_k(value: float) -> float:
    return 1.25 * math.exp(-value * value) + 0.75


def ns_step(ns: NSState, bias_sample: float, var_sample: float, warmup: int = 20) -> NSAction:
    """Advance the bias/variance statistics by one sample and evaluate the gates.

    Mutates ``ns`` in place.  Growing takes precedence; on either event every
    minimum tracker is reset to the current running values.
    """
    ns.sample_count += 1
    n = ns.sample_count
    delta = bias_sample - ns.mean_bias
    ns.mean_bias += delta / n
    ns.m2_bias += delta * (bias_sample - ns.mean_bias)
    delta = var_sample - ns.mean_var
    ns.mean_var += delta / n
    ns.m2_var += delta * (var_sample - ns.mean_var)
    ns.std_bias = math.sqrt(max(ns.m2_bias / n, 0.0))
    ns.std_var = math.sqrt(max(ns.m2_var / n, 0.0))
    ns.since_reset += 1

    if ns.since_reset <= warmup:
        _reset_minima(ns, count=False)
        return NSAction.NONE
    ns.min_mean_bias = min(ns.min_mean_bias, ns.mean_bias)
    ns.min_std_bias = min(ns.min_std_bias, ns.std_bias)
    ns.min_mean_var = min(ns.min_mean_var, ns.mean_var)
    ns.min_std_var = min(ns.min_std_var, ns.std_var)

    k1 = _adaptive_k(bias_sample)
    k2 = _adaptive_k(var_sample)
    # strict comparison: a stream sitting exactly at its minimum never fires
    if ns.mean_bias + ns.std_bias > ns.min_mean_bias + k1 * ns.min_std_bias:
        _reset_minima(ns)
        return NSAction.GROW
    if ns.mean_var + ns.std_var > ns.min_mean_var + 2.0 * k2 * ns.min_std_var:
        _reset_minima(ns)
        return NSAction.PRUNE
    return NSAction.NONE


def _reset_minima(ns: NSState, count: bool = True) -> None:
    ns.min_mean_bias, ns.min_std_bias = ns.mean_bias, ns.std_bias
    ns.min_mean_var, ns.min_std_var = ns.mean_var, ns.std_var
    if count:
        ns.since_reset = 0


def new_rule(n_inputs: int, n_classes: int, config: LearnerConfig, t: int) -> Rule:
    W = np.full((n_inputs + 1, n_classes), float(config.k3))
    return Rule(W=W, omega=config.omega_init * np.eye(n_inputs + 1), anchor_W=W.copy(),
                support=1.0, birth_index=int(t), firing_sum=0.0)


def weakest_rule(W, mu_e) -> int:
    """Index of the rule with the smallest class-summed contribution (lowest index on ties)."""
    contrib, _ = expected_output(W, mu_e)
    return int(np.argmin(contrib.sum(axis=1)))


def fwgrls_gain(omega: np.ndarray, x_e: np.ndarray, lam: np.ndarray):
    """Kalman gains and updated inverse Hessians for a stack of rules."""
    ox = omega @ x_e                                  # (R, n1)
    denom = 1.0 + lam * (ox @ x_e)                    # (R,)
    K = ox * (lam / denom)[:, None]                   # (R, n1)
    omega_new = omega - K[:, :, None] * ox[:, None, :]
    omega_new = 0.5 * (omega_new + omega_new.transpose(0, 2, 1))
    return K, omega_new


def fwgrls_update(rule: Rule, x_e, y, lam: float, alpha: float) -> Rule:
    """Plain weighted update of one rule with quadratic weight decay."""
    K, omega = fwgrls_gain(rule.omega[None], np.asarray(x_e, float), np.array([lam], float))
    W = rule.W - alpha * omega[0] @ rule.W + np.outer(K[0], np.asarray(y) - x_e @ rule.W)
    _check_finite(W, omega)
    out = rule.copy()
    out.W, out.omega = W, omega[0]
    return out


def fwgrls_pseudo_update(rule: Rule, x_e, y_pseudo, lam: float, alpha: float, t: int,
                         h: float | None = None) -> Rule:
    """Anchored update for a pseudo-labelled sample.

    ``h`` is the rule's activation on this sample; it is added to the firing
    sum before the importance ratio ``firing_sum / (t - birth)`` is formed.
    """
    firing_sum = rule.firing_sum + (lam if h is None else h)
    ratio = firing_sum / max(t - rule.birth_index, 1)
    K, omega = fwgrls_gain(rule.omega[None], np.asarray(x_e, float), np.array([lam], float))
    W = (rule.W - alpha * ratio * omega[0] @ (rule.W - rule.anchor_W)
         + np.outer(K[0], np.asarray(y_pseudo) - x_e @ rule.W))
    _check_finite(W, omega)
    out = rule.copy()
    out.W, out.omega, out.firing_sum = W, omega[0], firing_sum
    return out


class NonFiniteStateError(FloatingPointError):
    pass


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NonFiniteStateError("non-finite value in rule update")


@dataclass
class TrainStats:
    n_samples: int = 0
    grown: int = 0
    pruned: int = 0


class BaseLearner:
    """An evolving rule base with its NS statistics and forgetting state."""

    def __init__(self, n_inputs: int, n_classes: int, config: LearnerConfig | None = None,
                 with_rule: bool = True):
        self.n_inputs = int(n_inputs)
        self.n_classes = int(n_classes)
        self.config = config or LearnerConfig()
        n1 = self.n_inputs + 1
        self.W = np.empty((0, n1, self.n_classes))
        self.omega = np.empty((0, n1, n1))
        self.anchor_W = np.empty((0, n1, self.n_classes))
        self.support = np.empty(0)
        self.birth = np.empty(0, dtype=np.int64)
        self.firing_sum = np.empty(0)
        self.ns = NSState()
        self.forgetting = ForgettingState.fresh(self.n_inputs)
        self.t = 0
        if with_rule:
            self.add_rule(new_rule(self.n_inputs, self.n_classes, self.config, 0))

    # -- rule access -------------------------------------------------------

    @property
    def n_rules(self) -> int:
        return self.W.shape[0]

    @property
    def rules(self) -> list[Rule]:
        return [Rule(self.W[i].copy(), self.omega[i].copy(), self.anchor_W[i].copy(),
                     float(self.support[i]), int(self.birth[i]), float(self.firing_sum[i]))
                for i in range(self.n_rules)]

    def add_rule(self, rule: Rule) -> None:
        self.W = np.concatenate((self.W, rule.W[None]))
        self.omega = np.concatenate((self.omega, rule.omega[None]))
        self.anchor_W = np.concatenate((self.anchor_W, rule.anchor_W[None]))
        self.support = np.append(self.support, rule.support)
        self.birth = np.append(self.birth, np.int64(rule.birth_index))
        self.firing_sum = np.append(self.firing_sum, rule.firing_sum)

    def remove_rule(self, index: int) -> None:
        keep = np.arange(self.n_rules) != index
        self.W, self.omega, self.anchor_W = self.W[keep], self.omega[keep], self.anchor_W[keep]
        self.support, self.birth = self.support[keep], self.birth[keep]
        self.firing_sum = self.firing_sum[keep]

    @classmethod
    def from_rules(cls, rules, template: "BaseLearner") -> "BaseLearner":
        """Build a learner from ``rules`` carrying over ``template``'s statistics."""
        out = cls(template.n_inputs, template.n_classes, template.config, with_rule=False)
        out.ns = copy.deepcopy(template.ns)
        out.forgetting = copy.deepcopy(template.forgetting)
        out.t = template.t
        for r in rules:
            out.add_rule(r)
        return out

    def clone(self) -> "BaseLearner":
        return copy.deepcopy(self)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.omega)))

    # -- inference ---------------------------------------------------------

    def predict_outputs(self, X, signal0=None) -> tuple[np.ndarray, np.ndarray]:
        """Test-mode outputs (N, O) and per-sample maximum rule activation."""
        if self.n_rules == 0:
            raise EmptyModelError("learner has no rules")
        return infer_sequence(extend(np.atleast_2d(X)), self.W, self.config.gamma, signal0)

    def predict(self, X) -> np.ndarray:
        return self.predict_outputs(X)[0].argmax(axis=1)

    def rule_accuracies(self, X, labels) -> np.ndarray:
        """Accuracy of every rule used on its own (argmax of ``x_e @ W_i``)."""
        if len(labels) == 0:
            return np.zeros(self.n_rules)
        raw = np.einsum("tj,rjo->tro", extend(X), self.W)
        return (raw.argmax(axis=2) == np.asarray(labels)[:, None]).mean(axis=0)

    # -- training ----------------------------------------------------------

    def partial_fit(self, X, Y, provenance=None, regularize: bool = True,
                    compiled: bool = True) -> TrainStats:
        """Sequential pass over one partition's training samples.

        The forgetting factor is set from the drift rate between the two halves
        of ``X``; teacher forcing alternates the true label (even positions)
        with the previous output (odd positions).
        """
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        stats = TrainStats()
        if X.shape[0] == 0:
            return stats
        if provenance is None:
            provenance = np.zeros(X.shape[0], dtype=np.int8)
        cfg = self.config
        rate, f = drift_rate(X, cfg.hist_bins)
        self.forgetting.rate, self.forgetting.f = rate, f
        pseudo = np.asarray(provenance) == Provenance.PSEUDO
        if not regularize:
            pseudo[:] = False
        if compiled:
            self._fit_compiled(X, Y, pseudo, stats)
        else:
            XE = extend(X)
            prev = uniform_signal(self.n_classes)
            for pos in range(X.shape[0]):
                signal = Y[pos] if pos % 2 == 0 else feedback_signal(prev)
                prev = self._step(X[pos], XE[pos], Y[pos], signal, bool(pseudo[pos]), stats)
        stats.n_samples = X.shape[0]
        if not self.is_finite():
            raise NonFiniteStateError("non-finite learner state after training")
        return stats

    def _fit_compiled(self, X, Y, pseudo, stats: TrainStats) -> None:
        cfg, ns, fs = self.config, self.ns, self.forgetting
        packed = np.array([ns.mean_bias, ns.std_bias, ns.mean_var, ns.std_var,
                           ns.min_mean_bias, ns.min_std_bias, ns.min_mean_var, ns.min_std_var,
                           ns.sample_count, ns.m2_bias, ns.m2_var, ns.since_reset], dtype=float)
        mu = fs.mu.astype(float).copy()
        R = self.n_rules
        res = _kernels.train_loop(
            np.ascontiguousarray(X), np.ascontiguousarray(Y), pseudo.astype(np.bool_),
            self.W.copy(), self.omega.copy(), self.anchor_W.copy(), self.support.copy(),
            self.birth.astype(np.int64), self.firing_sum.copy(), R, packed, mu,
            float(fs.F), float(fs.f), int(self.t), float(cfg.gamma), float(cfg.k3),
            float(cfg.omega_init), float(cfg.alpha), int(cfg.min_rules), int(cfg.ns_warmup))
        W, omega, anchor, support, birth, firing_sum, R, F, t, grown, pruned = res
        self.W, self.omega, self.anchor_W = W[:R].copy(), omega[:R].copy(), anchor[:R].copy()
        self.support, self.birth = support[:R].copy(), birth[:R].copy()
        self.firing_sum = firing_sum[:R].copy()
        (ns.mean_bias, ns.std_bias, ns.mean_var, ns.std_var, ns.min_mean_bias, ns.min_std_bias,
         ns.min_mean_var, ns.min_std_var) = (float(v) for v in packed[:8])
        ns.sample_count, ns.since_reset = int(packed[8]), int(packed[11])
        ns.m2_bias, ns.m2_var = float(packed[9]), float(packed[10])
        self.forgetting = ForgettingState(mu=mu, F=float(F), f=fs.f, rate=fs.rate)
        self.t = int(t)
        stats.grown += int(grown)
        stats.pruned += int(pruned)

    def _step(self, x, x_e, y, signal, pseudo: bool, stats: TrainStats) -> np.ndarray:
        cfg = self.config
        self.t += 1
        self.forgetting = update_forgetting_mean(self.forgetting, x)
        mu_e = np.concatenate(([1.0], self.forgetting.mu))

        raw = np.einsum("j,rjo->ro", x_e, self.W)
        h = firing_strengths(np.abs(signal - raw) / hyperplane_norms(self.W), cfg.gamma)
        w = h / h.sum(axis=0)
        y_hat = (w * raw).sum(axis=0)
        act = h.mean(axis=1)
        winner = int(np.argmax(act))

        contrib = np.einsum("j,rjo->ro", mu_e, self.W)
        bias, var = bias_variance(contrib, y)
        action = ns_step(self.ns, bias, var, cfg.ns_warmup)
        if action is NSAction.GROW:
            self.add_rule(new_rule(self.n_inputs, self.n_classes, cfg, self.t))
            stats.grown += 1
            raw = np.vstack((raw, x_e @ self.W[-1]))
            # a fresh rule joins at full activation
            act = np.append(act, 1.0)
        else:
            if action is NSAction.PRUNE and self.n_rules > cfg.min_rules:
                victim = weakest_rule(self.W, mu_e)
                act = np.delete(act, victim)
                raw = np.delete(raw, victim, axis=0)
                transfer = self.support[victim]
                self.remove_rule(victim)
                winner = int(np.argmax(act))
                self.support[winner] += transfer
                stats.pruned += 1
            self.support[winner] += 1.0

        lam = act / act.sum()
        self.firing_sum += act
        K, omega = fwgrls_gain(self.omega, x_e, lam)
        err = y - raw                                           # (R, O)
        if pseudo:
            ratio = self.firing_sum / np.maximum(self.t - self.birth, 1)
            pull = np.einsum("rjk,rko->rjo", omega, self.W - self.anchor_W)
            W = self.W - cfg.alpha * ratio[:, None, None] * pull
        else:
            W = self.W - cfg.alpha * np.einsum("rjk,rko->rjo", omega, self.W)
        W = W + K[:, :, None] * err[:, None, :]
        self.W, self.omega = W, omega
        if not pseudo:
            self.anchor_W = W.copy()
        return y_hat
