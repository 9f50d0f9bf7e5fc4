"""Hyperplane-membership Takagi-Sugeno inference.

Every rule owns one consequent hyperplane per class (a column of ``W``).  A
sample's membership to a rule is derived from its distance to those
hyperplanes, where the "output" coordinate of the sample is a target signal:
the true one-hot label while training, or the previous prediction while
testing (teacher forcing).

All functions here are pure and work on plain numpy arrays.
"""

from __future__ import annotations

import numpy as np

from . import _kernels


class EmptyModelError(ValueError):
    """Raised when inference is requested from a rule base with no rules."""


def extend(x: np.ndarray) -> np.ndarray:
    """Prepend the bias term: ``[1, x]`` (works on a vector or row-wise on a matrix)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return np.concatenate(([1.0], x))
    return np.hstack((np.ones((x.shape[0], 1)), x))


def hyperplane_distance(x_e, W, signal, class_index: int) -> float:
    """Distance from ``(x_e, signal[o])`` to the class-``o`` hyperplane of a rule."""
    x_e = np.asarray(x_e, dtype=float)
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or x_e.shape[0] != W.shape[0]:
        raise ValueError(f"x_e has length {x_e.shape[0]}, rule expects {W.shape[0]}")
    if not 0 <= class_index < W.shape[1]:
        raise IndexError(f"class_index {class_index} out of range [0, {W.shape[1]})")
    col = W[:, class_index]
    return float(abs(signal[class_index] - x_e @ col) / np.sqrt(1.0 + col @ col))


def rule_distances(raw: np.ndarray, signal: np.ndarray, norms: np.ndarray) -> np.ndarray:
    """Vectorised distances for all rules and classes.

    ``raw`` is ``x_e @ W_i`` stacked to shape (R, O); ``norms`` holds
    ``sqrt(1 + sum_j W_i[j, o]**2)`` with the same shape.
    """
    return np.abs(signal - raw) / norms


def hyperplane_norms(W: np.ndarray) -> np.ndarray:
    """``sqrt(1 + ||W[:, o]||^2)`` for a stack of rules, shape (R, u+1, O) -> (R, O)."""
    return np.sqrt(1.0 + np.einsum("rjo,rjo->ro", W, W))


def firing_strengths(distances, gamma: float) -> np.ndarray:
    """``exp(-gamma * d / max(d))`` along the rule axis (axis 0).

    Accepts a vector (one class) or an (R, O) matrix (one column per class).
    When every distance in a column is zero the column fires at 1.
    """
    d = np.asarray(distances, dtype=float)
    if d.shape[0] == 0:
        raise EmptyModelError("cannot compute firing strengths without rules")
    dmax = d.max(axis=0)
    safe = np.where(dmax > 0.0, dmax, 1.0)
    return np.exp(-gamma * d / safe)


def rule_activation(h: np.ndarray) -> np.ndarray:
    """Collapse per-class firing strengths (R, O) into one level per rule."""
    return h.mean(axis=1) if h.ndim == 2 else h


def local_output(x_e, rules_W, h) -> np.ndarray:
    """Weighted-average defuzzification over rules.

    ``rules_W`` is a stack (R, u+1, O) or a sequence of (u+1, O) matrices.
    ``h`` is either one firing level per rule (R,) or per rule and class (R, O).
    """
    W = np.asarray(rules_W, dtype=float)
    if W.ndim == 2:
        W = W[None]
    if W.shape[0] == 0:
        raise EmptyModelError("local_output needs at least one rule")
    raw = np.einsum("j,rjo->ro", np.asarray(x_e, dtype=float), W)
    return defuzzify(raw, np.asarray(h, dtype=float))


def defuzzify(raw: np.ndarray, h: np.ndarray) -> np.ndarray:
    if h.ndim == 1:
        h = h[:, None]
    # normalise first so a single rule reproduces its raw output exactly
    w = h / h.sum(axis=0)
    return (w * raw).sum(axis=0)


def confidence(y_hat) -> float:
    """Top-1 share of the two largest outputs; 0.5 when both are non-positive."""
    y = np.asarray(y_hat, dtype=float)
    if y.shape[0] < 2:
        raise ValueError("confidence needs at least two classes")
    top2 = np.partition(y, -2)[-2:]
    first, second = float(top2[1]), float(top2[0])
    total = first + second
    if total <= 0.0:
        return 0.5
    return first / total


def confidences(outputs: np.ndarray) -> np.ndarray:
    """Row-wise :func:`confidence` for an (N, O) matrix."""
    top2 = np.partition(outputs, -2, axis=-1)[..., -2:]
    first, second = top2[..., 1], top2[..., 0]
    total = first + second
    with np.errstate(divide="ignore", invalid="ignore"):
        conf = np.where(total > 0.0, first / np.where(total > 0.0, total, 1.0), 0.5)
    return conf


def uniform_signal(n_classes: int) -> np.ndarray:
    return np.full(n_classes, 1.0 / n_classes)


def feedback_signal(y_hat: np.ndarray) -> np.ndarray:
    """Previous prediction reused as target signal, clipped into [0, 1]."""
    return np.clip(y_hat, 0.0, 1.0)


def infer_sequence(XE: np.ndarray, W: np.ndarray, gamma: float, signal0=None, compiled: bool = True):
    """Test-mode pass over consecutive samples of one partition.

    The previous output (clipped) is the target signal of the next sample; the
    first sample uses ``signal0`` (uniform by default).  Returns the (N, O)
    outputs and each sample's maximum rule activation.  ``compiled=False``
    runs the plain numpy loop.
    """
    n, n_cls = XE.shape[0], W.shape[2]
    if W.shape[0] == 0:
        raise EmptyModelError("learner has no rules")
    raw_all = np.einsum("tj,rjo->tro", XE, W)
    norms = hyperplane_norms(W)
    out = np.empty((n, n_cls))
    max_fire = np.empty(n)
    signal = uniform_signal(n_cls) if signal0 is None else signal0
    if W.shape[0] == 1:
        # a single rule's output does not depend on the signal
        out[:] = raw_all[:, 0, :]
        prev = np.vstack((signal[None], np.clip(out[:-1], 0.0, 1.0)))
        d = np.abs(prev - out) / norms[0]
        h = np.where(d > 0.0, np.exp(-gamma * 1.0), 1.0)
        max_fire[:] = h.mean(axis=1)
        return out, max_fire
    if compiled:
        return _kernels.infer_loop(np.ascontiguousarray(XE, dtype=float),
                                   np.ascontiguousarray(W, dtype=float), float(gamma),
                                   np.asarray(signal, dtype=float))
    for t in range(n):
        raw = raw_all[t]
        h = firing_strengths(np.abs(signal - raw) / norms, gamma)
        w = h / h.sum(axis=0)
        y = (w * raw).sum(axis=0)
        out[t] = y
        max_fire[t] = h.mean(axis=1).max()
        signal = np.clip(y, 0.0, 1.0)
    return out, max_fire
