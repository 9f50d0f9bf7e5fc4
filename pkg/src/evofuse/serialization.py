"""Versioned little-endian binary format for learners and ensembles.

Layout of every file::

    magic "WSN1" | uint16 version | uint16 kind | uint64 payload length | uint32 crc32 | payload

``kind`` is 1 for a single learner and 2 for an ensemble.  A learner payload
is a fixed header of integers and floats followed by the stacked rule arrays
as float64.  An ensemble payload is its weights followed by length-prefixed
learner records.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .ensemble import Ensemble
from .rule_evolution import BaseLearner, ForgettingState, LearnerConfig, NSState

MAGIC = b"WSN1"
VERSION = 1
KIND_LEARNER = 1
KIND_ENSEMBLE = 2

_HEADER = struct.Struct("<4sHHQI")
_LEARNER_INTS = struct.Struct("<qqqqqqqqq")   # n_in, n_cls, R, t, min_rules, warmup, bins, ns count, since_reset
_LEARNER_FLOATS = struct.Struct("<" + "d" * 19)
_F8 = np.dtype("<f8")
_I8 = np.dtype("<i8")


class ModelDecodeError(ValueError):
    """Raised for truncated, corrupted or incompatible model bytes."""

    def __init__(self, reason: str, offset: int | None = None):
        self.reason = reason
        self.offset = offset
        super().__init__(reason if offset is None else f"{reason} (at byte {offset})")


def _wrap(kind: int, payload: bytes) -> bytes:
    return _HEADER.pack(MAGIC, VERSION, kind, len(payload), zlib.crc32(payload)) + payload


def _unwrap(data: bytes, kind: int) -> bytes:
    if len(data) < _HEADER.size:
        raise ModelDecodeError("truncated header", len(data))
    magic, version, got_kind, length, crc = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ModelDecodeError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise ModelDecodeError(f"unsupported version {version}, expected {VERSION}", 4)
    if got_kind != kind:
        raise ModelDecodeError(f"record kind {got_kind}, expected {kind}", 6)
    payload = data[_HEADER.size:]
    if len(payload) != length:
        raise ModelDecodeError(f"payload length {len(payload)} does not match header {length}", 8)
    if zlib.crc32(payload) != crc:
        raise ModelDecodeError("checksum mismatch", 16)
    return payload


def _learner_payload(m: BaseLearner) -> bytes:
    c, ns, fg = m.config, m.ns, m.forgetting
    ints = _LEARNER_INTS.pack(m.n_inputs, m.n_classes, m.n_rules, m.t, c.min_rules, c.ns_warmup,
                              c.hist_bins, ns.sample_count, ns.since_reset)
    floats = _LEARNER_FLOATS.pack(
        c.gamma, c.k3, c.omega_init, c.alpha,
        ns.mean_bias, ns.std_bias, ns.mean_var, ns.std_var,
        ns.min_mean_bias, ns.min_std_bias, ns.min_mean_var, ns.min_std_var,
        ns.m2_bias, ns.m2_var,
        fg.F, fg.f, fg.rate, 0.0, 0.0)
    arrays = [fg.mu, m.support, m.firing_sum, m.W, m.omega, m.anchor_W]
    body = b"".join(np.ascontiguousarray(a, dtype=_F8).tobytes() for a in arrays)
    return ints + floats + np.ascontiguousarray(m.birth, dtype=_I8).tobytes() + body


class _Reader:
    def __init__(self, buf: bytes):
        self.buf, self.pos = buf, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ModelDecodeError("truncated payload", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, st: struct.Struct):
        return st.unpack(self.take(st.size))

    def array(self, dtype, shape):
        count = int(np.prod(shape, dtype=np.int64))
        raw = self.take(count * dtype.itemsize)
        return np.frombuffer(raw, dtype=dtype).astype(dtype.newbyteorder("="), copy=True).reshape(shape)


def _read_learner(r: _Reader) -> BaseLearner:
    n_in, n_cls, R, t, min_rules, warmup, bins, count, since = r.unpack(_LEARNER_INTS)
    if n_in < 0 or n_cls < 0 or R < 0 or n_in > 1 << 20 or n_cls > 1 << 20 or R > 1 << 20:
        raise ModelDecodeError("implausible dimensions", r.pos)
    f = r.unpack(_LEARNER_FLOATS)
    try:
        cfg = LearnerConfig(gamma=f[0], k3=f[1], omega_init=f[2], alpha=f[3],
                            min_rules=int(min_rules), ns_warmup=int(warmup), hist_bins=int(bins))
    except ValueError as exc:
        raise ModelDecodeError(f"invalid learner config: {exc}", r.pos) from exc
    m = BaseLearner(n_in, n_cls, cfg, with_rule=False)
    m.t = int(t)
    m.ns = NSState(mean_bias=f[4], std_bias=f[5], mean_var=f[6], std_var=f[7],
                   min_mean_bias=f[8], min_std_bias=f[9], min_mean_var=f[10], min_std_var=f[11],
                   sample_count=int(count), m2_bias=f[12], m2_var=f[13], since_reset=int(since))
    n1 = n_in + 1
    m.birth = r.array(_I8, (R,))
    mu = r.array(_F8, (n_in,))
    m.forgetting = ForgettingState(mu=mu, F=f[14], f=f[15], rate=f[16])
    m.support = r.array(_F8, (R,))
    m.firing_sum = r.array(_F8, (R,))
    m.W = r.array(_F8, (R, n1, n_cls))
    m.omega = r.array(_F8, (R, n1, n1))
    m.anchor_W = r.array(_F8, (R, n1, n_cls))
    return m


def serialize_model(learner: BaseLearner) -> bytes:
    if not learner.is_finite():
        raise ValueError("refusing to serialise a learner with non-finite state")
    return _wrap(KIND_LEARNER, _learner_payload(learner))


def deserialize_model(data: bytes) -> BaseLearner:
    r = _Reader(_unwrap(bytes(data), KIND_LEARNER))
    m = _read_learner(r)
    if r.pos != len(r.buf):
        raise ModelDecodeError("trailing bytes after learner record", r.pos)
    return m


def serialize_ensemble(ens: Ensemble) -> bytes:
    parts = [struct.pack("<qdd", ens.size, ens.fac, ens.delta),
             np.ascontiguousarray(ens.betas, dtype=_F8).tobytes()]
    has_range = ens.input_min is not None
    parts.append(struct.pack("<q", len(ens.input_min) if has_range else -1))
    if has_range:
        parts.append(np.ascontiguousarray(ens.input_min, dtype=_F8).tobytes())
        parts.append(np.ascontiguousarray(ens.input_max, dtype=_F8).tobytes())
    for m in ens.learners:
        blob = _learner_payload(m)
        parts.append(struct.pack("<Q", len(blob)))
        parts.append(blob)
    return _wrap(KIND_ENSEMBLE, b"".join(parts))


def deserialize_ensemble(data: bytes) -> Ensemble:
    r = _Reader(_unwrap(bytes(data), KIND_ENSEMBLE))
    size, fac, delta = r.unpack(struct.Struct("<qdd"))
    if not 0 <= size <= 1 << 20:
        raise ModelDecodeError("implausible ensemble size", r.pos)
    betas = r.array(_F8, (size,))
    (n_range,) = r.unpack(struct.Struct("<q"))
    lo = hi = None
    if n_range >= 0:
        lo, hi = r.array(_F8, (n_range,)), r.array(_F8, (n_range,))
    learners = []
    for _ in range(size):
        (length,) = r.unpack(struct.Struct("<Q"))
        sub = _Reader(r.take(length))
        learners.append(_read_learner(sub))
        if sub.pos != length:
            raise ModelDecodeError("learner record length mismatch", r.pos)
    if r.pos != len(r.buf):
        raise ModelDecodeError("trailing bytes after ensemble record", r.pos)
    return Ensemble(learners=learners, betas=betas, input_min=lo, input_max=hi, fac=fac, delta=delta)
