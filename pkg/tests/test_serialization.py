import struct
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _golden import GOLDEN_PATH, golden_learner
from evofuse.ensemble import Ensemble
from evofuse.rule_evolution import BaseLearner
from evofuse.serialization import (ModelDecodeError, deserialize_ensemble, deserialize_model,
                                   serialize_ensemble, serialize_model)

HERE = Path(__file__).parent


def assert_same_learner(a: BaseLearner, b: BaseLearner):
    assert (a.n_inputs, a.n_classes, a.n_rules, a.t) == (b.n_inputs, b.n_classes, b.n_rules, b.t)
    for name in ("W", "omega", "anchor_W", "support", "birth", "firing_sum"):
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    np.testing.assert_array_equal(a.forgetting.mu, b.forgetting.mu)
    assert (a.forgetting.F, a.forgetting.f, a.forgetting.rate) == (b.forgetting.F, b.forgetting.f, b.forgetting.rate)
    assert a.ns == b.ns
    assert a.config == b.config


class TestLearnerRoundTrip:
    def test_fresh(self):
        m = BaseLearner(3, 2)
        back = deserialize_model(serialize_model(m))
        assert_same_learner(m, back)

    def test_trained(self, rng):
        m = BaseLearner(4, 3)
        X = rng.random((300, 4))
        m.partial_fit(X, np.eye(3)[rng.integers(0, 3, 300)])
        back = deserialize_model(serialize_model(m))
        assert_same_learner(m, back)
        probe = rng.random((200, 4))
        assert np.array_equal(m.predict_outputs(probe)[0], back.predict_outputs(probe)[0])

    def test_continue_training_identically(self, rng):
        m = BaseLearner(2, 2)
        m.partial_fit(rng.random((50, 2)), np.eye(2)[rng.integers(0, 2, 50)])
        back = deserialize_model(serialize_model(m))
        X, Y = rng.random((80, 2)), np.eye(2)[rng.integers(0, 2, 80)]
        m.partial_fit(X, Y)
        back.partial_fit(X, Y)
        assert_same_learner(m, back)

    def test_header_fields(self):
        blob = serialize_model(BaseLearner(1, 2))
        magic, version, kind, length, _ = struct.unpack_from("<4sHHQI", blob)
        assert magic == b"WSN1" and version == 1 and kind == 1
        assert length == len(blob) - 20


class TestGolden:
    def test_bytes_stable(self):
        golden = (HERE / GOLDEN_PATH).read_bytes()
        assert serialize_model(golden_learner()) == golden

    def test_decodes_losslessly(self, rng):
        back = deserialize_model((HERE / GOLDEN_PATH).read_bytes())
        ref = golden_learner()
        assert back.n_rules == 10 and back.n_inputs == 28 and back.n_classes == 2
        assert_same_learner(ref, back)
        probe = rng.random((100, 28))
        assert np.array_equal(ref.predict_outputs(probe)[0], back.predict_outputs(probe)[0])


class TestDecodeErrors:
    blob = serialize_model(BaseLearner(2, 2))

    def test_bad_magic(self):
        with pytest.raises(ModelDecodeError, match="magic"):
            deserialize_model(b"XXXX" + self.blob[4:])

    def test_version(self):
        bad = self.blob[:4] + struct.pack("<H", 2) + self.blob[6:]
        with pytest.raises(ModelDecodeError, match="version"):
            deserialize_model(bad)

    def test_corrupted_length(self):
        bad = self.blob[:8] + struct.pack("<Q", 10 ** 9) + self.blob[16:]
        with pytest.raises(ModelDecodeError, match="length"):
            deserialize_model(bad)

    def test_truncated(self):
        for cut in (0, 5, 19, 40, len(self.blob) - 1):
            with pytest.raises(ModelDecodeError):
                deserialize_model(self.blob[:cut])

    def test_checksum(self):
        bad = bytearray(self.blob)
        bad[-3] ^= 0xFF
        with pytest.raises(ModelDecodeError, match="checksum"):
            deserialize_model(bytes(bad))

    def test_kind_mismatch(self):
        with pytest.raises(ModelDecodeError, match="kind"):
            deserialize_ensemble(self.blob)

    @settings(max_examples=200)
    @given(st.binary(max_size=300))
    def test_garbage_never_panics(self, data):
        with pytest.raises(ModelDecodeError):
            deserialize_model(data)

    @settings(max_examples=100)
    @given(st.integers(20, 200), st.integers(0, 255))
    def test_payload_flips_detected(self, pos, value):
        bad = bytearray(self.blob)
        pos = min(pos, len(bad) - 1)
        if bad[pos] == value:
            return
        bad[pos] = value
        with pytest.raises(ModelDecodeError):
            deserialize_model(bytes(bad))


def test_refuses_non_finite():
    m = BaseLearner(1, 2)
    m.W[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        serialize_model(m)


class TestEnsemble:
    def test_round_trip(self, rng):
        e = Ensemble(fac=0.25, delta=1e-2)
        for k in range(3):
            m = BaseLearner(2, 3)
            m.partial_fit(rng.random((40, 2)), np.eye(3)[rng.integers(0, 3, 40)])
            e.add(m, 0.3 + 0.2 * k)
        e.observe_inputs(rng.random((5, 2)))
        back = deserialize_ensemble(serialize_ensemble(e))
        assert back.size == 3 and back.fac == 0.25 and back.delta == 1e-2
        np.testing.assert_array_equal(back.betas, e.betas)
        np.testing.assert_array_equal(back.input_min, e.input_min)
        for a, b in zip(e.learners, back.learners):
            assert_same_learner(a, b)

    def test_without_range(self):
        e = Ensemble()
        e.add(BaseLearner(1, 2), 1.0)
        back = deserialize_ensemble(serialize_ensemble(e))
        assert back.input_min is None and back.size == 1

    def test_trailing_bytes(self):
        e = Ensemble()
        e.add(BaseLearner(1, 2), 1.0)
        blob = serialize_ensemble(e)
        payload = blob[20:] + b"\0"
        import zlib
        bad = struct.pack("<4sHHQI", b"WSN1", 1, 2, len(payload), zlib.crc32(payload)) + payload
        with pytest.raises(ModelDecodeError, match="trailing"):
            deserialize_ensemble(bad)
