import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from evofuse.ensemble import (BETA_FLOOR, DriftVerdict, Ensemble, aggregate_partition_votes,
                              compatibility_and_vote_update, detect_drift, ensemble_output,
                              hoeffding_epsilon, integrate_model, prune_learners, vote_update)
from evofuse.rule_evolution import BaseLearner

# sqrt(0.5 ln 1000), 30-digit mpmath
HOEFFDING_EXAMPLE = 1.85846109442491922348
PRUNE_STD = 0.42426406871192851464


def ens_with(betas):
    e = Ensemble()
    for b in betas:
        e.add(BaseLearner(2, 2), b)
    return e


class TestVotes:
    def test_reward_clamped(self):
        assert vote_update(0.9, 1.0, 0.3) == 1.0

    def test_penalty(self):
        assert vote_update(0.9, 0.5, 0.3) == pytest.approx(0.27)

    def test_threshold_inclusive(self):
        assert vote_update(0.5, 0.6065, 0.3) == pytest.approx(0.65)

    def test_in_place_update(self):
        e = ens_with([0.9, 0.9])
        compatibility_and_vote_update(1, 0.1, e)
        assert e.betas.tolist() == pytest.approx([0.9, 0.27])

    @given(st.floats(BETA_FLOOR, 1.0), st.lists(st.floats(0.0, 1.0), max_size=200), st.floats(0.01, 0.99))
    def test_beta_stays_in_unit_interval(self, beta, fires, fac):
        for f in fires:
            new = vote_update(beta, f, fac)
            assert 0.0 < new <= 1.0
            if f >= 0.6065:
                assert new >= beta
            elif beta > BETA_FLOOR:
                assert new < beta
            beta = new

    def test_aggregate(self):
        np.testing.assert_array_equal(aggregate_partition_votes([[0.4, 0.7]]), [0.4, 0.7])
        assert aggregate_partition_votes([[0.2], [0.4]])[0] == pytest.approx(0.3)
        assert aggregate_partition_votes([[0.5], [0.5], [0.5]])[0] == 0.5


class TestOutput:
    def test_single(self):
        assert ensemble_output([[0.1, 0.7, 0.2]], [0.4])[1] == 1

    def test_zero_weight_ignored(self):
        assert ensemble_output([[0.9, 0.1], [0.0, 1.0]], [1.0, 0.0])[1] == 0

    def test_tie(self):
        scores, cls = ensemble_output([[0.8, 0.2], [0.2, 0.8]], [0.5, 0.5])
        np.testing.assert_allclose(scores, [0.5, 0.5])
        assert cls == 0

    @given(arrays(float, (3, 4), elements=st.floats(-2, 2)), arrays(float, 3, elements=st.floats(0.01, 1)),
           st.floats(0.01, 100))
    def test_scale_invariance(self, outs, betas, c):
        s, k = ensemble_output(outs, betas)
        top2 = np.sort(s)[-2:]
        if top2[1] - top2[0] > 1e-9 * (1 + np.abs(s).max()):
            assert ensemble_output(outs, betas * c)[1] == k


class TestHoeffding:
    def test_zero_range(self):
        assert hoeffding_epsilon(100, 0.5, 200, 1e-3, 0.4, 0.4) == 0.0

    def test_example(self):
        assert hoeffding_epsilon(100, 0.5, 200, 1e-3, 0.0, 1.0) == pytest.approx(HOEFFDING_EXAMPLE, abs=1e-14)

    def test_delta_one(self):
        assert hoeffding_epsilon(100, 0.5, 200, 1.0 - 1e-15, 0.0, 1.0) < 1e-6


class TestDetector:
    def test_constant(self):
        v = detect_drift(np.full(100, 0.4), 1e-3, 0.0, 1.0)
        assert v.status == "stable" and v.statistic_gap == pytest.approx(0.0, abs=1e-12)

    def test_big_jump(self):
        stats = np.concatenate((np.zeros(500), np.full(500, 10.0)))
        v = detect_drift(stats, 1e-3, 0.0, 1.0)
        assert v.is_drift and v.cut_fraction == 0.5
        assert v.statistic_gap >= v.epsilon

    def test_downward_jump_one_sided(self):
        stats = np.concatenate((np.full(500, 0.8), np.full(500, 0.2)))
        assert detect_drift(stats, 1e-3, 0.0, 1.0, two_sided=False).is_drift

    def test_switching_gate_blocks(self):
        # prefix well below the whole window: the switching condition fails for every cut
        stats = np.concatenate((np.full(500, 0.2), np.full(500, 0.8)))
        v = detect_drift(stats, 1e-3, 0.0, 1.0, two_sided=False)
        assert v.status == "stable" and v.cut_fraction is None
        # the mirrored statistics catch the same shift
        assert detect_drift(stats, 1e-3, 0.0, 1.0).is_drift

    def test_too_short(self):
        with pytest.raises(ValueError):
            detect_drift(np.zeros(7), 1e-3, 0.0, 1.0)

    def test_verdict_consistency(self, rng):
        for _ in range(20):
            v = detect_drift(rng.random(64), 1e-3, 0.0, 1.0)
            if v.is_drift:
                assert v.cut_fraction in (0.25, 0.5, 0.75)


class TestPruning:
    def test_example(self):
        e = ens_with([1.0, 1.0, 0.1])
        assert prune_learners(e) == [2]
        assert e.size == 2
        b = np.array([1.0, 1.0, 0.1])
        assert b.std() == pytest.approx(PRUNE_STD, abs=1e-12)

    def test_all_equal_keeps_first(self):
        e = ens_with([0.5, 0.5, 0.5])
        first = e.learners[0]
        assert prune_learners(e) == [1, 2]
        assert e.learners == [first]

    def test_single(self):
        e = ens_with([0.2])
        assert prune_learners(e) == [] and e.size == 1

    @given(st.lists(st.floats(BETA_FLOOR, 1.0), min_size=1, max_size=8))
    def test_never_empties(self, betas):
        e = ens_with(betas)
        prune_learners(e)
        assert e.size >= 1 and len(e.betas) == e.size


class TestIntegrate:
    def test_drift_appends(self):
        e = ens_with([0.7, 0.4])
        new = BaseLearner(2, 2)
        integrate_model(e, new, DriftVerdict("drift", 0.5, 1.0, 0.1))
        assert e.size == 3 and e.betas[-1] == 1.0 and e.learners[-1] is new

    def test_stable_replaces_winner(self):
        e = ens_with([0.4, 0.7])
        new = BaseLearner(2, 2)
        integrate_model(e, new, DriftVerdict())
        assert e.size == 2 and e.learners[1] is new and e.betas[1] == 0.7

    def test_drift_then_prune_keeps_size(self):
        e = ens_with([1.0, 1e-6])
        integrate_model(e, BaseLearner(2, 2), DriftVerdict("drift", 0.5, 1.0, 0.1))
        prune_learners(e)
        assert e.size == 2


def test_statistic_range():
    e = Ensemble()
    assert e.statistic_range() == (0.0, 1.0)
    e.observe_inputs(np.array([[0.2, 0.4], [0.6, 0.8]]))
    e.observe_inputs(np.array([[0.0, 0.5]]))
    a, b = e.statistic_range()
    assert a == pytest.approx(0.2) and b == pytest.approx(0.7)
