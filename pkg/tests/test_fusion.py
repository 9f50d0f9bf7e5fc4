import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from evofuse.fusion import (FusionConfig, ScoredRule, eliminate_minor_rules, extract_rules, fuse,
                            merge_models, online_model_select, probe_score, rank_rules, sim_angle,
                            sim_distance, similarity)
from evofuse.fuzzy_core import extend, local_output
from evofuse.rule_evolution import BaseLearner, Rule


def rule(W, support=1.0):
    W = np.asarray(W, dtype=float)
    return Rule(W, np.eye(W.shape[0]), W.copy(), float(support), 0, 0.0)


def scored(rules, accs=None):
    accs = accs or [0.5] * len(rules)
    return [ScoredRule(r, a, 0, i) for i, (r, a) in enumerate(zip(rules, accs))]


class TestSimilarity:
    def test_identical_distance(self):
        W = np.array([[0.3], [0.7]])
        assert sim_distance(W, W, 0) == 0.0

    def test_negated_is_sentinel(self):
        W = np.array([[0.3], [0.7]])
        assert sim_distance(W, -W, 0) == math.inf

    def test_both_zero(self):
        assert sim_distance(np.zeros((2, 1)), np.zeros((2, 1)), 0) == 0.0

    def test_unit_example(self):
        assert sim_distance(np.array([[1.0], [0.0]]), np.array([[0.0], [1.0]]), 0) == pytest.approx(1.0)

    def test_identical_angle_is_one(self):
        W = np.array([[0.1], [0.4], [-0.3]])
        assert sim_angle(W, W, 0) == pytest.approx(1.0)

    def test_orthogonal_normals(self):
        # [a1, -1] . [-b1, 1] = -a1 b1 - 1 = 0 for a1 = 1, b1 = -1
        assert sim_angle(np.array([[0.0], [1.0]]), np.array([[0.0], [-1.0]]), 0) == pytest.approx(0.5)

    def test_known_angle(self):
        # normals [1, -1] and [0, 1]: 135 degrees between them
        assert sim_angle(np.array([[0.0], [1.0]]), np.array([[0.0], [0.0]]), 0) == pytest.approx(0.75)

    def test_gate_example(self):
        W = np.array([[0.2, 0.1], [0.5, -0.4]])
        d, g = similarity(W, W)
        cfg = FusionConfig()
        assert d == 0.0 and g == pytest.approx(1.0)
        assert d <= cfg.k4 and g >= cfg.k5

    @given(arrays(float, (3, 2), elements=st.floats(-3, 3)), arrays(float, (3, 2), elements=st.floats(-3, 3)))
    def test_ranges(self, a, b):
        for o in range(2):
            assert 0.0 <= sim_angle(a, b, o) <= 1.0
            assert sim_distance(a, b, o) >= 0.0


class TestElimination:
    def test_example(self):
        kept = eliminate_minor_rules(scored([rule([[1.0]], 98), rule([[2.0]], 1), rule([[3.0]], 1)]))
        assert [s.rule.support for s in kept] == [98]

    def test_single_kept(self):
        one = scored([rule([[1.0]], 0.001)])
        assert eliminate_minor_rules(one) == one

    def test_equal_all_kept(self):
        rs = scored([rule([[float(i)]], 5) for i in range(4)])
        assert len(eliminate_minor_rules(rs)) == 4

    def test_survivor_guard(self):
        rs = scored([rule([[1.0]], 1), rule([[2.0]], 3)])
        assert len(eliminate_minor_rules(rs, support_floor=0.9)) == 1
        assert eliminate_minor_rules(rs, support_floor=0.9)[0].rule.support == 3


class TestMerge:
    def test_duplicate_merged_unchanged(self):
        W = np.array([[0.2, 0.8], [0.4, -0.1]])
        fused = merge_models(scored([rule(W, 3), rule(W, 2)]), 1, FusionConfig())
        assert len(fused) == 1
        np.testing.assert_array_equal(fused[0].W, W)
        assert fused[0].support == 5

    def test_sentinel_retained(self):
        W = np.array([[0.2], [0.4]])
        fused = merge_models(scored([rule(W), rule(-W)]), 1, FusionConfig())
        assert len(fused) == 2

    def test_tie_break_exact(self):
        # dominants share the same distance to the zero-bias candidate by symmetry of the norm
        dom1 = np.array([[0.0], [1.0]])
        dom2 = np.array([[0.0], [1.0]])
        cand = np.array([[0.0], [1.05]])
        merges = []
        merge_models(scored([rule(dom1), rule(dom2), rule(cand)]), 2, FusionConfig(), merges)
        assert merges == [(0, 2, pytest.approx(similarity(dom1, cand)[0]))]

    def test_support_weighted_average(self):
        a = np.array([[1.0], [1.0]])
        b = np.array([[1.0], [1.3]])
        fused = merge_models(scored([rule(a, 3), rule(b, 1)]), 1, FusionConfig())
        np.testing.assert_allclose(fused[0].W, (3 * a + b) / 4)

    def test_z_clamped(self):
        rs = scored([rule([[1.0]]), rule([[5.0]])])
        assert len(merge_models(rs, 10, FusionConfig())) == 2

    @settings(max_examples=60)
    @given(st.lists(arrays(float, (3, 2), elements=st.floats(-1, 1)), min_size=2, max_size=8),
           st.integers(1, 4))
    def test_support_conserved_and_gate_sound(self, Ws, Z):
        rs = rank_rules(scored([rule(W, i + 1) for i, W in enumerate(Ws)]))
        total = sum(s.rule.support for s in rs)
        originals = {s.order: s.rule.W.copy() for s in rs}
        merges = []
        fused = merge_models(rs, Z, FusionConfig(), merges)
        assert sum(r.support for r in fused) == pytest.approx(total)
        assert len(fused) <= len(rs)
        for _, cand, d in merges:
            assert d <= FusionConfig().k4
        # inputs are not mutated
        for s in rs:
            np.testing.assert_array_equal(s.rule.W, originals[s.order])


class TestSelection:
    def test_argmin(self, monkeypatch):
        import evofuse.fusion as fmod
        scores = {3: 0.1, 5: 0.05, 8: 0.2, 10: 0.3}
        monkeypatch.setattr(fmod, "probe_score", lambda m, X, y: scores[m])
        z, got = online_model_select({z: z for z in scores}, np.zeros((1, 1)), np.array([0]))
        assert z == 5 and got == [0.1, 0.05, 0.2, 0.3]

    def test_ties_and_sentinel(self, monkeypatch):
        import evofuse.fusion as fmod
        scores = {3: math.inf, 5: 0.2, 8: 0.2, 10: 0.4}
        monkeypatch.setattr(fmod, "probe_score", lambda m, X, y: scores[m])
        assert online_model_select({z: z for z in scores}, np.zeros((1, 1)), np.array([0]))[0] == 5

    def test_empty_probe(self):
        assert online_model_select({8: None, 3: None}, None, [])[0] == 3

    def test_zero_accuracy_is_inf(self):
        m = BaseLearner(1, 2, with_rule=False)
        m.add_rule(rule([[1.0, 0.0], [0.0, 0.0]]))
        assert probe_score(m, np.array([[0.5]]), np.array([1])) == math.inf

    def test_score_finite_when_correct(self):
        m = BaseLearner(1, 2, with_rule=False)
        m.add_rule(rule([[1.0, 0.0], [0.0, 0.0]]))
        m.add_rule(rule([[0.9, 0.1], [0.0, 0.2]]))
        s = probe_score(m, np.array([[0.5], [0.2]]), np.array([0, 0]))
        assert np.isfinite(s) and s >= 0


class TestFuse:
    def _trained(self, rng):
        m = BaseLearner(2, 2)
        X = rng.random((400, 2))
        m.partial_fit(X, np.eye(2)[(X[:, 0] > 0.5).astype(int)])
        return m, X

    def test_identical_copies(self, rng):
        m, X = self._trained(rng)
        copies = [m.clone() for _ in range(6)]
        accs = [m.rule_accuracies(X, (X[:, 0] > 0.5).astype(int))] * 6
        fused, report = fuse(copies, accs, X[:6], (X[:6, 0] > 0.5).astype(int))
        assert fused.n_rules == m.n_rules
        probe = rng.random((1000, 2))
        assert np.array_equal(fused.predict_outputs(probe)[0], m.predict_outputs(probe)[0])
        np.testing.assert_array_equal(fused.support, m.support * 6)

    def test_fused_not_larger(self, rng):
        learners, accs = [], []
        for p in range(4):
            m, X = self._trained(rng)
            learners.append(m)
            accs.append(m.rule_accuracies(X, (X[:, 0] > 0.5).astype(int)))
        fused, report = fuse(learners, accs, X[:4], (X[:4, 0] > 0.5).astype(int))
        assert report.n_fused <= report.n_extracted
        assert report.chosen_z in FusionConfig().z_candidates
        assert fused.t == max(m.t for m in learners)

    def test_deterministic(self, rng):
        m, X = self._trained(rng)
        other, _ = self._trained(rng)
        accs = [m.rule_accuracies(X, np.zeros(len(X), int)), other.rule_accuracies(X, np.zeros(len(X), int))]
        a, _ = fuse([m, other], accs, X[:2], np.array([0, 1]))
        b, _ = fuse([m, other], accs, X[:2], np.array([0, 1]))
        np.testing.assert_array_equal(a.W, b.W)

    def test_duplicate_rules_preserve_local_output(self, rng):
        W = rng.normal(size=(3, 2))
        learners = []
        for _ in range(4):
            m = BaseLearner(2, 2, with_rule=False)
            m.add_rule(rule(W))
            learners.append(m)
        fused, _ = fuse(learners, [np.array([0.5])] * 4, None, [])
        for x in rng.random((50, 2)):
            x_e = extend(x)
            expected = local_output(x_e, [W], [1.0])
            assert np.array_equal(local_output(x_e, fused.W, np.ones(fused.n_rules)), expected)


def test_extract_absorbs_duplicates():
    a, b = BaseLearner(1, 2), BaseLearner(1, 2)
    out = extract_rules([a, b], [np.array([0.4]), np.array([0.6])])
    assert len(out) == 1
    assert out[0].rule.support == 2 and out[0].train_accuracy == 0.6


def test_config_validation():
    with pytest.raises(ValueError):
        FusionConfig(k4=1.5)
    with pytest.raises(ValueError):
        FusionConfig(z_candidates=())
    assert FusionConfig(z_candidates=(8, 3)).z_candidates == (3, 8)
