"""Class alignment, soft voting, and ensemble configuration."""

import json

import numpy as np
import pytest

from ensel.classify import ClassDistribution
from ensel.ensemble import (
    ALIGNMENT_POLICIES,
    EnsembleConfig,
    align_classes,
    load_config,
    save_config,
    single_model_config,
    soft_vote,
)
from ensel.errors import AlignmentError, DegenerateDistributionError, InvalidArgument
from ensel.rng import Rng


def dist(**probs):
    labels = tuple(probs)
    return ClassDistribution(labels, np.array([probs[k] for k in labels]))


def random_dist(rng, labels):
    raw = rng.f64_array(len(labels)) + 1e-9
    return ClassDistribution(labels, raw / raw.sum())


class TestAlignClasses:
    def test_identical_label_sets_unchanged(self):
        d1, d2 = dist(a=0.7, b=0.3), dist(a=0.2, b=0.8)
        for policy in ALIGNMENT_POLICIES:
            out = align_classes([d1, d2], policy)
            np.testing.assert_allclose(out[0].probs, [0.7, 0.3])
            np.testing.assert_allclose(out[1].probs, [0.2, 0.8])

    def test_intersection_renormalizes(self):
        d1 = dist(a=0.6, b=0.4)
        d2 = dist(a=0.3, b=0.3, c=0.4)
        out = align_classes([d1, d2], "intersection")
        assert out[0].labels == ("a", "b")
        np.testing.assert_allclose(out[0].probs, [0.6, 0.4])
        np.testing.assert_allclose(out[1].probs, [0.5, 0.5])

    def test_union_zero_fills(self):
        d1 = dist(a=0.6, b=0.4)
        d2 = dist(a=0.3, b=0.3, c=0.4)
        out = align_classes([d1, d2], "union-zero-fill")
        assert out[0].labels == ("a", "b", "c")
        np.testing.assert_allclose(out[0].probs, [0.6, 0.4, 0.0])
        np.testing.assert_allclose(out[1].probs, [0.3, 0.3, 0.4])

    def test_union_preserves_mass_exactly(self):
        rng = Rng(60)
        d1 = random_dist(rng, ("a", "b", "x"))
        d2 = random_dist(rng, ("b", "c"))
        for d in align_classes([d1, d2], "union-zero-fill"):
            assert abs(float(d.probs.sum()) - 1.0) < 1e-12

    def test_empty_intersection_raises(self):
        with pytest.raises(AlignmentError):
            align_classes([dist(a=1.0), dist(b=1.0)], "intersection")

    def test_zero_shared_mass_raises(self):
        d1 = dist(a=1.0, b=0.0)
        d2 = dist(b=0.3, c=0.7)
        with pytest.raises(DegenerateDistributionError):
            align_classes([d1, d2], "intersection")

    def test_unknown_policy_raises(self):
        with pytest.raises(InvalidArgument):
            align_classes([dist(a=1.0)], "majority")

    def test_labels_come_out_sorted(self):
        d = ClassDistribution(("z", "m", "a"), np.array([0.5, 0.25, 0.25]))
        out = align_classes([d], "union-zero-fill")
        assert out[0].labels == ("a", "m", "z")


class TestSoftVote:
    def test_single_model_is_identity(self):
        d = dist(a=0.25, b=0.75)
        fused, label = soft_vote([d])
        np.testing.assert_allclose(fused.probs, d.probs)
        assert label == "b"

    def test_two_model_arithmetic_mean(self):
        fused, label = soft_vote([dist(c1=0.6, c2=0.4), dist(c1=0.2, c2=0.8)])
        np.testing.assert_allclose(fused.probs, [0.4, 0.6])
        assert label == "c2"

    def test_matches_weighted_mean_oracle(self):
        rng = Rng(61)
        labels = ("a", "b", "c", "d")
        for _ in range(200):
            dists = [random_dist(rng, labels) for _ in range(5)]
            weights = [float(w) for w in rng.int_array(5, 0, 9)]
            if sum(weights) == 0:
                weights[0] = 1.0
            fused, label = soft_vote(dists, weights)
            mat = np.stack([d.probs for d in dists])
            expected = np.average(mat, axis=0, weights=weights)
            np.testing.assert_allclose(fused.probs, expected, atol=1e-12, rtol=0)
            best = min(range(4), key=lambda i: (-expected[i], labels[i]))
            assert label == labels[best]

    def test_tie_breaks_to_lexicographically_smallest(self):
        fused, label = soft_vote([dist(zebra=0.5, apple=0.5)])
        assert label == "apple"

    def test_permutation_invariance(self):
        rng = Rng(62)
        labels = ("a", "b", "c")
        dists = [random_dist(rng, labels) for _ in range(4)]
        f1, _ = soft_vote(dists)
        f2, _ = soft_vote(list(reversed(dists)))
        np.testing.assert_allclose(f1.probs, f2.probs, atol=1e-15)

    def test_duplicated_member_equals_integer_weight(self):
        rng = Rng(63)
        labels = ("a", "b", "c")
        d1, d2 = random_dist(rng, labels), random_dist(rng, labels)
        dup, _ = soft_vote([d1, d1, d1, d2])
        weighted, _ = soft_vote([d1, d2], weights=[3.0, 1.0])
        np.testing.assert_allclose(dup.probs, weighted.probs, atol=1e-12, rtol=0)

    def test_unanimous_argmax_is_preserved(self):
        rng = Rng(64)
        labels = ("a", "b", "c", "d")
        for _ in range(100):
            winner = int(rng.below(4))
            dists = []
            for _ in range(5):
                raw = rng.f64_array(4)
                raw[winner] += 1.0  # strict argmax at `winner`
                dists.append(ClassDistribution(labels, raw / raw.sum()))
            _, label = soft_vote(dists)
            assert label == labels[winner]

    def test_unaligned_inputs_raise(self):
        with pytest.raises(AlignmentError):
            soft_vote([dist(a=1.0), dist(b=1.0)])

    def test_weight_validation(self):
        d = dist(a=0.5, b=0.5)
        with pytest.raises(InvalidArgument):
            soft_vote([d, d], weights=[1.0])
        with pytest.raises(InvalidArgument):
            soft_vote([d, d], weights=[1.0, -0.5])
        with pytest.raises(InvalidArgument):
            soft_vote([d, d], weights=[0.0, 0.0])

    def test_fused_is_valid_distribution(self):
        rng = Rng(65)
        labels = ("a", "b")
        fused, _ = soft_vote([random_dist(rng, labels) for _ in range(7)])
        assert abs(float(fused.probs.sum()) - 1.0) <= 1e-9


class TestEnsembleConfig:
    def test_defaults(self):
        cfg = EnsembleConfig(members=("m1",), detector="det")
        assert cfg.policy == "intersection"
        assert cfg.weights is None
        assert cfg.overlay_alpha == 0.4

    def test_rejects_empty_members(self):
        with pytest.raises(InvalidArgument):
            EnsembleConfig(members=(), detector="det")

    def test_rejects_duplicate_members(self):
        with pytest.raises(InvalidArgument):
            EnsembleConfig(members=("m", "m"), detector="det")

    def test_rejects_weight_count_mismatch(self):
        with pytest.raises(InvalidArgument):
            EnsembleConfig(members=("a", "b"), detector="det", weights=(1.0,))

    def test_rejects_bad_knobs(self):
        with pytest.raises(InvalidArgument):
            EnsembleConfig(members=("a",), detector="d", overlay_alpha=1.5)
        with pytest.raises(InvalidArgument):
            EnsembleConfig(members=("a",), detector="d", detection_threshold=0.0)
        with pytest.raises(InvalidArgument):
            EnsembleConfig(members=("a",), detector="d", min_area_px=-1)

    def test_json_round_trip(self, tmp_path):
        cfg = EnsembleConfig(members=("m1", "m2"), detector="det",
                             policy="union-zero-fill", weights=(2.0, 1.0),
                             overlay_alpha=0.25, detection_threshold=0.6,
                             min_area_px=9, name="pair")
        path = tmp_path / "config.json"
        save_config(cfg, str(path))
        again = load_config(str(path))
        assert again == cfg

    def test_from_dict_requires_members_and_detector(self):
        with pytest.raises(InvalidArgument):
            EnsembleConfig.from_dict({"members": ["a"]})
        with pytest.raises(InvalidArgument):
            EnsembleConfig.from_dict(json.loads("{}"))

    def test_single_model_config_strips_to_one_member(self):
        cfg = EnsembleConfig(members=("m1", "m2"), detector="det",
                             weights=(2.0, 1.0), name="pair")
        solo = single_model_config(cfg, "m2")
        assert solo.members == ("m2",)
        assert solo.weights is None
        assert solo.name == "m2"
        assert solo.detector == "det"
        assert solo.detection_threshold == cfg.detection_threshold

    def test_single_model_config_rejects_nonmember(self):
        cfg = EnsembleConfig(members=("m1",), detector="det")
        with pytest.raises(InvalidArgument):
            single_model_config(cfg, "stranger")
