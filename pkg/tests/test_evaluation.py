"""Metrics against brute-force oracles."""

import numpy as np
import pytest

from anomhead.errors import InvalidArgumentError, ShapeError, UndefinedMetricError
from anomhead.evaluation import (
    LabeledScores,
    auroc,
    best_f1_threshold,
    pixel_auroc,
    std_profile,
)


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def pairwise_auroc(scores, labels):
    """O(n^2) definition: P(pos > neg) + 0.5 P(pos == neg)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum(dtype=np.float64)
    ties = (pos[:, None] == neg[None, :]).sum(dtype=np.float64)
    return float((wins + 0.5 * ties) / (pos.size * neg.size))


def exhaustive_best_f1(scores, labels):
    """Try every midpoint candidate with a literal confusion matrix."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    distinct = np.unique(scores)
    candidates = [-np.inf, np.inf]
    candidates += [(a + b) / 2.0 for a, b in zip(distinct[:-1], distinct[1:])]
    best_t, best_f1 = None, -1.0
    for t in sorted(candidates):
        pred = scores > t
        tp = int(np.sum(pred & (labels == 1)))
        fp = int(np.sum(pred & (labels == 0)))
        fn = int(np.sum(~pred & (labels == 1)))
        f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
        if f1 > best_f1:
            best_t, best_f1 = t, f1
    return best_t, best_f1


def two_pass_std(vectors):
    vectors = np.asarray(vectors, dtype=np.float64)
    mean = vectors.sum(axis=0) / len(vectors)
    return np.sqrt(((vectors - mean) ** 2).sum(axis=0) / len(vectors))


# ---------------------------------------------------------------------------
# auroc
# ---------------------------------------------------------------------------


def test_perfect_separation_is_one():
    assert auroc([2.0, 3.0, 0.0, 1.0], [1, 1, 0, 0]) == 1.0


def test_all_ties_is_half():
    assert auroc([1.0] * 6, [1, 1, 1, 0, 0, 0]) == 0.5


def test_matches_pairwise_oracle_exactly_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(2, 201))
        labels = rng.integers(0, 2, size=n)
        if labels.sum() in (0, n):
            labels[0] = 1 - labels[0]
        # Heavy ties: quantized scores.
        scores = np.round(rng.normal(size=n) * 2) / 2
        assert auroc(scores, labels) == pairwise_auroc(scores, labels)


def test_invariant_under_strictly_increasing_transform():
    rng = np.random.default_rng(1)
    scores = rng.normal(size=50)
    labels = rng.integers(0, 2, size=50)
    labels[0], labels[1] = 0, 1
    base = auroc(scores, labels)
    assert auroc(np.exp(scores), labels) == base
    assert auroc(3 * scores + 7, labels) == base


def test_negated_scores_complement_without_ties():
    rng = np.random.default_rng(2)
    scores = rng.permutation(100).astype(float)  # all distinct
    labels = rng.integers(0, 2, size=100)
    labels[0], labels[1] = 0, 1
    assert auroc(scores, labels) + auroc(-scores, labels) == 1.0


def test_single_class_raises():
    with pytest.raises(UndefinedMetricError):
        auroc([1.0, 2.0], [1, 1])
    with pytest.raises(UndefinedMetricError):
        auroc([1.0, 2.0], [0, 0])


def test_labeled_scores_validation():
    with pytest.raises(ShapeError):
        LabeledScores.from_arrays([1.0, 2.0], [0])
    with pytest.raises(InvalidArgumentError):
        LabeledScores.from_arrays([1.0], [2])
    data = LabeledScores.from_arrays([1.0, 2.0, 3.0], [0, 1, 1])
    assert data.n_pos == 2 and data.n_neg == 1


# ---------------------------------------------------------------------------
# pixel_auroc
# ---------------------------------------------------------------------------


def test_mask_of_top_half_gives_one():
    rng = np.random.default_rng(3)
    smap = rng.permutation(64).astype(np.float32).reshape(8, 8)
    mask = smap >= np.median(smap)
    assert pixel_auroc([smap], [mask]) == 1.0


def test_all_zero_masks_raise():
    smap = np.ones((4, 4), dtype=np.float32)
    with pytest.raises(UndefinedMetricError):
        pixel_auroc([smap], [np.zeros((4, 4), dtype=bool)])


def test_1x1_maps_reduce_to_image_auroc():
    rng = np.random.default_rng(4)
    scores = rng.normal(size=30)
    labels = rng.integers(0, 2, size=30)
    labels[0], labels[1] = 0, 1
    maps = [np.full((1, 1), s, dtype=np.float32) for s in scores]
    masks = [np.full((1, 1), l, dtype=np.uint8) for l in labels]
    assert pixel_auroc(maps, masks) == auroc(np.array([float(np.float32(s)) for s in scores]), labels)


def test_partition_invariance():
    rng = np.random.default_rng(5)
    smap = rng.normal(size=(6, 8)).astype(np.float32)
    mask = rng.integers(0, 2, size=(6, 8)).astype(bool)
    mask[0, 0], mask[0, 1] = True, False
    whole = pixel_auroc([smap], [mask])
    split = pixel_auroc([smap[:3], smap[3:]], [mask[:3], mask[3:]])
    assert whole == split
    columns = pixel_auroc([smap[:, i:i + 1] for i in range(8)],
                          [mask[:, i:i + 1] for i in range(8)])
    assert whole == columns


def test_dim_mismatch_raises():
    with pytest.raises(ShapeError):
        pixel_auroc([np.ones((2, 2), dtype=np.float32)], [np.ones((2, 3), dtype=bool)])


# ---------------------------------------------------------------------------
# best_f1_threshold
# ---------------------------------------------------------------------------


def test_perfectly_separated_scores():
    t, f1 = best_f1_threshold([0.0, 1.0, 10.0, 11.0], [0, 0, 1, 1])
    assert f1 == 1.0
    assert 1.0 < t < 10.0


def test_all_equal_scores_closed_form():
    # 3 positives of 6 samples: classify-all-positive, F1 = 2p/(p+1), p = 1/2.
    t, f1 = best_f1_threshold([2.0] * 6, [1, 1, 1, 0, 0, 0])
    assert t == -np.inf
    assert abs(f1 - (2 * 0.5 / 1.5)) < 1e-12


def test_matches_exhaustive_oracle():
    rng = np.random.default_rng(6)
    for _ in range(100):
        n = int(rng.integers(2, 101))
        labels = rng.integers(0, 2, size=n)
        labels[0] = 1
        scores = np.round(rng.normal(size=n) * 4) / 4
        got_t, got_f1 = best_f1_threshold(scores, labels)
        want_t, want_f1 = exhaustive_best_f1(scores, labels)
        assert abs(got_f1 - want_f1) < 1e-12
        assert got_t == want_t


def test_returned_f1_dominates_every_candidate():
    rng = np.random.default_rng(7)
    scores = np.round(rng.normal(size=40), 1)
    labels = rng.integers(0, 2, size=40)
    labels[0] = 1
    _, best = best_f1_threshold(scores, labels)
    distinct = np.unique(scores)
    for t in (distinct[:-1] + distinct[1:]) / 2:
        pred = scores > t
        tp = int(np.sum(pred & (labels == 1)))
        fp = int(np.sum(pred & (labels == 0)))
        fn = int(np.sum(~pred & (labels == 1)))
        f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
        assert best >= f1 - 1e-12


def test_no_positives_raises():
    with pytest.raises(UndefinedMetricError):
        best_f1_threshold([1.0, 2.0], [0, 0])


# ---------------------------------------------------------------------------
# std_profile
# ---------------------------------------------------------------------------


def test_constant_features_have_zero_std():
    profile = std_profile(np.full((4, 4, 3), 2.0, dtype=np.float32))
    assert np.array_equal(profile.stds, np.zeros(3))
    assert profile.counts.sum() == 3


def test_two_point_channel_population_std():
    feats = np.array([[0.0], [2.0]], dtype=np.float32)
    profile = std_profile(feats)
    assert profile.stds[0] == 1.0


def test_matches_two_pass_reference():
    rng = np.random.default_rng(8)
    feats = rng.normal(size=(50, 7)).astype(np.float32)
    profile = std_profile(feats)
    assert np.abs(profile.stds - two_pass_std(feats)).max() < 1e-6


def test_accepts_maps_and_lists():
    rng = np.random.default_rng(9)
    fmap = rng.normal(size=(4, 5, 3)).astype(np.float32)
    a = std_profile(fmap)
    b = std_profile(fmap.reshape(-1, 3))
    assert np.array_equal(a.stds, b.stds)
    c = std_profile([fmap, fmap])
    assert c.stds.shape == (3,)


def test_fewer_than_two_vectors_raises():
    with pytest.raises(InvalidArgumentError):
        std_profile(np.ones((1, 1, 3), dtype=np.float32))


def test_histogram_counts_sum_to_channels():
    rng = np.random.default_rng(10)
    feats = rng.normal(size=(30, 12)).astype(np.float32)
    profile = std_profile(feats, bins=5)
    assert profile.counts.sum() == 12
    assert len(profile.bin_edges) == 6
