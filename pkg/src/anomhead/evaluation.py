"""Exact metric computation: AUROC, pixel AUROC, F1-optimal thresholds, and
the per-channel standard-deviation diagnostic.

AUROC is the tie-aware Mann-Whitney statistic -- the probability that a
random anomalous score exceeds a random normal score, with half credit for
ties -- computed with one sort and 64-bit tie counters, so it matches the
O(n^2) pairwise definition exactly.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, ShapeError, UndefinedMetricError

__all__ = [
    "LabeledScores",
    "StdProfile",
    "auroc",
    "pixel_auroc",
    "best_f1_threshold",
    "std_profile",
]


@dataclass(frozen=True)
class LabeledScores:
    """Scores with binary labels (0 normal, 1 anomalous), validated."""

    scores: np.ndarray  # float64 (n,)
    labels: np.ndarray  # int8 (n,)

    @classmethod
    def from_arrays(cls, scores, labels) -> "LabeledScores":
        s = np.asarray(scores, dtype=np.float64).ravel()
        l = np.asarray(labels).ravel()
        if s.shape != l.shape:
            raise ShapeError(f"scores {s.shape} and labels {l.shape} differ in length")
        if s.size == 0:
            raise InvalidArgumentError("scores must be non-empty")
        if not np.isin(l, (0, 1)).all():
            raise InvalidArgumentError("labels must be 0 or 1")
        if not np.isfinite(s).all():
            raise InvalidArgumentError("scores contain NaN or Inf")
        return cls(scores=s, labels=l.astype(np.int8))

    @property
    def n_pos(self) -> int:
        return int(np.int64(self.labels.sum()))

    @property
    def n_neg(self) -> int:
        return int(self.labels.size - np.int64(self.labels.sum()))


def _tied_ranks(sorted_values: np.ndarray) -> np.ndarray:
    """Average 1-based ranks for an ascending array, ties sharing their mean rank."""
    n = sorted_values.size
    boundaries = np.flatnonzero(np.diff(sorted_values))
    starts = np.concatenate(([0], boundaries + 1))
    ends = np.concatenate((boundaries + 1, [n]))
    avg = (starts + ends + 1) / 2.0  # mean of ranks start+1 .. end
    return np.repeat(avg, ends - starts)


def auroc(scores, labels) -> float:
    """Area under the ROC curve: P(anomalous > normal) + 0.5 P(equal)."""
    data = scores if isinstance(scores, LabeledScores) else LabeledScores.from_arrays(scores, labels)
    n_pos, n_neg = data.n_pos, data.n_neg
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUROC needs both classes, got {n_pos} anomalous and {n_neg} normal"
        )
    order = np.argsort(data.scores, kind="stable")
    ranks_sorted = _tied_ranks(data.scores[order])
    ranks = np.empty_like(ranks_sorted)
    ranks[order] = ranks_sorted
    rank_sum_pos = ranks[data.labels == 1].sum()
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return float(u / (float(n_pos) * float(n_neg)))


def pixel_auroc(maps, masks) -> float:
    """AUROC over all pixels of the test set, pooled globally.

    ``maps`` are (H, W) score maps; ``masks`` are matching binary arrays
    (nonzero = anomalous pixel).  Invariant to how pixels are partitioned
    into maps.
    """
    maps = list(maps)
    masks = list(masks)
    if len(maps) != len(masks):
        raise ShapeError(f"{len(maps)} maps vs {len(masks)} masks")
    if not maps:
        raise InvalidArgumentError("pixel_auroc needs at least one map")
    scores = []
    labels = []
    for i, (m, g) in enumerate(zip(maps, masks)):
        m = np.asarray(m)
        g = np.asarray(g)
        if m.shape != g.shape:
            raise ShapeError(f"sample {i}: map {m.shape} vs mask {g.shape}")
        scores.append(m.astype(np.float64).ravel())
        labels.append((g != 0).astype(np.int8).ravel())
    return auroc(np.concatenate(scores), np.concatenate(labels))


def best_f1_threshold(scores, labels):
    """Threshold maximizing the anomalous-class F1, scanning midpoints.

    Candidates are the midpoints of consecutive distinct sorted scores plus
    -inf and +inf; a sample is called anomalous when its score exceeds the
    threshold.  Ties in F1 go to the lower threshold.

    Returns:
        (threshold, f1) floats.
    """
    data = scores if isinstance(scores, LabeledScores) else LabeledScores.from_arrays(scores, labels)
    if data.n_pos == 0:
        raise UndefinedMetricError("best_f1_threshold needs at least one anomalous sample")
    n_pos, n_neg = data.n_pos, data.n_neg

    order = np.argsort(data.scores, kind="stable")
    s_sorted = data.scores[order]
    l_sorted = data.labels[order].astype(np.int64)
    boundaries = np.flatnonzero(np.diff(s_sorted))
    ends = np.concatenate((boundaries + 1, [s_sorted.size]))  # one per distinct value
    distinct = s_sorted[ends - 1]
    cum_pos = np.cumsum(l_sorted)[ends - 1]           # positives with score <= value
    cum_neg = ends - cum_pos                          # negatives with score <= value

    # Candidate thresholds in ascending order; a sample is anomalous if score > t.
    thresholds = np.concatenate(([-np.inf], (distinct[:-1] + distinct[1:]) / 2.0, [np.inf]))
    tp = np.concatenate(([n_pos], n_pos - cum_pos[:-1], [0])).astype(np.float64)
    fp = np.concatenate(([n_neg], n_neg - cum_neg[:-1], [0])).astype(np.float64)
    f1 = 2.0 * tp / (tp + fp + n_pos)  # = 2TP / (2TP + FP + FN); 0 when TP == 0
    best = int(np.argmax(f1))          # first max = lowest threshold on ties
    return float(thresholds[best]), float(f1[best])


@dataclass(frozen=True)
class StdProfile:
    """Per-channel population standard deviations and their histogram."""

    stds: np.ndarray        # (C,) float64
    bin_edges: np.ndarray   # (bins+1,) float64
    counts: np.ndarray      # (bins,) int64


def std_profile(features, bins: int = 50) -> StdProfile:
    """Per-channel spread of a feature collection.

    ``features`` may be one (H, W, C) map, an (N, C) matrix, or a list of
    either; all vectors are pooled.  Standard deviation is the population
    (not sample) form; the histogram spans [0, max std].
    """
    if isinstance(features, (list, tuple)):
        parts = [np.asarray(f, dtype=np.float64).reshape(-1, np.asarray(f).shape[-1])
                 for f in features]
        stacked = np.concatenate(parts, axis=0)
    else:
        arr = np.asarray(features, dtype=np.float64)
        if arr.ndim not in (2, 3):
            raise ShapeError(f"features must be (N, C) or (H, W, C), got {arr.shape}")
        stacked = arr.reshape(-1, arr.shape[-1])
    if stacked.shape[0] < 2:
        raise InvalidArgumentError("std_profile needs at least 2 feature vectors")
    if bins < 1:
        raise InvalidArgumentError(f"bins must be >= 1, got {bins}")

    mean = stacked.mean(axis=0)
    stds = np.sqrt(np.square(stacked - mean).mean(axis=0))
    top = float(stds.max())
    hist_range = (0.0, top) if top > 0 else (0.0, 1.0)
    counts, edges = np.histogram(stds, bins=bins, range=hist_range)
    return StdProfile(stds=stds, bin_edges=edges, counts=counts.astype(np.int64))
