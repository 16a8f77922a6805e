"""The deployed single-stream path: features -> scores -> anomaly map.

The per-location anomaly score is the negated discriminator output.  The raw
score map is resampled to the requested output resolution and Gaussian
smoothed; the scalar image score is the maximum of the *raw* map, taken before
any post-processing (a flag flips that for comparison runs).
"""

import time
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, SampleFailureError, StateError
from .model import HeadParams, adaptor_forward, discriminator_forward
from .pipeline import PipelineConfig, extract_local_features
from .rng import STREAM_BENCH, seeded_rng
from .tensors import as_feature_map, as_score_map, gaussian_filter, resize_bilinear

__all__ = ["AnomalyResult", "score_features", "build_result", "infer_batch", "benchmark"]

DEFAULT_SMOOTHING_SIGMA = 4.0


@dataclass
class AnomalyResult:
    """Smoothed anomaly map at output resolution, plus the scalar image score."""

    map: np.ndarray        # (out_h, out_w) float32
    image_score: float
    raw_map: np.ndarray    # (H0, W0) float32, pre-interpolation


def score_features(head: HeadParams, fmap, already_adapted: bool = False) -> np.ndarray:
    """Per-location anomaly scores for one feature map: s = -D(q).

    Requires a finalized head (eval-mode batch norm).  ``already_adapted``
    skips the adaptor for callers holding adapted features.
    """
    if not head.finalized:
        raise StateError("head is not finalized; train or load a checkpoint first")
    fmap = as_feature_map(fmap)
    h, w, c = fmap.shape
    flat = fmap.reshape(-1, c)
    if already_adapted:
        adapted = flat
    else:
        adapted, _ = adaptor_forward(head.adaptor, flat)
    scores, _ = discriminator_forward(head.discriminator, adapted, train=False)
    return (-scores).reshape(h, w).astype(np.float32)


def build_result(raw, out_h: int, out_w: int,
                 smoothing_sigma: float = DEFAULT_SMOOTHING_SIGMA,
                 score_after_smoothing: bool = False) -> AnomalyResult:
    """Post-process a raw score map into an :class:`AnomalyResult`.

    The image score is ``max(raw)``; the output map is the raw map bilinearly
    resampled to (out_h, out_w) and Gaussian filtered with ``smoothing_sigma``
    (in output pixels).  With ``score_after_smoothing`` the image score is the
    maximum of the smoothed map instead.
    """
    raw = as_score_map(raw)
    if out_h < 1 or out_w < 1:
        raise InvalidArgumentError(f"output dims must be >= 1, got ({out_h}, {out_w})")
    if not (smoothing_sigma > 0):
        raise InvalidArgumentError(f"smoothing sigma must be > 0, got {smoothing_sigma}")
    resized = resize_bilinear(raw, out_h, out_w)
    smoothed = gaussian_filter(resized, smoothing_sigma)
    score = float(smoothed.max()) if score_after_smoothing else float(raw.max())
    return AnomalyResult(map=smoothed, image_score=score, raw_map=raw.copy())


def infer_batch(head: HeadParams, stacks, pipeline: PipelineConfig,
                out_h: int, out_w: int,
                smoothing_sigma: float = DEFAULT_SMOOTHING_SIGMA,
                score_after_smoothing: bool = False,
                sample_ids=None):
    """Run the full inference path per sample; results keep input order.

    Each sample is processed independently (eval-mode scoring is
    batch-invariant, so results equal the single-sample path bit-exactly).
    Per-sample failures are re-raised as :class:`SampleFailureError` with the
    sample identity attached.
    """
    if not head.finalized:
        raise StateError("head is not finalized; train or load a checkpoint first")
    results = []
    for i, stack in enumerate(stacks):
        sample_id = sample_ids[i] if sample_ids is not None else i
        try:
            fmap = extract_local_features(stack, pipeline)
            raw = score_features(head, fmap)
            results.append(build_result(raw, out_h, out_w, smoothing_sigma,
                                        score_after_smoothing))
        except Exception as exc:
            raise SampleFailureError(sample_id, exc) from exc
    return results


@dataclass
class BenchReport:
    """Per-stage latency breakdown of the inference path."""

    shape: tuple
    iters: int
    warmup_excluded: int
    adaptor_ms: float
    discriminator_ms: float
    postprocess_ms: float
    total_ms: float
    images_per_sec: float

    def as_dict(self) -> dict:
        return {
            "shape": list(self.shape),
            "iters": self.iters,
            "warmup_excluded": self.warmup_excluded,
            "adaptor_ms": self.adaptor_ms,
            "discriminator_ms": self.discriminator_ms,
            "postprocess_ms": self.postprocess_ms,
            "total_ms": self.total_ms,
            "images_per_sec": self.images_per_sec,
        }


def benchmark(head: HeadParams, h0: int, w0: int, channels: int, iters: int,
              warmup: int = 3, out_scale: int = 8,
              smoothing_sigma: float = DEFAULT_SMOOTHING_SIGMA,
              seed: int = 0) -> BenchReport:
    """Time the adaptor, discriminator and post-processing stages.

    Scores a fixed random (h0, w0, channels) feature map ``iters`` times after
    ``warmup`` excluded iterations; the output map is (h0*out_scale,
    w0*out_scale).  Throughput depends on the machine; the numbers are
    informational.
    """
    if not head.finalized:
        raise StateError("head is not finalized")
    if iters < 1:
        raise InvalidArgumentError(f"iters must be >= 1, got {iters}")
    if channels != head.channels:
        raise InvalidArgumentError(
            f"benchmark channels {channels} do not match head dim {head.channels}"
        )
    rng = seeded_rng(seed, STREAM_BENCH)
    fmap = rng.normal(0.0, 1.0, size=(h0, w0, channels)).astype(np.float32)
    flat = fmap.reshape(-1, channels)
    out_h, out_w = h0 * out_scale, w0 * out_scale

    t_adapt = t_disc = t_post = 0.0
    for i in range(warmup + iters):
        timed = i >= warmup
        t0 = time.perf_counter()
        adapted, _ = adaptor_forward(head.adaptor, flat)
        t1 = time.perf_counter()
        scores, _ = discriminator_forward(head.discriminator, adapted, train=False)
        t2 = time.perf_counter()
        raw = (-scores).reshape(h0, w0).astype(np.float32)
        build_result(raw, out_h, out_w, smoothing_sigma)
        t3 = time.perf_counter()
        if timed:
            t_adapt += t1 - t0
            t_disc += t2 - t1
            t_post += t3 - t2
    total = t_adapt + t_disc + t_post
    return BenchReport(
        shape=(h0, w0, channels),
        iters=iters,
        warmup_excluded=warmup,
        adaptor_ms=t_adapt / iters * 1e3,
        discriminator_ms=t_disc / iters * 1e3,
        postprocess_ms=t_post / iters * 1e3,
        total_ms=total / iters * 1e3,
        images_per_sec=iters / total if total > 0 else float("inf"),
    )
