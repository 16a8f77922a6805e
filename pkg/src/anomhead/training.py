"""Objectives, the Adam optimizer, and the epoch loop.

The default objective is a two-sided hinge: normal scores are pushed above a
positive threshold and noised scores below a negative one, and saturated
samples contribute nothing (subgradient 0 at the kink).  A cross-entropy
variant is available for ablation.  Features are treated as constants: only
the adaptor and discriminator receive gradients, each with its own Adam state
and learning rate.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, ShapeError
from .model import (
    HeadParams,
    NoiseConfig,
    adaptor_forward,
    discriminator_forward,
    generate_anomalous,
    head_backward,
)
from .pipeline import PipelineConfig, extract_local_features
from .rng import STREAM_NOISE, STREAM_SHUFFLE, seeded_rng

__all__ = [
    "LOSS_KINDS",
    "TrainConfig",
    "EpochStats",
    "AdamState",
    "truncated_l1_loss",
    "cross_entropy_loss",
    "adam_step",
    "train",
]

LOSS_KINDS = ("truncated_l1", "cross_entropy")


@dataclass(frozen=True)
class TrainConfig:
    """Every training hyperparameter, plus the seed everything derives from."""

    th_pos: float = 0.5
    th_neg: float = -0.5
    lr_adaptor: float = 1e-4
    lr_discriminator: float = 2e-4
    weight_decay: float = 1e-5
    epochs: int = 160
    batch_size: int = 4
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    loss_kind: str = "truncated_l1"
    seed: int = 0

    def __post_init__(self):
        if not (self.th_pos > 0 > self.th_neg):
            raise InvalidArgumentError(
                f"thresholds must satisfy th_pos > 0 > th_neg, got {self.th_pos}, {self.th_neg}"
            )
        if self.lr_adaptor <= 0 or self.lr_discriminator <= 0:
            raise InvalidArgumentError("learning rates must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError("epochs and batch_size must be >= 1")
        if self.loss_kind not in LOSS_KINDS:
            raise InvalidArgumentError(f"loss_kind must be one of {LOSS_KINDS}")


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    wall_ms: float


def truncated_l1_loss(pos_scores, neg_scores, th_pos: float = 0.5, th_neg: float = -0.5):
    """Two-sided hinge; returns (loss, grads_pos, grads_neg).

    Per location: ``max(0, th_pos - D(q)) + max(0, -th_neg + D(q-))``, averaged
    over all locations.  Each gradient entry is -1/N, 0 or +1/N.
    """
    pos = np.asarray(pos_scores)
    neg = np.asarray(neg_scores)
    if pos.size == 0 or neg.size == 0:
        raise InvalidArgumentError("both score batches must be non-empty")
    dtype = pos.dtype
    hinge_pos = np.maximum(np.asarray(0, dtype=dtype), np.asarray(th_pos, dtype=dtype) - pos)
    hinge_neg = np.maximum(np.asarray(0, dtype=dtype), neg - np.asarray(th_neg, dtype=dtype))
    loss = float(hinge_pos.mean() + hinge_neg.mean())
    grads_pos = np.where(hinge_pos > 0, np.asarray(-1.0 / pos.size, dtype=dtype),
                         np.asarray(0, dtype=dtype))
    grads_neg = np.where(hinge_neg > 0, np.asarray(1.0 / neg.size, dtype=dtype),
                         np.asarray(0, dtype=dtype))
    return loss, grads_pos, grads_neg


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    nonneg = x >= 0
    out[nonneg] = 1.0 / (1.0 + np.exp(-x[nonneg]))
    ex = np.exp(x[~nonneg])
    out[~nonneg] = ex / (1.0 + ex)
    return out


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, np.asarray(0, dtype=x.dtype)) + np.log1p(np.exp(-np.abs(x)))


def cross_entropy_loss(pos_scores, neg_scores):
    """Binary cross-entropy with logits (normals labeled 1, noised 0), mean-reduced."""
    pos = np.asarray(pos_scores)
    neg = np.asarray(neg_scores)
    if pos.size == 0 or neg.size == 0:
        raise InvalidArgumentError("both score batches must be non-empty")
    total = pos.size + neg.size
    loss = float((_softplus(-pos).sum() + _softplus(neg).sum()) / total)
    grads_pos = (_sigmoid(pos) - 1.0) / total
    grads_neg = _sigmoid(neg) / total
    return loss, grads_pos.astype(pos.dtype), grads_neg.astype(neg.dtype)


def _loss_fn(config: TrainConfig):
    if config.loss_kind == "truncated_l1":
        return lambda p, n: truncated_l1_loss(p, n, config.th_pos, config.th_neg)
    return cross_entropy_loss


@dataclass
class AdamState:
    """First/second-moment accumulators for one named parameter group."""

    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(params: dict, grads: dict, state: AdamState, lr: float,
              weight_decay: float = 0.0) -> None:
    """One Adam update, in place.

    Weight decay is folded into the gradient (``g += wd * p``) before the
    moment updates; bias correction uses the advanced step counter.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != param shape {p.shape} for {name!r}")
        if weight_decay:
            g = g + weight_decay * p
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def train(stacks, pipeline: PipelineConfig, head: HeadParams, config: TrainConfig,
          progress=None):
    """Fit the head on nominal samples; returns the per-epoch loss trace.

    ``stacks`` is a sequence of :class:`HierarchyStack` (normal samples only;
    the one-class protocol is the caller's contract).  Local features are
    extracted once per sample and cached; every epoch shuffles the cached
    samples with the seeded stream, runs the two-branch forward, and applies
    one Adam step per sub-network.  On return ``head.finalized`` is set and the
    batch-norm running statistics are frozen for eval.

    Args:
        progress: optional callable invoked with each :class:`EpochStats`.
    """
    stacks = list(stacks)
    if not stacks:
        raise InvalidArgumentError("training dataset is empty")

    features = []
    for stack in stacks:
        fmap = extract_local_features(stack, pipeline)
        features.append(fmap.reshape(-1, fmap.shape[2]))
    channels = features[0].shape[1]
    for i, f in enumerate(features):
        if f.shape[1] != channels:
            raise ShapeError(f"sample {i} has {f.shape[1]} channels, expected {channels}")
    if channels != head.channels:
        raise ShapeError(
            f"feature dim {channels} does not match head dim {head.channels}"
        )

    shuffle_rng = seeded_rng(config.seed, STREAM_SHUFFLE)
    noise_rng = seeded_rng(config.noise.seed, STREAM_NOISE)
    loss_fn = _loss_fn(config)

    adaptor_params = head.adaptor.parameters()
    disc_params = head.discriminator.parameters()
    adaptor_state = AdamState.for_params(adaptor_params)
    disc_state = AdamState.for_params(disc_params)

    trace = []
    n = len(features)
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            batch = order[start:start + config.batch_size]
            inputs = np.concatenate([features[i] for i in batch], axis=0)
            adapted, a_cache = adaptor_forward(head.adaptor, inputs)
            noised = generate_anomalous(adapted, config.noise, noise_rng)
            both = np.concatenate([adapted, noised], axis=0)
            scores, d_cache = discriminator_forward(head.discriminator, both, train=True)
            m = adapted.shape[0]
            loss, g_pos, g_neg = loss_fn(scores[:m], scores[m:])
            a_grads, d_grads = head_backward(
                head.adaptor, head.discriminator, a_cache, d_cache,
                np.concatenate([g_pos, g_neg]),
            )
            if adaptor_params:
                adam_step(adaptor_params, a_grads, adaptor_state,
                          config.lr_adaptor, config.weight_decay)
            adam_step(disc_params, d_grads, disc_state,
                      config.lr_discriminator, config.weight_decay)
            losses.append(loss)
        stats = EpochStats(
            epoch=epoch,
            mean_loss=float(np.mean(losses)),
            wall_ms=(time.perf_counter() - t0) * 1e3,
        )
        trace.append(stats)
        if progress is not None:
            progress(stats)

    head.finalized = True
    return trace
