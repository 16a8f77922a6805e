"""The trainable head: feature adaptor, noise-based negative synthesis, and a
small discriminator, with explicit forward and backward passes.

All gradients are derived by hand; :mod:`anomhead.gradcheck` verifies them
against central finite differences.  Forward math runs in the dtype of its
inputs, so the production float32 path and the float64 gradient-check path
share one implementation.

Batch invariance: eval-mode scoring of a feature vector must not depend on
which other vectors share its batch, bit-for-bit.  BLAS matmuls break that
promise when the row count changes kernel dispatch, so every forward matmul
goes through :func:`rowwise_matmul`, which always issues fixed-shape
(zero-padded) chunk multiplies, and the final scalar layer uses an axis
reduction whose order depends only on the hidden width.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConsistencyError, InvalidArgumentError, ShapeError

__all__ = [
    "ADAPTOR_VARIANTS",
    "AdaptorParams",
    "DiscriminatorParams",
    "NoiseConfig",
    "HeadParams",
    "init_adaptor",
    "init_discriminator",
    "init_head",
    "clone_head",
    "adaptor_forward",
    "generate_anomalous",
    "discriminator_forward",
    "head_backward",
    "rowwise_matmul",
]

ADAPTOR_VARIANTS = ("identity", "linear", "mlp")

# Slope of the leaky rectifier inside the mlp adaptor variant.
MLP_LEAKY_SLOPE = 0.2

_CHUNK_ROWS = 256


def rowwise_matmul(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """``x @ w`` computed so each row's result is independent of the batch.

    Rows are processed in fixed-size chunks, zero-padding the tail, so the
    underlying GEMM always sees the same shape and a given row produces the
    same bits whether it arrives alone or inside any batch.
    """
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"cannot multiply {x.shape} by {w.shape}")
    n = x.shape[0]
    out = np.empty((n, w.shape[1]), dtype=np.result_type(x, w))
    for i in range(0, n, _CHUNK_ROWS):
        blk = x[i:i + _CHUNK_ROWS]
        b = blk.shape[0]
        if b < _CHUNK_ROWS:
            padded = np.zeros((_CHUNK_ROWS, x.shape[1]), dtype=x.dtype)
            padded[:b] = blk
            out[i:i + b] = (padded @ w)[:b]
        else:
            out[i:i + b] = blk @ w
    return out


def _leaky(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x, x * np.asarray(slope, dtype=x.dtype))


def _leaky_grad(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, np.asarray(1.0, dtype=x.dtype), np.asarray(slope, dtype=x.dtype))


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------


@dataclass
class AdaptorParams:
    """Feature adaptor: a square projection of each local feature vector.

    Variants: ``identity`` (frozen pass-through), ``linear`` (single bias-free
    matrix, the default), ``mlp`` (matrix -> leaky relu -> matrix).
    """

    variant: str
    weight: np.ndarray | None = None   # (C, C); None for identity
    weight2: np.ndarray | None = None  # (C, C); mlp only

    def __post_init__(self):
        if self.variant not in ADAPTOR_VARIANTS:
            raise InvalidArgumentError(f"unknown adaptor variant {self.variant!r}")
        for name, w in (("weight", self.weight), ("weight2", self.weight2)):
            if w is None:
                continue
            if w.ndim != 2 or w.shape[0] != w.shape[1]:
                raise ShapeError(f"adaptor {name} must be square, got {w.shape}")
            if not np.isfinite(w).all():
                raise InvalidArgumentError(f"adaptor {name} has non-finite entries")
        if self.variant == "linear" and self.weight is None:
            raise InvalidArgumentError("linear adaptor needs a weight matrix")
        if self.variant == "mlp" and (self.weight is None or self.weight2 is None):
            raise InvalidArgumentError("mlp adaptor needs two weight matrices")

    @property
    def trainable(self) -> bool:
        return self.variant != "identity"

    def parameters(self) -> dict:
        """Trainable parameter arrays by name (empty for the frozen identity)."""
        if self.variant == "linear":
            return {"weight": self.weight}
        if self.variant == "mlp":
            return {"weight": self.weight, "weight2": self.weight2}
        return {}


@dataclass
class DiscriminatorParams:
    """Two-layer scorer: linear -> batch norm -> leaky relu -> linear."""

    w1: np.ndarray                 # (C, Hd)
    b1: np.ndarray                 # (Hd,)
    bn_gamma: np.ndarray           # (Hd,)
    bn_beta: np.ndarray            # (Hd,)
    bn_running_mean: np.ndarray    # (Hd,)
    bn_running_var: np.ndarray     # (Hd,)
    w2: np.ndarray                 # (Hd,)
    b2: np.ndarray                 # (1,)
    leaky_slope: float = 0.2
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        hd = self.w1.shape[1] if self.w1.ndim == 2 else -1
        if hd < 1:
            raise ShapeError(f"w1 must be (C, Hd) with Hd >= 1, got {self.w1.shape}")
        for name in ("b1", "bn_gamma", "bn_beta", "bn_running_mean", "bn_running_var", "w2"):
            v = getattr(self, name)
            if v.shape != (hd,):
                raise ShapeError(f"{name} must have shape ({hd},), got {v.shape}")
        if self.b2.shape != (1,):
            raise ShapeError(f"b2 must have shape (1,), got {self.b2.shape}")
        if not (self.bn_running_var > 0).all():
            raise InvalidArgumentError("bn_running_var entries must be > 0")
        for name in ("w1", "b1", "bn_gamma", "bn_beta", "bn_running_mean", "bn_running_var", "w2", "b2"):
            if not np.isfinite(getattr(self, name)).all():
                raise InvalidArgumentError(f"{name} has non-finite entries")

    @property
    def in_dim(self) -> int:
        return self.w1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.w1.shape[1]

    def parameters(self) -> dict:
        return {
            "w1": self.w1,
            "b1": self.b1,
            "bn_gamma": self.bn_gamma,
            "bn_beta": self.bn_beta,
            "w2": self.w2,
            "b2": self.b2,
        }


@dataclass(frozen=True)
class NoiseConfig:
    """Gaussian noise used to counterfeit anomalous features."""

    mean: float = 0.0
    sigma: float = 0.015
    seed: int = 0

    def __post_init__(self):
        if not (self.sigma > 0):
            raise InvalidArgumentError(f"noise sigma must be > 0, got {self.sigma}")


@dataclass
class HeadParams:
    """Adaptor plus discriminator; ``finalized`` gates the inference path."""

    adaptor: AdaptorParams
    discriminator: DiscriminatorParams
    finalized: bool = False

    @property
    def channels(self) -> int:
        return self.discriminator.in_dim


def init_adaptor(channels: int, variant: str = "linear") -> AdaptorParams:
    """Identity-matrix initialization: step 0 behaves like no adaptor at all."""
    if variant == "identity":
        return AdaptorParams(variant="identity")
    eye = np.eye(channels, dtype=np.float32)
    if variant == "linear":
        return AdaptorParams(variant="linear", weight=eye)
    return AdaptorParams(variant="mlp", weight=eye, weight2=eye.copy())


def init_discriminator(channels: int, hidden: int | None = None,
                       rng: np.random.Generator | None = None) -> DiscriminatorParams:
    """Uniform(+-1/sqrt(fan_in)) linear weights, zero biases, unit batch norm."""
    hd = channels if hidden is None else int(hidden)
    if hd < 1:
        raise InvalidArgumentError(f"hidden width must be >= 1, got {hd}")
    rng = rng if rng is not None else np.random.default_rng(0)
    bound1 = 1.0 / np.sqrt(channels)
    bound2 = 1.0 / np.sqrt(hd)
    return DiscriminatorParams(
        w1=rng.uniform(-bound1, bound1, size=(channels, hd)).astype(np.float32),
        b1=np.zeros(hd, dtype=np.float32),
        bn_gamma=np.ones(hd, dtype=np.float32),
        bn_beta=np.zeros(hd, dtype=np.float32),
        bn_running_mean=np.zeros(hd, dtype=np.float32),
        bn_running_var=np.ones(hd, dtype=np.float32),
        w2=rng.uniform(-bound2, bound2, size=hd).astype(np.float32),
        b2=np.zeros(1, dtype=np.float32),
    )


def init_head(channels: int, variant: str = "linear", hidden: int | None = None,
              rng: np.random.Generator | None = None) -> HeadParams:
    return HeadParams(
        adaptor=init_adaptor(channels, variant),
        discriminator=init_discriminator(channels, hidden, rng),
    )


def clone_head(head: HeadParams) -> HeadParams:
    """Deep copy (fresh arrays); used by the gradient checker."""
    ad = head.adaptor
    adaptor = AdaptorParams(
        variant=ad.variant,
        weight=None if ad.weight is None else ad.weight.copy(),
        weight2=None if ad.weight2 is None else ad.weight2.copy(),
    )
    d = head.discriminator
    disc = DiscriminatorParams(
        w1=d.w1.copy(), b1=d.b1.copy(),
        bn_gamma=d.bn_gamma.copy(), bn_beta=d.bn_beta.copy(),
        bn_running_mean=d.bn_running_mean.copy(), bn_running_var=d.bn_running_var.copy(),
        w2=d.w2.copy(), b2=d.b2.copy(),
        leaky_slope=d.leaky_slope, bn_momentum=d.bn_momentum, bn_eps=d.bn_eps,
    )
    return HeadParams(adaptor=adaptor, discriminator=disc, finalized=head.finalized)


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------


@dataclass
class AdaptorCache:
    inputs: np.ndarray
    hidden_pre: np.ndarray | None = None
    hidden_act: np.ndarray | None = None

    @property
    def rows(self) -> int:
        return self.inputs.shape[0]


def adaptor_forward(params: AdaptorParams, features: np.ndarray):
    """Project a batch of feature vectors; returns (adapted, cache).

    ``features`` is (N, C).  The identity variant returns its input unchanged.
    """
    features = np.asarray(features)
    if features.ndim != 2:
        raise ShapeError(f"adaptor input must be (N, C), got {features.shape}")
    if params.variant == "identity":
        return features, AdaptorCache(inputs=features)
    if features.shape[1] != params.weight.shape[0]:
        raise ShapeError(
            f"feature dim {features.shape[1]} does not match adaptor dim {params.weight.shape[0]}"
        )
    w = params.weight.astype(features.dtype, copy=False)
    if params.variant == "linear":
        return rowwise_matmul(features, w), AdaptorCache(inputs=features)
    hidden_pre = rowwise_matmul(features, w)
    hidden_act = _leaky(hidden_pre, MLP_LEAKY_SLOPE)
    w2 = params.weight2.astype(features.dtype, copy=False)
    out = rowwise_matmul(hidden_act, w2)
    return out, AdaptorCache(inputs=features, hidden_pre=hidden_pre, hidden_act=hidden_act)


def generate_anomalous(features: np.ndarray, noise: NoiseConfig,
                       rng: np.random.Generator) -> np.ndarray:
    """Counterfeit anomalous features by adding i.i.d. Gaussian noise.

    Consumes ``rng`` deterministically: a fixed seed and input shape always
    produce the same draws.
    """
    features = np.asarray(features)
    eps = rng.normal(noise.mean, noise.sigma, size=features.shape)
    return features + eps.astype(features.dtype)


@dataclass
class DiscriminatorCache:
    inputs: np.ndarray      # (N, C)
    xhat: np.ndarray        # (N, Hd) normalized pre-affine activations
    inv_std: np.ndarray     # (Hd,) 1/sqrt(batch var + eps)
    pre_act: np.ndarray     # (N, Hd) after affine, before leaky relu
    act: np.ndarray         # (N, Hd)

    @property
    def rows(self) -> int:
        return self.inputs.shape[0]


def discriminator_forward(params: DiscriminatorParams, features: np.ndarray, train: bool):
    """Score a batch of vectors; returns (scores, cache-or-None).

    Train mode normalizes with the batch statistics of the full input (all
    vectors in the minibatch) and updates the running statistics in place;
    eval mode uses the stored running statistics and is a pure function, so a
    vector's score never depends on its batch mates.
    """
    features = np.asarray(features)
    if features.ndim != 2:
        raise ShapeError(f"discriminator input must be (N, C), got {features.shape}")
    if features.shape[1] != params.in_dim:
        raise ShapeError(
            f"feature dim {features.shape[1]} does not match discriminator dim {params.in_dim}"
        )
    if features.shape[0] < 1:
        raise InvalidArgumentError("discriminator batch must be non-empty")
    dtype = features.dtype

    z = rowwise_matmul(features, params.w1.astype(dtype, copy=False))
    z = z + params.b1.astype(dtype, copy=False)

    eps = np.asarray(params.bn_eps, dtype=dtype)
    if train:
        n = features.shape[0]
        if n < 2:
            raise InvalidArgumentError("train-mode batch needs >= 2 vectors for batch norm")
        mean = z.mean(axis=0)
        var = np.square(z - mean).mean(axis=0)  # population variance
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (z - mean) * inv_std
        m = params.bn_momentum
        params.bn_running_mean[...] = ((1.0 - m) * params.bn_running_mean + m * mean).astype(
            params.bn_running_mean.dtype
        )
        params.bn_running_var[...] = ((1.0 - m) * params.bn_running_var + m * var).astype(
            params.bn_running_var.dtype
        )
    else:
        inv_std = (1.0 / np.sqrt(params.bn_running_var.astype(dtype) + eps))
        xhat = (z - params.bn_running_mean.astype(dtype)) * inv_std

    pre_act = params.bn_gamma.astype(dtype) * xhat + params.bn_beta.astype(dtype)
    act = _leaky(pre_act, params.leaky_slope)
    # Reduction order depends only on Hd, never on the batch: batch-invariant.
    scores = (act * params.w2.astype(dtype)).sum(axis=1) + params.b2.astype(dtype)[0]

    if not train:
        return scores, None
    cache = DiscriminatorCache(inputs=features, xhat=xhat, inv_std=inv_std,
                               pre_act=pre_act, act=act)
    return scores, cache


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


def head_backward(adaptor: AdaptorParams, disc: DiscriminatorParams,
                  adaptor_cache: AdaptorCache, disc_cache: DiscriminatorCache,
                  score_grads: np.ndarray):
    """Exact gradients of the scalar loss w.r.t. every trainable parameter.

    ``score_grads`` holds d(loss)/d(score) for each row the discriminator saw.
    When the discriminator batch is the adaptor output concatenated with its
    noised copy (the training layout), gradients from both halves flow back
    into the shared adaptor; the noise itself is a constant.

    Returns:
        (adaptor_grads, disc_grads): dicts keyed like ``.parameters()``.
    """
    if disc_cache is None:
        raise ConsistencyError("head_backward needs a train-mode discriminator cache")
    score_grads = np.asarray(score_grads)
    n_disc = disc_cache.rows
    n_feat = adaptor_cache.rows
    if score_grads.shape != (n_disc,):
        raise ConsistencyError(
            f"score_grads shape {score_grads.shape} does not match cache rows {n_disc}"
        )
    if n_disc not in (n_feat, 2 * n_feat):
        raise ConsistencyError(
            f"discriminator cache rows {n_disc} do not match adaptor cache rows {n_feat}"
        )
    dtype = disc_cache.act.dtype

    # Output layer.
    ds = score_grads.astype(dtype, copy=False)
    d_w2 = disc_cache.act.T @ ds
    d_b2 = np.array([ds.sum()], dtype=dtype)
    d_act = ds[:, None] * disc.w2.astype(dtype)[None, :]

    # Leaky relu and batch-norm affine.
    d_pre = d_act * _leaky_grad(disc_cache.pre_act, disc.leaky_slope)
    d_gamma = (d_pre * disc_cache.xhat).sum(axis=0)
    d_beta = d_pre.sum(axis=0)

    # Batch statistics: biased variance over the full discriminator batch.
    d_xhat = d_pre * disc.bn_gamma.astype(dtype)
    n = np.asarray(n_disc, dtype=dtype)
    d_z = (disc_cache.inv_std / n) * (
        n * d_xhat - d_xhat.sum(axis=0)
        - disc_cache.xhat * (d_xhat * disc_cache.xhat).sum(axis=0)
    )

    d_b1 = d_z.sum(axis=0)
    d_w1 = disc_cache.inputs.T @ d_z
    d_inputs = d_z @ disc.w1.astype(dtype).T

    disc_grads = {
        "w1": d_w1, "b1": d_b1,
        "bn_gamma": d_gamma, "bn_beta": d_beta,
        "w2": d_w2, "b2": d_b2,
    }

    # Fold the noised branch back onto the shared adaptor output.
    d_q = d_inputs if n_disc == n_feat else d_inputs[:n_feat] + d_inputs[n_feat:]

    if adaptor.variant == "identity":
        return {}, disc_grads  # frozen: no gradient reaches the adaptor
    if adaptor.variant == "linear":
        return {"weight": adaptor_cache.inputs.T @ d_q}, disc_grads
    if adaptor_cache.hidden_pre is None:
        raise ConsistencyError("mlp adaptor backward needs the hidden-layer cache")
    d_weight2 = adaptor_cache.hidden_act.T @ d_q
    d_hidden_act = d_q @ adaptor.weight2.astype(dtype).T
    d_hidden_pre = d_hidden_act * _leaky_grad(adaptor_cache.hidden_pre, MLP_LEAKY_SLOPE)
    d_weight = adaptor_cache.inputs.T @ d_hidden_pre
    return {"weight": d_weight, "weight2": d_weight2}, disc_grads
