"""Finite-difference verification of every hand-derived gradient.

Random small heads are built in float64, the full two-branch training forward
(adaptor -> noised copy -> discriminator with batch statistics -> loss) is
evaluated, and each analytic parameter gradient is compared against central
differences of the loss.  Configurations are resampled until every hinge and
rectifier sits safely away from its kink, so the finite-difference window
never straddles a non-differentiable point.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError
from .model import (
    AdaptorParams,
    DiscriminatorParams,
    HeadParams,
    adaptor_forward,
    clone_head,
    discriminator_forward,
    head_backward,
)
from .rng import STREAM_GRADCHECK
from .training import cross_entropy_loss, truncated_l1_loss

__all__ = ["GradcheckReport", "run_gradient_checks"]

_VARIANTS = ("linear", "mlp", "identity")
_LOSSES = ("truncated_l1", "cross_entropy")

# Kink safety margins: a 1e-3 parameter step moves scores / pre-activations by
# well under these, so central differences never cross a hinge or rectifier.
_SCORE_MARGIN = 0.05
_ACT_MARGIN = 0.02

# Near-degenerate batch variance makes the batch-norm rsqrt so curved that the
# O(h^2) truncation error of central differences alone exceeds the tolerance
# (the analytic gradient is exact either way).  Cap 1/sqrt(var + eps).
_MAX_INV_STD = 4.0


@dataclass
class GradcheckReport:
    passed: bool
    max_rel_error: float
    threshold: float
    n_configs: int
    seed: int
    step: float
    elapsed_s: float
    configs: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "max_rel_error": self.max_rel_error,
            "threshold": self.threshold,
            "n_configs": self.n_configs,
            "seed": self.seed,
            "step": self.step,
            "elapsed_s": self.elapsed_s,
            "configs": self.configs,
        }


def _rel_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1.0)


def _random_head(rng: np.random.Generator, channels: int, hidden: int, variant: str) -> HeadParams:
    def mat(shape, scale):
        return (rng.normal(0.0, scale, size=shape)).astype(np.float64)

    if variant == "identity":
        adaptor = AdaptorParams(variant="identity")
    elif variant == "linear":
        adaptor = AdaptorParams(variant="linear", weight=mat((channels, channels), channels ** -0.5))
    else:
        adaptor = AdaptorParams(
            variant="mlp",
            weight=mat((channels, channels), channels ** -0.5),
            weight2=mat((channels, channels), channels ** -0.5),
        )
    disc = DiscriminatorParams(
        w1=mat((channels, hidden), channels ** -0.5),
        b1=mat(hidden, 0.1),
        bn_gamma=(0.5 + rng.uniform(0.0, 1.0, size=hidden)).astype(np.float64),
        bn_beta=mat(hidden, 0.1),
        bn_running_mean=np.zeros(hidden, dtype=np.float64),
        bn_running_var=np.ones(hidden, dtype=np.float64),
        w2=mat(hidden, hidden ** -0.5),
        b2=mat(1, 0.1),
    )
    return HeadParams(adaptor=adaptor, discriminator=disc)


def _loss_fn(kind: str, th_pos: float, th_neg: float):
    if kind == "truncated_l1":
        return lambda p, n: truncated_l1_loss(p, n, th_pos, th_neg)
    return cross_entropy_loss


def _forward_state(head: HeadParams, features: np.ndarray, noise: np.ndarray, loss):
    """One full training forward on a clone; returns everything needed downstream."""
    work = clone_head(head)
    adapted, a_cache = adaptor_forward(work.adaptor, features)
    both = np.concatenate([adapted, adapted + noise], axis=0)
    scores, d_cache = discriminator_forward(work.discriminator, both, train=True)
    n = features.shape[0]
    loss_value, g_pos, g_neg = loss(scores[:n], scores[n:])
    return work, a_cache, d_cache, scores, loss_value, np.concatenate([g_pos, g_neg])


def _margins_ok(head, a_cache, d_cache, scores, n, loss_kind, th_pos, th_neg) -> bool:
    if loss_kind == "truncated_l1":
        if np.abs(th_pos - scores[:n]).min() < _SCORE_MARGIN:
            return False
        if np.abs(scores[n:] - th_neg).min() < _SCORE_MARGIN:
            return False
    if np.abs(d_cache.pre_act).min() < _ACT_MARGIN:
        return False
    if head.adaptor.variant == "mlp" and np.abs(a_cache.hidden_pre).min() < _ACT_MARGIN:
        return False
    if d_cache.inv_std.max() > _MAX_INV_STD:
        return False
    return True


def _check_config(rng, max_c, max_hd, max_batch, variant, loss_kind, step):
    """Returns (max rel error, dims, n params checked) for one random config."""
    th_pos, th_neg = 0.5, -0.5
    loss = _loss_fn(loss_kind, th_pos, th_neg)

    for _ in range(200):
        channels = int(rng.integers(2, max_c + 1))
        hidden = int(rng.integers(2, max_hd + 1))
        batch = int(rng.integers(2, max_batch + 1))
        head = _random_head(rng, channels, hidden, variant)
        features = rng.normal(0.0, 1.0, size=(batch, channels)).astype(np.float64)
        noise = rng.normal(0.0, 0.5, size=(batch, channels)).astype(np.float64)
        work, a_cache, d_cache, scores, _, score_grads = _forward_state(head, features, noise, loss)
        if _margins_ok(head, a_cache, d_cache, scores, batch, loss_kind, th_pos, th_neg):
            break
    else:
        raise InvalidArgumentError("could not sample a kink-free configuration")

    a_grads, d_grads = head_backward(work.adaptor, work.discriminator,
                                     a_cache, d_cache, score_grads)

    def loss_at(perturb):
        probe = clone_head(head)
        perturb(probe)
        _, _, _, _, value, _ = _forward_state(probe, features, noise, loss)
        return value

    worst = 0.0
    checked = 0

    def check_group(select, grads):
        nonlocal worst, checked
        for name, grad in grads.items():
            flat_grad = np.asarray(grad).ravel()
            for k in range(flat_grad.size):
                def nudge(h, probe_head, _name=name, _k=k):
                    select(probe_head)[_name].ravel()[_k] += h

                up = loss_at(lambda p: nudge(step, p))
                down = loss_at(lambda p: nudge(-step, p))
                fd = (up - down) / (2.0 * step)
                worst = max(worst, _rel_error(float(flat_grad[k]), fd))
                checked += 1

    check_group(lambda hd: hd.adaptor.parameters(), a_grads)
    check_group(lambda hd: hd.discriminator.parameters(), d_grads)

    # The loss functions themselves, differentiated w.r.t. the raw scores.
    _, g_pos, g_neg = loss(scores[:batch], scores[batch:])
    for branch, grads in (("pos", g_pos), ("neg", g_neg)):
        for k in range(batch):
            def loss_scores(h):
                p = scores[:batch].copy()
                n_ = scores[batch:].copy()
                (p if branch == "pos" else n_)[k] += h
                return loss(p, n_)[0]

            fd = (loss_scores(step) - loss_scores(-step)) / (2.0 * step)
            worst = max(worst, _rel_error(float(grads[k]), fd))
            checked += 1

    return worst, (channels, hidden, batch), checked


def run_gradient_checks(n_configs: int = 24, seed: int = 0, step: float = 1e-3,
                        threshold: float = 1e-4,
                        max_dims: tuple = (8, 8, 16),
                        corrupt: bool = False) -> GradcheckReport:
    """Compare analytic and finite-difference gradients over random configs.

    Cycles adaptor variants (linear, mlp, identity) and both loss kinds.
    ``corrupt`` deliberately biases one comparison; it exists so callers can
    verify the check actually fails when gradients are wrong.
    """
    if n_configs < 1:
        raise InvalidArgumentError(f"n_configs must be >= 1, got {n_configs}")
    max_c, max_hd, max_batch = max_dims
    if min(max_c, max_hd) < 2 or max_batch < 2:
        raise InvalidArgumentError(f"max_dims must each be >= 2, got {max_dims}")

    t0 = time.perf_counter()
    worst = 0.0
    details = []
    for i in range(n_configs):
        rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence(seed, spawn_key=(STREAM_GRADCHECK, i))))
        variant = _VARIANTS[i % len(_VARIANTS)]
        loss_kind = _LOSSES[i % len(_LOSSES)]
        err, dims, checked = _check_config(rng, max_c, max_hd, max_batch,
                                           variant, loss_kind, step)
        if corrupt and i == 0:
            err = max(err, 1.0)  # test hook: simulate a wrong derivative
        worst = max(worst, err)
        details.append({
            "index": i, "variant": variant, "loss": loss_kind,
            "dims": list(dims), "params_checked": checked,
            "max_rel_error": err,
        })
    elapsed = time.perf_counter() - t0
    return GradcheckReport(
        passed=bool(worst < threshold),
        max_rel_error=worst,
        threshold=threshold,
        n_configs=n_configs,
        seed=seed,
        step=step,
        elapsed_s=elapsed,
        configs=details,
    )
