"""Loss terms for the editing GAN.

The critic is trained with a Wasserstein objective plus a gradient penalty,
the attribute heads with per-attribute binary cross entropy summed over
attributes, and the generator additionally with an L1 reconstruction term
when asked to reproduce the source attributes.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import autograd

from .errors import ConfigurationError, ContractViolation


@dataclass(frozen=True)
class LossWeights:
    """Weights for the composite objectives.

    cls_d scales the attribute loss in the critic objective, cls_g the one
    in the generator objective, rec the reconstruction term, and gp the
    gradient penalty. gp set to 0 disables the penalty term entirely.
    """

    cls_d: float = 3.0
    cls_g: float = 10.0
    rec: float = 100.0
    gp: float = 10.0

    def __post_init__(self):
        for name in ("cls_d", "cls_g", "rec", "gp"):
            v = getattr(self, name)
            if not (v >= 0.0):
                raise ConfigurationError(f"loss weight {name} must be >= 0, got {v}")


def _check_nonempty(t, what):
    if t.numel() == 0:
        raise ContractViolation(f"{what} is empty")


def adversarial_loss_d(scores_real, scores_fake):
    """Critic objective: mean fake score minus mean real score."""
    _check_nonempty(scores_real, "real scores")
    _check_nonempty(scores_fake, "fake scores")
    return scores_fake.mean() - scores_real.mean()


def adversarial_loss_g(scores_fake):
    """Generator objective: negated mean critic score on generated images."""
    _check_nonempty(scores_fake, "fake scores")
    return -scores_fake.mean()


def classification_loss(logits, targets):
    """Binary cross entropy from logits, summed over attributes, batch mean.

    Computed in the numerically stable logits form, so +-100 logits stay
    finite. `targets` may be any float or integer 0/1 tensor of the same
    shape as `logits`.
    """
    if logits.shape != targets.shape:
        raise ContractViolation(
            f"logits shape {tuple(logits.shape)} != targets shape {tuple(targets.shape)}"
        )
    _check_nonempty(logits, "logits")
    per_sample = F.binary_cross_entropy_with_logits(
        logits, targets.to(logits.dtype), reduction="none"
    ).sum(dim=-1)
    return per_sample.mean()


def reconstruction_loss(x, x_rec):
    """Mean absolute error between an image batch and its reconstruction."""
    if x.shape != x_rec.shape:
        raise ContractViolation(
            f"image shape {tuple(x.shape)} != reconstruction shape {tuple(x_rec.shape)}"
        )
    _check_nonempty(x, "images")
    return (x - x_rec).abs().mean()


def gradient_penalty(critic, x_real, x_fake, rng=None):
    """Penalty pushing the critic's gradient norm toward 1 on interpolates.

    `critic` maps an image batch to one score per sample. Interpolation
    weights are drawn uniformly per sample from `rng` when given, so the
    draw can be replayed from a checkpointed generator state. The returned
    value stays connected to the critic parameters for backprop.
    """
    if x_real.shape != x_fake.shape:
        raise ContractViolation(
            f"real shape {tuple(x_real.shape)} != fake shape {tuple(x_fake.shape)}"
        )
    _check_nonempty(x_real, "images")
    b = x_real.shape[0]
    eps_shape = (b,) + (1,) * (x_real.dim() - 1)
    eps = torch.rand(eps_shape, generator=rng, dtype=x_real.dtype, device=x_real.device)
    x_hat = (eps * x_real + (1.0 - eps) * x_fake).detach().requires_grad_(True)
    scores = critic(x_hat)
    if scores.numel() != b:
        raise ContractViolation(
            f"critic returned {scores.numel()} scores for a batch of {b}"
        )
    grads = autograd.grad(
        scores.sum(), x_hat, create_graph=True, retain_graph=True
    )[0]
    norms = grads.reshape(b, -1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()


def total_loss_d(adv, cls, gp, weights: LossWeights):
    """Full critic loss: adv + cls_d * cls + gp_weight * gp."""
    return adv + weights.cls_d * cls + weights.gp * gp


def total_loss_g(adv, cls, rec, weights: LossWeights):
    """Full generator loss: adv + cls_g * cls + rec_weight * rec."""
    return adv + weights.cls_g * cls + weights.rec * rec
