"""Hinge adversarial, L1 pixel and cycle losses, and the three branch objectives."""

from __future__ import annotations

from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, field_validator


class LossWeights(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha: float = 1.0
    beta: float = 0.05
    theta: float = 1.0
    gamma: float = 0.05

    @field_validator("alpha", "beta", "theta", "gamma")
    @classmethod
    def _nonnegative(cls, v):
        if v < 0:
            raise ValueError("loss weights must be nonnegative")
        return v


def _check_nonempty(scores: torch.Tensor, what: str) -> None:
    if scores.numel() == 0:
        raise ValueError(f"{what} scores are empty")


def hinge_disc_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """mean(relu(1 - D(real))) + mean(relu(1 + D(fake))); minimized by the discriminator."""
    _check_nonempty(real_scores, "real")
    _check_nonempty(fake_scores, "fake")
    return F.relu(1.0 - real_scores).mean() + F.relu(1.0 + fake_scores).mean()


def hinge_adv_objective(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """The min(0, .) form: E[min(0, D(real) - 1)] + E[min(0, -1 - D(fake))].

    Nonpositive and equal to ``-hinge_disc_loss``; kept for cross-checking.
    """
    _check_nonempty(real_scores, "real")
    _check_nonempty(fake_scores, "fake")
    return torch.clamp(real_scores - 1.0, max=0.0).mean() + torch.clamp(-1.0 - fake_scores, max=0.0).mean()


def hinge_gen_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    _check_nonempty(fake_scores, "fake")
    return -fake_scores.mean()


def l1_loss(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def _check_scale(small: torch.Tensor, big: torch.Tensor, scale: int) -> None:
    if small.dim() != 4 or big.dim() != 4:
        raise ValueError("expected N x C x H x W tensors")
    if small.shape[:2] != big.shape[:2] or (
        big.shape[-2] != scale * small.shape[-2] or big.shape[-1] != scale * small.shape[-1]
    ):
        raise ValueError(f"{tuple(big.shape)} is not {scale}x the spatial size of {tuple(small.shape)}")


def pixel_loss_synth(synth_lr: torch.Tensor, real_hr: torch.Tensor, scale: int = 4) -> torch.Tensor:
    """L1 between the synthetic LR image and the HR input average-pooled to its size."""
    _check_scale(synth_lr, real_hr, scale)
    return l1_loss(synth_lr, F.avg_pool2d(real_hr, scale))


def pixel_loss_real(real_sr: torch.Tensor, real_lr: torch.Tensor, scale: int = 4) -> torch.Tensor:
    """L1 between the SR output of a real LR image and that LR image bicubically upsampled."""
    _check_scale(real_lr, real_sr, scale)
    up = F.interpolate(real_lr, scale_factor=scale, mode="bicubic", align_corners=False)
    return l1_loss(real_sr, up)


def cycle_loss_forward(synth_sr: torch.Tensor, real_hr: torch.Tensor) -> torch.Tensor:
    return l1_loss(synth_sr, real_hr)


def cycle_loss_backward(recon_lr: torch.Tensor, real_lr: torch.Tensor) -> torch.Tensor:
    return l1_loss(recon_lr, real_lr)


@dataclass
class LossTerms:
    """Component losses of one step; ``None`` marks a term that is absent or masked out."""

    adv_L1: torch.Tensor | float | None = None
    adv_L2: torch.Tensor | float | None = None
    adv_H1: torch.Tensor | float | None = None
    adv_H2: torch.Tensor | float | None = None
    pix_synth: torch.Tensor | float | None = None
    pix_real: torch.Tensor | float | None = None
    cyc_forward: torch.Tensor | float | None = None
    cyc_backward: torch.Tensor | float | None = None

    def masked(self, **keep: bool) -> "LossTerms":
        """Copy with every term named in ``keep`` and mapped to False dropped."""
        unknown = set(keep) - {f.name for f in fields(self)}
        if unknown:
            raise ValueError(f"unknown loss terms: {sorted(unknown)}")
        return LossTerms(**{f.name: (None if keep.get(f.name, True) is False else getattr(self, f.name))
                            for f in fields(self)})


def _term(value):
    return 0.0 if value is None else value


def composite_losses(terms: LossTerms, weights: LossWeights) -> dict:
    """Weighted branch objectives l_DHL, l_RLS, l_DSL.

    l_DHL = a*adv_L1 + b*pix_synth
    l_RLS = t*(a*adv_H1 + b*cyc_forward) + g*(a*adv_H2 + b*pix_real)
    l_DSL = a*adv_L2 + b*cyc_backward
    """
    a, b, t, g = weights.alpha, weights.beta, weights.theta, weights.gamma
    for w in (a, b, t, g):
        if w < 0:
            raise ValueError("loss weights must be nonnegative")
    forward_sr = a * _term(terms.adv_H1) + b * _term(terms.cyc_forward)
    real_sr = a * _term(terms.adv_H2) + b * _term(terms.pix_real)
    return {
        "l_DHL": a * _term(terms.adv_L1) + b * _term(terms.pix_synth),
        "l_RLS": t * forward_sr + g * real_sr,
        "l_DSL": a * _term(terms.adv_L2) + b * _term(terms.cyc_backward),
    }
