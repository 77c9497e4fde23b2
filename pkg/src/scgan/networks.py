"""Degradation, restoration and discriminator networks.

All convolution and linear weights are spectrally normalized. Tensors are
N x C x H x W in the model11 domain.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, field_validator

SN_EPS = 1e-12


class ArchConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    base_channels: int = 64
    degrade_blocks: int = 12
    restore_groups: tuple[int, ...] = (12, 3, 2)
    scale: int = 4

    @field_validator("base_channels")
    @classmethod
    def _positive_width(cls, v):
        if v < 1:
            raise ValueError("base_channels must be >= 1")
        return v

    @field_validator("degrade_blocks")
    @classmethod
    def _depth(cls, v):
        if v not in (6, 12):
            raise ValueError("degrade_blocks must be 6 or 12")
        return v

    @field_validator("restore_groups")
    @classmethod
    def _groups(cls, v):
        if len(v) == 0 or any(n < 1 for n in v):
            raise ValueError("restore_groups must be a nonempty list of positive block counts")
        return tuple(v)

    @field_validator("scale")
    @classmethod
    def _scale(cls, v):
        if v != 4:
            raise ValueError("only x4 is supported")
        return v


def _l2normalize(v: torch.Tensor) -> torch.Tensor:
    return v / v.norm().clamp_min(SN_EPS)


def spectral_normalize(
    weight: torch.Tensor, u: torch.Tensor, v: torch.Tensor, n_power_iterations: int = 1
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, torch.Tensor]:
    """Divide ``weight`` by a power-iteration estimate of its top singular value.

    ``weight`` is flattened to (out, -1). ``u`` and ``v`` are the left/right
    singular vector estimates; updated copies are returned with the
    normalized weight and the estimate ``sigma``. Gradients flow through
    ``weight`` only.
    """
    mat = weight.reshape(weight.shape[0], -1)
    with torch.no_grad():
        for _ in range(n_power_iterations):
            v = _l2normalize(mat.t() @ u)
            u = _l2normalize(mat @ v)
    u = u.detach().clone()
    v = v.detach().clone()
    sigma = torch.dot(u, mat @ v).clamp_min(SN_EPS)
    return weight / sigma, u, v, sigma


class _SpectralNormMixin:
    """Keeps a persistent power-iteration state next to ``self.weight``.

    One power iteration runs per forward call in training mode; in eval mode
    the stored vectors are used as-is and the forward pass is pure.
    """

    def _init_sn(self):
        # per-shape seed keeps construction independent of the global RNG
        out_dim = self.weight.shape[0]
        in_dim = self.weight[0].numel()
        g = torch.Generator().manual_seed(out_dim * 7919 + in_dim)
        self.register_buffer("sn_u", _l2normalize(torch.randn(out_dim, generator=g)))
        self.register_buffer("sn_v", _l2normalize(torch.randn(in_dim, generator=g)))

    @torch.no_grad()
    def reset_spectral_state(self, n_power_iterations: int = 15) -> None:
        """Re-converge u, v to the current weight (call after re-initializing it)."""
        _, u, v, _ = spectral_normalize(self.weight, self.sn_u, self.sn_v, n_power_iterations)
        self.sn_u.copy_(u)
        self.sn_v.copy_(v)

    def normalized_weight(self) -> torch.Tensor:
        iters = 1 if self.training else 0
        w, u, v, _ = spectral_normalize(
            self.weight, self.sn_u.to(self.weight.dtype), self.sn_v.to(self.weight.dtype), iters
        )
        if iters:
            with torch.no_grad():
                self.sn_u.copy_(u)
                self.sn_v.copy_(v)
        return w


class SNConv2d(_SpectralNormMixin, nn.Conv2d):
    def __init__(self, in_ch, out_ch, kernel_size=3, bias=True):
        super().__init__(in_ch, out_ch, kernel_size, padding=kernel_size // 2, bias=bias)
        self._init_sn()

    def forward(self, x):
        return F.conv2d(x, self.normalized_weight(), self.bias, self.stride, self.padding)


class SNLinear(_SpectralNormMixin, nn.Linear):
    def __init__(self, in_features, out_features, bias=True):
        super().__init__(in_features, out_features, bias=bias)
        self._init_sn()

    def forward(self, x):
        return F.linear(x, self.normalized_weight(), self.bias)


def pixel_shuffle(x: torch.Tensor, r: int) -> torch.Tensor:
    """Depth-to-space: (N, r*r*C, h, w) -> (N, C, r*h, r*w)."""
    if x.shape[-3] % (r * r):
        raise ValueError(f"channel count {x.shape[-3]} not divisible by r^2={r * r}")
    return F.pixel_shuffle(x, r)


def pixel_unshuffle(x: torch.Tensor, r: int) -> torch.Tensor:
    return F.pixel_unshuffle(x, r)


class ResBlock(nn.Module):
    """x + conv(relu(conv(relu(x)))), spectrally normalized 3x3 convs."""

    def __init__(self, ch: int):
        super().__init__()
        self.conv1 = SNConv2d(ch, ch, 3)
        self.conv2 = SNConv2d(ch, ch, 3)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(F.relu(x))))


class PixelShuffleUp(nn.Module):
    def __init__(self, ch: int, r: int = 2):
        super().__init__()
        self.conv = SNConv2d(ch, ch * r * r, 3)
        self.r = r

    def forward(self, x):
        return pixel_shuffle(self.conv(x), self.r)


class DegradationBranch(nn.Module):
    """Encoder-decoder mapping an HR image plus noise plane to a quarter-size image.

    head: conv + 2x2 average pool; encoder: three groups of ResBlocks, each
    followed by 2x2 average pooling; decoder: three groups of ResBlocks, the
    first two followed by x2 pixel shuffle; tail: (ResBlock, conv, ReLU) then
    (ResBlock, conv, Tanh). The groups are separate modules so that variants
    can share them between branches.
    """

    in_channels = 4
    downscale = 16

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        c = cfg.base_channels
        per_group = cfg.degrade_blocks // 6
        self.head = nn.Sequential(SNConv2d(self.in_channels, c, 3), nn.AvgPool2d(2))
        self.encoder = nn.ModuleList(
            nn.Sequential(*[ResBlock(c) for _ in range(per_group)], nn.AvgPool2d(2)) for _ in range(3)
        )
        self.decoder = nn.ModuleList(
            nn.Sequential(*[ResBlock(c) for _ in range(per_group)], PixelShuffleUp(c)) for _ in range(2)
        )
        self.decoder.append(nn.Sequential(*[ResBlock(c) for _ in range(per_group)]))
        self.tail = nn.Sequential(ResBlock(c), SNConv2d(c, c, 3), nn.ReLU())
        self.out = nn.Sequential(ResBlock(c), SNConv2d(c, 3, 3), nn.Tanh())

    def forward(self, hr: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        if hr.dim() != 4 or hr.shape[1] != 3:
            raise ValueError(f"expected N x 3 x H x W input, got {tuple(hr.shape)}")
        n, _, h, w = hr.shape
        if h % self.downscale or w % self.downscale:
            raise ValueError(f"input size {(h, w)} must be divisible by {self.downscale}")
        if z.dim() == 3:
            z = z[:, None]
        if tuple(z.shape) != (n, 1, h, w):
            raise ValueError(f"noise shape {tuple(z.shape)} does not match image {(n, 1, h, w)}")
        x = self.head(torch.cat([hr, z], dim=1))
        for group in self.encoder:
            x = group(x)
        for group in self.decoder:
            x = group(x)
        return self.out(self.tail(x))


class ResidualGroup(nn.Module):
    def __init__(self, ch: int, n_blocks: int):
        super().__init__()
        self.body = nn.Sequential(*[ResBlock(ch) for _ in range(n_blocks)], SNConv2d(ch, ch, 3))

    def forward(self, x):
        return x + self.body(x)


class RestorationBranch(nn.Module):
    """x4 super-resolution network: residual groups, two bilinear x2 upsamples."""

    def __init__(self, cfg: ArchConfig):
        super().__init__()
        c = cfg.base_channels
        self.head = SNConv2d(3, c, 3)
        self.groups = nn.Sequential(*[ResidualGroup(c, n) for n in cfg.restore_groups])
        self.up1 = nn.Sequential(ResBlock(c), SNConv2d(c, c, 3))
        self.up2 = nn.Sequential(ResBlock(c), SNConv2d(c, c, 1))
        self.out = nn.Sequential(ResBlock(c), SNConv2d(c, 3, 1), nn.Tanh())

    def forward(self, lr: torch.Tensor) -> torch.Tensor:
        if lr.dim() != 4 or lr.shape[1] != 3:
            raise ValueError(f"expected N x 3 x h x w input, got {tuple(lr.shape)}")
        x = self.groups(self.head(lr))
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = self.up1(F.relu(x))
        x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
        x = self.up2(F.relu(x))
        return self.out(x)


class Discriminator(nn.Module):
    """Six ResBlocks with max pooling before the last ``n_pools`` of them, then a linear head.

    kind "L" consumes 16 x 16 images (two pools), kind "H" 64 x 64 (four pools);
    both reach 4 x 4 before flattening.
    """

    SIZES = {"L": (16, 2), "H": (64, 4)}

    def __init__(self, kind: str, cfg: ArchConfig):
        super().__init__()
        if kind not in self.SIZES:
            raise ValueError(f"discriminator kind must be 'L' or 'H', got {kind!r}")
        c = cfg.base_channels
        self.kind = kind
        self.input_size, n_pools = self.SIZES[kind]
        layers: list[nn.Module] = [SNConv2d(3, c, 3)]
        for i in range(6):
            if i >= 6 - n_pools:
                layers.append(nn.MaxPool2d(2))
            layers.append(ResBlock(c))
        layers.append(nn.ReLU())
        self.features = nn.Sequential(*layers)
        # no bias: the hinge objectives give it zero gradient while scores sit inside the margins
        self.fc = SNLinear(c * 4 * 4, 1, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        s = self.input_size
        if x.dim() != 4 or tuple(x.shape[1:]) != (3, s, s):
            raise ValueError(f"{self.kind}-type discriminator expects N x 3 x {s} x {s}, got {tuple(x.shape)}")
        return self.fc(self.features(x).flatten(1)).squeeze(1)


def kaiming_init(module: nn.Module, generator: torch.Generator | None = None) -> None:
    """Weights ~ N(0, 2 / fan_in), biases zero, for every conv and linear layer."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu", generator=generator)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        if isinstance(m, _SpectralNormMixin):
            m.reset_spectral_state()


def build_degradation_branch(cfg: ArchConfig, generator: torch.Generator | None = None) -> DegradationBranch:
    net = DegradationBranch(cfg)
    kaiming_init(net, generator)
    return net


def build_restoration_branch(cfg: ArchConfig, generator: torch.Generator | None = None) -> RestorationBranch:
    net = RestorationBranch(cfg)
    kaiming_init(net, generator)
    return net


def build_discriminator(kind: str, cfg: ArchConfig, generator: torch.Generator | None = None) -> Discriminator:
    net = Discriminator(kind, cfg)
    kaiming_init(net, generator)
    return net


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
