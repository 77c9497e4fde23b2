"""Full-reference (PSNR, SSIM) and distribution (FID, KID) image metrics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .imaging import gaussian_kernel

PSNR_IDENTICAL = float("inf")
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2
KID_BLOCK = 100


class NumericalFailure(ArithmeticError):
    pass


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for identical images."""
    a, b = _same_shape(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_IDENTICAL
    return float(10.0 * np.log10(peak**2 / mse))


def ssim(a, b) -> float:
    """Single-scale SSIM, 11x11 Gaussian window (sigma 1.5), valid region, unit peak.

    Color images are scored per channel and averaged.
    """
    a, b = _same_shape(a, b)
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images at least {SSIM_WINDOW} px on each side, got {a.shape[:2]}")
    win = gaussian_kernel(SSIM_SIGMA, SSIM_WINDOW)

    def filt(x):
        v = np.lib.stride_tricks.sliding_window_view(x, (SSIM_WINDOW, SSIM_WINDOW), axis=(0, 1))
        return np.einsum("hwcij,ij->hwc", v, win)

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a**2
    var_b = filt(b * b) - mu_b**2
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + SSIM_C1) * (2 * cov + SSIM_C2)
    den = (mu_a**2 + mu_b**2 + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


@dataclass
class FeatureSet:
    features: np.ndarray
    extractor_id: str

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        if self.features.ndim != 2 or self.features.shape[1] < 1:
            raise ValueError(f"features must be N x D with D >= 1, got {self.features.shape}")

    def __len__(self):
        return self.features.shape[0]


def _features(x) -> np.ndarray:
    return x.features if isinstance(x, FeatureSet) else np.atleast_2d(np.asarray(x, dtype=np.float64))


def _sqrtm_psd(m: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    m = (m + m.T) / 2.0
    w, v = np.linalg.eigh(m)
    floor = -tol * max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.min(initial=0.0) < floor:
        raise NumericalFailure(f"matrix not positive semidefinite: min eigenvalue {w.min():.3e}")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(mu_a, cov_a, mu_b, cov_b) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)) for Gaussian statistics.

    The trace of the product root is taken as Tr((S_a^(1/2) S_b S_a^(1/2))^(1/2)),
    which is the same quantity evaluated on a symmetric matrix.
    """
    mu_a, mu_b = np.atleast_1d(mu_a).astype(np.float64), np.atleast_1d(mu_b).astype(np.float64)
    cov_a, cov_b = np.atleast_2d(cov_a).astype(np.float64), np.atleast_2d(cov_b).astype(np.float64)
    if mu_a.shape != mu_b.shape or cov_a.shape != cov_b.shape or cov_a.shape != (mu_a.size, mu_a.size):
        raise ValueError("statistics have inconsistent dimensions")
    root_a = _sqrtm_psd(cov_a)
    inner = _sqrtm_psd(root_a @ cov_b @ root_a)
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(inner))
    return max(value, 0.0)


def fid(fa, fb) -> float:
    a, b = _features(fa), _features(fb)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    if len(a) < 2 or len(b) < 2:
        raise ValueError("FID needs at least 2 samples per set")
    return frechet_distance(a.mean(0), np.cov(a, rowvar=False), b.mean(0), np.cov(b, rowvar=False))


def polynomial_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return (x @ y.T / x.shape[1] + 1.0) ** 3


def mmd2_unbiased(x: np.ndarray, y: np.ndarray) -> float:
    """Unbiased squared MMD under the cubic polynomial kernel."""
    m, n = len(x), len(y)
    if m < 2 or n < 2:
        raise ValueError("unbiased MMD needs at least 2 samples per set")
    kxx, kyy, kxy = polynomial_kernel(x, x), polynomial_kernel(y, y), polynomial_kernel(x, y)
    sxx = (kxx.sum() - np.trace(kxx)) / (m * (m - 1))
    syy = (kyy.sum() - np.trace(kyy)) / (n * (n - 1))
    return float(sxx + syy - 2.0 * kxy.mean())


def kid(fa, fb, block_size: int = KID_BLOCK, scale: float = 1e3,
        rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Kernel Inception Distance as (mean, std) over disjoint blocks, multiplied by ``scale``.

    Blocks have ``min(N_a, N_b, block_size)`` rows drawn without replacement
    after a shuffle; at least one block is always used.
    """
    a, b = _features(fa), _features(fb)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    m = min(len(a), len(b), block_size)
    if m < 2:
        raise ValueError("KID needs at least 2 samples per block")
    rng = rng if rng is not None else np.random.default_rng(0)
    pa, pb = rng.permutation(len(a)), rng.permutation(len(b))
    n_blocks = max(1, min(len(a), len(b)) // m)
    vals = np.array([
        mmd2_unbiased(a[pa[i * m:(i + 1) * m]], b[pb[i * m:(i + 1) * m]]) for i in range(n_blocks)
    ])
    return float(vals.mean() * scale), float(vals.std() * scale)


class PixelExtractor:
    """Grayscale image area-resized to 8 x 8 and flattened (D = 64)."""

    extractor_id = "pixel8x8"

    def __call__(self, img: np.ndarray) -> np.ndarray:
        img = np.asarray(img, dtype=np.float64)
        gray = img.mean(axis=2) if img.ndim == 3 else img
        t = torch.from_numpy(np.ascontiguousarray(gray))[None, None]
        return F.interpolate(t, size=(8, 8), mode="area")[0, 0].numpy().reshape(-1)


class RandomConvExtractor:
    """Fixed-seed, randomly initialized conv embedder; stands in for an Inception network.

    Three stride-2 conv + ReLU layers, global average and max pooling of the
    last map; D = 2 * width. Inputs are resized to 64 x 64.
    """

    def __init__(self, width: int = 32, seed: int = 0):
        g = torch.Generator().manual_seed(seed)
        self.net = nn.Sequential(
            nn.Conv2d(3, width, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(width, width, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(width, width, 3, stride=2, padding=1), nn.ReLU(),
        ).double().eval()
        for m in self.net:
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, nonlinearity="relu", generator=g)
                nn.init.zeros_(m.bias)
        self.extractor_id = f"randconv-w{width}-s{seed}"

    @torch.no_grad()
    def __call__(self, img: np.ndarray) -> np.ndarray:
        img = np.asarray(img, dtype=np.float64)
        if img.ndim == 2:
            img = np.repeat(img[:, :, None], 3, axis=2)
        x = torch.from_numpy(np.ascontiguousarray(img)).permute(2, 0, 1)[None] * 2.0 - 1.0
        x = F.interpolate(x, size=(64, 64), mode="bilinear", align_corners=False)
        f = self.net(x)
        return torch.cat([f.mean(dim=(2, 3)), f.amax(dim=(2, 3))], dim=1)[0].numpy()


EXTRACTORS: dict[str, Callable[[], Callable]] = {
    "pixel": PixelExtractor,
    "randconv": RandomConvExtractor,
}


def extract_features(images: Sequence[np.ndarray], extractor) -> FeatureSet:
    rows = []
    for i, img in enumerate(images):
        try:
            rows.append(np.asarray(extractor(img), dtype=np.float64).reshape(-1))
        except Exception as e:
            raise RuntimeError(f"feature extraction failed on image {i}: {e}") from e
    ident = getattr(extractor, "extractor_id", type(extractor).__name__)
    return FeatureSet(np.stack(rows), ident)
