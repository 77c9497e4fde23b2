"""Image primitives and the random synthetic degradation pipeline.

Images are float numpy arrays laid out H x W x C (or H x W for a single
channel). Two value domains are used: ``file01`` in [0, 1] for I/O and the
degradation pipeline, ``model11`` in [-1, 1] for the networks.
"""

from __future__ import annotations

import io
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

SIGMA_RANGE = (0.5, 8.0)
DELTA_RANGE = (1.0, 25.0)
QUALITY_RANGE = (30, 95)
RESAMPLE_MODES = ("bilinear", "bicubic")
MAX_KERNEL_SIZE = 21


@dataclass(frozen=True)
class DegradationParams:
    sigma: float
    mode: str
    delta: float
    quality: int

    def to_dict(self) -> dict:
        return asdict(self)


def to_model11(img: np.ndarray) -> np.ndarray:
    return img * 2.0 - 1.0


def to_file01(img: np.ndarray) -> np.ndarray:
    return (img + 1.0) / 2.0


def _as_hwc(img: np.ndarray) -> tuple[np.ndarray, bool]:
    img = np.asarray(img)
    if img.ndim == 2:
        return img[:, :, None], True
    if img.ndim != 3:
        raise ValueError(f"expected an H x W or H x W x C image, got shape {img.shape}")
    return img, False


def gaussian_kernel(sigma: float, size: int | None = None) -> np.ndarray:
    """Normalized isotropic 2-D Gaussian kernel.

    ``size`` defaults to ``2 * ceil(3 * sigma) + 1`` capped at 21.
    """
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if size is None:
        size = min(2 * math.ceil(3 * sigma) + 1, MAX_KERNEL_SIZE)
    if size < 3 or size % 2 == 0:
        raise ValueError(f"kernel size must be odd and >= 3, got {size}")
    r = size // 2
    ax = np.arange(-r, r + 1, dtype=np.float64)
    xx, yy = np.meshgrid(ax, ax, indexing="ij")
    k = np.exp(-(xx**2 + yy**2) / (2.0 * sigma**2))
    return k / k.sum()


def convolve_blur(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Per-channel 2-D convolution with whole-sample reflect padding.

    The output has the input's shape. Kernels used here are symmetric, so the
    flip that distinguishes convolution from correlation is applied but moot.
    """
    x, squeeze = _as_hwc(img)
    kernel = np.asarray(kernel, dtype=np.float64)
    kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("kernel dimensions must be odd")
    h, w = x.shape[:2]
    if kh > h or kw > w:
        raise ValueError(f"kernel {kernel.shape} larger than image {(h, w)}")
    ph, pw = kh // 2, kw // 2
    padded = np.pad(x.astype(np.float64), ((ph, ph), (pw, pw), (0, 0)), mode="reflect")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(0, 1))
    # windows: H x W x C x kh x kw
    out = np.einsum("hwcij,ij->hwc", windows, kernel[::-1, ::-1])
    return out[:, :, 0] if squeeze else out


def resample(img: np.ndarray, factor: float, mode: str = "bicubic") -> np.ndarray:
    """Resize by ``factor`` with half-pixel-centred interpolation (no antialiasing)."""
    if mode not in RESAMPLE_MODES:
        raise ValueError(f"mode must be one of {RESAMPLE_MODES}, got {mode!r}")
    if not factor > 0:
        raise ValueError(f"factor must be positive, got {factor}")
    x, squeeze = _as_hwc(img)
    h, w = x.shape[:2]
    oh, ow = round(h * factor), round(w * factor)
    if oh < 1 or ow < 1:
        raise ValueError(f"resampling {(h, w)} by {factor} gives degenerate size {(oh, ow)}")
    t = torch.from_numpy(np.ascontiguousarray(x, dtype=np.float64)).permute(2, 0, 1)[None]
    out = F.interpolate(t, size=(oh, ow), mode=mode, align_corners=False)
    out = out[0].permute(1, 2, 0).numpy()
    return out[:, :, 0] if squeeze else out


def average_pool(img: np.ndarray, factor: int) -> np.ndarray:
    x, squeeze = _as_hwc(img)
    h, w, c = x.shape
    if factor < 1 or h % factor or w % factor:
        raise ValueError(f"image {(h, w)} not divisible by pooling factor {factor}")
    out = x.reshape(h // factor, factor, w // factor, factor, c).mean(axis=(1, 3))
    return out[:, :, 0] if squeeze else out


def add_gaussian_noise(img: np.ndarray, delta: float, rng: np.random.Generator) -> np.ndarray:
    """Add white Gaussian noise with std ``delta / 255`` (file01 domain)."""
    if delta < 0:
        raise ValueError(f"noise level must be nonnegative, got {delta}")
    if delta == 0:
        return np.array(img, dtype=np.float64, copy=True)
    return img + rng.normal(0.0, delta / 255.0, size=np.shape(img))


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def jpeg_degrade(img: np.ndarray, quality: int) -> np.ndarray:
    """Real JPEG encode/decode round trip through Pillow at ``quality``."""
    if not 1 <= int(quality) <= 100 or int(quality) != quality:
        raise ValueError(f"JPEG quality must be an integer in [1, 100], got {quality}")
    x, squeeze = _as_hwc(img)
    arr = to_uint8(x)
    pil = Image.fromarray(arr[:, :, 0] if arr.shape[2] == 1 else arr)
    buf = io.BytesIO()
    pil.save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    out = np.asarray(Image.open(buf), dtype=np.float64) / 255.0
    if out.ndim == 2:
        out = out[:, :, None]
    return out[:, :, 0] if squeeze else out


def sample_degradation_params(rng: np.random.Generator) -> DegradationParams:
    sigma = float(rng.uniform(*SIGMA_RANGE))
    mode = RESAMPLE_MODES[int(rng.integers(len(RESAMPLE_MODES)))]
    delta = float(rng.uniform(*DELTA_RANGE))
    quality = int(rng.integers(QUALITY_RANGE[0], QUALITY_RANGE[1] + 1))
    return DegradationParams(sigma=sigma, mode=mode, delta=delta, quality=quality)


def apply_degradation(
    hr: np.ndarray, params: DegradationParams, rng: np.random.Generator, scale: int = 4
) -> np.ndarray:
    """blur -> downsample -> additive noise -> JPEG, on a file01 HR image."""
    h, w = np.shape(hr)[:2]
    if h % scale or w % scale:
        raise ValueError(f"HR size {(h, w)} not divisible by {scale}")
    x = convolve_blur(hr, gaussian_kernel(params.sigma))
    x = resample(x, 1.0 / scale, params.mode)
    x = add_gaussian_noise(x, params.delta, rng)
    x = np.clip(x, 0.0, 1.0)
    return jpeg_degrade(x, params.quality)


def degrade_random(hr: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, DegradationParams]:
    """Sample degradation parameters from ``rng``, then degrade ``hr`` with the same stream."""
    h, w = np.shape(hr)[:2]
    if h % 4 or w % 4:
        raise ValueError(f"HR size {(h, w)} not divisible by 4")
    params = sample_degradation_params(rng)
    return apply_degradation(hr, params, rng), params


def read_image(path, mode: str = "RGB") -> np.ndarray:
    """Decode an image file to a file01 float array."""
    with Image.open(path) as im:
        return np.asarray(im.convert(mode), dtype=np.float64) / 255.0


def write_png(path, img: np.ndarray) -> None:
    Image.fromarray(to_uint8(img)).save(path, format="PNG")
