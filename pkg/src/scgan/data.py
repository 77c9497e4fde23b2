"""Unpaired HR/LR corpora, batch sampling, and synthetic test-set construction."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError

from . import imaging

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp"}


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"image directory not found: {directory}")
    return sorted(p for p in directory.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)


def fit_image(im: Image.Image, size: tuple[int, int]) -> Image.Image:
    """Aspect-preserving bicubic resize so the image covers ``size`` (H, W), then center crop."""
    th, tw = size
    w, h = im.size
    if (h, w) == (th, tw):
        return im
    s = max(th / h, tw / w)
    nw, nh = max(tw, round(w * s)), max(th, round(h * s))
    im = im.resize((nw, nh), Image.BICUBIC)
    left, top = (nw - tw) // 2, (nh - th) // 2
    return im.crop((left, top, left + tw, top + th))


def load_image_uint8(path, size: tuple[int, int]) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(fit_image(im.convert("RGB"), size))


def to_model_tensor(images_uint8: np.ndarray) -> torch.Tensor:
    """N x H x W x 3 uint8 -> N x 3 x H x W float32 in [-1, 1]."""
    x = torch.from_numpy(np.ascontiguousarray(images_uint8)).float().div_(127.5).sub_(1.0)
    return x.permute(0, 3, 1, 2).contiguous()


def from_model_tensor(x: torch.Tensor) -> np.ndarray:
    """N x 3 x H x W in [-1, 1] -> N x H x W x 3 file01 float64."""
    x = x.detach().to(torch.float64).clamp(-1.0, 1.0)
    return ((x + 1.0) / 2.0).permute(0, 2, 3, 1).cpu().numpy()


@dataclass
class UnpairedDataset:
    """Decoded HR and LR corpora held as model11 tensors; no correspondence between them."""

    hr: torch.Tensor
    lr: torch.Tensor
    hr_paths: list[Path] = field(default_factory=list)
    lr_paths: list[Path] = field(default_factory=list)
    skipped: list[Path] = field(default_factory=list)

    @property
    def hr_size(self) -> tuple[int, int]:
        return tuple(self.hr.shape[-2:])

    @property
    def lr_size(self) -> tuple[int, int]:
        return tuple(self.lr.shape[-2:])

    def __len__(self):
        return max(len(self.hr), len(self.lr))


def _decode_all(paths, size, skipped):
    out, kept = [], []
    for p in paths:
        try:
            out.append(load_image_uint8(p, size))
            kept.append(p)
        except (UnidentifiedImageError, OSError, ValueError):
            skipped.append(p)
    return out, kept


def load_unpaired(hr_dir, lr_dir, hr_size=(64, 64), lr_size=(16, 16)) -> UnpairedDataset:
    skipped: list[Path] = []
    hr, hr_paths = _decode_all(list_images(hr_dir), tuple(hr_size), skipped)
    lr, lr_paths = _decode_all(list_images(lr_dir), tuple(lr_size), skipped)
    if skipped:
        log.warning("skipped %d undecodable image(s)", len(skipped))
    if not hr:
        raise ValueError(f"no decodable HR images in {hr_dir}")
    if not lr:
        raise ValueError(f"no decodable LR images in {lr_dir}")
    return UnpairedDataset(to_model_tensor(np.stack(hr)), to_model_tensor(np.stack(lr)),
                           hr_paths, lr_paths, skipped)


def sample_batch(ds: UnpairedDataset, n: int, rng: np.random.Generator) -> tuple[torch.Tensor, torch.Tensor]:
    """Independent uniform draws with replacement from each corpus."""
    if n < 1:
        raise ValueError("batch size must be >= 1")
    hi = rng.integers(0, len(ds.hr), size=n)
    li = rng.integers(0, len(ds.lr), size=n)
    return ds.hr[torch.from_numpy(hi)], ds.lr[torch.from_numpy(li)]


def degradation_rng(seed: int, offset: int) -> np.random.Generator:
    return np.random.default_rng([seed, offset])


def build_synthetic_testset(hr_dir, out_dir, seed: int = 0, hr_size=(64, 64)) -> list[dict]:
    """Degrade every HR image in ``hr_dir`` with freshly sampled parameters.

    Writes ``hr/<stem>.png``, ``lr/<stem>.png`` and ``params/<stem>.json`` under
    ``out_dir`` plus ``manifest.json``. Image ``i`` (lexicographic order) uses
    the stream ``default_rng([seed, i])``, so the manifest and seed are enough to
    regenerate each LR image from its stored HR image.
    """
    out_dir = Path(out_dir)
    for sub in ("hr", "lr", "params"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    manifest = []
    for offset, path in enumerate(list_images(hr_dir)):
        hr = load_image_uint8(path, tuple(hr_size)).astype(np.float64) / 255.0
        lr, params = imaging.degrade_random(hr, degradation_rng(seed, offset))
        entry = {
            "lr": f"lr/{path.stem}.png",
            "hr": f"hr/{path.stem}.png",
            **params.to_dict(),
            "seed_offset": offset,
        }
        imaging.write_png(out_dir / entry["hr"], hr)
        imaging.write_png(out_dir / entry["lr"], lr)
        (out_dir / "params" / f"{path.stem}.json").write_text(json.dumps(entry, indent=2, sort_keys=True) + "\n")
        manifest.append(entry)
    if not manifest:
        raise ValueError(f"no HR images in {hr_dir}")
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def replay_degradation(out_dir, entry: dict, seed: int) -> np.ndarray:
    """Regenerate the LR image of a manifest entry from its HR file."""
    hr = imaging.read_image(Path(out_dir) / entry["hr"])
    lr, params = imaging.degrade_random(hr, degradation_rng(seed, entry["seed_offset"]))
    if params.to_dict() != {k: entry[k] for k in ("sigma", "mode", "delta", "quality")}:
        raise ValueError(f"replayed parameters differ from manifest entry {entry['lr']}")
    return lr


def procedural_faces(n: int, size: int, seed: int = 0) -> np.ndarray:
    """Simple face-like test images (N x size x size x 3 uint8): a lit ellipse with eyes and mouth."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1) * 2.0 - 1.0
    out = np.empty((n, size, size, 3), dtype=np.uint8)
    for i in range(n):
        bg = rng.uniform(0.1, 0.9, size=3)
        skin = rng.uniform(0.4, 0.95, size=3)
        cx, cy = rng.uniform(-0.1, 0.1, size=2)
        ax, ay = rng.uniform(0.5, 0.7), rng.uniform(0.65, 0.85)
        face = ((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2 <= 1.0
        light = 0.75 + 0.25 * np.clip(1.0 - (xx - cx + 0.3) ** 2 - (yy - cy + 0.3) ** 2, 0, 1)
        img = np.where(face[..., None], skin * light[..., None], bg + 0.05 * yy[..., None])
        eye_y = cy - 0.2 * ay
        for ex in (cx - 0.35 * ax, cx + 0.35 * ax):
            eye = ((xx - ex) / 0.09) ** 2 + ((yy - eye_y) / 0.06) ** 2 <= 1.0
            img[eye] = 0.1
        mouth = (np.abs(yy - (cy + 0.45 * ay)) < 0.04) & (np.abs(xx - cx) < 0.3 * ax)
        img[mouth] = [0.6, 0.15, 0.15]
        out[i] = imaging.to_uint8(np.clip(img, 0, 1))
    return out


def write_procedural_corpus(out_dir, n: int, size: int, seed: int = 0, degrade: bool = False) -> list[Path]:
    """Write ``n`` procedural face PNGs; with ``degrade`` each is randomly degraded to size / 4."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, img in enumerate(procedural_faces(n, size, seed)):
        x = img.astype(np.float64) / 255.0
        if degrade:
            x, _ = imaging.degrade_random(x, degradation_rng(seed, i))
        p = out_dir / f"{i:04d}.png"
        imaging.write_png(p, x)
        paths.append(p)
    return paths
