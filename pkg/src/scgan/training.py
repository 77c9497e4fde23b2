"""Training: one step, the learning-rate schedule, checkpoints and the epoch loop."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, model_validator

from .losses import (
    LossTerms,
    LossWeights,
    composite_losses,
    cycle_loss_backward,
    cycle_loss_forward,
    hinge_disc_loss,
    hinge_gen_loss,
    pixel_loss_real,
    pixel_loss_synth,
)
from .networks import ArchConfig
from .variants import ModelBundle, VariantSpec, build_models

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "scgan-checkpoint"
CHECKPOINT_VERSION = 1
METRIC_KEYS = ("step", "lr", "l_DHL", "l_RLS", "l_DSL", "d_L1", "d_L2", "d_H1", "d_H2")


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    epochs: int = 200
    batch_size: int = 64
    lr_max: float = 1e-4
    lr_min: float = 1e-5
    anneal_period_epochs: int = 10
    # warm_restarts: cosine from lr_max to lr_min within each period, then restart.
    # stepped: one cosine over all epochs, held constant within each period.
    lr_schedule: Literal["warm_restarts", "stepped"] = "warm_restarts"
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    weights: LossWeights = LossWeights()
    seed: int = 0
    variant: VariantSpec = VariantSpec()
    steps_per_epoch: int | None = None

    @model_validator(mode="after")
    def _check(self):
        if not self.lr_min < self.lr_max:
            raise ValueError("lr_min must be below lr_max")
        if self.anneal_period_epochs < 1:
            raise ValueError("anneal_period_epochs must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        return self


def cosine_lr(epoch: float, cfg: TrainConfig) -> float:
    """Learning rate at ``epoch``; fractional epochs give the within-epoch value."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    period = cfg.anneal_period_epochs
    if cfg.lr_schedule == "warm_restarts":
        phase = (epoch % period) / period
    else:
        phase = min(period * (epoch // period) / cfg.epochs, 1.0)
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + math.cos(math.pi * phase))


class NonFiniteLossError(RuntimeError):
    pass


@dataclass
class Optimizers:
    generators: torch.optim.Optimizer | None
    discriminators: dict[str, torch.optim.Optimizer] = field(default_factory=dict)

    def all(self) -> list[torch.optim.Optimizer]:
        opts = [self.generators] if self.generators is not None else []
        return opts + [self.discriminators[k] for k in sorted(self.discriminators)]

    def set_lr(self, lr: float) -> None:
        for opt in self.all():
            for group in opt.param_groups:
                group["lr"] = lr

    def state_dict(self) -> dict:
        return {
            "generators": self.generators.state_dict() if self.generators is not None else None,
            "discriminators": {k: v.state_dict() for k, v in self.discriminators.items()},
        }

    def load_state_dict(self, state: dict) -> None:
        if self.generators is not None:
            self.generators.load_state_dict(state["generators"])
        for k, v in self.discriminators.items():
            v.load_state_dict(state["discriminators"][k])


def make_optimizers(models: ModelBundle, cfg: TrainConfig) -> Optimizers:
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    gen = torch.optim.Adam(models.generator_parameters(), lr=cfg.lr_max, betas=betas)
    discs = {
        name: torch.optim.Adam(models.disc(name).parameters(), lr=cfg.lr_max, betas=betas)
        for name in models.variant.discriminators()
    }
    return Optimizers(gen, discs)


@dataclass
class StepMetrics:
    composites: dict
    disc: dict
    terms: dict

    def record(self, step: int, lr: float) -> dict:
        row = {"step": step, "lr": lr, **self.composites}
        for name in ("L1", "L2", "H1", "H2"):
            row[f"d_{name}"] = self.disc.get(name)
        return row


class _frozen:
    """Freeze a discriminator for the generator phase: no grads, no SN state updates."""

    def __init__(self, net):
        self.net = net

    def __enter__(self):
        self.was_training = self.net.training
        self.net.eval()
        self.net.requires_grad_(False)
        return self.net

    def __exit__(self, *exc):
        self.net.requires_grad_(True)
        self.net.train(self.was_training)


def _finite(name: str, value: torch.Tensor) -> None:
    if not torch.isfinite(value).all():
        raise NonFiniteLossError(f"non-finite {name}: {value.item()}")


def train_step(
    models: ModelBundle,
    batch_hr: torch.Tensor,
    batch_lr: torch.Tensor,
    optimizers: Optimizers,
    weights: LossWeights,
    generator: torch.Generator | None = None,
) -> StepMetrics:
    """One discriminator update followed by one joint generator update.

    ``batch_hr`` is N x 3 x H x W and ``batch_lr`` M x 3 x H/4 x W/4, both in
    model11. ``generator`` drives the noise planes fed to the degradation
    branches.
    """
    variant = models.variant
    scale = models.arch.scale
    if batch_hr.dim() != 4 or batch_lr.dim() != 4:
        raise ValueError("batches must be N x C x H x W")
    if tuple(batch_hr.shape[-2:]) != (scale * batch_lr.shape[-2], scale * batch_lr.shape[-1]):
        raise ValueError(f"HR batch {tuple(batch_hr.shape)} is not {scale}x LR batch {tuple(batch_lr.shape)}")
    models.train()

    fakes: dict[str, torch.Tensor] = {}
    reals: dict[str, torch.Tensor] = {}
    if variant.has_forward:
        n, _, h, w = batch_hr.shape
        z = torch.randn(n, 1, h, w, generator=generator, dtype=batch_hr.dtype)
        synth_lr = models.D_HL(batch_hr, z)
        synth_sr = models.R_LS(synth_lr)
        fakes.update(L1=synth_lr, H1=synth_sr)
        reals.update(L1=batch_lr, H1=batch_hr)
    if variant.has_backward:
        real_sr = models.restore_real(batch_lr)
        m, _, h, w = real_sr.shape
        z = torch.randn(m, 1, h, w, generator=generator, dtype=real_sr.dtype)
        recon_lr = models.D_SL(real_sr, z)
        fakes.update(L2=recon_lr, H2=real_sr)
        reals.update(L2=batch_lr, H2=batch_hr)

    active = variant.active_adversarial()
    disc_losses = {}
    if active:
        for name in active:
            real, fake = reals[name], fakes[name].detach()
            scores = models.disc(name)(torch.cat([real, fake]))
            disc_losses[name] = hinge_disc_loss(scores[: len(real)], scores[len(real):])
            _finite(f"d_{name}", disc_losses[name])
        for name in active:
            optimizers.discriminators[name].zero_grad(set_to_none=True)
        sum(disc_losses.values()).backward()
        for name in active:
            optimizers.discriminators[name].step()

    terms = LossTerms()
    for name in active:
        with _frozen(models.disc(name)) as d:
            setattr(terms, f"adv_{name}", hinge_gen_loss(d(fakes[name])))
    if variant.has_forward:
        if variant.use_pixel:
            terms.pix_synth = pixel_loss_synth(fakes["L1"], batch_hr, scale)
        if variant.use_cycle:
            terms.cyc_forward = cycle_loss_forward(fakes["H1"], batch_hr)
    if variant.has_backward:
        if variant.use_pixel:
            terms.pix_real = pixel_loss_real(fakes["H2"], batch_lr, scale)
        if variant.use_cycle:
            terms.cyc_backward = cycle_loss_backward(fakes["L2"], batch_lr)

    comps = composite_losses(terms, weights)
    total = comps["l_DHL"] + comps["l_RLS"] + comps["l_DSL"]
    if isinstance(total, torch.Tensor):
        _finite("generator objective", total)
        optimizers.generators.zero_grad(set_to_none=True)
        total.backward()
        optimizers.generators.step()

    def scalar(v):
        return float(v.detach() if isinstance(v, torch.Tensor) else v) if v is not None else None

    present = {
        "l_DHL": variant.has_forward,
        "l_RLS": True,
        "l_DSL": variant.has_backward,
    }
    return StepMetrics(
        composites={k: (scalar(v) if present[k] else None) for k, v in comps.items()},
        disc={k: scalar(v) for k, v in disc_losses.items()},
        terms={k: scalar(v) for k, v in vars(terms).items()},
    )


def content_hash(payload: dict) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def model_hash(arch: ArchConfig, variant: VariantSpec) -> str:
    """Digest of everything that determines the parameter layout."""
    return content_hash({"arch": arch.model_dump(mode="json"), "variant": variant.model_dump(mode="json")})


def save_checkpoint(path: Path, models: ModelBundle, optimizers: Optimizers | None, *,
                    epoch: int, step: int, config: dict, config_hash: str,
                    rng: np.random.Generator | None = None, generator: torch.Generator | None = None) -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "arch": models.arch.model_dump(mode="json"),
        "variant": models.variant.model_dump(mode="json"),
        "model_hash": model_hash(models.arch, models.variant),
        "config_hash": config_hash,
        "config": config,
        "epoch": epoch,
        "step": step,
    }
    payload = {
        "header": json.dumps(header, sort_keys=True),
        "models": models.state_dict(),
        "optimizers": optimizers.state_dict() if optimizers is not None else None,
        "numpy_rng": json.dumps(rng.bit_generator.state) if rng is not None else None,
        "torch_rng": generator.get_state() if generator is not None else None,
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        torch.save(payload, tmp)
        os.replace(tmp, path)
    except OSError as e:
        raise OSError(f"failed to write checkpoint {path}: {e}") from e


def read_checkpoint(path) -> tuple[dict, dict]:
    """Return (header, payload) of a checkpoint file."""
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except OSError as e:
        raise OSError(f"failed to read checkpoint {path}: {e}") from e
    header = json.loads(payload["header"])
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a checkpoint of this package")
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
    return header, payload


def load_models(path, arch: ArchConfig | None = None, variant: VariantSpec | None = None) -> tuple[ModelBundle, dict]:
    """Rebuild the bundle stored in a checkpoint.

    When ``arch``/``variant`` are given they must hash to the stored layout.
    """
    header, payload = read_checkpoint(path)
    stored_arch = ArchConfig.model_validate(header["arch"])
    stored_variant = VariantSpec.model_validate(header["variant"])
    if arch is not None or variant is not None:
        want = model_hash(arch or stored_arch, variant or stored_variant)
        if want != header["model_hash"]:
            raise ValueError(f"{path}: checkpoint layout {header['model_hash']} does not match requested {want}")
    models = build_models(stored_variant, stored_arch)
    models.load_state_dict(payload["models"])
    return models, header


@dataclass
class TrainResult:
    checkpoints: list[Path]
    metrics_path: Path
    history: list[dict]


def _write_json(path: Path, obj) -> None:
    try:
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    except OSError as e:
        raise OSError(f"failed to write {path}: {e}") from e


def train(cfg: TrainConfig, arch: ArchConfig, dataset, out_dir, *, resume=None,
          config_hash: str | None = None, config: dict | None = None) -> TrainResult:
    """Run ``cfg.epochs`` epochs over an unpaired dataset, checkpointing each epoch.

    Writes ``metrics.jsonl`` (one object per step), ``epoch_{N}.json`` and
    ``epoch_{N}.ckpt`` into ``out_dir``. Deterministic for a fixed seed when
    data loading is single-threaded. With ``resume`` the run continues from the
    given checkpoint and reproduces the uninterrupted run's later steps.
    """
    from .data import sample_batch

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = config if config is not None else {"train": cfg.model_dump(mode="json"),
                                                 "arch": arch.model_dump(mode="json")}
    config_hash = config_hash or content_hash(config)

    torch.manual_seed(cfg.seed)
    models = build_models(cfg.variant, arch, cfg.seed)
    optimizers = make_optimizers(models, cfg)
    rng = np.random.default_rng(cfg.seed)
    noise = torch.Generator().manual_seed(cfg.seed + 1)
    steps_per_epoch = cfg.steps_per_epoch or math.ceil(max(len(dataset.hr), len(dataset.lr)) / cfg.batch_size)

    start_epoch, step = 0, 0
    metrics_path = out_dir / "metrics.jsonl"
    history: list[dict] = []
    if resume is not None:
        header, payload = read_checkpoint(resume)
        if header["model_hash"] != model_hash(arch, cfg.variant):
            raise ValueError(f"{resume}: checkpoint layout does not match the configured model")
        models.load_state_dict(payload["models"])
        optimizers.load_state_dict(payload["optimizers"])
        rng.bit_generator.state = json.loads(payload["numpy_rng"])
        noise.set_state(payload["torch_rng"])
        start_epoch, step = header["epoch"], header["step"]
        if metrics_path.exists():
            kept = [json.loads(line) for line in metrics_path.read_text().splitlines() if line.strip()]
            history = [r for r in kept if r["step"] <= step]
    metrics_path.write_text("".join(json.dumps(r) + "\n" for r in history))

    checkpoints = []
    with metrics_path.open("a") as log_file:
        for epoch in range(start_epoch, cfg.epochs):
            lr = cosine_lr(epoch, cfg)
            optimizers.set_lr(lr)
            rows = []
            for _ in range(steps_per_epoch):
                hr, lr_batch = sample_batch(dataset, cfg.batch_size, rng)
                try:
                    metrics = train_step(models, hr, lr_batch, optimizers, cfg.weights, noise)
                except NonFiniteLossError as e:
                    last = checkpoints[-1] if checkpoints else resume
                    raise NonFiniteLossError(f"{e} at step {step + 1}; last good checkpoint: {last}") from e
                step += 1
                row = metrics.record(step, lr)
                rows.append(row)
                log_file.write(json.dumps(row) + "\n")
            log_file.flush()
            history.extend(rows)

            summary = {"epoch": epoch + 1, "steps": step, "lr": lr, "config_hash": config_hash}
            for key in METRIC_KEYS[2:]:
                vals = [r[key] for r in rows if r[key] is not None]
                summary[key] = float(np.mean(vals)) if vals else None
            _write_json(out_dir / f"epoch_{epoch + 1}.json", summary)
            ckpt = out_dir / f"epoch_{epoch + 1}.ckpt"
            save_checkpoint(ckpt, models, optimizers, epoch=epoch + 1, step=step, config=config,
                            config_hash=config_hash, rng=rng, generator=noise)
            checkpoints.append(ckpt)
            log.info("epoch %d/%d done (step %d, lr %.3g)", epoch + 1, cfg.epochs, step, lr)
    return TrainResult(checkpoints, metrics_path, history)
