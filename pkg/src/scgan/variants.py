"""Ablation variants and construction of the model bundle.

A ``VariantSpec`` describes topology, parameter sharing between the two
degradation branches, which adversarial / pixel / cycle terms are active, and
the depth of each degradation branch. ``build_models`` turns it into a
``ModelBundle`` in which shared parts are literally the same modules.
"""

from __future__ import annotations

import itertools
from typing import Literal

import torch
import torch.nn as nn
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from .networks import (
    ArchConfig,
    build_degradation_branch,
    build_discriminator,
    build_restoration_branch,
)

ADV_NAMES = ("L1", "L2", "H1", "H2")
TOPOLOGIES = ("scgan", "no_DSL", "no_DHL", "fc", "two_sr")
SHARING = ("none", "SA", "SE", "SD", "SM")

# Submodules of DegradationBranch aliased between D_HL and D_SL per sharing scheme.
SHARED_PARTS = {
    "SA": ("encoder", "decoder", "tail"),
    "SE": ("encoder",),
    "SD": ("decoder",),
    "SM": ("encoder.1", "encoder.2", "decoder.0", "decoder.1"),
}


class VariantSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    topology: Literal["scgan", "no_DSL", "no_DHL", "fc", "two_sr"] = "scgan"
    sharing: Literal["none", "SA", "SE", "SD", "SM"] = "none"
    adv_mask: tuple[bool, bool, bool, bool] = (True, True, True, True)
    # (adversarial, pixel, cycle)
    loss_mask: tuple[bool, bool, bool] = (True, True, True)
    degrade_blocks_DHL: int = 12
    degrade_blocks_DSL: int = 12

    @field_validator("degrade_blocks_DHL", "degrade_blocks_DSL")
    @classmethod
    def _depth(cls, v):
        if v not in (6, 12):
            raise ValueError("degradation depth must be 6 or 12")
        return v

    @model_validator(mode="after")
    def _combination(self):
        if self.sharing != "none" and self.topology != "scgan":
            raise ValueError(f"sharing {self.sharing!r} requires topology 'scgan', got {self.topology!r}")
        same_depth_needed = self.sharing != "none" or self.topology in ("fc", "two_sr")
        if same_depth_needed and self.degrade_blocks_DHL != self.degrade_blocks_DSL:
            raise ValueError("shared degradation parameters require equal branch depths")
        return self

    @property
    def has_forward(self) -> bool:
        return self.topology != "no_DHL"

    @property
    def has_backward(self) -> bool:
        return self.topology != "no_DSL"

    def discriminators(self) -> tuple[str, ...]:
        """Discriminators that exist under this topology."""
        names = []
        if self.has_forward:
            names += ["L1", "H1"]
        if self.has_backward:
            names += ["L2", "H2"]
        return tuple(n for n in ADV_NAMES if n in names)

    def active_adversarial(self) -> tuple[str, ...]:
        """Discriminators whose adversarial term is trained."""
        if not self.loss_mask[0]:
            return ()
        mask = dict(zip(ADV_NAMES, self.adv_mask))
        return tuple(n for n in self.discriminators() if mask[n])

    @property
    def use_pixel(self) -> bool:
        return self.loss_mask[1]

    @property
    def use_cycle(self) -> bool:
        return self.loss_mask[2]


def adv_variant_name(mask) -> str:
    """Name of an adversarial-loss mask, e.g. (0, 1, 1, 1) -> 'l_adv-1-1'."""
    mask = tuple(bool(m) for m in mask)
    removed = 4 - sum(mask)
    if removed == 0:
        return "scgan"
    return f"l_adv-{removed}-{ADV_MASKS[removed].index(mask) + 1}"


def _table_order(removed: int) -> list[tuple[bool, ...]]:
    # Within a removal count, variants are ordered by the binary value of
    # (L1, L2, H1, H2) ascending.
    combos = [c for c in itertools.product((False, True), repeat=4) if 4 - sum(c) == removed]
    return sorted(combos, key=lambda c: int("".join("1" if b else "0" for b in c), 2))


ADV_MASKS = {k: _table_order(k) for k in range(5)}


def named_variants() -> dict[str, VariantSpec]:
    out = {
        "scgan": VariantSpec(),
        "w/o-DSL": VariantSpec(topology="no_DSL"),
        "w/o-DHL": VariantSpec(topology="no_DHL"),
        "fc": VariantSpec(topology="fc"),
        "2SR": VariantSpec(topology="two_sr"),
        "w/o-AL": VariantSpec(loss_mask=(False, True, True)),
        "w/o-PL": VariantSpec(loss_mask=(True, False, True)),
        "w/o-CL": VariantSpec(loss_mask=(True, True, False)),
        "DHL-6": VariantSpec(degrade_blocks_DHL=6),
        "DSL-6": VariantSpec(degrade_blocks_DSL=6),
    }
    for s in ("SA", "SE", "SD", "SM"):
        out[s] = VariantSpec(sharing=s)
    for masks in ADV_MASKS.values():
        for m in masks:
            name = adv_variant_name(m)
            if name != "scgan":
                out[name] = VariantSpec(adv_mask=m)
    return out


def adv_mask_grid() -> list[tuple[str, VariantSpec]]:
    """The 16 adversarial-loss combinations, full set first."""
    grid = []
    for removed in range(5):
        for m in ADV_MASKS[removed]:
            grid.append((adv_variant_name(m), VariantSpec(adv_mask=m)))
    return grid


class ModelBundle(nn.Module):
    """Generators D_HL, R_LS, D_SL (and R_RS for two_sr) plus discriminators D_L1, D_L2, D_H1, D_H2.

    Absent networks are ``None``.
    """

    GENERATORS = ("D_HL", "R_LS", "D_SL", "R_RS")
    DISCRIMINATORS = tuple(f"D_{n}" for n in ADV_NAMES)

    def __init__(self, variant: VariantSpec, arch: ArchConfig, nets: dict[str, nn.Module]):
        super().__init__()
        self.variant = variant
        self.arch = arch
        for name in self.GENERATORS + self.DISCRIMINATORS:
            setattr(self, name, nets.get(name))

    @property
    def restore_real(self) -> nn.Module:
        """Restoration network applied to real LR images."""
        return self.R_RS if self.R_RS is not None else self.R_LS

    def disc(self, name: str) -> nn.Module:
        return getattr(self, f"D_{name}")

    def generator_parameters(self) -> list[nn.Parameter]:
        return _unique_params(getattr(self, n) for n in self.GENERATORS)

    def discriminator_parameters(self) -> list[nn.Parameter]:
        return _unique_params(getattr(self, n) for n in self.DISCRIMINATORS)


def _unique_params(modules) -> list[nn.Parameter]:
    seen, out = set(), []
    for m in modules:
        if m is None:
            continue
        for p in m.parameters():
            if id(p) not in seen:
                seen.add(id(p))
                out.append(p)
    return out


def _share(target: nn.Module, source: nn.Module, path: str) -> None:
    *parents, leaf = path.split(".")
    t, s = target, source
    for p in parents:
        t, s = t.get_submodule(p), s.get_submodule(p)
    if isinstance(t, nn.ModuleList):
        t[int(leaf)] = s[int(leaf)]
    else:
        setattr(t, leaf, getattr(s, leaf))


def build_models(variant: VariantSpec, arch: ArchConfig, seed: int = 0) -> ModelBundle:
    """Construct and Kaiming-initialize every network the variant needs."""
    g = torch.Generator().manual_seed(seed)
    nets: dict[str, nn.Module] = {}
    arch_hl = arch.model_copy(update={"degrade_blocks": variant.degrade_blocks_DHL})
    arch_sl = arch.model_copy(update={"degrade_blocks": variant.degrade_blocks_DSL})

    topo = variant.topology
    if topo in ("fc", "two_sr"):
        shared = build_degradation_branch(arch_hl, g)
        nets["D_HL"] = nets["D_SL"] = shared
    else:
        if variant.has_forward:
            nets["D_HL"] = build_degradation_branch(arch_hl, g)
        if variant.has_backward:
            nets["D_SL"] = build_degradation_branch(arch_sl, g)
    nets["R_LS"] = build_restoration_branch(arch, g)
    if topo == "two_sr":
        nets["R_RS"] = build_restoration_branch(arch, g)

    if variant.sharing != "none":
        for part in SHARED_PARTS[variant.sharing]:
            _share(nets["D_SL"], nets["D_HL"], part)

    for name in variant.discriminators():
        nets[f"D_{name}"] = build_discriminator(name[0], arch, g)
    return ModelBundle(variant, arch, nets)
