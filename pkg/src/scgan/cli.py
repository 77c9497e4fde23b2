"""Command line interface: train, sr, degrade, eval, make-variant-grid.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, ValidationError

from . import data, evaluation, imaging, plotting
from .networks import ArchConfig
from .training import NonFiniteLossError, TrainConfig, content_hash, load_models, read_checkpoint, train
from .variants import adv_mask_grid, named_variants

log = logging.getLogger("scgan")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class Paths(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    hr_dir: str
    lr_dir: str
    out_dir: str = "runs/scgan"
    hr_size: tuple[int, int] = (64, 64)
    lr_size: tuple[int, int] = (16, 16)


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    train: TrainConfig = TrainConfig()
    arch: ArchConfig = ArchConfig()
    paths: Paths

    @property
    def config_hash(self) -> str:
        return content_hash(self.model_dump(mode="json"))


def format_validation_error(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"  {loc}: {e['msg']}")
    return "invalid configuration:\n" + "\n".join(lines)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if "," in text:
        return [_parse_value(t) for t in text.split(",")]
    return text


def set_dotted(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise UsageError(f"cannot set {dotted}: {k} is not a section")
    node[keys[-1]] = value


def _variant_overrides(cfg: dict, spec: str) -> None:
    """``--variant fc`` selects a named variant; ``--variant adv_mask=1,0,1,1`` sets fields."""
    if "=" not in spec:
        variants = named_variants()
        if spec not in variants:
            raise UsageError(f"unknown variant {spec!r}; known: {', '.join(sorted(variants))}")
        set_dotted(cfg, "train.variant", variants[spec].model_dump(mode="json"))
        return
    for item in spec.split(";"):
        key, _, raw = item.partition("=")
        value = _parse_value(raw)
        if key in ("adv_mask", "loss_mask"):
            value = [bool(int(v)) for v in (value if isinstance(value, list) else [value])]
        set_dotted(cfg, f"train.variant.{key.strip()}", value)


def load_run_config(path, overrides=(), epochs=None, seed=None, variant=None) -> RunConfig:
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text())
        except OSError as e:
            raise UsageError(f"cannot read config {path}: {e}") from e
        except json.JSONDecodeError as e:
            raise UsageError(f"config {path} is not valid JSON: {e}") from e
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"override {item!r} must look like section.field=value")
        set_dotted(raw, key, _parse_value(value))
    if epochs is not None:
        set_dotted(raw, "train.epochs", epochs)
    if seed is not None:
        set_dotted(raw, "train.seed", seed)
    for spec in variant or ():
        _variant_overrides(raw, spec)
    return RunConfig.model_validate(raw)


def cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.set, args.epochs, args.seed, args.variant)
    p = cfg.paths
    out_dir = Path(args.out_dir or p.out_dir)
    ds = data.load_unpaired(p.hr_dir, p.lr_dir, p.hr_size, p.lr_size)
    if ds.skipped:
        print(f"skipped {len(ds.skipped)} undecodable image(s)", file=sys.stderr)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(
        {**cfg.model_dump(mode="json"), "config_hash": cfg.config_hash}, indent=2, sort_keys=True) + "\n")
    result = train(cfg.train, cfg.arch, ds, out_dir, resume=args.resume,
                   config=cfg.model_dump(mode="json"), config_hash=cfg.config_hash)
    plotting.plot_loss_curves(result.history, out_dir / "loss_curves.png")
    print(f"wrote {len(result.checkpoints)} checkpoint(s) to {out_dir}")
    return EXIT_OK


def cmd_sr(args) -> int:
    torch.manual_seed(args.seed)
    models, header = load_models(args.checkpoint)
    models.eval()
    net = models.R_RS if args.branch == "R_RS" else models.R_LS
    if net is None:
        raise UsageError(f"checkpoint has no {args.branch} branch")
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lr_h, lr_w = 16, 16
    written, skipped, warnings = [], [], []
    for path in data.list_images(args.in_dir):
        try:
            img = imaging.read_image(path)
        except (OSError, ValueError) as e:
            skipped.append({"file": path.name, "reason": str(e)})
            print(f"skip {path.name}: {e}", file=sys.stderr)
            continue
        if img.shape[:2] != (lr_h, lr_w):
            msg = f"{path.name}: input {img.shape[1]}x{img.shape[0]} is not {lr_w}x{lr_h}; restoring anyway"
            warnings.append(msg)
            print(f"warning: {msg}", file=sys.stderr)
        x = torch.from_numpy(imaging.to_model11(img)).float().permute(2, 0, 1)[None]
        with torch.no_grad():
            y = net(x)
        imaging.write_png(out_dir / f"{path.stem}.png", data.from_model_tensor(y)[0])
        written.append(f"{path.stem}.png")
    manifest = {
        "checkpoint": Path(args.checkpoint).name,
        "branch": args.branch,
        "config_hash": header["config_hash"],
        "model_hash": header["model_hash"],
        "images": written,
        "skipped": skipped,
        "warnings": warnings,
    }
    (out_dir / "sr_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"restored {len(written)} image(s), skipped {len(skipped)}")
    return EXIT_OK


def cmd_degrade(args) -> int:
    manifest = data.build_synthetic_testset(args.in_dir, args.out_dir, seed=args.seed,
                                            hr_size=(args.size, args.size))
    print(f"wrote {len(manifest)} degraded pair(s) to {args.out_dir}")
    return EXIT_OK


def _read_dir(directory) -> dict[str, np.ndarray]:
    return {p.stem: imaging.read_image(p) for p in data.list_images(directory)}


def cmd_eval(args) -> int:
    if args.ref is None and args.dist_ref is None:
        raise UsageError("eval needs --ref (paired) or --dist-ref (unpaired reference corpus)")
    sr_dir = Path(args.sr_dir)
    sr_manifest = {}
    if (sr_dir / "sr_manifest.json").exists():
        sr_manifest = json.loads((sr_dir / "sr_manifest.json").read_text())
    if args.checkpoint is not None:
        header, _ = read_checkpoint(args.checkpoint)
        if sr_manifest and sr_manifest.get("model_hash") != header["model_hash"]:
            raise UsageError(f"{sr_dir} was produced by model {sr_manifest.get('model_hash')}, "
                             f"not by checkpoint model {header['model_hash']}")
        sr_manifest.setdefault("config_hash", header["config_hash"])

    sr = _read_dir(sr_dir)
    if not sr:
        raise UsageError(f"no images in {sr_dir}")
    extractor = evaluation.EXTRACTORS[args.extractor]()
    report = {"dataset": sr_dir.name, "n_images": len(sr), "extractor_id": extractor.extractor_id}
    per_image = []
    ref_dir = args.ref or args.dist_ref
    ref = _read_dir(ref_dir)
    if args.ref is not None:
        missing = sorted(set(sr) - set(ref))
        if missing:
            raise UsageError(f"no reference image for: {', '.join(missing[:5])}")
        for name in sorted(sr):
            a, b = sr[name], ref[name]
            if a.shape != b.shape:
                raise UsageError(f"{name}: SR {a.shape} and reference {b.shape} differ in size")
            per_image.append({"image": name, "psnr": evaluation.psnr(a, b), "ssim": evaluation.ssim(a, b)})
        finite = [r["psnr"] for r in per_image if np.isfinite(r["psnr"])]
        report["psnr_mean"] = float(np.mean(finite)) if finite else None
        report["psnr_identical"] = len(per_image) - len(finite)
        report["ssim_mean"] = float(np.mean([r["ssim"] for r in per_image]))

    fa = evaluation.extract_features([sr[k] for k in sorted(sr)], extractor)
    fb = evaluation.extract_features([ref[k] for k in sorted(ref)], extractor)
    report["fid"] = evaluation.fid(fa, fb)
    report["kid_mean"], report["kid_std"] = evaluation.kid(fa, fb, rng=np.random.default_rng(args.seed))
    report["config_hash"] = sr_manifest.get("config_hash")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if per_image:
        with out.with_suffix(".csv").open("w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=["image", "psnr", "ssim"])
            writer.writeheader()
            writer.writerows(per_image)
    if args.figures:
        fig_dir = Path(args.figures)
        fig_dir.mkdir(parents=True, exist_ok=True)
        names = sorted(sr)
        cols = {"SR": [sr[k] for k in names]}
        if args.ref is not None:
            cols["reference"] = [ref[k] for k in names]
        plotting.plot_sample_grid(cols, fig_dir / "samples.png")
        if per_image:
            plotting.plot_metric_histogram({"PSNR (dB)": [r["psnr"] for r in per_image],
                                            "SSIM": [r["ssim"] for r in per_image]}, fig_dir / "per_image.png")
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_make_variant_grid(args) -> int:
    base = load_run_config(args.config, args.set) if args.config else None
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, spec in adv_mask_grid():
        if base is not None:
            cfg = base.model_copy(update={"train": base.train.model_copy(update={"variant": spec})})
            payload = cfg.model_dump(mode="json")
        else:
            payload = {"train": {"variant": spec.model_dump(mode="json")}}
        (out_dir / f"{name}.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"wrote 16 variant configs to {out_dir}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scgan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model from a JSON run config")
    p.add_argument("--config", help="JSON file with train/arch/paths sections")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.FIELD=VALUE",
                   help="override a config field, e.g. train.batch_size=8 (repeatable)")
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--variant", action="append", metavar="NAME|FIELD=VALUE",
                   help="named variant (fc, SE, l_adv-1-1, ...) or field override such as adv_mask=1,0,1,1")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--out-dir", help="overrides paths.out_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sr", help="super-resolve every image in a directory")
    p.add_argument("checkpoint")
    p.add_argument("in_dir")
    p.add_argument("out_dir")
    p.add_argument("--branch", choices=["R_LS", "R_RS"], default="R_LS",
                   help="restoration branch (R_RS exists only in the two_sr variant)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_sr)

    p = sub.add_parser("degrade", help="build a synthetic LR/HR test set with random degradations")
    p.add_argument("in_dir")
    p.add_argument("out_dir")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64, help="HR side length after resize/crop")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("eval", help="PSNR/SSIM against paired references and FID/KID against a corpus")
    p.add_argument("sr_dir")
    p.add_argument("--ref", help="paired reference directory (matched by file name)")
    p.add_argument("--dist-ref", help="unpaired reference corpus for FID/KID only")
    p.add_argument("--extractor", choices=sorted(evaluation.EXTRACTORS), default="randconv")
    p.add_argument("--out", default="report.json")
    p.add_argument("--figures", help="directory for sample and metric figures")
    p.add_argument("--checkpoint", help="refuse to evaluate SR outputs not produced by this checkpoint")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("make-variant-grid", help="write the 16 adversarial-loss mask configs")
    p.add_argument("out_dir")
    p.add_argument("--config", help="base run config to copy into each variant")
    p.add_argument("--set", action="append", default=[])
    p.set_defaults(func=cmd_make_variant_grid)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as e:
        print(format_validation_error(e), file=sys.stderr)
        return EXIT_USAGE
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NonFiniteLossError, OSError, ValueError, RuntimeError, evaluation.NumericalFailure) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
