import json

import numpy as np
import pytest

from scgan import imaging
from scgan.cli import RunConfig, load_run_config, main
from scgan.data import write_procedural_corpus
from scgan.training import read_checkpoint


def toy_config(tmp_path, **paths):
    write_procedural_corpus(tmp_path / "hr", 6, 64, seed=0)
    write_procedural_corpus(tmp_path / "lr", 6, 16, seed=1, degrade=False)
    cfg = {
        "train": {"batch_size": 2, "steps_per_epoch": 2,
                  "variant": {"degrade_blocks_DHL": 6, "degrade_blocks_DSL": 6}},
        "arch": {"base_channels": 8, "restore_groups": [1, 1, 1]},
        "paths": {"hr_dir": str(tmp_path / "hr"), "lr_dir": str(tmp_path / "lr"),
                  "out_dir": str(tmp_path / "run"), **paths},
    }
    path = tmp_path / "toy.json"
    path.write_text(json.dumps(cfg))
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("trained")
    cfg = toy_config(tmp)
    assert main(["train", "--config", str(cfg), "--epochs", "2"]) == 0
    return tmp


def test_train_writes_two_checkpoints(trained):
    run = trained / "run"
    assert sorted(p.name for p in run.glob("*.ckpt")) == ["epoch_1.ckpt", "epoch_2.ckpt"]
    assert (run / "loss_curves.png").stat().st_size > 0
    saved = json.loads((run / "config.json").read_text())
    header, _ = read_checkpoint(run / "epoch_2.ckpt")
    assert header["config_hash"] == saved["config_hash"]
    assert json.loads((run / "epoch_1.json").read_text())["config_hash"] == saved["config_hash"]


def test_variant_override_selects_mask(tmp_path):
    cfg = load_run_config(toy_config(tmp_path), variant=["adv_mask=1,0,1,1"])
    assert cfg.train.variant.adv_mask == (True, False, True, True)
    assert cfg.train.variant.degrade_blocks_DHL == 6
    named = load_run_config(toy_config(tmp_path), variant=["l_adv-1-1"])
    assert named.train.variant.adv_mask == (False, True, True, True)


def test_variant_override_trains(tmp_path):
    cfg = toy_config(tmp_path)
    rc = main(["train", "--config", str(cfg), "--epochs", "1", "--variant", "adv_mask=1,0,1,1"])
    assert rc == 0
    header, payload = read_checkpoint(tmp_path / "run" / "epoch_1.ckpt")
    assert header["variant"]["adv_mask"] == [True, False, True, True]


def test_missing_lr_dir_names_field(tmp_path, capsys):
    cfg = json.loads(toy_config(tmp_path).read_text())
    del cfg["paths"]["lr_dir"]
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(cfg))
    rc = main(["train", "--config", str(p)])
    assert rc != 0
    assert "paths.lr_dir" in capsys.readouterr().err


def test_bad_field_value(tmp_path, capsys):
    rc = main(["train", "--config", str(toy_config(tmp_path)), "--set", "train.batch_size=0"])
    assert rc == 1
    assert "train" in capsys.readouterr().err


def test_usage_error_exit_code(capsys):
    with pytest.raises(SystemExit) as e:
        main(["train", "--epochs", "x"])
    assert e.value.code == 1


def test_missing_directory_is_runtime_error(tmp_path):
    cfg = toy_config(tmp_path, hr_dir=str(tmp_path / "nope"))
    assert main(["train", "--config", str(cfg), "--epochs", "1"]) == 2


def test_config_hash_tracks_content(tmp_path):
    a = load_run_config(toy_config(tmp_path))
    b = load_run_config(toy_config(tmp_path), overrides=["train.seed=1"])
    assert a.config_hash != b.config_hash
    assert RunConfig.model_validate(a.model_dump(mode="json")) == a
    assert RunConfig.model_validate(a.model_dump(mode="json")).config_hash == a.config_hash


class TestSR:
    def test_five_in_five_out(self, trained, tmp_path):
        write_procedural_corpus(tmp_path / "in", 5, 16, seed=4)
        ckpt = trained / "run" / "epoch_2.ckpt"
        assert main(["sr", str(ckpt), str(tmp_path / "in"), str(tmp_path / "a")]) == 0
        outs = sorted((tmp_path / "a").glob("*.png"))
        assert len(outs) == 5
        assert all(imaging.read_image(p).shape == (64, 64, 3) for p in outs)
        assert main(["sr", str(ckpt), str(tmp_path / "in"), str(tmp_path / "b")]) == 0
        for p in outs:
            assert p.read_bytes() == (tmp_path / "b" / p.name).read_bytes()

    def test_odd_size_warns(self, trained, tmp_path, capsys):
        (tmp_path / "in").mkdir()
        imaging.write_png(tmp_path / "in" / "odd.png", np.random.default_rng(0).random((17, 17, 3)))
        rc = main(["sr", str(trained / "run" / "epoch_1.ckpt"), str(tmp_path / "in"), str(tmp_path / "out")])
        assert rc == 0
        assert "odd.png" in capsys.readouterr().err
        manifest = json.loads((tmp_path / "out" / "sr_manifest.json").read_text())
        assert len(manifest["warnings"]) == 1
        assert imaging.read_image(tmp_path / "out" / "odd.png").shape == (68, 68, 3)

    def test_checkpoint_without_branch(self, trained, tmp_path):
        write_procedural_corpus(tmp_path / "in", 1, 16)
        rc = main(["sr", str(trained / "run" / "epoch_1.ckpt"), str(tmp_path / "in"), str(tmp_path / "o"),
                   "--branch", "R_RS"])
        assert rc == 1


def test_degrade_is_seeded(tmp_path):
    write_procedural_corpus(tmp_path / "src", 4, 64)
    assert main(["degrade", str(tmp_path / "src"), str(tmp_path / "a"), "--seed", "3"]) == 0
    assert main(["degrade", str(tmp_path / "src"), str(tmp_path / "b"), "--seed", "3"]) == 0
    assert (tmp_path / "a/manifest.json").read_bytes() == (tmp_path / "b/manifest.json").read_bytes()
    for e in json.loads((tmp_path / "a/manifest.json").read_text()):
        assert 0.5 <= e["sigma"] <= 8 and 1 <= e["delta"] <= 25 and 30 <= e["quality"] <= 95


class TestEval:
    def _pair(self, tmp_path):
        write_procedural_corpus(tmp_path / "ref", 4, 64, seed=0)
        (tmp_path / "sr").mkdir()
        rng = np.random.default_rng(0)
        for p in sorted((tmp_path / "ref").iterdir()):
            img = imaging.read_image(p)
            imaging.write_png(tmp_path / "sr" / p.name, np.clip(img + 0.05 * rng.standard_normal(img.shape), 0, 1))

    def test_paired_keys(self, tmp_path):
        self._pair(tmp_path)
        out = tmp_path / "report.json"
        rc = main(["eval", str(tmp_path / "sr"), "--ref", str(tmp_path / "ref"), "--extractor", "pixel",
                   "--out", str(out), "--figures", str(tmp_path / "fig")])
        assert rc == 0
        rep = json.loads(out.read_text())
        assert {"dataset", "n_images", "psnr_mean", "ssim_mean", "fid", "kid_mean", "kid_std",
                "extractor_id", "config_hash"} <= set(rep)
        assert rep["n_images"] == 4 and rep["extractor_id"] == "pixel8x8"
        assert 15 < rep["psnr_mean"] < 40
        assert (tmp_path / "fig" / "samples.png").exists() and (tmp_path / "fig" / "per_image.png").exists()
        assert len((tmp_path / "report.csv").read_text().splitlines()) == 5

    def test_unpaired_omits_full_reference(self, tmp_path):
        self._pair(tmp_path)
        out = tmp_path / "report.json"
        assert main(["eval", str(tmp_path / "sr"), "--dist-ref", str(tmp_path / "ref"), "--out", str(out)]) == 0
        rep = json.loads(out.read_text())
        assert "psnr_mean" not in rep and "ssim_mean" not in rep
        assert rep["fid"] >= 0

    def test_identical_reported_without_infinity(self, tmp_path):
        write_procedural_corpus(tmp_path / "ref", 3, 64)
        out = tmp_path / "r.json"
        assert main(["eval", str(tmp_path / "ref"), "--ref", str(tmp_path / "ref"), "--extractor", "pixel",
                     "--out", str(out)]) == 0
        rep = json.loads(out.read_text())
        assert rep["psnr_mean"] is None and rep["psnr_identical"] == 3
        assert abs(rep["ssim_mean"] - 1) < 1e-9

    def test_needs_reference(self, tmp_path):
        self._pair(tmp_path)
        assert main(["eval", str(tmp_path / "sr")]) == 1

    def test_refuses_mismatched_checkpoint(self, trained, tmp_path):
        write_procedural_corpus(tmp_path / "in", 3, 16, seed=2)
        ckpt = trained / "run" / "epoch_2.ckpt"
        assert main(["sr", str(ckpt), str(tmp_path / "in"), str(tmp_path / "sr")]) == 0
        write_procedural_corpus(tmp_path / "ref", 3, 64, seed=5)
        ok = main(["eval", str(tmp_path / "sr"), "--dist-ref", str(tmp_path / "ref"), "--checkpoint", str(ckpt),
                   "--extractor", "pixel", "--out", str(tmp_path / "ok.json")])
        assert ok == 0
        rep = json.loads((tmp_path / "ok.json").read_text())
        saved = json.loads((trained / "run" / "config.json").read_text())
        assert rep["config_hash"] == saved["config_hash"]

        other = toy_config(tmp_path / "other")
        assert main(["train", "--config", str(other), "--epochs", "1", "--set", "arch.base_channels=4",
                     "--out-dir", str(tmp_path / "other_run")]) == 0
        bad = main(["eval", str(tmp_path / "sr"), "--dist-ref", str(tmp_path / "ref"), "--checkpoint",
                    str(tmp_path / "other_run" / "epoch_1.ckpt"), "--out", str(tmp_path / "bad.json")])
        assert bad == 1


def test_make_variant_grid(tmp_path):
    assert main(["make-variant-grid", str(tmp_path / "grid")]) == 0
    files = sorted((tmp_path / "grid").glob("*.json"))
    assert len(files) == 16
    masks = {tuple(json.loads(f.read_text())["train"]["variant"]["adv_mask"]) for f in files}
    assert len(masks) == 16
    assert (tmp_path / "grid" / "l_adv-1-1.json").exists()


def test_make_variant_grid_with_base(tmp_path):
    cfg = toy_config(tmp_path)
    assert main(["make-variant-grid", str(tmp_path / "grid"), "--config", str(cfg)]) == 0
    one = json.loads((tmp_path / "grid" / "l_adv-4-1.json").read_text())
    assert one["arch"]["base_channels"] == 8
    assert one["train"]["variant"]["adv_mask"] == [False] * 4
    RunConfig.model_validate(one)
