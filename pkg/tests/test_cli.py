import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from igaf.cli import default_config, resolve_config, run_cli
from igaf.data import DatasetManifest
from igaf.errors import ConfigError
from igaf.imageio import read_depth, write_image

TINY = {
    "model.channels": 4,
    "model.n_fe": 1,
    "model.num_igaf": 1,
    "schedule.total_epochs": 4,
    "schedule.milestones": [2],
    "schedule.base_lr": 0.001,
    "train.epochs": 2,
    "train.patch": 16,
}


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_synth")
    assert run_cli(["synth", "--out", str(out), "--count", "2", "--size", "32", "--seed", "4"]) == 0
    return out


@pytest.fixture
def config(tmp_path, data_dir):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({**TINY, "manifest": str(data_dir / "manifest.txt"), "output_dir": "runs"}))
    return path


def _train(config, capsys, *extra):
    assert run_cli(["train", "--config", str(config), *extra]) == 0
    out = dict(line.split(" ", 1) for line in capsys.readouterr().out.strip().splitlines())
    return out


class TestConfig:
    def test_defaults_cover_sections(self):
        keys = default_config()
        assert keys["model.channels"] == 32
        assert keys["schedule.base_lr"] == 0.00025
        assert keys["train.patch"] == 256
        assert "manifest" in keys

    def test_override_precedence(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"model.channels": 8, "train.seed": 3}))
        r = resolve_config(str(cfg), ["model.channels=12"])
        assert r["model.channels"] == 12
        assert r["train.seed"] == 3

    def test_nested_objects_flatten(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"model": {"channels": 8}, "schedule": {"milestones": [1, 2]}}))
        r = resolve_config(str(cfg))
        assert r["model.channels"] == 8
        assert r["schedule.milestones"] == (1, 2)

    def test_set_parsing(self):
        r = resolve_config(None, ["model.use_wf=false", "schedule.milestones=3,6", "model.fusion_kind=add"])
        assert r["model.use_wf"] is False
        assert r["schedule.milestones"] == (3, 6)
        assert r["model.fusion_kind"] == "add"

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="model.width"):
            resolve_config(None, ["model.width=3"])

    def test_bad_type_rejected(self):
        with pytest.raises(ConfigError, match="model.channels"):
            resolve_config(None, ["model.channels=wide"])

    def test_relative_manifest_resolves_against_config(self, tmp_path):
        cfg = tmp_path / "sub" / "c.json"
        cfg.parent.mkdir()
        cfg.write_text(json.dumps({"manifest": "data/manifest.txt"}))
        assert resolve_config(str(cfg))["manifest"] == str((tmp_path / "sub" / "data" / "manifest.txt").resolve())


class TestExitCodes:
    def test_missing_config_names_path(self, tmp_path, capsys):
        missing = tmp_path / "nope.json"
        assert run_cli(["train", "--config", str(missing)]) == 1
        assert str(missing) in capsys.readouterr().err

    def test_unknown_subcommand(self, capsys):
        assert run_cli(["fly"]) == 1

    def test_missing_required_flag(self, capsys):
        assert run_cli(["eval", "--ckpt", "x"]) == 1

    def test_unknown_set_key(self, config, capsys):
        assert run_cli(["train", "--config", str(config), "--set", "train.momentum=1"]) == 1
        assert "train.momentum" in capsys.readouterr().err

    def test_bad_manifest_is_data_error(self, config, tmp_path, capsys):
        assert run_cli(["train", "--config", str(config), "--set", f"manifest={tmp_path / 'none.txt'}"]) == 2

    def test_eval_missing_checkpoint(self, data_dir, tmp_path, capsys):
        assert run_cli(["eval", "--ckpt", str(tmp_path / "nock"), "--manifest", str(data_dir / "manifest.txt")]) == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nan_is_numeric_failure(self, config, capsys):
        assert run_cli(["train", "--config", str(config), "--set", "schedule.base_lr=1e300"]) == 3
        assert "step" in capsys.readouterr().err


class TestSubcommands:
    def test_synth_zero_count(self, tmp_path):
        assert run_cli(["synth", "--out", str(tmp_path / "e"), "--count", "0", "--size", "32", "--seed", "0"]) == 0
        assert len(DatasetManifest.read(tmp_path / "e" / "manifest.txt")) == 0

    def test_synth_writes_manifest(self, data_dir):
        m = DatasetManifest.read(data_dir / "manifest.txt")
        assert [e.id for e in m] == ["scene_0000", "scene_0001"]

    def test_train_run_dir(self, config, tmp_path, capsys):
        out = _train(config, capsys)
        run = tmp_path / "runs"
        (run_dir,) = list(run.iterdir())
        assert run_dir.name.endswith("-seed0")
        echo = json.loads((run_dir / "config.json").read_text())
        assert echo["model.channels"] == 4
        assert echo["train.epochs"] == 2
        assert out["loss_log"] == str(run_dir / "loss_log.csv")
        assert out["checkpoint"] == str(run_dir / "checkpoints" / "final")
        rows = list(csv.reader(open(out["loss_log"])))
        assert rows[0] == ["epoch", "mean_l1", "lr"] and len(rows) == 3

    def test_train_twice_gets_unique_dirs_and_same_bytes(self, config, tmp_path, capsys):
        a = _train(config, capsys)
        b = _train(config, capsys)
        assert a["checkpoint"] != b["checkpoint"]
        assert open(a["loss_log"]).read() == open(b["loss_log"]).read()
        for f in ("checkpoint.json", "params.bin", "optimizer.bin"):
            assert open(f"{a['checkpoint']}/{f}", "rb").read() == open(f"{b['checkpoint']}/{f}", "rb").read()

    def test_eval_csv(self, config, data_dir, tmp_path, capsys):
        ckpt = _train(config, capsys)["checkpoint"]
        out = tmp_path / "report.csv"
        assert run_cli(["eval", "--ckpt", ckpt, "--manifest", str(data_dir / "manifest.txt"), "--out", str(out)]) == 0
        rows = list(csv.reader(open(out)))
        assert rows[0] == ["id", "rmse_model", "rmse_bicubic"]
        assert [r[0] for r in rows[1:]] == ["scene_0000", "scene_0001"]
        capsys.readouterr()
        assert run_cli(["eval", "--ckpt", ckpt, "--manifest", str(data_dir / "manifest.txt")]) == 0
        assert capsys.readouterr().out.startswith("id,rmse_model,rmse_bicubic")

    def test_eval_empty_manifest(self, config, tmp_path, capsys):
        ckpt = _train(config, capsys)["checkpoint"]
        assert run_cli(["synth", "--out", str(tmp_path / "e"), "--count", "0", "--size", "32", "--seed", "0"]) == 0
        capsys.readouterr()
        assert run_cli(["eval", "--ckpt", ckpt, "--manifest", str(tmp_path / "e" / "manifest.txt")]) == 0
        assert capsys.readouterr().out.strip() == "id,rmse_model,rmse_bicubic"

    def test_infer_writes_uint16(self, config, data_dir, tmp_path, capsys):
        ckpt = _train(config, capsys)["checkpoint"]
        hr = read_depth(data_dir / "scene_0000_depth.png")
        lr = hr[1::4, 1::4]
        write_image(tmp_path / "lr.png", lr)
        out = tmp_path / "pred.png"
        argv = ["infer", "--ckpt", ckpt, "--rgb", str(data_dir / "scene_0000_rgb.png")]
        assert run_cli(argv + ["--lr-depth", str(tmp_path / "lr.png"), "--out", str(out)]) == 0
        pred = read_depth(out)
        assert pred.dtype == np.uint16 and pred.shape == hr.shape

    def test_infer_size_mismatch(self, config, data_dir, tmp_path, capsys):
        ckpt = _train(config, capsys)["checkpoint"]
        write_image(tmp_path / "lr.png", np.arange(25, dtype=np.uint16).reshape(5, 5))
        argv = ["infer", "--ckpt", ckpt, "--rgb", str(data_dir / "scene_0000_rgb.png")]
        assert run_cli(argv + ["--lr-depth", str(tmp_path / "lr.png"), "--out", str(tmp_path / "o.png")]) == 2
        assert "lr.png" in capsys.readouterr().err

    def test_gradcheck_saf(self, capsys):
        assert run_cli(["gradcheck", "--block", "saf"]) == 0
        name, err, status = capsys.readouterr().out.split()
        assert name == "saf" and float(err) < 1e-5 and status == "ok"

    def test_gradcheck_unknown_block(self, capsys):
        assert run_cli(["gradcheck", "--block", "bogus"]) == 1

    def test_ablate_table(self, config, capsys):
        argv = ["ablate", "--config", str(config), "--variants", "add,without_wf", "--set", "train.epochs=1"]
        assert run_cli(argv) == 0
        out = capsys.readouterr().out
        assert "fusion=add" in out and "use_wf=false" in out and "reference only" in out

    def test_ablate_unknown_variant(self, config, capsys):
        assert run_cli(["ablate", "--config", str(config), "--variants", "huge"]) == 1


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "igaf", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    for sub in ("synth", "train", "eval", "infer", "gradcheck", "ablate"):
        assert sub in proc.stdout
