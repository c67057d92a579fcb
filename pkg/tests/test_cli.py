import csv
import filecmp
import hashlib
from pathlib import Path

import numpy as np
import pytest

from uamd import cli
from uamd.cli import EXIT_IO, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, build_config, main
from uamd.data import decode_depth_png, load_dataset
from uamd.eval import REPORT_COLUMNS
from uamd.training import TrainingDiverged

TINY = """
[model]
max_disparity = 16
branch_channels = 4, 4, 4
aggregated_channels = 4

[train]
batch_size = 2
steps = 3
lr0 = 0.001

[sgm]
max_disp = 8
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.ini").write_text(TINY)
    assert main(["gen-data", "--out", str(root / "ds"), "--count", "3", "--height", "32", "--width", "64",
                 "--max-disp", "6", "--keep-fraction", "0.2"]) == EXIT_OK
    assert main(["train", "--config", str(root / "tiny.ini"), "--data", str(root / "ds"),
                 "--out", str(root / "model.ckpt")]) == EXIT_OK
    return root


def _tree_digest(path: Path) -> dict[str, str]:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(path.rglob("*")) if p.is_file()}


def test_gen_data_layout_and_determinism(workspace, tmp_path):
    files = sorted(p.name for p in (workspace / "ds" / "train").iterdir())
    assert len(files) == 3 * 6 + 3
    assert sum(f.endswith("_disp.png") for f in files) == 3
    assert len(load_dataset(workspace / "ds", "train")) == 3
    args = ["--count", "3", "--height", "32", "--width", "64", "--max-disp", "6", "--keep-fraction", "0.2"]
    assert main(["gen-data", "--out", str(tmp_path / "again"), *args]) == EXIT_OK
    assert _tree_digest(tmp_path / "again") == _tree_digest(workspace / "ds")


def test_gen_data_rejects_bad_sizes(tmp_path):
    assert main(["gen-data", "--out", str(tmp_path), "--height", "30", "--width", "64"]) == EXIT_USAGE
    assert main(["gen-data", "--out", str(tmp_path), "--height", "32", "--width", "64",
                 "--max-disp", "20"]) == EXIT_USAGE
    assert not any(tmp_path.rglob("*.png"))


def test_gen_noise(workspace, tmp_path):
    base = ["--data", str(workspace / "ds"), "--config", str(workspace / "tiny.ini")]
    assert main(["gen-noise", *base, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main(["gen-noise", *base, "--out", str(tmp_path / "b"), "--paths", "8"]) == EXIT_OK
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["000000_noise.png", "000001_noise.png", "000002_noise.png"]
    assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")
    assert main(["gen-noise", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "c")]) == EXIT_USAGE


def test_train_writes_one_csv_row_per_step(workspace):
    rows = list(csv.reader(open(workspace / "model.csv")))
    assert rows[0] == ["step", "epoch", "combo", "lr", "loss", "sup"]
    assert len(rows) == 1 + 3


def test_train_flags_override_file(workspace, tmp_path):
    out = tmp_path / "m.ckpt"
    assert main(["train", "--config", str(workspace / "tiny.ini"), "--data", str(workspace / "ds"),
                 "--out", str(out), "--steps", "2", "--combo", "dual", "--log", str(tmp_path / "log.csv")]) == EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "log.csv")))
    assert len(rows) == 2 and {r["combo"] for r in rows} == {"dual"}


def test_train_is_reproducible(workspace, tmp_path):
    out = tmp_path / "again.ckpt"
    assert main(["train", "--config", str(workspace / "tiny.ini"), "--data", str(workspace / "ds"),
                 "--out", str(out)]) == EXIT_OK
    assert filecmp.cmp(out, workspace / "model.ckpt", shallow=False)
    assert filecmp.cmp(tmp_path / "again.csv", workspace / "model.csv", shallow=False)


def test_train_semi_mono_lidar_is_a_usage_error(workspace, tmp_path, caplog):
    code = main(["train", "--data", str(workspace / "ds"), "--out", str(tmp_path / "x.ckpt"),
                 "--mode", "semi", "--combo", "mono_lidar"])
    assert code == EXIT_USAGE
    assert "dual_lidar, dual" in caplog.text


def test_train_semi_with_noise_labels(workspace, tmp_path):
    noise = tmp_path / "noise"
    assert main(["gen-noise", "--data", str(workspace / "ds"), "--out", str(noise), "--max-disp", "8"]) == EXIT_OK
    assert main(["train", "--config", str(workspace / "tiny.ini"), "--data", str(workspace / "ds"),
                 "--out", str(tmp_path / "semi.ckpt"), "--mode", "semi", "--noise", str(noise),
                 "--steps", "2"]) == EXIT_OK
    header = next(csv.reader(open(tmp_path / "semi.csv")))
    assert header[-4:] == ["lidar", "photometric", "gradient", "noise"]


def test_train_divergence_exit_code(workspace, tmp_path, monkeypatch):
    def diverge(*args, **kwargs):
        raise TrainingDiverged("loss non-finite for 10 consecutive steps")

    monkeypatch.setattr(cli, "fit", diverge)
    assert main(["train", "--data", str(workspace / "ds"), "--out", str(tmp_path / "x.ckpt")]) == EXIT_NUMERIC


def test_config_errors(workspace, tmp_path):
    bad_key = tmp_path / "bad.ini"
    bad_key.write_text("[train]\nsteps = 3\nmomentum = 0.9\n")
    bad_section = tmp_path / "section.ini"
    bad_section.write_text("[optimizer]\nlr = 1\n")
    bad_value = tmp_path / "value.ini"
    bad_value.write_text("[train]\nsteps = many\n")
    for cfg in (bad_key, bad_section, bad_value, tmp_path / "absent.ini"):
        assert main(["train", "--config", str(cfg), "--data", str(workspace / "ds"),
                     "--out", str(tmp_path / "x.ckpt")]) == EXIT_USAGE
    negative = tmp_path / "neg.ini"
    negative.write_text("[loss]\nw_p = -1\n")
    assert main(["config", "--config", str(negative)]) == EXIT_USAGE


def test_printed_config_round_trips(workspace, tmp_path, capsys):
    assert main(["config", "--config", str(workspace / "tiny.ini")]) == EXIT_OK
    dumped = tmp_path / "dumped.ini"
    dumped.write_text(capsys.readouterr().out)
    assert build_config(dumped) == build_config(workspace / "tiny.ini")


def test_shipped_desk_config_is_valid():
    path = Path(__file__).resolve().parents[1] / "configs" / "desk.ini"
    cfg = build_config(path)
    assert cfg.model.max_disparity == 48 and cfg.train.batch_size == 5


def test_eval_report_and_lidar_independence(workspace, tmp_path):
    base = ["eval", "--ckpt", str(workspace / "model.ckpt"), "--data", str(workspace / "ds")]
    assert main([*base, "--combo", "dual", "--report", str(tmp_path / "plain.csv")]) == EXIT_OK
    assert main([*base, "--combo", "dual", "--failure", "lidar", "--report", str(tmp_path / "drop.csv")]) == EXIT_OK
    plain = list(csv.reader(open(tmp_path / "plain.csv")))
    drop = list(csv.reader(open(tmp_path / "drop.csv")))
    assert tuple(plain[0]) == REPORT_COLUMNS
    assert plain[1][0] == "dual" and plain[1][1] == "none" and drop[1][1] == "LidarDropout"
    assert plain[1][2:] == drop[1][2:]


def test_eval_defaults_to_fallback_combo(workspace, tmp_path):
    base = ["eval", "--ckpt", str(workspace / "model.ckpt"), "--data", str(workspace / "ds")]
    assert main([*base, "--failure", "full", "--report", str(tmp_path / "r.csv")]) == EXIT_OK
    assert list(csv.reader(open(tmp_path / "r.csv")))[1][:2] == ["mono_lidar", "ImageFull"]
    assert main([*base, "--report", str(tmp_path / "r.csv")]) == EXIT_USAGE


def test_eval_bad_checkpoint(workspace, tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOPE" + (workspace / "model.ckpt").read_bytes()[4:])
    assert main(["eval", "--ckpt", str(bad), "--data", str(workspace / "ds"), "--combo", "dual",
                 "--report", str(tmp_path / "r.csv")]) == EXIT_IO
    assert main(["eval", "--ckpt", str(tmp_path / "none.ckpt"), "--data", str(workspace / "ds"),
                 "--combo", "dual", "--report", str(tmp_path / "r.csv")]) == EXIT_USAGE


def test_infer(workspace, tmp_path):
    split = workspace / "ds" / "train"
    base = ["infer", "--ckpt", str(workspace / "model.ckpt"), "--left", str(split / "000000_left.png")]
    lidar = ["--lidar", str(split / "000000_sparse_left.png")]
    assert main([*base, *lidar, "--combo", "mono_lidar", "--out", str(tmp_path / "a.png")]) == EXIT_OK
    assert main([*base, *lidar, "--combo", "mono_lidar", "--out", str(tmp_path / "b.png"),
                 "--calib", str(split / "000000_calib.txt")]) == EXIT_OK
    a = (tmp_path / "a.png").read_bytes()
    assert a == (tmp_path / "b.png").read_bytes()
    depth = decode_depth_png(a)
    assert depth.shape == (32, 64) and np.all(np.isfinite(depth)) and np.any(depth > 0)
    assert main([*base, "--right", str(split / "000000_right.png"), "--combo", "dual",
                 "--out", str(tmp_path / "c.png")]) == EXIT_OK


def test_infer_usage_errors(workspace, tmp_path):
    split = workspace / "ds" / "train"
    base = ["infer", "--ckpt", str(workspace / "model.ckpt"), "--left", str(split / "000000_left.png"),
            "--out", str(tmp_path / "d.png")]
    assert main([*base, "--combo", "mono_lidar"]) == EXIT_USAGE
    assert main([*base, "--combo", "dual"]) == EXIT_USAGE
    assert main([*base, "--combo", "mono_lidar", "--lidar", str(split / "000000_left.png")]) == EXIT_IO
    assert not (tmp_path / "d.png").exists()


def test_thread_env_and_argparse_errors(workspace, monkeypatch):
    monkeypatch.setenv("UAMD_THREADS", "zero")
    assert main(["config"]) == EXIT_USAGE
    monkeypatch.setenv("UAMD_THREADS", "1")
    assert main(["config"]) == EXIT_OK
    assert main(["train"]) == EXIT_USAGE
    assert main(["bogus"]) == EXIT_USAGE
