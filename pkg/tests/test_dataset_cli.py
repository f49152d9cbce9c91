import shutil

import numpy as np
import pytest

from pbpba.cli import config_overrides, main
from pbpba.dataset import load_dataset, validate_dataset, write_dataset
from pbpba.errors import ConfigError, IoFailure
from pbpba.kvconfig import read_kv
from pbpba.pfm import read_pfm, write_pfm
from pbpba.trajectory import read_trajectory

from conftest import CONFIGS


@pytest.fixture(scope="module")
def ds_dir(tmp_path_factory, tiny_dataset):
    root = tmp_path_factory.mktemp("ds") / "tiny"
    write_dataset(root, tiny_dataset)
    return root


@pytest.fixture
def copy(ds_dir, tmp_path):
    dst = tmp_path / "copy"
    shutil.copytree(ds_dir, dst)
    return dst


def one_error_line(err: str, cls: str):
    lines = err.strip().splitlines()
    assert len(lines) == 1
    assert lines[0].startswith(f"error: {cls}: ")


# --- validation ----------------------------------------------------------------

def test_written_dataset_is_valid(ds_dir):
    assert validate_dataset(ds_dir) == []


def test_truncated_frame_is_reported(copy):
    path = copy / "frames" / "000001.pfm"
    path.write_bytes(path.read_bytes()[:100])
    problems = validate_dataset(copy)
    assert any("000001.pfm" in p for p in problems)
    with pytest.raises(IoFailure):
        load_dataset(copy)


def test_mismatched_dimensions_are_reported(copy):
    write_pfm(copy / "frames" / "000002.depth.pfm", np.ones((10, 10), dtype=np.float32))
    assert any("000002" in p for p in validate_dataset(copy))


def test_missing_frame_and_pose_count(copy):
    (copy / "frames" / "000003.rough.pfm").unlink()
    lines = (copy / "initial.txt").read_text().splitlines()
    (copy / "initial.txt").write_text("\n".join(lines[:-1]) + "\n")
    problems = validate_dataset(copy)
    assert any("000003.rough.pfm" in p for p in problems)
    assert any("initial.txt" in p for p in problems)


def test_out_of_range_intensity_is_reported(copy):
    write_pfm(copy / "frames" / "000000.pfm", np.full((48, 64), 1.5, dtype=np.float32))
    assert any("[0, 1]" in p for p in validate_dataset(copy))


def test_missing_directory(tmp_path):
    assert validate_dataset(tmp_path / "nope")


# --- cli ---------------------------------------------------------------------------

def test_validate_command(ds_dir, copy, capsys):
    assert main(["validate", "--dataset", str(ds_dir)]) == 0
    assert "valid" in capsys.readouterr().out
    (copy / "intrinsics.txt").write_text("1 2 3\n")
    assert main(["validate", "--dataset", str(copy)]) == 1
    one_error_line(capsys.readouterr().err, "InvalidDataset")


def test_solve_and_evaluate(ds_dir, tmp_path, capsys):
    out = tmp_path / "run"
    status = main(["solve", "--dataset", str(ds_dir), "--weight-mode", "tdist",
                   "--points_per_host", "150", "--host-stride", "2", "--lm.max_outer=3",
                   "--deterministic", "--write_weights", "true", "--out", str(out)])
    assert status == 0
    report = read_kv(out / "report.txt")
    assert report["weight_mode"] == "tdist"
    assert "seconds" not in report
    assert int(report["outer_iterations"]) <= 3
    refined = read_trajectory(out / "refined.txt")
    assert len(refined) == 4
    assert read_pfm(out / "weights_000001.pfm").shape == (48, 64)
    capsys.readouterr()

    dump = tmp_path / "xyz.txt"
    assert main(["evaluate", "--est", str(out / "refined.txt"), "--gt",
                 str(ds_dir / "groundtruth.txt"), "--dump-xyz", str(dump)]) == 0
    line = capsys.readouterr().out.strip()
    assert line.startswith("ate_rmse ") and line.endswith("pairs 4")
    assert float(line.split()[1]) == pytest.approx(float(report["ate_refined"]), rel=1e-12)
    rows = np.loadtxt(dump)
    assert rows.shape == (4, 5)
    assert np.sqrt(np.mean(rows[:, 4] ** 2)) == pytest.approx(float(line.split()[1]), rel=1e-9)


def test_evaluate_identical_trajectories(ds_dir, capsys):
    gt = str(ds_dir / "groundtruth.txt")
    assert main(["evaluate", "--est", gt, "--gt", gt]) == 0
    assert float(capsys.readouterr().out.split()[1]) < 1e-12


def test_solve_rejects_unknown_key(ds_dir, tmp_path, capsys):
    status = main(["solve", "--dataset", str(ds_dir), "--bogus", "1", "--out",
                   str(tmp_path / "r")])
    assert status == 1
    one_error_line(capsys.readouterr().err, "ConfigError")


def test_solve_missing_dataset(tmp_path, capsys):
    status = main(["solve", "--dataset", str(tmp_path / "none"), "--out", str(tmp_path / "r")])
    assert status == 1
    one_error_line(capsys.readouterr().err, "IoFailure")


def test_evaluate_malformed_trajectory(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("0 1 2\n")
    assert main(["evaluate", "--est", str(bad), "--gt", str(bad)]) == 1
    one_error_line(capsys.readouterr().err, "IoFailure")


def test_usage_errors_exit_with_two(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["evaluate", "--est", "a"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["validate", "--dataset", "x", "--extra", "1"])
    assert exc.value.code == 2


def test_scenegen_command(tmp_path, capsys):
    out = tmp_path / "gen"
    assert main(["scenegen", "--scene", str(CONFIGS / "scene_specular.kv"),
                 "--traj", str(CONFIGS / "tiny_traj.kv"), "--out", str(out)]) == 0
    assert validate_dataset(out) == []


def test_scenegen_bad_config(tmp_path, capsys):
    bad = tmp_path / "scene.kv"
    bad.write_text("plane.0.albedo = checker\n")
    assert main(["scenegen", "--scene", str(bad), "--traj", str(CONFIGS / "tiny_traj.kv"),
                 "--out", str(tmp_path / "o")]) == 1
    one_error_line(capsys.readouterr().err, "ConfigError")


def test_radiance_check_command(ds_dir, capsys):
    assert main(["radiance-check", "--dataset", str(ds_dir), "--samples", "20"]) == 0
    stats = dict(line.split(" = ") for line in capsys.readouterr().out.strip().splitlines())
    assert int(stats["samples"]) > 0
    assert 0 <= float(stats["median_rel_error"]) <= float(stats["max_rel_error"])


def test_config_overrides():
    assert config_overrides(["--a-b", "1", "--c=2", "--lm.max_outer", "3"]) == {
        "a_b": "1", "c": "2", "lm.max_outer": "3"}
    with pytest.raises(ConfigError):
        config_overrides(["--a"])
    with pytest.raises(ConfigError):
        config_overrides(["loose"])
