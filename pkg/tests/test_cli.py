import numpy as np
import pytest

from dmpcouple import io
from dmpcouple.cli import EXIT_GATE, EXIT_OK, EXIT_USAGE, LOG_NAME, main
from dmpcouple.rollout import rollout

SMALL = """\
data: {kinds: [sphere], demos_per_setting: 2, multi_demos_per_setting: 2}
train: {max_iters: 5}
parallel: 1
"""


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "small.yaml").write_text(SMALL)
    out = root / "run"
    args = ["--config", str(root / "small.yaml"), "--out", str(out)]
    assert main(["gen-demos", *args]) == EXIT_OK
    assert main(["fit-baseline", *args]) == EXIT_OK
    assert main(["train", *args, "--obstacle", "sphere"]) == EXIT_OK
    return root, out, args


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main([]) == EXIT_USAGE
    assert main(["train", "--protocol", "nope"]) == EXIT_USAGE
    assert main(["fit-baseline", "--out", str(tmp_path / "empty")]) == EXIT_USAGE
    assert "missing" in capsys.readouterr().err
    (tmp_path / "bad.yaml").write_text("train: {max_iters: -1}\n")
    assert main(["gen-demos", "--config", str(tmp_path / "bad.yaml"), "--out", str(tmp_path / "x")]) == EXIT_USAGE


def test_help_exits_0():
    assert main(["--help"]) == EXIT_OK


def test_pipeline_writes_artifacts_and_log(run_dir):
    _, out, _ = run_dir
    assert (out / "dataset" / "manifest.json").is_file()
    assert (out / "config.yaml").is_file()
    assert io.load_model(out / "models" / "multi" / "sphere.json").train_meta["epochs"] <= 5
    nominal = sorted((out / "dataset" / "demos" / "sphere-07").glob("*.csv"))
    placed = sorted((out / "dataset" / "placed" / "sphere-07").glob("*.csv"))
    assert len(nominal) == 2 and len(placed) == 2
    assert all("obstacle_offset" not in io.load_trajectory(p).meta for p in nominal + placed[:1])
    assert "obstacle_offset" in io.load_trajectory(placed[1]).meta
    log = (out / LOG_NAME).read_text()
    for command in ("gen-demos", "fit-baseline", "train"):
        assert f"dmpcouple {command}" in log


def test_gen_demos_is_deterministic(run_dir, tmp_path):
    root, out, _ = run_dir
    assert main(["gen-demos", "--config", str(root / "small.yaml"), "--out", str(tmp_path / "again")]) == EXIT_OK
    a = io.read_json(out / "dataset" / "manifest.json")
    b = io.read_json(tmp_path / "again" / "dataset" / "manifest.json")
    assert a["dataset_hash"] == b["dataset_hash"]


def test_missing_output_directory_is_created(run_dir, tmp_path):
    _, out, args = run_dir
    target = tmp_path / "deep" / "er" / "u.csv"
    assert main(["unroll", *args, "--setting", "sphere-00", "--output", str(target)]) == EXIT_OK
    assert target.is_file()


def test_no_coupling_reproduces_the_baseline(run_dir, tmp_path):
    _, out, args = run_dir
    target = tmp_path / "u.csv"
    assert main(["unroll", *args, "--setting", "sphere-05", "--no-coupling", "--output", str(target)]) == EXIT_OK
    stored = io.load_unroll(target)
    baseline = io.load_dmp(out / "baseline.json")
    setting = io.load_setting(out / "dataset" / "settings" / "sphere-05.json")
    np.testing.assert_array_equal(stored.x, rollout(baseline, setting).x)


def test_guards_off_stamps_unsafe(run_dir, tmp_path, capsys):
    _, _, args = run_dir
    target = tmp_path / "u.csv"
    assert main(["unroll", *args, "--setting", "sphere-05", "--guards", "off", "--output", str(target)]) == EXIT_OK
    assert capsys.readouterr().out.startswith("UNSAFE")
    assert io.load_unroll(target).unsafe


def test_unknown_setting_exits_2(run_dir, capsys):
    _, _, args = run_dir
    assert main(["unroll", *args, "--setting", "sphere-99"]) == EXIT_USAGE
    assert "no setting" in capsys.readouterr().err


def test_failed_gates_exit_1(run_dir, capsys, monkeypatch):
    _, out, args = run_dir
    monkeypatch.setenv("DMPCOUPLE_GATES__MULTI_NMSE", "1e-6")
    assert main(["eval", *args, "--obstacle", "sphere", "--protocol", "multi"]) == EXIT_GATE
    printed = capsys.readouterr().out
    assert "FAIL" in printed
    assert (out / "reports" / "multi-sphere.summary.json").is_file()
