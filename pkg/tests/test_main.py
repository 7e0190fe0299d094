# tests/test_main.py
import json
import logging
import sys
from pathlib import Path
from typing import List
from unittest.mock import patch

import numpy as np
import pandas as pd
import pytest
from hydrarot.hydrarot_error import ErrorType, HydrarotException
from hydrarot.hydrarot_experiments import run_hemisphere
from hydrarot.hydrarot_so3 import exp_so3, quat_mul
from hydrarot.hydrarot_uncertainty import so3_nll
from hydrarot.main import build_parser, main
from prepdir import configure_logging

TINY_1D = [
    "--set", "exp1d.n_train=40",
    "--set", "exp1d.n_test=20",
    "--set", "exp1d.hidden_width=5",
    "--set", "exp1d.heads=2",
    "--set", "exp1d.bagging_models=2",
    "--set", "exp1d.dropout_passes=2",
    "--set", "exp1d.training.epochs=1",
]  # fmt: skip

TINY_HEMISPHERE = [
    "--set", "hemisphere.n_train=30",
    "--set", "hemisphere.n_test=10",
    "--set", "hemisphere.heads=2",
    "--set", "hemisphere.body_width=6",
    "--set", "hemisphere.residual_blocks=1",
    "--set", "hemisphere.head_width=6",
    "--set", "hemisphere.training.epochs=2",
]  # fmt: skip

SMALL_SIMULATION = ["--set", "fusion.simulation.n_poses=20"]


# --------------------------------------------------------------------------- #
# Fixtures
# --------------------------------------------------------------------------- #
@pytest.fixture(autouse=True)
def clean_logger():
    """Reset the hydrarot logger before every test."""
    log = logging.getLogger("hydrarot")
    log.handlers.clear()
    log.setLevel(logging.DEBUG)
    configure_logging(log, level=logging.DEBUG)


@pytest.fixture
def quat_csv(tmp_path: Path) -> Path:
    """A CSV of quaternions clustered around a yaw of 0.3 rad."""
    rng = np.random.default_rng(12)
    center = exp_so3([0.0, 0.0, 0.3])
    quats = quat_mul(exp_so3(rng.normal(scale=0.05, size=(25, 3))), center)
    quats[::3] *= -1.0
    path = tmp_path / "quats.csv"
    pd.DataFrame(quats, columns=["qw", "qx", "qy", "qz"]).to_csv(path, index=False)
    return path


def _run(argv: List[str], out_dir: Path) -> int:
    return main(argv + ["--output-dir", str(out_dir)])


def _manifest(out_dir: Path):
    return json.loads((out_dir / "manifest.json").read_text())


def _printed_quaternion(out: str) -> np.ndarray:
    for line in out.splitlines():
        fields = line.split()
        if len(fields) == 4:
            try:
                return np.array(fields, dtype=float)
            except ValueError:
                continue
    raise AssertionError(f"No quaternion printed in {out!r}")


# --------------------------------------------------------------------------- #
# Argument parsing
# --------------------------------------------------------------------------- #
def test_parser_defaults():
    args = build_parser().parse_args(["average", "--input", "q.csv"])
    assert args.output_dir == "hydrarot_out"
    assert args.metric.value == "quaternionic"
    assert args.overrides == []


def test_parser_metric_alias():
    args = build_parser().parse_args(["average", "--input", "q.csv", "--metric", "ang"])
    assert args.metric.value == "angular"


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["unknown"],
        ["average"],
        ["fuse"],
        ["fuse", "--graph", "g.txt", "--simulate"],
        ["average", "--input", "q.csv", "--metric", "geodesic"],
    ],
)
def test_argument_errors_exit_2(argv):
    assert main(argv) == 2


def test_help_exits_0(capsys):
    assert main(["--help"]) == 0
    assert "hydrarot" in capsys.readouterr().out


# --------------------------------------------------------------------------- #
# Configuration errors
# --------------------------------------------------------------------------- #
def test_bad_override_exits_2(tmp_path):
    assert _run(["gradcheck", "--set", "nnet.grad_check.step"], tmp_path) == 2
    assert not (tmp_path / "manifest.json").exists()


def test_missing_config_file_exits_2(tmp_path):
    assert _run(["gradcheck", "--config", str(tmp_path / "absent.yaml")], tmp_path) == 2


def test_config_loader_failure_exits_2(tmp_path):
    error = HydrarotException.of(ErrorType.CONFIGURATION, "broken")
    with patch.object(sys.modules["hydrarot.main"], "load_settings", side_effect=error):
        assert _run(["gradcheck"], tmp_path) == 2


@pytest.mark.parametrize(
    "argv",
    [
        ["exp1d", "--set", "exp1d.n_train=0"],
        ["hemisphere", "--set", "hemisphere.training.optimizer=rmsprop"],
        ["fuse", "--simulate", "--set", "fusion.simulation.cov_rot_vo=[[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]]"],
    ],
)
def test_invalid_experiment_settings_exit_2(tmp_path, argv):
    assert _run(argv, tmp_path) == 2
    assert not (tmp_path / "manifest.json").exists()


def test_missing_section_inside_command_exits_2(tmp_path):
    error = HydrarotException.of(ErrorType.CONFIGURATION, "Missing configuration section", section="nnet")
    with patch.object(sys.modules["hydrarot.main"], "run_gradient_checks", side_effect=error):
        assert _run(["gradcheck"], tmp_path) == 2


def test_adam_and_jitter_settings_reach_the_run(tmp_path):
    argv = ["hemisphere", "--set", "nnet.adam.beta1=0.5", "--set", "numerics.cholesky_jitter=1.0e-9"] + TINY_HEMISPHERE
    with patch.object(sys.modules["hydrarot.main"], "run_hemisphere", wraps=run_hemisphere) as spy:
        assert _run(argv, tmp_path) == 0
    config = spy.call_args.args[0]
    assert config.train_config().adam_beta1 == 0.5
    assert config.train_config().adam_beta2 == pytest.approx(0.999)
    assert spy.call_args.kwargs["jitter"] == pytest.approx(1e-9)


def test_config_file_is_layered(tmp_path):
    config = tmp_path / "config.yaml"
    config.write_text("fusion:\n  simulation:\n    n_poses: 15\n    seed: 4\n")
    out = tmp_path / "out"
    assert _run(["fuse", "--simulate", "--config", str(config)], out) == 0
    assert len(pd.read_csv(out / "fused.csv")) == 15
    manifest = _manifest(out)
    assert manifest["seed"] == 4
    # untouched keys keep their defaults
    assert manifest["settings"]["fusion"]["simulation"]["step_length"] == 1.0


# --------------------------------------------------------------------------- #
# gradcheck
# --------------------------------------------------------------------------- #
def test_gradcheck(tmp_path):
    assert _run(["gradcheck"], tmp_path) == 0
    frame = pd.read_csv(tmp_path / "gradcheck.csv")
    assert frame["passed"].all()
    assert len(frame) == 8
    assert frame.loc[frame["case"] == "dropout_train", "mode"].item() == "train"
    manifest = _manifest(tmp_path)
    assert manifest["command"] == "gradcheck"
    assert manifest["outputs"] == ["gradcheck.csv"]
    assert "numpy" in manifest["versions"]


def test_gradcheck_failure_exits_1(tmp_path):
    failing = pd.DataFrame([{"case": "fc", "n_params": 30, "max_error": 1.0, "passed": False}])
    with patch.object(sys.modules["hydrarot.main"], "run_gradient_checks", return_value=failing):
        assert _run(["gradcheck"], tmp_path) == 1
    assert (tmp_path / "gradcheck.csv").exists()
    assert not (tmp_path / "manifest.json").exists()


def test_unexpected_error_exits_1(tmp_path):
    with patch.object(sys.modules["hydrarot.main"], "run_gradient_checks", side_effect=RuntimeError("boom")):
        assert _run(["gradcheck"], tmp_path) == 1


# --------------------------------------------------------------------------- #
# average
# --------------------------------------------------------------------------- #
@pytest.mark.parametrize("metric", ["quaternionic", "chordal", "angular"])
def test_average(tmp_path, quat_csv, metric, capsys):
    out = tmp_path / metric
    assert _run(["average", "--input", str(quat_csv), "--metric", metric], out) == 0
    frame = pd.read_csv(out / "average.csv")
    assert frame.loc[0, "metric"] == metric
    assert frame.loc[0, "count"] == 25
    mean = frame.loc[0, ["qw", "qx", "qy", "qz"]].to_numpy(dtype=float)
    center = exp_so3([0.0, 0.0, 0.3])
    assert abs(float(np.dot(mean, center))) > np.cos(0.05)
    printed = _printed_quaternion(capsys.readouterr().out)
    np.testing.assert_allclose(printed, mean, atol=1e-9)
    assert isinstance(_manifest(out)["seed"], int)


def test_average_uses_weights(tmp_path):
    path = tmp_path / "weighted.csv"
    a = exp_so3([0.0, 0.0, 0.0])
    b = exp_so3([0.0, 0.0, 0.4])
    pd.DataFrame([list(a) + [3.0], list(b) + [1.0]], columns=["qw", "qx", "qy", "qz", "weight"]).to_csv(path, index=False)
    out = tmp_path / "out"
    assert _run(["average", "--input", str(path), "--metric", "ang"], out) == 0
    mean = pd.read_csv(out / "average.csv").loc[0, ["qw", "qx", "qy", "qz"]].to_numpy(dtype=float)
    np.testing.assert_allclose(mean, exp_so3([0.0, 0.0, 0.1]), atol=1e-8)


def test_average_missing_columns_exits_1(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("w,x,y,z\n1,0,0,0\n")
    assert _run(["average", "--input", str(path)], tmp_path / "out") == 1


def test_average_missing_file_exits_1(tmp_path):
    assert _run(["average", "--input", str(tmp_path / "absent.csv")], tmp_path / "out") == 1


# --------------------------------------------------------------------------- #
# fuse
# --------------------------------------------------------------------------- #
def test_fuse_simulate(tmp_path):
    assert _run(["fuse", "--simulate"] + SMALL_SIMULATION, tmp_path) == 0
    for name in ["graph.txt", "ground_truth.txt", "fused.txt", "fused.csv", "fusion_metrics.json", "manifest.json"]:
        assert (tmp_path / name).exists()
    fused = pd.read_csv(tmp_path / "fused.csv")
    assert list(fused["id"]) == list(range(20))
    metrics = json.loads((tmp_path / "fusion_metrics.json").read_text())
    assert set(metrics) == {"fused", "odometry"}
    assert metrics["fused"]["ate_translation"] >= 0.0
    assert _manifest(tmp_path)["seed"] == 0


def test_fuse_seed_flag(tmp_path):
    assert _run(["fuse", "--simulate", "--seed", "9"] + SMALL_SIMULATION, tmp_path) == 0
    manifest = _manifest(tmp_path)
    assert manifest["seed"] == 9
    assert manifest["settings"]["fusion"]["simulation"]["seed"] == 9


def test_fuse_simulated_graph_can_be_relaxed_again(tmp_path):
    first = tmp_path / "first"
    second = tmp_path / "second"
    assert _run(["fuse", "--simulate"] + SMALL_SIMULATION, first) == 0
    assert _run(["fuse", "--graph", str(first / "graph.txt")], second) == 0
    a = pd.read_csv(first / "fused.csv")
    b = pd.read_csv(second / "fused.csv")
    np.testing.assert_allclose(a[["tx", "ty", "tz"]], b[["tx", "ty", "tz"]], atol=1e-6)


def test_fuse_graph_without_rotation_edges_dead_reckons(tmp_path):
    cov = " ".join(["0.01 0 0 0 0 0", "0.01 0 0 0 0", "0.01 0 0 0", "0.0001 0 0", "0.0001 0", "0.0001"])
    graph = tmp_path / "graph.txt"
    graph.write_text(
        "NODE 0 0 0 0 1 0 0 0\n"
        "NODE 1 5 5 5 1 0 0 0\n"
        "NODE 2 5 5 5 1 0 0 0\n"
        f"EDGE_SE3 0 1 1 0 0 1 0 0 0 {cov}\n"
        f"EDGE_SE3 1 2 1 0 0 1 0 0 0 {cov}\n"
        "FIX 0\n"
    )
    out = tmp_path / "out"
    assert _run(["fuse", "--graph", str(graph)], out) == 0
    fused = pd.read_csv(out / "fused.csv")
    np.testing.assert_allclose(fused["tx"], [0.0, 1.0, 2.0], atol=1e-12)
    np.testing.assert_allclose(fused[["ty", "tz"]], 0.0, atol=1e-12)
    assert not (out / "fusion_metrics.json").exists()


def test_seed_is_recorded_for_every_command(tmp_path, quat_csv):
    first = tmp_path / "first"
    assert _run(["fuse", "--simulate"] + SMALL_SIMULATION, first) == 0
    runs = {
        "graph": ["fuse", "--graph", str(first / "graph.txt")],
        "average": ["average", "--input", str(quat_csv)],
        "gradcheck": ["gradcheck"],
    }
    for name, argv in runs.items():
        assert _run(argv, tmp_path / name) == 0
        assert isinstance(_manifest(tmp_path / name)["seed"], int)
    assert _run(["average", "--input", str(quat_csv), "--seed", "17"], tmp_path / "pinned") == 0
    assert _manifest(tmp_path / "pinned")["seed"] == 17


def test_fuse_bad_graph_exits_1(tmp_path):
    graph = tmp_path / "graph.txt"
    graph.write_text("VERTEX 0\n")
    assert _run(["fuse", "--graph", str(graph)], tmp_path / "out") == 1


# --------------------------------------------------------------------------- #
# Experiments and determinism
# --------------------------------------------------------------------------- #
def test_exp1d_tiny(tmp_path):
    assert _run(["exp1d", "--reps", "1"] + TINY_1D, tmp_path) == 0
    results = pd.read_csv(tmp_path / "exp1d_results.csv")
    assert len(results) == 5
    assert len(pd.read_csv(tmp_path / "exp1d_predictions.csv")) == 5 * 20
    summary = json.loads((tmp_path / "exp1d_summary.json").read_text())
    assert summary["repetitions"] == 1
    assert set(_manifest(tmp_path)["outputs"]) == {
        "exp1d_results.csv",
        "exp1d_box.csv",
        "exp1d_predictions.csv",
        "exp1d_summary.json",
    }


def test_hemisphere_tiny_with_checkpoint(tmp_path):
    checkpoint = tmp_path / "net.json"
    out = tmp_path / "out"
    assert _run(["hemisphere", "--checkpoint", str(checkpoint)] + TINY_HEMISPHERE, out) == 0
    assert len(pd.read_csv(out / "hemisphere_predictions.csv")) == 10
    assert list(pd.read_csv(out / "hemisphere_loss.csv")["epoch"]) == [1, 2]
    assert checkpoint.exists()


def test_hemisphere_csv_reproduces_nll(tmp_path):
    assert _run(["hemisphere"] + TINY_HEMISPHERE, tmp_path) == 0
    frame = pd.read_csv(tmp_path / "hemisphere_predictions.csv")
    cov = np.empty((len(frame), 3, 3))
    for i, a in enumerate("xyz"):
        for j, b in enumerate("xyz"):
            key = f"cov_t_{a}{b}" if i <= j else f"cov_t_{b}{a}"
            cov[:, i, j] = frame[key]
    np.testing.assert_allclose(np.diagonal(cov, axis1=1, axis2=2), frame[["sigma_t_x", "sigma_t_y", "sigma_t_z"]] ** 2, rtol=1e-12)
    q = frame[["qw", "qx", "qy", "qz"]].to_numpy()
    q_t = frame[["qt_w", "qt_x", "qt_y", "qt_z"]].to_numpy()
    np.testing.assert_allclose(so3_nll(q, q_t, cov), frame["nll"], rtol=1e-9, atol=1e-9)
    summary = json.loads((tmp_path / "hemisphere_summary.json").read_text())
    assert summary["pixel_normalization"] == {"center": [250.0, 250.0], "half_extent": [250.0, 250.0]}


@pytest.mark.parametrize(
    "argv,outputs",
    [
        (["gradcheck"], ["gradcheck.csv"]),
        (["fuse", "--simulate"] + SMALL_SIMULATION, ["fused.csv", "fused.txt", "graph.txt"]),
        (["exp1d", "--reps", "1"] + TINY_1D, ["exp1d_results.csv", "exp1d_predictions.csv"]),
    ],
)
def test_repeat_runs_are_byte_identical(tmp_path, argv, outputs):
    assert _run(argv, tmp_path / "a") == 0
    assert _run(argv, tmp_path / "b") == 0
    for name in outputs:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
