import argparse
import json
import logging
import platform
import sys
from importlib import metadata
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from prepdir import configure_logging
from pydantic import ValidationError

from .hydrarot_averaging import chordal_mean, karcher_mean, quat_mean
from .hydrarot_config import load_settings, parse_overrides, section
from .hydrarot_datasets import Config1D, HemisphereConfig
from .hydrarot_error import ErrorSeverity, ErrorType, HydrarotException
from .hydrarot_experiments import run_1d, run_gradient_checks, run_hemisphere
from .hydrarot_fusion import (
    OdometryNoise,
    PoseGraph,
    SolverOptions,
    dead_reckon,
    relax_graph,
    simulate_odometry,
    simulate_trajectory,
)
from .hydrarot_graph_io import read_graph, write_graph, write_trajectory
from .hydrarot_nnet import save_checkpoint
from .hydrarot_so3 import Metric
from .hydrarot_trajectory import traj_metrics

# enough digits to round-trip a float64
FLOAT_FORMAT = "%.17g"
QUAT_COLUMNS = ["qw", "qx", "qy", "qz"]

logger = logging.getLogger("hydrarot")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hydrarot", description="Hydrarot: probabilistic rotation regression tools.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=None, help="YAML or JSON config file layered over the defaults")
    common.add_argument("--output-dir", type=str, default="hydrarot_out", help="Directory for CSV outputs and the manifest")
    common.add_argument("--seed", type=int, default=None, help="Override the seed of the selected run")
    common.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE", help="Override a config field"
    )
    common.add_argument(
        "--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"], default=None, help="Logging level"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    exp1d = sub.add_parser("exp1d", parents=[common], help="Compare the five 1D uncertainty estimators")
    exp1d.add_argument("--reps", type=int, default=None, help="Number of repetitions")
    exp1d.add_argument("--workers", type=int, default=1, help="Worker processes for repetitions")

    hemi = sub.add_parser("hemisphere", parents=[common], help="Train and evaluate HydraNet on the hemisphere world")
    hemi.add_argument("--checkpoint", type=str, default=None, help="Also save the trained network to this path")

    avg = sub.add_parser("average", parents=[common], help="Average rotations from a CSV of quaternions")
    avg.add_argument("--input", type=str, required=True, help="CSV with qw,qx,qy,qz columns and optional weight")
    avg.add_argument(
        "--metric", type=Metric, default=Metric.QUATERNIONIC, help="quaternionic (quat), chordal (chord) or angular (ang)"
    )

    fuse = sub.add_parser("fuse", parents=[common], help="Relax a pose graph, or simulate and relax one")
    source = fuse.add_mutually_exclusive_group(required=True)
    source.add_argument("--graph", type=str, help="Pose graph text file")
    source.add_argument("--simulate", action="store_true", help="Simulate a trajectory with noisy odometry")

    sub.add_parser("gradcheck", parents=[common], help="Check backpropagation against finite differences")
    return parser


def _versions() -> Dict[str, str]:
    versions = {"python": platform.python_version()}
    for package in ("hydrarot", "numpy", "scipy", "pandas", "pydantic"):
        try:
            versions[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            versions[package] = "unknown"
    return versions


def write_manifest(out_dir: Path, command: str, argv: List[str], seed: int, settings: Dict, outputs: List[str]) -> Path:
    manifest = {
        "command": command,
        "argv": argv,
        "seed": seed,
        "settings": settings,
        "versions": _versions(),
        "outputs": sorted(outputs),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str), encoding="utf-8")
    return path


def _write_csv(frame: pd.DataFrame, out_dir: Path, name: str, outputs: List[str]) -> None:
    frame.to_csv(out_dir / name, index=False, float_format=FLOAT_FORMAT)
    outputs.append(name)


def _write_json(data: Dict, out_dir: Path, name: str, outputs: List[str]) -> None:
    (out_dir / name).write_text(json.dumps(data, indent=2, sort_keys=True, default=float), encoding="utf-8")
    outputs.append(name)


def _seeded(settings: Dict, path: List[str], seed: Optional[int]) -> int:
    node = section(settings, *path)
    if seed is not None:
        node["seed"] = seed
    return int(node.get("seed", 0))


def _resolve_seed(seed: Optional[int]) -> int:
    """Seed for commands without a configured one: the explicit value or fresh OS entropy."""
    if seed is not None:
        return int(seed)
    return int(np.random.SeedSequence().entropy % 2**63)


def _adam_settings(settings: Dict, *path: str) -> None:
    """Fill the Adam constants of a training section from ``nnet.adam`` unless it sets its own."""
    adam = section(settings, "nnet", "adam")
    training = section(settings, *path).setdefault("training", {})
    for key in ("beta1", "beta2", "eps"):
        training.setdefault(f"adam_{key}", float(adam[key]))


def cmd_exp1d(args, settings: Dict, out_dir: Path, outputs: List[str]) -> int:
    seed = _seeded(settings, ["exp1d"], args.seed)
    _adam_settings(settings, "exp1d")
    config = Config1D(**section(settings, "exp1d"))
    sigma_min = float(section(settings, "numerics")["sigma_min"])
    report = run_1d(config, repetitions=args.reps, workers=args.workers, sigma_min=sigma_min)
    _write_csv(report.results, out_dir, "exp1d_results.csv", outputs)
    _write_csv(report.box_stats, out_dir, "exp1d_box.csv", outputs)
    _write_csv(report.predictions, out_dir, "exp1d_predictions.csv", outputs)
    _write_json(report.summary, out_dir, "exp1d_summary.json", outputs)
    return seed


def cmd_hemisphere(args, settings: Dict, out_dir: Path, outputs: List[str]) -> int:
    seed = _seeded(settings, ["hemisphere"], args.seed)
    _adam_settings(settings, "hemisphere")
    config = HemisphereConfig(**section(settings, "hemisphere"))
    numerics = section(settings, "numerics")
    report = run_hemisphere(
        config, sigma_min=float(numerics["sigma_min"]), jitter=float(numerics["cholesky_jitter"])
    )
    _write_csv(report.predictions, out_dir, "hemisphere_predictions.csv", outputs)
    _write_json(report.summary, out_dir, "hemisphere_summary.json", outputs)
    history = pd.DataFrame({"epoch": np.arange(1, len(report.history) + 1), "loss": report.history})
    _write_csv(history, out_dir, "hemisphere_loss.csv", outputs)
    if args.checkpoint:
        save_checkpoint(report.net.model, args.checkpoint)
        logger.info(f"Saved checkpoint to {args.checkpoint}")
    return seed


def cmd_average(args, settings: Dict, out_dir: Path, outputs: List[str]) -> int:
    metric = Metric(args.metric)
    try:
        frame = pd.read_csv(args.input)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise HydrarotException.of(ErrorType.INVALID_INPUT, f"Cannot read quaternion CSV: {e}", path=args.input)
    missing = [c for c in QUAT_COLUMNS if c not in frame.columns]
    if missing:
        raise HydrarotException.of(ErrorType.INVALID_INPUT, "Quaternion CSV lacks columns", missing=missing)
    quats = frame[QUAT_COLUMNS].to_numpy(dtype=float)
    weights = frame["weight"].to_numpy(dtype=float) if "weight" in frame.columns else None
    karcher = section(settings, "averaging", "karcher")
    if metric == Metric.QUATERNIONIC:
        result = quat_mean(quats, weights, eps_norm=float(section(settings, "numerics")["eps_norm"]))
    elif metric == Metric.CHORDAL:
        result = chordal_mean(quats, weights)
    else:
        result = karcher_mean(quats, weights, tol=float(karcher["tol"]), max_iter=int(karcher["max_iter"]))
    for error in result.errors:
        logger.warning(f"{error.message}: {error.details}")
    row = dict(zip(QUAT_COLUMNS, result.mean))
    row.update({"metric": metric.value, "count": len(quats), "iterations": result.iterations})
    _write_csv(pd.DataFrame([row]), out_dir, "average.csv", outputs)
    print(" ".join(f"{v:.12g}" for v in result.mean))
    return _resolve_seed(args.seed)


def cmd_fuse(args, settings: Dict, out_dir: Path, outputs: List[str]) -> int:
    options = SolverOptions(**section(settings, "fusion", "solver"))
    ground_truth = None
    if args.simulate:
        seed = _seeded(settings, ["fusion", "simulation"], args.seed)
        sim = section(settings, "fusion", "simulation")
        rng = np.random.default_rng(seed)
        ground_truth = simulate_trajectory(int(sim["n_poses"]), float(sim["step_length"]), rng)
        odom, rot = simulate_odometry(ground_truth, OdometryNoise(**sim), rng)
        nodes = dict(enumerate(dead_reckon(ground_truth[0], odom)))
        graph = PoseGraph(nodes=nodes, odom=odom, rot=rot, fixed=0)
        write_graph(graph, out_dir / "graph.txt")
        write_trajectory(ground_truth, out_dir / "ground_truth.txt")
        outputs.extend(["graph.txt", "ground_truth.txt"])
    else:
        seed = _resolve_seed(args.seed)
        graph = read_graph(args.graph)

    result = relax_graph(graph, options)
    write_trajectory(result.poses, out_dir / "fused.txt")
    outputs.append("fused.txt")
    ids = sorted(result.poses)
    rows = []
    for i in ids:
        pose = result.poses[i]
        row = {"id": i, "tx": pose.translation[0], "ty": pose.translation[1], "tz": pose.translation[2]}
        row.update(zip(QUAT_COLUMNS, pose.rotation))
        row["cost"] = result.costs.get(i, 0.0)
        rows.append(row)
    _write_csv(pd.DataFrame(rows), out_dir, "fused.csv", outputs)

    if ground_truth is not None:
        fused = [result.poses[i] for i in ids]
        dead = [graph.nodes[i] for i in ids]
        metrics = {"fused": traj_metrics(fused, ground_truth).__dict__, "odometry": traj_metrics(dead, ground_truth).__dict__}
        _write_json(metrics, out_dir, "fusion_metrics.json", outputs)
        logger.info(
            f"m-ATE translation: odometry {metrics['odometry']['ate_translation']:.4f} m, "
            f"fused {metrics['fused']['ate_translation']:.4f} m"
        )
    return seed


def cmd_gradcheck(args, settings: Dict, out_dir: Path, outputs: List[str]) -> int:
    check = section(settings, "nnet", "grad_check")
    seed = 0 if args.seed is None else args.seed
    frame = run_gradient_checks(seed=seed, step_size=float(check["step"]), fraction=float(check["fraction"]))
    _write_csv(frame, out_dir, "gradcheck.csv", outputs)
    if not frame["passed"].all():
        failed = frame.loc[~frame["passed"], "case"].tolist()
        raise HydrarotException.of(ErrorType.GRADIENT_MISMATCH, "Gradient check failed", cases=failed)
    return seed


COMMANDS = {
    "exp1d": cmd_exp1d,
    "hemisphere": cmd_hemisphere,
    "average": cmd_average,
    "fuse": cmd_fuse,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 2

    try:
        overrides = parse_overrides(args.overrides)
        settings = load_settings(args.config, overrides)
    except HydrarotException as e:
        logging.getLogger("hydrarot").error(f"Configuration error: {e}")
        return 2

    level = args.log_level or str(settings.get("logging", {}).get("level", "INFO")).upper()
    configure_logging(logger, level=level)

    out_dir = Path(args.output_dir)
    outputs: List[str] = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        seed = COMMANDS[args.command](args, settings, out_dir, outputs)
        write_manifest(out_dir, args.command, argv, seed, settings, outputs)
    except ValidationError as e:
        logger.error(f"Configuration error: {e}")
        return 2
    except HydrarotException as e:
        if e.error_type == ErrorType.CONFIGURATION:
            logger.error(f"Configuration error: {e}")
            return 2
        severity = logging.WARNING if e.error.severity == ErrorSeverity.WARNING else logging.ERROR
        logger.log(severity, f"{e.error_type.value}: {e}")
        return 1
    except Exception as e:
        logger.error(f"{args.command} failed: {str(e)}")
        return 1

    logger.info(f"{args.command} finished; outputs in {out_dir}")
    return 0


if __name__ == "__main__":
    exit(main())
