"""Line-oriented pose-graph text files.

::

    NODE id tx ty tz qw qx qy qz
    EDGE_SE3 from to tx ty tz qw qx qy qz <21 upper-triangular covariance values>
    EDGE_ROT from to qw qx qy qz <6 upper-triangular covariance values>
    FIX id

Upper-triangular values are listed row by row. Blank lines and lines starting
with ``#`` are ignored. Numbers are written with 17 significant digits.
"""

import logging
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np

from .hydrarot_error import ErrorType, HydrarotException
from .hydrarot_fusion import OdomEdge, PoseGraph, RotEdge
from .hydrarot_so3 import PoseSE3

logger = logging.getLogger(__name__)

# token counts per record, tag included
FIELD_COUNTS = {"NODE": 9, "EDGE_SE3": 31, "EDGE_ROT": 13, "FIX": 2}


def _fmt(values) -> str:
    return " ".join(f"{float(v):.17g}" for v in values)


def upper_triangle(matrix: np.ndarray) -> np.ndarray:
    return matrix[np.triu_indices(matrix.shape[0])]


def from_upper_triangle(values: Sequence[float], n: int) -> np.ndarray:
    m = np.zeros((n, n))
    m[np.triu_indices(n)] = values
    return m + np.triu(m, 1).T


def _parse_line(tokens: List[str], lineno: int):
    tag = tokens[0]
    if tag not in FIELD_COUNTS:
        raise HydrarotException.of(ErrorType.GRAPH_FORMAT, "Unknown record type", line=lineno, record=tag)
    if len(tokens) != FIELD_COUNTS[tag]:
        raise HydrarotException.of(
            ErrorType.GRAPH_FORMAT, f"{tag} expects {FIELD_COUNTS[tag] - 1} fields", line=lineno, got=len(tokens) - 1
        )
    try:
        n_ids = 1 if tag in ("NODE", "FIX") else 2
        ids = [int(t) for t in tokens[1 : 1 + n_ids]]
        values = np.array([float(t) for t in tokens[1 + n_ids :]])
    except ValueError as e:
        raise HydrarotException.of(ErrorType.GRAPH_FORMAT, f"Bad number: {e}", line=lineno)
    return tag, ids, values


def parse_graph(text: str) -> PoseGraph:
    nodes, odom, rot = {}, [], []
    fixed = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tag, ids, values = _parse_line(stripped.split(), lineno)
        try:
            if tag == "NODE":
                if ids[0] in nodes:
                    raise HydrarotException.of(ErrorType.GRAPH_FORMAT, "Duplicate node id", line=lineno, node=ids[0])
                nodes[ids[0]] = PoseSE3(values[3:7], values[:3])
            elif tag == "EDGE_SE3":
                odom.append(OdomEdge(ids[0], ids[1], PoseSE3(values[3:7], values[:3]), from_upper_triangle(values[7:], 6)))
            elif tag == "EDGE_ROT":
                rot.append(RotEdge(ids[0], ids[1], values[:4], from_upper_triangle(values[4:], 3)))
            else:
                fixed = ids[0]
        except HydrarotException as e:
            if e.error_type == ErrorType.GRAPH_FORMAT:
                raise
            raise HydrarotException.of(ErrorType.GRAPH_FORMAT, f"Invalid {tag} record: {e.error.message}", line=lineno)
    if not nodes:
        raise HydrarotException.of(ErrorType.GRAPH_FORMAT, "Graph file contains no NODE records")
    try:
        return PoseGraph(nodes=nodes, odom=odom, rot=rot, fixed=fixed)
    except HydrarotException as e:
        raise HydrarotException.of(ErrorType.GRAPH_FORMAT, e.error.message, **e.details)


def read_graph(path: Union[str, Path]) -> PoseGraph:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise HydrarotException.of(ErrorType.GRAPH_FORMAT, f"Cannot read graph file: {e}", path=str(path))
    graph = parse_graph(text)
    logger.info(f"Read {len(graph.nodes)} nodes, {len(graph.odom)} odometry and {len(graph.rot)} rotation edges from {path}")
    return graph


def format_node(node_id: int, pose: PoseSE3) -> str:
    return f"NODE {node_id} {_fmt(pose.translation)} {_fmt(pose.rotation)}"


def format_graph(graph: PoseGraph) -> str:
    lines = [format_node(i, graph.nodes[i]) for i in sorted(graph.nodes)]
    for e in graph.odom:
        m = e.measurement
        lines.append(
            f"EDGE_SE3 {e.source} {e.target} {_fmt(m.translation)} {_fmt(m.rotation)} {_fmt(upper_triangle(e.covariance))}"
        )
    for e in graph.rot:
        lines.append(f"EDGE_ROT {e.source} {e.target} {_fmt(e.rotation)} {_fmt(upper_triangle(e.covariance))}")
    if graph.fixed is not None:
        lines.append(f"FIX {graph.fixed}")
    return "\n".join(lines) + "\n"


def write_graph(graph: PoseGraph, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_graph(graph), encoding="utf-8")
    return path


def write_trajectory(poses, path: Union[str, Path]) -> Path:
    """Write ``{id: pose}`` (or a pose sequence) as NODE records."""
    items = poses.items() if isinstance(poses, dict) else enumerate(poses)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(format_node(i, p) + "\n" for i, p in sorted(items, key=lambda kv: kv[0])), encoding="utf-8")
    return path
