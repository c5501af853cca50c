"""
File handling utilities

Graph file codec (first line `n`, then `i: j1 j2 ...` listing the
in-neighbors of agent i) and writers for run outputs.
"""
import logging
import os
from typing import Dict, Iterable, List, Tuple

import numpy as np
import pandas as pd

from ..errors import GraphFormatError
from ..services.graph import Digraph
from .helpers import float_format

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ["t", "agent", "q1", "q2", "dq1", "dq2", "eta1", "eta2", "W1", "W2"]


def _parse_int(token: str, line: int, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise GraphFormatError(f"{what} must be an integer, got {token!r}", line) from None


def parse_graph(text: str) -> Digraph:
    """
    Parse the graph file format.

    Blank lines and `#` comments are ignored. Agents without a line have no
    in-neighbors.

    Args:
        text: file contents

    Returns:
        Digraph

    Raises:
        GraphFormatError: with the 1-based offending line
    """
    n = None
    seen: Dict[int, int] = {}
    in_neighbors: Dict[int, List[int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if n is None:
            n = _parse_int(line, lineno, "agent count")
            if n < 1:
                raise GraphFormatError(f"agent count must be positive, got {n}", lineno)
            continue
        head, sep, tail = line.partition(":")
        if not sep:
            raise GraphFormatError(f"expected 'i: j1 j2 ...', got {line!r}", lineno)
        i = _parse_int(head.strip(), lineno, "agent id")
        if not 1 <= i <= n:
            raise GraphFormatError(f"agent {i} outside 1..{n}", lineno)
        if i in seen:
            raise GraphFormatError(f"agent {i} already listed on line {seen[i]}", lineno)
        seen[i] = lineno
        js = [_parse_int(tok, lineno, "in-neighbor id") for tok in tail.split()]
        for j in js:
            if not 1 <= j <= n:
                raise GraphFormatError(f"in-neighbor {j} outside 1..{n}", lineno)
            if j == i:
                raise GraphFormatError(f"self-loop on agent {i}", lineno)
        if len(set(js)) != len(js):
            raise GraphFormatError(f"duplicate in-neighbor for agent {i}", lineno)
        in_neighbors[i] = js
    if n is None:
        raise GraphFormatError("empty graph file", 1)
    return Digraph.from_in_neighbors(n, in_neighbors)


def format_graph(g: Digraph) -> str:
    lines = [str(g.n)]
    for i in g.vertices:
        js = " ".join(str(j) for j in g.in_neighbors(i))
        lines.append(f"{i}: {js}".rstrip())
    return "\n".join(lines) + "\n"


def read_graph(path: str) -> Digraph:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_graph(fh.read())


def write_graph(g: Digraph, path: str) -> str:
    ensure_dir(os.path.dirname(path))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_graph(g))
    logger.info(f"[Files] wrote graph with {g.n} agents to {path}")
    return path


def ensure_dir(path: str) -> None:
    if path:
        os.makedirs(path, exist_ok=True)


# ---------------------------------------------------------------------------
# Run outputs


def trajectory_frame(out) -> pd.DataFrame:
    """Long-format trajectory: one row per (record, agent), ordered by t then agent."""
    records, n_agents = out.q.shape[:2]
    data = np.column_stack([a.reshape(records * n_agents, -1) for a in (out.q, out.dq, out.eta, out.W)])
    frame = pd.DataFrame(data, columns=TRAJECTORY_COLUMNS[2:])
    frame.insert(0, "agent", np.tile(np.array(out.agent_ids), records))
    frame.insert(0, "t", np.repeat(out.times, n_agents))
    return frame


def trigger_frame(out) -> pd.DataFrame:
    rows = sorted((e.agent, e.t) for e in out.trigger_events)
    return pd.DataFrame(rows, columns=["agent", "t"])


def message_frame(out) -> pd.DataFrame:
    frame = pd.DataFrame(out.message_log, columns=["t", "sender", "receiver", "accepted"])
    frame["accepted"] = frame["accepted"].map({True: "true", False: "false"})
    return frame


def consensus_error_frame(out, graph: Digraph) -> pd.DataFrame:
    """Plot-ready e_i(t) series of every normal agent, with its norm."""
    from ..services.analysis import consensus_error_series

    frames = []
    normal = sorted(out.normal_ids)
    for a in normal:
        err = consensus_error_series(out, graph, normal, a)
        frame = pd.DataFrame(err, columns=[f"e{k + 1}" for k in range(err.shape[1])])
        frame["norm"] = np.linalg.norm(err, axis=1)
        frame.insert(0, "agent", a)
        frame.insert(0, "t", out.times)
        frames.append(frame)
    if not frames:
        return pd.DataFrame(columns=["t", "agent", "e1", "e2", "norm"])
    return pd.concat(frames, ignore_index=True).sort_values(["t", "agent"], kind="stable")


def write_frame(frame: pd.DataFrame, path: str) -> str:
    frame.to_csv(path, index=False, float_format=float_format(), lineterminator="\n")
    return path


def write_text(text: str, path: str) -> str:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


def write_key_values(pairs: Iterable[Tuple[str, str]], path: str) -> str:
    return write_text("".join(f"{k}={v}\n" for k, v in pairs), path)


def write_run_outputs(out, graph: Digraph, out_dir: str, report: str, key_values: Iterable[Tuple[str, str]]) -> Dict[str, str]:
    """
    Write every file of a run into out_dir.

    Returns:
        mapping of output kind to written path
    """
    ensure_dir(out_dir)
    paths = {
        "trajectory": write_frame(trajectory_frame(out), os.path.join(out_dir, "trajectory.csv")),
        "triggers": write_frame(trigger_frame(out), os.path.join(out_dir, "triggers.csv")),
        "messages": write_frame(message_frame(out), os.path.join(out_dir, "messages.csv")),
        "consensus_errors": write_frame(consensus_error_frame(out, graph), os.path.join(out_dir, "consensus_errors.csv")),
        "metrics": write_text(report, os.path.join(out_dir, "metrics.txt")),
        "metrics_kv": write_key_values(key_values, os.path.join(out_dir, "metrics.kv")),
    }
    logger.info(f"[Files] wrote {len(paths)} output files to {out_dir}")
    return paths
