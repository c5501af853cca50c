"""
Post-run metrics: trigger statistics, settling times of the local consensus
errors, terminal disagreement and state bounds over the normal agents.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np
from scipy.spatial.distance import pdist

from ..errors import InvalidArgumentError
from ..utils.helpers import format_sig
from .graph import Digraph

logger = logging.getLogger(__name__)

SETTLING_BAND = 0.01


@dataclass(frozen=True)
class AgentMetrics:
    agent: int
    trigger_count: int
    min_trigger_interval: Optional[float]
    settling_time: Optional[float]
    initial_error: float
    terminal_error: float
    avbrd_runs: int
    avbrd_seconds: float


@dataclass(frozen=True)
class Metrics:
    """
    Per-normal-agent statistics plus global terminal disagreement.

    Attributes:
        agents: AgentMetrics keyed by normal agent id
        disagreement: terminal max pairwise distance of q, dq and W over normal agents
        peak_norms: max over the run of ||q||, ||dq||, ||eta||, ||phi_hat|| over normal agents
        t_end: last recorded instant
    """

    agents: Dict[int, AgentMetrics]
    disagreement: Dict[str, float]
    peak_norms: Dict[str, float]
    t_end: float

    @property
    def unsettled(self) -> List[int]:
        return [a for a, m in sorted(self.agents.items()) if m.settling_time is None]

    @property
    def converged(self) -> bool:
        return bool(self.agents) and not self.unsettled


def consensus_error_series(out, graph: Digraph, normal: Iterable[int], i: int) -> np.ndarray:
    """
    e_i(t) = sum over normal in-neighbors j of (eta_i(t) - eta_j(t)).

    Args:
        out: SimOutput of the run
        graph: communication digraph
        normal: ids of the normal agents
        i: normal agent id

    Returns:
        (records, n) array aligned with out.times
    """
    normal = set(normal)
    if i not in normal:
        raise InvalidArgumentError(f"agent {i} is not a normal agent")
    js = [j for j in graph.in_neighbors(i) if j in normal]
    eta = out.eta
    if not js:
        return np.zeros(eta[:, i - 1].shape)
    idx = np.array(js) - 1
    return len(js) * eta[:, i - 1] - eta[:, idx].sum(axis=1)


def settling_time(times, series, t0: Optional[float] = None) -> Optional[float]:
    """
    Earliest recorded t* after which ||series|| stays within 1% of its initial norm.

    Returns None when the series is still outside the band at the last sample.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(series, dtype=float)
    if times.size == 0 or values.shape[0] == 0:
        raise InvalidArgumentError("settling time needs a non-empty series")
    if values.shape[0] != times.size:
        raise InvalidArgumentError("series and times must have the same length")
    t0 = float(times[0]) if t0 is None else float(t0)
    norms = np.abs(values) if values.ndim == 1 else np.linalg.norm(values.reshape(values.shape[0], -1), axis=1)
    initial = norms[0]
    if initial == 0:
        return t0
    outside = np.flatnonzero(norms > SETTLING_BAND * initial)
    if outside.size == 0:
        return float(times[0])
    last = outside[-1]
    if last == norms.size - 1:
        return None
    return float(times[last + 1])


def trigger_statistics(instants, t0: Optional[float] = None) -> Tuple[int, Optional[float]]:
    """(count, min consecutive interval); the interval is None below two instants."""
    ts = np.asarray(list(instants), dtype=float)
    if ts.size > 1 and np.any(np.diff(ts) <= 0):
        raise InvalidArgumentError("trigger instants must be strictly increasing")
    if t0 is not None:
        ts = ts[ts > t0]
    if ts.size < 2:
        return int(ts.size), None
    return int(ts.size), float(np.min(np.diff(ts)))


def pairwise_disagreement(values, members: Optional[Iterable[int]] = None) -> float:
    """Largest Euclidean distance between any two rows (agent positions) of values."""
    values = np.asarray(values, dtype=float)
    if members is not None:
        values = values[np.array(sorted(members), dtype=int) - 1]
    if values.shape[0] < 2:
        return 0.0
    return float(np.max(pdist(values.reshape(values.shape[0], -1))))


def compute_metrics(out, graph: Digraph) -> Metrics:
    normal = sorted(out.normal_ids)
    log = out.trigger_log
    agents: Dict[int, AgentMetrics] = {}
    for a in normal:
        count, min_gap = trigger_statistics(log[a], out.t0)
        err = consensus_error_series(out, graph, normal, a)
        norms = np.linalg.norm(err, axis=1)
        agents[a] = AgentMetrics(
            agent=a,
            trigger_count=count,
            min_trigger_interval=min_gap,
            settling_time=settling_time(out.times, err, out.t0),
            initial_error=float(norms[0]),
            terminal_error=float(norms[-1]),
            avbrd_runs=out.fuse_count.get(a, 0),
            avbrd_seconds=out.fuse_seconds.get(a, 0.0),
        )

    idx = np.array(normal, dtype=int) - 1
    if idx.size:
        disagreement = {
            "q": pairwise_disagreement(out.q[-1], normal),
            "dq": pairwise_disagreement(out.dq[-1], normal),
            "W": pairwise_disagreement(out.W[-1], normal),
        }
        peaks = {
            name: float(np.max(np.linalg.norm(arr[:, idx], axis=-1)))
            for name, arr in (("q", out.q), ("dq", out.dq), ("eta", out.eta), ("phi_hat", out.phi_hat))
        }
    else:
        disagreement = {"q": 0.0, "dq": 0.0, "W": 0.0}
        peaks = {"q": 0.0, "dq": 0.0, "eta": 0.0, "phi_hat": 0.0}

    metrics = Metrics(agents=agents, disagreement=disagreement, peak_norms=peaks, t_end=float(out.times[-1]))
    if metrics.unsettled:
        logger.info(f"[Analysis] {out.name}: agents {metrics.unsettled} did not settle")
    return metrics


def _fmt(value: Optional[float]) -> str:
    return "undefined" if value is None else format_sig(value)


def format_metrics_report(metrics: Metrics, header: Optional[Mapping[str, object]] = None) -> str:
    """Plain-text report; header entries (scenario, overrides, ...) are echoed first."""
    lines: List[str] = []
    for key, value in (header or {}).items():
        lines.append(f"# {key}: {value}")
    lines.append("# settling time: earliest t after which ||e_i(t)|| stays within 1% of ||e_i(t0)||")
    lines.append("")
    lines.append(f"{'agent':>5}  {'triggers':>8}  {'min_interval':>14}  {'settling_time':>14}  "
                 f"{'final_error':>14}  {'avbrd_runs':>10}")
    for a, m in sorted(metrics.agents.items()):
        lines.append(f"{a:>5}  {m.trigger_count:>8}  {_fmt(m.min_trigger_interval):>14}  "
                     f"{_fmt(m.settling_time):>14}  {_fmt(m.terminal_error):>14}  {m.avbrd_runs:>10}")
    lines.append("")
    for name, value in metrics.disagreement.items():
        lines.append(f"terminal max pairwise ||{name}_i - {name}_j||: {_fmt(value)}")
    for name, value in metrics.peak_norms.items():
        lines.append(f"peak ||{name}||: {_fmt(value)}")
    if metrics.converged:
        lines.append("consensus: reached")
    else:
        lines.append(f"consensus: NOT reached (undefined settling time for agents {metrics.unsettled})")
    return "\n".join(lines) + "\n"


def metrics_key_values(metrics: Metrics, header: Optional[Mapping[str, object]] = None) -> List[Tuple[str, str]]:
    """Flat key=value pairs for machine consumption."""
    pairs: List[Tuple[str, str]] = [(str(k), str(v)) for k, v in (header or {}).items()]
    for a, m in sorted(metrics.agents.items()):
        pairs += [
            (f"agent.{a}.trigger_count", str(m.trigger_count)),
            (f"agent.{a}.min_trigger_interval", _fmt(m.min_trigger_interval)),
            (f"agent.{a}.settling_time", _fmt(m.settling_time)),
            (f"agent.{a}.terminal_error", _fmt(m.terminal_error)),
            (f"agent.{a}.avbrd_runs", str(m.avbrd_runs)),
            (f"agent.{a}.avbrd_seconds", _fmt(m.avbrd_seconds)),
        ]
    pairs += [(f"disagreement.{k}", _fmt(v)) for k, v in metrics.disagreement.items()]
    pairs += [(f"peak.{k}", _fmt(v)) for k, v in metrics.peak_norms.items()]
    pairs.append(("converged", str(metrics.converged).lower()))
    return pairs
