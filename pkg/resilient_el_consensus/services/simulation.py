"""
Deterministic fixed-step closed-loop simulation of the networked arms.

Per step and per agent the engine follows the normal agent's loop:
ingest queued broadcasts, re-run the resilient decision where storage
changed, compute the control law, advance observer / adaptive estimate /
plant, then evaluate the trigger and queue broadcasts. Messages queued in
one step are delivered at the start of the next, in sender order.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, NamedTuple, Optional, Tuple

import numpy as np

from ..config import settings
from ..errors import InsufficientNeighborsError, InvalidArgumentError, ScenarioError, SimulationDivergedError
from ..state.agent_state import ControllerState, NeighborStore, ObserverState
from ..utils.integration import rk4_step
from .adversary import ByzantineSpec, EvolutionMode, byzantine_observer_evolution, byzantine_transmission
from .arm import DOF, PARAM_COUNT, ArmParams, plant_rate
from .graph import Digraph, is_f_local_attack, is_r_robust
from .protocol import (
    ExponentialCache,
    Gains,
    ObserverMatrix,
    _control_terms,
    avbrd_fuse,
    offer_neighbor_update,
    trigger_threshold,
)

logger = logging.getLogger(__name__)

OBSERVER_COORDINATES = ("w", "eta")


@dataclass(frozen=True)
class SimConfig:
    t0: float = 0.0
    horizon: float = 10.0
    dt: float = 1e-4
    dwell_min: float = 1e-3
    seed: int = 0
    decimation: int = 1
    observer_coordinates: str = "w"


@dataclass(frozen=True)
class AgentConfig:
    agent_id: int
    params: ArmParams
    q0: np.ndarray
    dq0: np.ndarray
    eta0: np.ndarray
    phi_hat0: np.ndarray
    byzantine: Optional[ByzantineSpec] = None

    @property
    def role(self) -> str:
        return "normal" if self.byzantine is None else "byzantine"


@dataclass(frozen=True)
class Scenario:
    graph: Digraph
    S: ObserverMatrix
    gains: Gains
    agents: Tuple[AgentConfig, ...]
    sim: SimConfig = SimConfig()
    name: str = "scenario"

    @property
    def byzantine_ids(self) -> FrozenSet[int]:
        return frozenset(a.agent_id for a in self.agents if a.byzantine is not None)

    @property
    def normal_ids(self) -> FrozenSet[int]:
        return frozenset(a.agent_id for a in self.agents if a.byzantine is None)


class TriggerEvent(NamedTuple):
    agent: int
    t: float
    error: float
    threshold: float


class MessageEvent(NamedTuple):
    t: float
    sender: int
    receiver: int
    accepted: bool


class Broadcast(NamedTuple):
    t: float
    sender: int
    receiver: int
    eta: np.ndarray


@dataclass
class SimOutput:
    """Everything a run produces.

    Array axes are (record, agent, dim); agent position p holds agent id p+1.
    """

    name: str
    agent_ids: Tuple[int, ...]
    normal_ids: FrozenSet[int]
    t0: float
    dt: float
    times: np.ndarray
    q: np.ndarray
    dq: np.ndarray
    eta: np.ndarray
    W: np.ndarray
    trigger_error: np.ndarray
    phi_hat: np.ndarray
    trigger_events: List[TriggerEvent]
    message_log: List[MessageEvent]
    fuse_count: Dict[int, int]
    fuse_seconds: Dict[int, float]
    warnings: List[str] = field(default_factory=list)
    metrics: Optional[object] = None

    @property
    def trigger_log(self) -> Dict[int, List[float]]:
        log: Dict[int, List[float]] = {a: [] for a in self.agent_ids}
        for event in self.trigger_events:
            log[event.agent].append(event.t)
        return log

    def rejected_messages(self) -> List[MessageEvent]:
        return [m for m in self.message_log if not m.accepted]


# ---------------------------------------------------------------------------
# Validation


def validate_scenario(sc: Scenario) -> List[str]:
    """
    Check a scenario before it runs.

    Numeric and structural problems raise ScenarioError. Violations of the
    convergence hypotheses ((2f+1)-robust topology, f-local attack) are only
    returned and logged as warnings so failure cases stay runnable.
    """
    cfg = sc.sim
    n_agents = sc.graph.n
    if not cfg.dt > 0:
        raise ScenarioError(f"dt must be positive, got {cfg.dt}")
    if not cfg.horizon >= 0:
        raise ScenarioError(f"horizon must be non-negative, got {cfg.horizon}")
    if not cfg.dwell_min > 0:
        raise ScenarioError(f"dwell_min must be positive, got {cfg.dwell_min}")
    if cfg.dt > cfg.dwell_min:
        raise ScenarioError(f"dt={cfg.dt} must not exceed dwell_min={cfg.dwell_min}")
    if cfg.decimation < 1:
        raise ScenarioError(f"decimation must be at least 1, got {cfg.decimation}")
    if cfg.observer_coordinates not in OBSERVER_COORDINATES:
        raise ScenarioError(f"observer_coordinates must be one of {OBSERVER_COORDINATES}")
    if sc.S.n != DOF:
        raise ScenarioError(f"observer dimension {sc.S.n} does not match the {DOF}-joint plant")
    ids = [a.agent_id for a in sc.agents]
    if ids != list(range(1, n_agents + 1)):
        raise ScenarioError(f"agents must be listed as 1..{n_agents} in order, got {ids}")
    for name in ("k", "F"):
        size = np.asarray(getattr(sc.gains, name)).size
        if size not in (1, n_agents):
            raise ScenarioError(f"gain {name} must be a scalar or have one entry per agent")
    for a in sc.agents:
        for label, vec, size in (("q0", a.q0, DOF), ("dq0", a.dq0, DOF), ("eta0", a.eta0, DOF),
                                 ("phihat0", a.phi_hat0, PARAM_COUNT)):
            if np.shape(vec) != (size,) or not np.all(np.isfinite(vec)):
                raise ScenarioError(f"agent {a.agent_id}: {label} must be {size} finite numbers")
        if a.params.l.shape != (PARAM_COUNT,):
            raise ScenarioError(f"agent {a.agent_id}: l must have {PARAM_COUNT} entries")
        if a.byzantine is not None:
            if a.byzantine.agent_id != a.agent_id:
                raise ScenarioError(f"agent {a.agent_id}: Byzantine spec names agent {a.byzantine.agent_id}")
            a.byzantine.validate_against(sc.graph.out_neighbors(a.agent_id), n_agents)
            for fn in (a.byzantine.rate, a.byzantine.multiplier):
                if fn is not None and fn.n != DOF:
                    raise ScenarioError(f"agent {a.agent_id}: time functions must have {DOF} components")

    warnings: List[str] = []
    f = sc.gains.f
    if n_agents < 2:
        warnings.append(f"robustness is undefined for {n_agents} agent(s); hypothesis check skipped")
    elif n_agents > settings.robustness_cap:
        warnings.append(f"{n_agents} agents exceed the exact robustness cap; hypothesis check skipped")
    elif not is_r_robust(sc.graph, 2 * f + 1):
        warnings.append(f"communication topology is not {2 * f + 1}-robust (f={f}); consensus is not guaranteed")
    if not is_f_local_attack(sc.graph, sc.byzantine_ids, f):
        warnings.append(f"Byzantine set {sorted(sc.byzantine_ids)} is not an {f}-local attack")
    for w in warnings:
        logger.warning(f"[Engine] {sc.name}: {w}")
    return warnings


# ---------------------------------------------------------------------------
# Engine


def _per_agent(value, n_agents: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(value, dtype=float).reshape(-1), (n_agents,)).copy()


class SimulationEngine:
    """Owns every agent's state for one run."""

    def __init__(self, scenario: Scenario, validate: bool = True):
        self.warnings = validate_scenario(scenario) if validate else []
        self.scenario = scenario
        sc = scenario
        cfg = sc.sim
        g = sc.graph
        n_agents = g.n

        self.dt = cfg.dt
        self.t0 = cfg.t0
        self.step_index = 0
        self.total_steps = int(round(cfg.horizon / cfg.dt))
        self._gains = sc.gains
        self._S = sc.S.S
        self._exp = ExponentialCache(sc.S)
        self._dwell_min = cfg.dwell_min

        self._params = ArmParams(np.stack([a.params.l for a in sc.agents]),
                                 np.array([float(a.params.grav) for a in sc.agents]))
        self._k = _per_agent(sc.gains.k, n_agents)
        self._F = _per_agent(sc.gains.F, n_agents)

        self._q = np.stack([a.q0 for a in sc.agents]).astype(float)
        self._dq = np.stack([a.dq0 for a in sc.agents]).astype(float)
        self._phi_hat = np.stack([a.phi_hat0 for a in sc.agents]).astype(float)
        self._eta = np.stack([a.eta0 for a in sc.agents]).astype(float)
        self._eta_t0 = self._eta.copy()
        self._W = self._eta @ self._exp.backward(self.t0).T
        self._w_hat = self._W.copy()
        self._eta_at_trigger = self._eta.copy()
        self._t_last = np.full(n_agents, self.t0)
        self._w_bar = np.zeros_like(self._W)

        self._byz: Dict[int, ByzantineSpec] = {
            p: a.byzantine for p, a in enumerate(sc.agents) if a.byzantine is not None
        }
        self._uses_protocol = np.array([p not in self._byz or self._byz[p].uses_protocol for p in range(n_agents)])
        self._triggered = np.array([p not in self._byz or self._byz[p].broadcast_period is None
                                    for p in range(n_agents)])
        self._period_steps: Dict[int, int] = {}
        for p, spec in self._byz.items():
            if spec.broadcast_period is None:
                continue
            steps = max(1, int(round(spec.broadcast_period / self.dt)))
            if abs(steps * self.dt - spec.broadcast_period) > 1e-9 * max(1.0, spec.broadcast_period):
                logger.warning(f"[Engine] agent {p + 1} broadcast period {spec.broadcast_period} "
                               f"is not a multiple of dt; using {steps * self.dt:.9g}")
            self._period_steps[p] = steps

        # rows advanced exactly in W coordinates; all others by RK4 on eta
        follows = np.array([p not in self._byz or self._byz[p].evolution is EvolutionMode.FOLLOW_PROTOCOL
                            for p in range(n_agents)])
        self._w_rows = follows if cfg.observer_coordinates == "w" else np.zeros(n_agents, dtype=bool)
        self._eta_protocol_rows = np.flatnonzero(follows & ~self._w_rows)
        self._eta_byz_rows = [p for p in sorted(self._byz) if not follows[p]]

        self._out = [g.out_neighbors(p + 1) for p in range(n_agents)]
        self._stores = [NeighborStore(p + 1, g.in_neighbors(p + 1)) for p in range(n_agents)]
        for store in self._stores:
            for j in store.in_neighbors:
                store.offer(j, self.t0, self._eta[j - 1], self._W[j - 1], self._dwell_min)
        self._stale = np.ones(n_agents, dtype=bool)
        self._pending: List[Broadcast] = []

        self.trigger_events: List[TriggerEvent] = []
        self.message_log: List[MessageEvent] = []
        self.fuse_count = np.zeros(n_agents, dtype=int)
        self.fuse_seconds = np.zeros(n_agents)

        rows = self.total_steps // cfg.decimation + 1
        self._times = np.empty(rows)
        self._rec_q = np.empty((rows, n_agents, DOF))
        self._rec_dq = np.empty_like(self._rec_q)
        self._rec_eta = np.empty_like(self._rec_q)
        self._rec_W = np.empty_like(self._rec_q)
        self._rec_err = np.empty((rows, n_agents))
        self._rec_phi = np.empty((rows, n_agents, PARAM_COUNT))
        self._row = 0
        self._record(self.t0, np.zeros(n_agents))

    # -- accessors ----------------------------------------------------------

    @property
    def t(self) -> float:
        return self.t0 + self.step_index * self.dt

    @property
    def n_agents(self) -> int:
        return self.scenario.graph.n

    def observer_state(self, agent: int) -> ObserverState:
        p = agent - 1
        return ObserverState(self._eta[p].copy(), float(self._t_last[p]),
                             self._eta_at_trigger[p].copy(), self._w_hat[p].copy())

    def controller_state(self, agent: int) -> ControllerState:
        return ControllerState(self._phi_hat[agent - 1].copy())

    def neighbor_store(self, agent: int) -> NeighborStore:
        return self._stores[agent - 1]

    # -- stepping -----------------------------------------------------------

    def step(self) -> None:
        if self.step_index >= self.total_steps:
            raise InvalidArgumentError("simulation horizon already reached")
        k = self.step_index
        dt = self.dt
        t = self.t0 + k * dt
        t_next = self.t0 + (k + 1) * dt
        self._exp.prune(before=t)

        self._deliver()
        self._fuse()

        g = self._gains
        E = self._exp.forward(t)
        with np.errstate(over="ignore", invalid="ignore"):
            w_dot = -g.mu1 * (self._w_hat - self._w_bar)
            eta_dot_protocol = self._eta @ self._S.T + w_dot @ E.T
            eta_dot = eta_dot_protocol.copy()
            for p, spec in self._byz.items():
                eta_dot[p] = byzantine_observer_evolution(spec, t, eta_dot_protocol[p] if spec.uses_protocol else None)

            tau, phi_dot, _ = _control_terms(self._q, self._dq, self._eta, eta_dot, self._phi_hat, self._S,
                                             g.mu2, self._k, self._F, self._params.grav)
            x = np.concatenate([self._q, self._dq], axis=1)
            x = rk4_step(lambda _t, z: plant_rate(self._params, z, tau), t, x, dt)
            phi_hat = self._phi_hat + dt * phi_dot
            W_new, eta_new = self._advance_observer(t, t_next, w_dot)

        q_new, dq_new = x[:, :DOF], x[:, DOF:]
        finite = (np.isfinite(x).all(axis=1) & np.isfinite(W_new).all(axis=1)
                  & np.isfinite(eta_new).all(axis=1) & np.isfinite(phi_hat).all(axis=1))
        if not finite.all():
            raise SimulationDivergedError(int(np.flatnonzero(~finite)[0]) + 1, t_next)

        self._q, self._dq, self._phi_hat = q_new, dq_new, phi_hat
        self._W, self._eta = W_new, eta_new
        self.step_index = k + 1

        err = self._trigger_and_broadcast(t_next)
        if self.step_index % self.scenario.sim.decimation == 0:
            self._record(t_next, err)

    def run(self) -> SimOutput:
        start = time.perf_counter()
        while self.step_index < self.total_steps:
            self.step()
        logger.info(f"[Engine] {self.scenario.name}: {self.total_steps} steps in {time.perf_counter() - start:.2f}s, "
                    f"{len(self.trigger_events)} triggers, {len(self.message_log)} messages")
        if logger.isEnabledFor(logging.DEBUG):
            for a in range(1, self.n_agents + 1):
                obs = self.observer_state(a)
                logger.debug(f"[Engine] agent {a}: last broadcast at {obs.t_last_trigger:.4f}s, "
                             f"eta {np.round(obs.eta, 4).tolist()}, "
                             f"phi_hat {np.round(self.controller_state(a).phi_hat, 4).tolist()}")
        return self.output()

    def output(self) -> SimOutput:
        rows = slice(0, self._row)
        ids = tuple(range(1, self.n_agents + 1))
        return SimOutput(
            name=self.scenario.name,
            agent_ids=ids,
            normal_ids=self.scenario.normal_ids,
            t0=self.t0,
            dt=self.dt,
            times=self._times[rows].copy(),
            q=self._rec_q[rows].copy(),
            dq=self._rec_dq[rows].copy(),
            eta=self._rec_eta[rows].copy(),
            W=self._rec_W[rows].copy(),
            trigger_error=self._rec_err[rows].copy(),
            phi_hat=self._rec_phi[rows].copy(),
            trigger_events=list(self.trigger_events),
            message_log=list(self.message_log),
            fuse_count={a: int(self.fuse_count[a - 1]) for a in ids},
            fuse_seconds={a: float(self.fuse_seconds[a - 1]) for a in ids},
            warnings=list(self.warnings),
        )

    # -- internals ----------------------------------------------------------

    def _deliver(self) -> None:
        if not self._pending:
            return
        pending = sorted(self._pending, key=lambda m: (m.sender, m.receiver))
        self._pending = []
        for msg in pending:
            store = self._stores[msg.receiver - 1]
            accepted = offer_neighbor_update(store, msg.sender, msg.t, msg.eta, self._dwell_min, self._S,
                                             exp_minus_st=self._exp.backward(msg.t))
            self.message_log.append(MessageEvent(msg.t, msg.sender, msg.receiver, accepted))
            if accepted:
                self._stale[msg.receiver - 1] = True

    def _fuse(self) -> None:
        f = self._gains.f
        for p in np.flatnonzero(self._stale & self._uses_protocol):
            start = time.perf_counter()
            try:
                self._w_bar[p] = avbrd_fuse(self._stores[p].w_columns(), f)
            except InsufficientNeighborsError as e:
                raise InsufficientNeighborsError(f"agent {p + 1}: {e}") from e
            self.fuse_seconds[p] += time.perf_counter() - start
            self.fuse_count[p] += 1
        self._stale[:] = False

    def _advance_observer(self, t: float, t_next: float, w_dot: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        dt = self.dt
        mu1 = self._gains.mu1
        S = self._S
        exp = self._exp
        W_new = self._W.copy()
        eta_new = self._eta.copy()

        w_rows = self._w_rows
        if w_rows.any():
            W_new[w_rows] = self._W[w_rows] + dt * w_dot[w_rows]

        rows = self._eta_protocol_rows
        if rows.size:
            gap = self._w_hat[rows] - self._w_bar[rows]

            def protocol_rate(tau: float, z: np.ndarray) -> np.ndarray:
                return z @ S.T - mu1 * (gap @ exp.forward(tau).T)

            eta_new[rows] = rk4_step(protocol_rate, t, self._eta[rows], dt)

        for p in self._eta_byz_rows:
            spec = self._byz[p]
            gap_p = self._w_hat[p] - self._w_bar[p]

            def byzantine_rate(tau: float, z: np.ndarray, spec=spec, gap_p=gap_p) -> np.ndarray:
                protocol = S @ z - mu1 * (exp.forward(tau) @ gap_p) if spec.uses_protocol else None
                return byzantine_observer_evolution(spec, tau, protocol)

            eta_new[p] = rk4_step(byzantine_rate, t, self._eta[p], dt)

        if w_rows.any():
            eta_new[w_rows] = W_new[w_rows] @ exp.forward(t_next).T
        if not w_rows.all():
            W_new[~w_rows] = eta_new[~w_rows] @ exp.backward(t_next).T
        return W_new, eta_new

    def _trigger_and_broadcast(self, t: float) -> np.ndarray:
        k = self.step_index
        E = self._exp.forward(t)
        err = np.linalg.norm((self._w_hat - self._W) @ E.T, axis=1)
        threshold = trigger_threshold(t, self.t0, self._gains)
        # a sender never fires inside its own dwell window, so receivers accept every event broadcast
        ready = t - self._t_last >= self._dwell_min - settings.dwell_tolerance
        fired = np.flatnonzero(self._triggered & ready & (err >= threshold))
        periodic = [p for p, steps in self._period_steps.items() if k % steps == 0]
        for p in fired:
            self.trigger_events.append(TriggerEvent(int(p) + 1, t, float(err[p]), threshold))
        for p in sorted(set(fired.tolist()) | set(periodic)):
            self._w_hat[p] = self._W[p]
            self._eta_at_trigger[p] = self._eta[p]
            self._t_last[p] = t
            err[p] = 0.0
            self._broadcast(p, t)
        return err

    def _broadcast(self, p: int, t: float) -> None:
        spec = self._byz.get(p)
        sender = p + 1
        for receiver in self._out[p]:
            if spec is None:
                msg = self._eta[p].copy()
            else:
                msg = byzantine_transmission(spec, receiver, t, self._eta[p], self._eta[receiver - 1], self._eta_t0[p])
                if msg is None:
                    continue
            self._pending.append(Broadcast(t, sender, receiver, msg))

    def _record(self, t: float, err: np.ndarray) -> None:
        r = self._row
        self._times[r] = t
        self._rec_q[r] = self._q
        self._rec_dq[r] = self._dq
        self._rec_eta[r] = self._eta
        self._rec_W[r] = self._W
        self._rec_err[r] = err
        self._rec_phi[r] = self._phi_hat
        self._row = r + 1


def step_simulation(engine: SimulationEngine) -> SimulationEngine:
    """Advance the engine by one step of engine.dt from engine.t."""
    engine.step()
    return engine


def run_scenario(sc: Scenario) -> SimOutput:
    """Validate, run from t0 to t0 + horizon, and attach metrics."""
    from .analysis import compute_metrics

    engine = SimulationEngine(sc)
    out = engine.run()
    out.metrics = compute_metrics(out, sc.graph)
    return out
