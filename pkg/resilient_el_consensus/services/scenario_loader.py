"""
Scenario file loading.

Scenario files are YAML documents with the sections graph, observer, gains,
agents and sim. Unknown keys are rejected and every error carries the line
of the offending node.
"""
import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import yaml

from ..errors import ConsensusSimError, InvalidArgumentError, ScenarioError
from ..utils.helpers import finite_float, finite_vector
from .adversary import (
    ByzantineSpec,
    EvolutionMode,
    SinusoidTerm,
    TimeFunction,
    TransmissionMode,
    TransmissionPolicy,
    VectorTimeFunction,
)
from .arm import DOF, GRAVITY, PARAM_COUNT, ArmParams
from .graph import Digraph, generate_r_robust_digraph
from .protocol import Gains, ObserverMatrix
from .simulation import OBSERVER_COORDINATES, AgentConfig, Scenario, SimConfig

logger = logging.getLogger(__name__)

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"

AGENT_KEYS = {"id", "role", "l", "grav", "q0", "dq0", "eta0", "phihat0", "byzantine"}


@dataclass(frozen=True)
class ScenarioOverrides:
    """Command-line replacements for scenario values; None keeps the file's value."""

    dt: Optional[float] = None
    horizon: Optional[float] = None
    seed: Optional[int] = None
    f: Optional[int] = None
    decimation: Optional[int] = None
    observer_coordinates: Optional[str] = None

    def describe(self) -> Dict[str, Any]:
        return {k: v for k, v in dataclasses.asdict(self).items() if v is not None}


class _Field:
    """A YAML node with the dotted path and source line used in error messages."""

    def __init__(self, node: yaml.Node, path: str, loader: yaml.SafeLoader, key_line: Optional[int] = None):
        self.node = node
        self.path = path
        self.key_line = key_line
        self._loader = loader

    @property
    def line(self) -> int:
        return self.node.start_mark.line + 1

    def fail(self, message: str) -> ScenarioError:
        return ScenarioError(f"{self.path}: {message}", self.line)

    def value(self) -> Any:
        return self._loader.construct_object(self.node, deep=True)

    def is_null(self) -> bool:
        return isinstance(self.node, yaml.ScalarNode) and self.node.tag == "tag:yaml.org,2002:null"

    def entries(self) -> List[Tuple[Any, "_Field"]]:
        if not isinstance(self.node, yaml.MappingNode):
            raise self.fail("expected a mapping")
        out = []
        seen = set()
        for key_node, value_node in self.node.value:
            key = self._loader.construct_object(key_node, deep=True)
            if key in seen:
                raise ScenarioError(f"{self.path}: duplicate key {key!r}", key_node.start_mark.line + 1)
            seen.add(key)
            out.append((key, _Field(value_node, f"{self.path}.{key}", self._loader, key_node.start_mark.line + 1)))
        return out

    def mapping(self, allowed, required=()) -> Dict[str, "_Field"]:
        fields = {}
        for key, field in self.entries():
            if key not in allowed:
                raise ScenarioError(f"{self.path}: unknown key {key!r}", field.key_line)
            fields[key] = field
        missing = [k for k in required if k not in fields]
        if missing:
            raise self.fail(f"missing required key(s) {missing}")
        return fields

    def sequence(self) -> List["_Field"]:
        if not isinstance(self.node, yaml.SequenceNode):
            raise self.fail("expected a list")
        return [_Field(n, f"{self.path}[{k}]", self._loader) for k, n in enumerate(self.node.value)]

    def number(self, positive: bool = False, non_negative: bool = False) -> float:
        raw = self.value()
        # PyYAML reads exponent-only literals such as 1e-4 as strings
        try:
            out = finite_float(raw, self.path)
        except InvalidArgumentError:
            raise self.fail(f"expected a finite number, got {raw!r}") from None
        if positive and not out > 0:
            raise self.fail(f"must be positive, got {out}")
        if non_negative and out < 0:
            raise self.fail(f"must be non-negative, got {out}")
        return out

    def integer(self, minimum: Optional[int] = None) -> int:
        raw = self.value()
        if isinstance(raw, bool) or not isinstance(raw, int):
            raise self.fail(f"expected an integer, got {raw!r}")
        if minimum is not None and raw < minimum:
            raise self.fail(f"must be at least {minimum}, got {raw}")
        return raw

    def vector(self, length: Optional[int] = None) -> np.ndarray:
        items = self.sequence()
        try:
            return finite_vector([item.value() for item in items], self.path, length)
        except InvalidArgumentError as e:
            raise ScenarioError(str(e), self.line) from None

    def text(self, choices=None) -> str:
        raw = self.value()
        if not isinstance(raw, str):
            raise self.fail(f"expected a string, got {raw!r}")
        if choices is not None and raw not in choices:
            raise self.fail(f"must be one of {sorted(choices)}, got {raw!r}")
        return raw


# ---------------------------------------------------------------------------
# Path resolution


def bundled_scenarios() -> List[str]:
    """Names of the scenario files shipped with the package."""
    return sorted(p.stem for p in SCENARIO_DIR.glob("*.yaml"))


def resolve_scenario_path(name_or_path: str) -> Path:
    """An existing file path, or the name of a bundled scenario (with or without .yaml)."""
    path = Path(name_or_path)
    if path.is_file():
        return path
    stem = path.name[:-5] if path.name.endswith(".yaml") else path.name
    bundled = SCENARIO_DIR / f"{stem}.yaml"
    if str(path.parent) in ("", ".") and bundled.is_file():
        return bundled
    raise FileNotFoundError(f"no scenario file or bundled scenario named {name_or_path!r} "
                            f"(bundled: {', '.join(bundled_scenarios())})")


# ---------------------------------------------------------------------------
# Sections


def _parse_graph(field: _Field, base_dir: Path, seed: int) -> Digraph:
    from ..utils.file_utils import read_graph

    fields = field.mapping({"file", "n", "in_neighbors", "generate", "complete"})
    sources = [k for k in ("file", "in_neighbors", "generate", "complete") if k in fields]
    if len(sources) != 1:
        raise field.fail("give exactly one of file, in_neighbors, generate, complete")
    source = sources[0]

    if source == "file":
        path = base_dir / fields["file"].text()
        try:
            return read_graph(str(path))
        except ScenarioError as e:
            raise fields["file"].fail(f"graph file {path} line {e.line}: {e.reason}") from e
    if source == "complete":
        return Digraph.complete(fields["complete"].integer(minimum=1))
    if source == "generate":
        gen = fields["generate"].mapping({"n", "r", "seed"}, required=("n", "r"))
        n = gen["n"].integer(minimum=1)
        r = gen["r"].integer(minimum=0)
        gen_seed = gen["seed"].integer(minimum=0) if "seed" in gen else seed
        return generate_r_robust_digraph(n, r, gen_seed)

    if "n" not in fields:
        raise field.fail("in_neighbors needs n")
    n = fields["n"].integer(minimum=1)
    lists = {}
    for key, value in fields["in_neighbors"].entries():
        if isinstance(key, bool) or not isinstance(key, int):
            raise value.fail("agent ids must be integers")
        lists[key] = [item.integer() for item in value.sequence()]
    try:
        return Digraph.from_in_neighbors(n, lists)
    except InvalidArgumentError as e:
        raise fields["in_neighbors"].fail(str(e)) from e


def _parse_observer(field: _Field) -> ObserverMatrix:
    fields = field.mapping({"n", "S"}, required=("S",))
    raw_rows = fields["S"].sequence()
    if raw_rows and isinstance(raw_rows[0].node, yaml.SequenceNode):
        rows = [row.vector() for row in raw_rows]
        if len({r.size for r in rows}) > 1:
            raise fields["S"].fail("rows of S must have equal length")
        S = np.array(rows)
    else:
        flat = fields["S"].vector()
        n = fields["n"].integer(minimum=1) if "n" in fields else int(round(np.sqrt(flat.size)))
        if flat.size != n * n:
            raise fields["S"].fail(f"row-major S needs {n * n} entries, got {flat.size}")
        S = flat.reshape(n, n)
    if "n" in fields and S.shape != (fields["n"].integer(), fields["n"].integer()):
        raise fields["n"].fail(f"does not match S of shape {S.shape}")
    try:
        return ObserverMatrix(S)
    except InvalidArgumentError as e:
        raise fields["S"].fail(str(e)) from e


def _per_agent_gain(field: _Field):
    if isinstance(field.node, yaml.SequenceNode):
        return field.vector()
    return field.number()


def _parse_gains(field: _Field, f_override: Optional[int]) -> Gains:
    fields = field.mapping({"mu1", "mu2", "alpha1", "alpha2", "alpha3", "f", "k", "F"},
                           required=("mu1", "mu2", "alpha1", "alpha2", "alpha3", "f"))
    values = {k: fields[k].number() for k in ("mu1", "mu2", "alpha1", "alpha2", "alpha3")}
    f = fields["f"].integer(minimum=0) if f_override is None else f_override
    extra = {k: _per_agent_gain(fields[k]) for k in ("k", "F") if k in fields}
    try:
        return Gains(f=f, **values, **extra)
    except InvalidArgumentError as e:
        raise field.fail(str(e)) from e


def _parse_time_function(field: _Field) -> TimeFunction:
    if isinstance(field.node, yaml.ScalarNode):
        return TimeFunction.constant(field.number())
    fields = field.mapping({"offset", "terms"})
    terms = []
    for item in fields["terms"].sequence() if "terms" in fields else []:
        t = item.mapping({"kind", "amp", "freq", "phase"}, required=("kind", "amp", "freq"))
        terms.append(SinusoidTerm(
            kind=t["kind"].text({"sin", "cos"}),
            amp=t["amp"].number(),
            freq=t["freq"].number(),
            phase=t["phase"].number() if "phase" in t else 0.0,
        ))
    offset = fields["offset"].number() if "offset" in fields else 0.0
    return TimeFunction(offset=offset, terms=tuple(terms))


def _parse_vector_time_function(field: _Field) -> VectorTimeFunction:
    items = field.sequence()
    if len(items) != DOF:
        raise field.fail(f"expected {DOF} component functions, got {len(items)}")
    return VectorTimeFunction(tuple(_parse_time_function(item) for item in items))


def _parse_policy(field: _Field) -> TransmissionPolicy:
    fields = field.mapping({"mode", "factor", "inject_frequency", "noise", "silent_after"})
    mode = TransmissionMode(fields["mode"].text({m.value for m in TransmissionMode})) if "mode" in fields \
        else TransmissionMode.HONEST
    return TransmissionPolicy(
        mode=mode,
        factor=fields["factor"].number() if "factor" in fields else 1.0,
        inject_frequency=fields["inject_frequency"].number() if "inject_frequency" in fields else None,
        noise=_parse_vector_time_function(fields["noise"]) if "noise" in fields else None,
        silent_after=fields["silent_after"].number() if "silent_after" in fields else None,
    )


def _parse_byzantine(field: _Field, agent_id: int, graph: Digraph) -> ByzantineSpec:
    fields = field.mapping({"evolution", "rate", "multiplier", "broadcast_period", "transmissions"})
    evolution = EvolutionMode(fields["evolution"].text({m.value for m in EvolutionMode})) if "evolution" in fields \
        else EvolutionMode.FOLLOW_PROTOCOL
    period: Optional[float] = 0.001
    if "broadcast_period" in fields:
        period = None if fields["broadcast_period"].is_null() else fields["broadcast_period"].number(positive=True)

    out = graph.out_neighbors(agent_id)
    explicit: Dict[int, TransmissionPolicy] = {}
    default: Optional[TransmissionPolicy] = None
    for key, value in fields["transmissions"].entries() if "transmissions" in fields else []:
        if key == "default":
            default = _parse_policy(value)
            continue
        if isinstance(key, bool) or not isinstance(key, int):
            raise value.fail("transmission keys must be receiver ids or 'default'")
        if key not in out:
            raise value.fail(f"agent {key} is not an out-neighbor of agent {agent_id} (out-neighbors {out})")
        explicit[key] = _parse_policy(value)
    policies = {}
    for j in out:
        policy = explicit.get(j, default)
        if policy is None:
            raise field.fail(f"no transmission policy for out-neighbor {j}; add it or a 'default' entry")
        policies[j] = policy

    try:
        return ByzantineSpec(
            agent_id=agent_id,
            evolution=evolution,
            rate=_parse_vector_time_function(fields["rate"]) if "rate" in fields else None,
            multiplier=_parse_vector_time_function(fields["multiplier"]) if "multiplier" in fields else None,
            broadcast_period=period,
            policies=policies,
        )
    except InvalidArgumentError as e:
        raise field.fail(str(e)) from e


def _parse_agents(field: _Field, graph: Digraph) -> Tuple[AgentConfig, ...]:
    if isinstance(field.node, yaml.MappingNode):
        sections = field.mapping({"defaults", "list"}, required=("list",))
        defaults = sections["defaults"].mapping(AGENT_KEYS - {"id", "byzantine"}) if "defaults" in sections else {}
        items = sections["list"].sequence()
    else:
        defaults, items = {}, field.sequence()

    agents = []
    for item in items:
        merged = dict(defaults)
        merged.update(item.mapping(AGENT_KEYS, required=("id",)))
        agent_id = merged["id"].integer(minimum=1)
        for key in ("l", "q0", "eta0"):
            if key not in merged:
                raise item.fail(f"agent {agent_id}: missing {key}")
        role = merged["role"].text({"normal", "byzantine"}) if "role" in merged else \
            ("byzantine" if "byzantine" in merged else "normal")
        if role == "byzantine" and "byzantine" not in merged:
            raise item.fail(f"agent {agent_id}: role byzantine needs a byzantine section")
        if role == "normal" and "byzantine" in merged:
            raise merged["byzantine"].fail(f"agent {agent_id} is normal but has a byzantine section")
        try:
            params = ArmParams(merged["l"].vector(PARAM_COUNT),
                               merged["grav"].number() if "grav" in merged else GRAVITY)
        except InvalidArgumentError as e:
            raise merged["l"].fail(str(e)) from e
        agents.append(AgentConfig(
            agent_id=agent_id,
            params=params,
            q0=merged["q0"].vector(DOF),
            dq0=merged["dq0"].vector(DOF) if "dq0" in merged else np.zeros(DOF),
            eta0=merged["eta0"].vector(DOF),
            phi_hat0=merged["phihat0"].vector(PARAM_COUNT) if "phihat0" in merged else np.zeros(PARAM_COUNT),
            byzantine=_parse_byzantine(merged["byzantine"], agent_id, graph) if role == "byzantine" else None,
        ))
    ids = [a.agent_id for a in agents]
    if sorted(ids) != list(range(1, graph.n + 1)):
        raise field.fail(f"agent ids must be exactly 1..{graph.n}, got {sorted(ids)}")
    return tuple(sorted(agents, key=lambda a: a.agent_id))


def _parse_sim(field: Optional[_Field], overrides: ScenarioOverrides) -> SimConfig:
    cfg = SimConfig()
    if field is not None:
        fields = field.mapping({"t0", "horizon", "dt", "dwell_min", "seed", "decimation", "observer_coordinates"})
        values: Dict[str, Any] = {}
        if "t0" in fields:
            values["t0"] = fields["t0"].number()
        if "horizon" in fields:
            values["horizon"] = fields["horizon"].number(non_negative=True)
        if "dt" in fields:
            values["dt"] = fields["dt"].number(positive=True)
        if "dwell_min" in fields:
            values["dwell_min"] = fields["dwell_min"].number(positive=True)
        if "seed" in fields:
            values["seed"] = fields["seed"].integer(minimum=0)
        if "decimation" in fields:
            values["decimation"] = fields["decimation"].integer(minimum=1)
        if "observer_coordinates" in fields:
            values["observer_coordinates"] = fields["observer_coordinates"].text(set(OBSERVER_COORDINATES))
        cfg = dataclasses.replace(cfg, **values)
    replaced = {k: v for k, v in overrides.describe().items() if k != "f"}
    return dataclasses.replace(cfg, **replaced)


# ---------------------------------------------------------------------------
# Entry points


def parse_scenario(text: str, base_dir: Optional[Path] = None, overrides: Optional[ScenarioOverrides] = None,
                   name: str = "scenario") -> Scenario:
    """
    Build a Scenario from YAML text.

    Args:
        text: document contents
        base_dir: directory that relative graph file paths resolve against
        overrides: command-line replacements applied before the graph is built
        name: fallback scenario name when the document has none

    Returns:
        Scenario (not yet validated against the convergence hypotheses)

    Raises:
        ScenarioError: malformed document, with the offending line
    """
    overrides = overrides or ScenarioOverrides()
    base_dir = Path(base_dir) if base_dir is not None else Path(".")
    loader = yaml.SafeLoader(text)
    try:
        root = loader.get_single_node()
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ScenarioError(f"malformed YAML: {getattr(e, 'problem', None) or e}",
                            mark.line + 1 if mark is not None else None) from e
    try:
        if root is None:
            raise ScenarioError("empty scenario document", 1)
        doc = _Field(root, "scenario", loader)
        sections = doc.mapping({"name", "graph", "observer", "gains", "agents", "sim"},
                               required=("graph", "observer", "gains", "agents"))
        sim = _parse_sim(sections.get("sim"), overrides)
        try:
            graph = _parse_graph(sections["graph"], base_dir, sim.seed)
        except ConsensusSimError as e:
            if isinstance(e, ScenarioError):
                raise
            raise sections["graph"].fail(str(e)) from e
        observer = _parse_observer(sections["observer"])
        gains = _parse_gains(sections["gains"], overrides.f)
        agents = _parse_agents(sections["agents"], graph)
        scenario_name = sections["name"].text() if "name" in sections else name
    finally:
        loader.dispose()

    logger.debug(f"[Scenario] parsed {scenario_name}: {graph.n} agents, f={gains.f}, dt={sim.dt}, horizon={sim.horizon}")
    return Scenario(graph=graph, S=observer, gains=gains, agents=agents, sim=sim, name=scenario_name)


def load_scenario(name_or_path: str, overrides: Optional[ScenarioOverrides] = None) -> Scenario:
    """Read a scenario file or bundled scenario name."""
    path = resolve_scenario_path(name_or_path)
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    logger.info(f"[Scenario] loading {path}")
    return parse_scenario(text, base_dir=path.parent, overrides=overrides, name=path.stem)


def apply_overrides(sc: Scenario, overrides: ScenarioOverrides) -> Scenario:
    """Apply overrides to an already-built Scenario (the graph is not regenerated)."""
    replaced = {k: v for k, v in overrides.describe().items() if k not in ("f", "seed")}
    sim = dataclasses.replace(sc.sim, **replaced)
    if overrides.seed is not None:
        sim = dataclasses.replace(sim, seed=overrides.seed)
    gains = sc.gains.with_f(overrides.f) if overrides.f is not None else sc.gains
    return dataclasses.replace(sc, sim=sim, gains=gains)
