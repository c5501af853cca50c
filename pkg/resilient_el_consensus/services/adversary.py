"""
Byzantine agent behaviors.

A ByzantineSpec says how a compromised agent evolves its own observer state
and what it sends to each out-neighbor. Time dependence is restricted to
offsets plus sums of sinusoids, so specs stay declarative.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, Optional, Tuple

import numpy as np

from ..errors import InvalidArgumentError, ScenarioError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SinusoidTerm:
    """amp * kind(freq * t + phase), kind in {sin, cos}"""

    kind: str
    amp: float
    freq: float
    phase: float = 0.0

    def __post_init__(self):
        if self.kind not in ("sin", "cos"):
            raise InvalidArgumentError(f"sinusoid kind must be 'sin' or 'cos', got {self.kind!r}")

    def __call__(self, t: float) -> float:
        wave = np.sin if self.kind == "sin" else np.cos
        return self.amp * float(wave(self.freq * t + self.phase))


@dataclass(frozen=True)
class TimeFunction:
    """Scalar offset + sum of sinusoids."""

    offset: float = 0.0
    terms: Tuple[SinusoidTerm, ...] = ()

    def __call__(self, t: float) -> float:
        return self.offset + sum(term(t) for term in self.terms)

    @classmethod
    def constant(cls, value: float) -> "TimeFunction":
        return cls(offset=float(value))


@dataclass(frozen=True)
class VectorTimeFunction:
    components: Tuple[TimeFunction, ...]

    def __call__(self, t: float) -> np.ndarray:
        return np.array([c(t) for c in self.components])

    @property
    def n(self) -> int:
        return len(self.components)


class EvolutionMode(str, Enum):
    FOLLOW_PROTOCOL = "follow_protocol"
    DERIVATIVE_OVERRIDE = "derivative_override"
    INPUT_FAULT = "input_fault"


class TransmissionMode(str, Enum):
    HONEST = "honest"
    SCALE = "scale"
    INJECT = "inject"


@dataclass(frozen=True)
class TransmissionPolicy:
    """
    What a Byzantine agent sends to one out-neighbor.

    Attributes:
        mode: honest, scale or inject
        factor: multiplier for scale mode
        inject_frequency: frequency of sin(.) in the injected false data; None means the receiver id
        noise: additive bounded noise beta(t) for inject mode
        silent_after: no message at all for t > silent_after
    """

    mode: TransmissionMode = TransmissionMode.HONEST
    factor: float = 1.0
    inject_frequency: Optional[float] = None
    noise: Optional[VectorTimeFunction] = None
    silent_after: Optional[float] = None

    @classmethod
    def silent(cls, after: float) -> "TransmissionPolicy":
        return cls(silent_after=after)


@dataclass(frozen=True)
class ByzantineSpec:
    agent_id: int
    evolution: EvolutionMode = EvolutionMode.FOLLOW_PROTOCOL
    rate: Optional[VectorTimeFunction] = None
    multiplier: Optional[VectorTimeFunction] = None
    broadcast_period: Optional[float] = 0.001
    policies: Dict[int, TransmissionPolicy] = field(default_factory=dict)

    def __post_init__(self):
        if self.evolution is EvolutionMode.DERIVATIVE_OVERRIDE and self.rate is None:
            raise InvalidArgumentError(f"agent {self.agent_id}: derivative override needs a rate function")
        if self.evolution is EvolutionMode.INPUT_FAULT and self.multiplier is None:
            raise InvalidArgumentError(f"agent {self.agent_id}: input fault needs a multiplier function")
        if self.broadcast_period is not None and not self.broadcast_period > 0:
            raise InvalidArgumentError(f"agent {self.agent_id}: broadcast_period must be positive")

    @property
    def uses_protocol(self) -> bool:
        """Whether the agent still needs the resilient decision to evolve."""
        return self.evolution is not EvolutionMode.DERIVATIVE_OVERRIDE

    def validate_against(self, out_neighbors: Iterable[int], n_vertices: int) -> None:
        """Raise ScenarioError unless exactly the out-neighbors carry a policy."""
        if not 1 <= self.agent_id <= n_vertices:
            raise ScenarioError(f"Byzantine agent {self.agent_id} is not a vertex of the graph")
        out = set(out_neighbors)
        missing = sorted(out - set(self.policies))
        extra = sorted(set(self.policies) - out)
        if missing:
            raise ScenarioError(f"Byzantine agent {self.agent_id} has no transmission policy for out-neighbors {missing}")
        if extra:
            raise ScenarioError(f"Byzantine agent {self.agent_id} has policies for non-out-neighbors {extra}")


def byzantine_observer_evolution(spec: ByzantineSpec, t: float, protocol_derivative=None) -> np.ndarray:
    """
    The eta_dot a Byzantine agent actually integrates.

    Args:
        spec: behavior description
        t: current time
        protocol_derivative: eta_dot the observer law would give; required for
            follow-protocol and input-fault modes

    Returns:
        eta_dot
    """
    if spec.evolution is EvolutionMode.DERIVATIVE_OVERRIDE:
        return spec.rate(t)
    if protocol_derivative is None:
        raise InvalidArgumentError(f"agent {spec.agent_id}: {spec.evolution.value} mode needs the protocol derivative")
    protocol_derivative = np.asarray(protocol_derivative, dtype=float)
    if spec.evolution is EvolutionMode.INPUT_FAULT:
        return protocol_derivative * spec.multiplier(t)
    return protocol_derivative


def byzantine_transmission(
    spec: ByzantineSpec,
    receiver: int,
    t: float,
    eta_self,
    eta_receiver,
    eta_self_t0,
) -> Optional[np.ndarray]:
    """
    Message sent to `receiver` at time t, or None for no message.

    Inject mode adds alpha + beta with
    alpha_k = min(sin(w t) * |eta_receiver_k|, |eta_self_t0_k|), w defaulting
    to the receiver id, and beta the policy's noise function.
    """
    policy = spec.policies.get(receiver)
    if policy is None:
        raise ScenarioError(f"Byzantine agent {spec.agent_id} has no transmission policy for agent {receiver}")
    if policy.silent_after is not None and t > policy.silent_after:
        return None
    eta_self = np.asarray(eta_self, dtype=float)
    if policy.mode is TransmissionMode.SCALE:
        return policy.factor * eta_self
    if policy.mode is TransmissionMode.INJECT:
        w = float(receiver) if policy.inject_frequency is None else policy.inject_frequency
        alpha = np.minimum(np.sin(w * t) * np.abs(np.asarray(eta_receiver, dtype=float)),
                           np.abs(np.asarray(eta_self_t0, dtype=float)))
        beta = policy.noise(t) if policy.noise is not None else 0.0
        return eta_self + alpha + beta
    return eta_self.copy()
