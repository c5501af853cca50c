"""
Exception hierarchy for the consensus simulator.

Library code raises these; the command-line layer turns them into log lines
and exit codes.
"""
from typing import Optional


class ConsensusSimError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(ConsensusSimError, ValueError):
    """An operation received an argument outside its domain."""


class SizeLimitError(ConsensusSimError):
    """Exact robustness enumeration was requested above the configured cap."""


class InfeasibleRobustnessError(ConsensusSimError):
    """No digraph with the requested agent count can reach the requested robustness."""


class InsufficientNeighborsError(ConsensusSimError):
    """The resilient decision needs at least 2f+1 stored in-neighbor values."""


class InertiaSingularError(ConsensusSimError):
    """The inertia matrix is not invertible (l1*l2 <= l3**2)."""


class SimulationDivergedError(ConsensusSimError):
    """A state became non-finite during a run."""

    def __init__(self, agent: int, t: float, quantity: str = "state"):
        self.agent = agent
        self.t = t
        self.quantity = quantity
        super().__init__(f"simulation diverged: agent {agent} {quantity} non-finite at t={t:.9g}")


class ScenarioError(ConsensusSimError):
    """A scenario or graph document is malformed or inconsistent."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        self.reason = message
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GraphFormatError(ScenarioError):
    """A graph file does not follow the `n` / `i: j1 j2 ...` layout."""
