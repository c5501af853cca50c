"""
Per-agent protocol state.

ObserverState and ControllerState are plain value holders; NeighborStore is
owned by exactly one receiving agent and mutated only through
`resilient_el_consensus.services.protocol.accept_neighbor_update`.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ObserverState:
    """Observer state eta and the frozen data of the agent's latest trigger.

    Attributes:
        eta: current observer state
        t_last_trigger: instant of the agent's latest trigger (s)
        eta_at_trigger: eta at that instant
        W_self_frozen: e^{-S t_last_trigger} eta_at_trigger
    """

    eta: np.ndarray
    t_last_trigger: float
    eta_at_trigger: np.ndarray
    W_self_frozen: np.ndarray

    def is_consistent(self, exp_minus_st: np.ndarray, tol: float = 1e-12) -> bool:
        """Check W_self_frozen against e^{-S t_last_trigger} (passed in precomputed)."""
        expected = exp_minus_st @ self.eta_at_trigger
        return bool(np.max(np.abs(expected - self.W_self_frozen), initial=0.0) <= tol * max(1.0, float(np.max(np.abs(expected), initial=0.0))))


@dataclass(frozen=True)
class ControllerState:
    """Adaptive parameter estimate phi_hat (one entry per regressor column)."""

    phi_hat: np.ndarray


@dataclass(frozen=True)
class NeighborRecord:
    t_accept: float
    eta: np.ndarray
    W_frozen: np.ndarray


class NeighborStore:
    """Last accepted broadcast of every in-neighbor.

    Records are never dropped: a neighbor that stops transmitting keeps its
    last record, and receivers keep open-loop estimating from it.
    """

    def __init__(self, owner: int, in_neighbors: Iterable[int]):
        self.owner = owner
        self.in_neighbors: List[int] = sorted(int(j) for j in in_neighbors)
        self._records: Dict[int, NeighborRecord] = {}

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, j: int) -> bool:
        return j in self._records

    def record(self, j: int) -> Optional[NeighborRecord]:
        return self._records.get(j)

    def records(self) -> Dict[int, NeighborRecord]:
        return dict(self._records)

    def knows(self, j: int) -> bool:
        return j in self.in_neighbors

    def offer(self, j: int, t: float, eta: np.ndarray, W_frozen: np.ndarray, dwell_min: float, tolerance: float = 0.0) -> bool:
        """
        Store a broadcast unless it arrives too soon after the last accepted one.

        Args:
            j: sender id
            t: broadcast instant
            eta: broadcast observer value
            W_frozen: e^{-S t} eta
            dwell_min: minimum spacing between accepted broadcasts of one sender
            tolerance: slack for floating-point step times

        Returns:
            True if the record was replaced
        """
        if j not in self.in_neighbors:
            logger.warning(f"[Store] agent {self.owner} ignored message from non-neighbor {j} at t={t:.9g}")
            return False
        previous = self._records.get(j)
        if previous is not None and t - previous.t_accept < dwell_min - tolerance:
            return False
        self._records[j] = NeighborRecord(float(t), np.array(eta, dtype=float), np.array(W_frozen, dtype=float))
        return True

    def w_columns(self) -> np.ndarray:
        """Stored auxiliary variables as an (n, m) matrix, columns in sender order."""
        if not self._records:
            return np.zeros((0, 0))
        return np.stack([self._records[j].W_frozen for j in sorted(self._records)], axis=1)
