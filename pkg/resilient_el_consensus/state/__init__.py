"""
Per-agent protocol state.
"""

from .agent_state import ControllerState, NeighborRecord, NeighborStore, ObserverState

__all__ = ["ControllerState", "NeighborRecord", "NeighborStore", "ObserverState"]
