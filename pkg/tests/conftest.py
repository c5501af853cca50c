"""
Shared fixtures: reference constants and a factory for small in-code scenarios.
"""
import numpy as np
import pytest

from resilient_el_consensus.services.adversary import ByzantineSpec
from resilient_el_consensus.services.arm import ArmParams
from resilient_el_consensus.services.graph import Digraph
from resilient_el_consensus.services.protocol import Gains, ObserverMatrix
from resilient_el_consensus.services.simulation import AgentConfig, Scenario, SimConfig

REF_L = np.array([0.64, 1.10, 0.08, 0.64, 0.32])
REF_S = np.array([[0.0, -1.5], [6.0, 0.0]])
REF_ETA0 = np.array([
    [-1.5, -0.5], [1.0, 0.5], [0.0, 0.0], [0.5, -2.0],
    [2.0, -1.0], [1.5, -0.5], [-1.5, -1.0], [-2.0, -2.0],
])


def reference_gains(f: int = 0, **kw) -> Gains:
    return Gains(mu1=5.9, mu2=2.0, alpha1=8.0, alpha2=3.0, alpha3=4.0, f=f, **kw)


def reference_q0(i: int) -> np.ndarray:
    return np.array([0.1 * np.pi * (i - 1), -0.1 * np.pi * (i - 11)])


def make_scenario(graph: Digraph, eta0, q0=None, dq0=None, byzantine=None, f=0, name="test", phi_hat0=None,
                  **sim) -> Scenario:
    """
    Scenario with reference arms and gains.

    Args:
        graph: communication digraph
        eta0: (N, 2) initial observer states
        q0, dq0: (N, 2) plant states; q0 defaults to the reference formula, dq0 to zero
        byzantine: {agent id: ByzantineSpec}
        f: resilient-decision bound
        phi_hat0: initial parameter estimate shared by every arm; zero by default
        sim: SimConfig fields
    """
    eta0 = np.asarray(eta0, dtype=float)
    n = graph.n
    q0 = np.array([reference_q0(i) for i in range(1, n + 1)]) if q0 is None else np.asarray(q0, dtype=float)
    dq0 = np.zeros((n, 2)) if dq0 is None else np.asarray(dq0, dtype=float)
    byzantine = byzantine or {}
    agents = tuple(
        AgentConfig(
            agent_id=i,
            params=ArmParams(REF_L),
            q0=q0[i - 1],
            dq0=dq0[i - 1],
            eta0=eta0[i - 1],
            phi_hat0=np.zeros(5) if phi_hat0 is None else np.asarray(phi_hat0, dtype=float),
            byzantine=byzantine.get(i),
        )
        for i in range(1, n + 1)
    )
    sim.setdefault("horizon", 0.1)
    return Scenario(graph=graph, S=ObserverMatrix(REF_S), gains=reference_gains(f), agents=agents,
                    sim=SimConfig(**sim), name=name)


@pytest.fixture
def scenario_factory():
    return make_scenario


@pytest.fixture
def gains_factory():
    return reference_gains


@pytest.fixture
def ref_l():
    return REF_L.copy()


@pytest.fixture
def ref_s():
    return REF_S.copy()


@pytest.fixture
def ref_eta0():
    return REF_ETA0.copy()


@pytest.fixture
def honest_spec():
    """Byzantine spec that behaves exactly like a normal agent."""
    def build(agent_id: int, out_neighbors) -> ByzantineSpec:
        from resilient_el_consensus.services.adversary import TransmissionPolicy

        return ByzantineSpec(agent_id=agent_id, broadcast_period=None,
                             policies={j: TransmissionPolicy() for j in out_neighbors})
    return build
