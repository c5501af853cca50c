"""
Tests for the fixed-step closed-loop engine on small in-code scenarios.
"""
import dataclasses

import numpy as np
import pytest
from scipy.linalg import expm

from resilient_el_consensus.errors import (
    InsufficientNeighborsError,
    InvalidArgumentError,
    ScenarioError,
    SimulationDivergedError,
)
from resilient_el_consensus.services.adversary import ByzantineSpec, TransmissionMode, TransmissionPolicy
from resilient_el_consensus.services.analysis import consensus_error_series
from resilient_el_consensus.services.arm import PlantState
from resilient_el_consensus.services.graph import Digraph
from resilient_el_consensus.services.protocol import control_update, observer_derivative, trigger_threshold
from resilient_el_consensus.services.simulation import (
    SimulationEngine,
    run_scenario,
    step_simulation,
    validate_scenario,
)


def silent_spec(agent_id: int, out_neighbors, period=0.001) -> ByzantineSpec:
    return ByzantineSpec(agent_id=agent_id, broadcast_period=period,
                         policies={j: TransmissionPolicy.silent(0.0) for j in out_neighbors})


@pytest.fixture
def four_agents(scenario_factory, ref_eta0):
    def build(**kw):
        return scenario_factory(Digraph.complete(4), ref_eta0[:4], **kw)
    return build


class TestRunBasics:
    def test_zero_horizon_gives_initial_snapshot(self, four_agents):
        out = run_scenario(four_agents(horizon=0.0))
        assert out.times.tolist() == [0.0]
        assert out.trigger_events == []
        assert out.message_log == []
        np.testing.assert_array_equal(out.eta[0], [a.eta0 for a in four_agents().agents])

    def test_record_count_and_decimation(self, four_agents):
        out = run_scenario(four_agents(horizon=0.01, decimation=10))
        assert out.times.size == 11
        np.testing.assert_allclose(np.diff(out.times), 1e-3)
        assert out.q.shape == (11, 4, 2)
        assert out.phi_hat.shape == (11, 4, 5)

    def test_deterministic(self, four_agents):
        a = run_scenario(four_agents(horizon=0.2, f=1))
        b = run_scenario(four_agents(horizon=0.2, f=1))
        for name in ("times", "q", "dq", "eta", "W", "trigger_error", "phi_hat"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
        assert a.trigger_events == b.trigger_events
        assert a.message_log == b.message_log

    def test_step_past_horizon(self, four_agents):
        engine = SimulationEngine(four_agents(horizon=0.0))
        with pytest.raises(InvalidArgumentError):
            engine.step()

    def test_step_simulation_advances_time(self, four_agents):
        engine = SimulationEngine(four_agents(horizon=0.001))
        step_simulation(engine)
        assert engine.t == pytest.approx(1e-4)
        assert engine.step_index == 1

    def test_single_agent_has_no_neighbors(self, scenario_factory):
        sc = scenario_factory(Digraph.empty(1), [[0.0, 1.0]])
        with pytest.raises(InsufficientNeighborsError, match="agent 1"):
            run_scenario(sc)

    def test_divergence_detected(self, scenario_factory, ref_eta0):
        sc = scenario_factory(Digraph.complete(4), ref_eta0[:4], dq0=np.full((4, 2), 50.0),
                              dt=0.5, dwell_min=1.0, horizon=100.0)
        with pytest.raises(SimulationDivergedError) as info:
            run_scenario(sc)
        assert 1 <= info.value.agent <= 4
        assert info.value.t > 0


class TestConsensusManifold:
    def test_agents_starting_in_consensus_stay_there(self, scenario_factory, ref_s):
        eta = np.tile([0.5, -0.25], (4, 1))
        dq = np.tile(ref_s @ [0.5, -0.25], (4, 1))
        out = run_scenario(scenario_factory(Digraph.complete(4), eta, q0=eta, dq0=dq, f=1, horizon=1.0))
        g = Digraph.complete(4)
        for i in range(1, 5):
            err = consensus_error_series(out, g, out.normal_ids, i)
            assert np.max(np.linalg.norm(err, axis=1)) < 1e-6
        assert out.trigger_events == []
        assert out.message_log == []
        # only the initial decision: nothing stored ever changes
        assert set(out.fuse_count.values()) == {1}

    def test_known_parameters_leave_estimate_in_place(self, scenario_factory, ref_eta0, ref_s, ref_l):
        eta = ref_eta0[:4]
        drift = {}
        for label, phi0 in (("known", ref_l), ("zero", np.zeros(5))):
            out = run_scenario(scenario_factory(Digraph.complete(4), eta, q0=eta, dq0=eta @ ref_s.T, f=1,
                                                phi_hat0=phi0, horizon=0.5))
            drift[label] = np.max(np.abs(out.phi_hat[-1] - phi0))
        assert drift["known"] < 0.1 * drift["zero"]

    def test_auxiliary_variable_matches_observer_state(self, four_agents):
        out = run_scenario(four_agents(horizon=0.3, f=1))
        from resilient_el_consensus.services.protocol import auxiliary_variable

        for r in (0, out.times.size // 2, -1):
            np.testing.assert_allclose(out.W[r], auxiliary_variable(four_agents().S, out.times[r], out.eta[r]),
                                       atol=1e-9)


class TestAgentState:
    def test_observer_state_tracks_latest_trigger(self, four_agents, ref_s):
        engine = SimulationEngine(four_agents(horizon=0.5, f=1))
        out = engine.run()
        for a in out.agent_ids:
            obs = engine.observer_state(a)
            times = out.trigger_log[a]
            assert obs.t_last_trigger == (times[-1] if times else 0.0)
            assert obs.is_consistent(expm(-ref_s * obs.t_last_trigger), tol=1e-9)
            np.testing.assert_array_equal(obs.eta, out.eta[-1, a - 1])

    def test_controller_state_is_latest_estimate(self, four_agents):
        engine = SimulationEngine(four_agents(horizon=0.05, f=1))
        out = engine.run()
        for a in out.agent_ids:
            np.testing.assert_array_equal(engine.controller_state(a).phi_hat, out.phi_hat[-1, a - 1])
        assert np.any(out.phi_hat[-1] != 0.0)

    def test_estimate_takes_one_held_rate_step(self, four_agents):
        sc = four_agents(horizon=0.001, f=1)
        engine = SimulationEngine(sc)
        expected = {}
        for agent in sc.agents:
            a = agent.agent_id
            obs = engine.observer_state(a)
            eta_dot = observer_derivative(obs, engine.neighbor_store(a), sc.S, sc.gains, 0.0)
            _, phi_dot = control_update(PlantState(agent.q0, agent.dq0), obs.eta, eta_dot,
                                        engine.controller_state(a), sc.S, sc.gains, 9.8)
            expected[a] = agent.phi_hat0 + sc.sim.dt * phi_dot
        engine.step()
        for a, phi in expected.items():
            np.testing.assert_allclose(engine.controller_state(a).phi_hat, phi, rtol=1e-10, atol=1e-14)

    def test_accessors_return_copies(self, four_agents):
        engine = SimulationEngine(four_agents(horizon=0.01))
        engine.observer_state(1).eta[:] = 99.0
        engine.controller_state(1).phi_hat[:] = 99.0
        assert not np.any(engine.observer_state(1).eta == 99.0)
        assert not np.any(engine.controller_state(1).phi_hat == 99.0)


class TestTriggers:
    def test_recorded_errors_stay_below_threshold(self, four_agents):
        sc = four_agents(horizon=0.5, f=1)
        out = run_scenario(sc)
        assert out.trigger_events
        events = {(e.agent, e.t): e for e in out.trigger_events}
        last = {a: 0.0 for a in out.normal_ids}
        for r, t in enumerate(out.times[1:], start=1):
            threshold = trigger_threshold(t, 0.0, sc.gains)
            for a in sorted(out.normal_ids):
                event = events.get((a, float(t)))
                held = t - last[a] < sc.sim.dwell_min - 1e-9
                if event is None:
                    assert held or out.trigger_error[r, a - 1] < threshold
                else:
                    assert not held
                    assert out.trigger_error[r, a - 1] == 0.0
                    assert event.error >= event.threshold
                    last[a] = float(t)

    def test_trigger_log_sorted_per_agent(self, four_agents):
        out = run_scenario(four_agents(horizon=0.5, f=1))
        for times in out.trigger_log.values():
            assert times == sorted(times)

    def test_benign_trigger_intervals_bounded_below(self, four_agents):
        sc = four_agents(horizon=1.0, f=1)
        out = run_scenario(sc)
        log = out.trigger_log
        assert any(len(times) >= 2 for times in log.values())
        for times in log.values():
            instants = np.array([0.0] + times)
            assert np.all(np.diff(instants) >= sc.sim.dwell_min - 1e-9)

    def test_held_trigger_fires_once_dwell_elapses(self, four_agents):
        sc = four_agents(horizon=0.2, f=1, dwell_min=0.05)
        out = run_scenario(sc)
        for times in out.trigger_log.values():
            instants = np.array([0.0] + times)
            assert np.all(np.diff(instants) >= 0.05 - 1e-9)
        # the initial disagreement crosses the threshold before the first dwell window closes
        firsts = [times[0] for times in out.trigger_log.values() if times]
        assert firsts
        assert min(firsts) == pytest.approx(0.05)


class TestMessaging:
    def test_one_step_delivery(self, four_agents):
        engine = SimulationEngine(four_agents(horizon=1.0, f=1))
        while not engine.trigger_events:
            engine.step()
        t_fire = engine.trigger_events[0].t
        assert all(m.t != t_fire for m in engine.message_log)
        engine.step()
        delivered = [m for m in engine.message_log if m.t == t_fire]
        assert delivered
        senders = [m.sender for m in delivered]
        assert senders == sorted(senders)

    def test_silent_sender_keeps_initial_record(self, four_agents):
        spec = silent_spec(1, [2, 3, 4])
        engine = SimulationEngine(four_agents(horizon=0.05, f=1, byzantine={1: spec}))
        engine.run()
        for receiver in (2, 3, 4):
            assert engine.neighbor_store(receiver).record(1).t_accept == 0.0
        assert all(m.sender != 1 for m in engine.message_log)

    def test_fast_broadcasts_are_rejected(self, four_agents):
        spec = ByzantineSpec(agent_id=1, broadcast_period=0.0005,
                             policies={j: TransmissionPolicy() for j in (2, 3, 4)})
        out = run_scenario(four_agents(horizon=0.01, f=1, byzantine={1: spec}))
        from_1 = [m for m in out.message_log if m.sender == 1]
        assert any(not m.accepted for m in from_1)
        assert any(m.accepted for m in from_1)
        for m in out.rejected_messages():
            assert m.sender == 1

    def test_benign_run_rejects_nothing(self, four_agents):
        out = run_scenario(four_agents(horizon=1.0, f=1))
        assert len(out.message_log) > 0
        assert out.rejected_messages() == []

    def test_attacked_run_rejects_only_the_attacker(self, four_agents):
        spec = ByzantineSpec(agent_id=1, broadcast_period=0.0005,
                             policies={j: TransmissionPolicy(mode=TransmissionMode.SCALE, factor=0.6) for j in (2, 3, 4)})
        out = run_scenario(four_agents(horizon=0.5, f=0, byzantine={1: spec}))
        normal_sent = [m for m in out.message_log if m.sender != 1]
        assert normal_sent
        assert all(m.accepted for m in normal_sent)
        assert {m.sender for m in out.rejected_messages()} == {1}

    def test_storage_updates_drive_fusion_count(self, four_agents):
        out = run_scenario(four_agents(horizon=0.5, f=1))
        for a in out.agent_ids:
            accepted = sum(1 for m in out.message_log if m.receiver == a and m.accepted)
            assert 1 <= out.fuse_count[a] <= accepted + 1


class TestEquivalences:
    def test_honest_byzantine_matches_normal(self, four_agents, honest_spec):
        plain = run_scenario(four_agents(horizon=0.3, f=1))
        masked = run_scenario(four_agents(horizon=0.3, f=1, byzantine={2: honest_spec(2, [1, 3, 4])}))
        for name in ("q", "dq", "eta", "W", "phi_hat"):
            np.testing.assert_array_equal(getattr(plain, name), getattr(masked, name))
        assert plain.trigger_events == masked.trigger_events

    def test_observer_coordinate_forms_agree(self, four_agents):
        w_run = run_scenario(four_agents(horizon=0.2, f=1, observer_coordinates="w"))
        eta_run = run_scenario(four_agents(horizon=0.2, f=1, observer_coordinates="eta"))
        assert np.max(np.abs(w_run.eta - eta_run.eta)) < 1e-6
        assert np.max(np.abs(w_run.q - eta_run.q)) < 1e-6


class TestValidation:
    def test_dt_above_dwell(self, four_agents):
        with pytest.raises(ScenarioError, match="dwell_min"):
            validate_scenario(four_agents(dt=2e-3))

    def test_unknown_coordinates(self, four_agents):
        with pytest.raises(ScenarioError):
            validate_scenario(four_agents(observer_coordinates="polar"))

    def test_agents_out_of_order(self, four_agents):
        sc = four_agents()
        agents = (sc.agents[1], sc.agents[0]) + sc.agents[2:]
        with pytest.raises(ScenarioError, match="in order"):
            validate_scenario(dataclasses.replace(sc, agents=agents))

    def test_missing_policy(self, four_agents):
        spec = ByzantineSpec(agent_id=1, policies={2: TransmissionPolicy()})
        with pytest.raises(ScenarioError, match="no transmission policy"):
            validate_scenario(four_agents(byzantine={1: spec}))

    def test_hypothesis_warnings(self, four_agents, honest_spec):
        sc = four_agents(f=0, byzantine={1: honest_spec(1, [2, 3, 4]), 2: honest_spec(2, [1, 3, 4])})
        warnings = validate_scenario(sc)
        assert any("local attack" in w for w in warnings)
        assert not any("robust" in w for w in warnings)

    def test_robustness_warning(self, four_agents):
        warnings = validate_scenario(four_agents(f=2))
        assert any("5-robust" in w for w in warnings)

    def test_clean_scenario_has_no_warnings(self, four_agents):
        assert validate_scenario(four_agents(f=0)) == []
