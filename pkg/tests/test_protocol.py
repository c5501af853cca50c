"""
Tests for the normal agent's decision stack.
"""
import logging

import numpy as np
import pytest

from resilient_el_consensus.errors import InsufficientNeighborsError, InvalidArgumentError
from resilient_el_consensus.services.arm import PlantState, regressor
from resilient_el_consensus.services.protocol import (
    ExponentialCache,
    Gains,
    ObserverMatrix,
    accept_neighbor_update,
    auxiliary_variable,
    avbrd_fuse,
    control_update,
    matrix_exponential,
    observer_derivative,
    observer_w_derivative,
    offer_neighbor_update,
    open_loop_estimate,
    trigger_check,
    trigger_threshold,
)
from resilient_el_consensus.state.agent_state import ControllerState, NeighborStore, ObserverState


class TestMatrixExponential:
    def test_zero_time(self, ref_s):
        np.testing.assert_array_equal(matrix_exponential(ref_s, 0.0), np.eye(2))

    def test_reference_matrix_closed_form(self, ref_s):
        np.testing.assert_allclose(matrix_exponential(ref_s, np.pi / 6), [[0.0, -0.5], [2.0, 0.0]], atol=1e-12)
        for t in np.linspace(-3, 3, 13):
            closed = np.cos(3 * t) * np.eye(2) + np.sin(3 * t) / 3 * ref_s
            np.testing.assert_allclose(matrix_exponential(ref_s, t), closed, rtol=1e-12, atol=1e-12)

    def test_nilpotent(self):
        for t in (0.5, -2.0, 7.0):
            np.testing.assert_allclose(matrix_exponential([[0.0, 1.0], [0.0, 0.0]], t), [[1.0, t], [0.0, 1.0]])

    def test_cache_reuses_and_prunes(self, ref_s):
        cache = ExponentialCache(ref_s)
        a = cache.forward(0.5)
        assert cache.forward(0.5) is a
        np.testing.assert_allclose(cache.forward(0.5) @ cache.backward(0.5), np.eye(2), atol=1e-12)
        cache.prune(before=1.0)
        assert cache.forward(0.5) is not a


class TestAuxiliaryVariable:
    def test_zero_time(self, ref_s):
        np.testing.assert_array_equal(auxiliary_variable(ref_s, 0.0, [0.3, -0.2]), [0.3, -0.2])

    def test_reference_value(self, ref_s):
        np.testing.assert_allclose(auxiliary_variable(ref_s, np.pi / 6, [0.0, 2.0]), [1.0, 0.0], atol=1e-12)

    def test_round_trip(self, ref_s):
        rng = np.random.default_rng(0)
        for _ in range(20):
            t = rng.uniform(0, 10)
            eta = rng.normal(size=2)
            back = matrix_exponential(ref_s, t) @ auxiliary_variable(ref_s, t, eta)
            np.testing.assert_allclose(back, eta, atol=1e-10)

    def test_batched(self, ref_s):
        etas = np.array([[1.0, 0.0], [0.0, 2.0]])
        out = auxiliary_variable(ref_s, 0.3, etas)
        np.testing.assert_allclose(out[1], auxiliary_variable(ref_s, 0.3, etas[1]))


class TestOpenLoopEstimate:
    def test_same_instant(self, ref_s):
        np.testing.assert_array_equal(open_loop_estimate(ref_s, 2.0, 2.0, [1.0, 3.0]), [1.0, 3.0])

    def test_zero_matrix(self):
        np.testing.assert_array_equal(open_loop_estimate(np.zeros((2, 2)), 9.0, 1.0, [1.0, 3.0]), [1.0, 3.0])

    def test_reference_value(self, ref_s):
        np.testing.assert_allclose(open_loop_estimate(ref_s, 1.0 + np.pi / 6, 1.0, [1.0, 0.0]), [0.0, 2.0], atol=1e-12)

    def test_rejects_past(self, ref_s):
        with pytest.raises(InvalidArgumentError):
            open_loop_estimate(ref_s, 0.5, 1.0, [1.0, 0.0])

    def test_frozen_auxiliary_variable(self, ref_s):
        eta_j, t_acc = np.array([0.7, -1.3]), 0.25
        frozen = auxiliary_variable(ref_s, t_acc, eta_j)
        for t in (0.25, 0.9, 4.0):
            est = open_loop_estimate(ref_s, t, t_acc, eta_j)
            np.testing.assert_allclose(auxiliary_variable(ref_s, t, est), frozen, atol=1e-12)


class TestAvbrd:
    def test_scalar_examples(self):
        assert avbrd_fuse([[1, 2, 3, 4, 5]], 1) == pytest.approx([3.0])
        assert avbrd_fuse([[2, 7, 4]], 0) == pytest.approx([4.5])

    def test_two_dimensional_median(self):
        cols = np.array([[1, 3, 2], [4, 2, 9]], dtype=float)
        np.testing.assert_array_equal(avbrd_fuse(cols, 1), [2.0, 4.0])

    def test_insufficient_columns(self):
        with pytest.raises(InsufficientNeighborsError):
            avbrd_fuse(np.zeros((2, 2)), 1)
        with pytest.raises(InsufficientNeighborsError):
            avbrd_fuse(np.zeros((0, 0)), 0)

    def test_property_suite(self):
        rng = np.random.default_rng(7)
        for _ in range(10_000):
            n = int(rng.integers(1, 5))
            m = int(rng.integers(1, 10))
            f = int(rng.integers(0, (m - 1) // 2 + 1))
            cols = rng.normal(size=(n, m))
            bad = rng.choice(m, size=int(rng.integers(0, f + 1)), replace=False)
            cols[:, bad] = rng.normal(scale=1e3, size=(n, bad.size))
            good = np.setdiff1d(np.arange(m), bad)
            fused = avbrd_fuse(cols, f)
            assert np.all(fused >= cols[:, good].min(axis=1))
            assert np.all(fused <= cols[:, good].max(axis=1))
            perm = rng.permutation(m)
            np.testing.assert_array_equal(avbrd_fuse(cols[:, perm], f), fused)
            shift = rng.integers(-8, 8, size=n).astype(float)
            np.testing.assert_allclose(avbrd_fuse(cols + shift[:, None], f),
                                       avbrd_fuse(cols, f) + shift, atol=1e-9)

    def test_f_zero_is_midrange(self):
        cols = np.random.default_rng(8).normal(size=(3, 6))
        np.testing.assert_allclose(avbrd_fuse(cols, 0), 0.5 * (cols.min(axis=1) + cols.max(axis=1)))


class TestTrigger:
    def test_thresholds(self, gains_factory):
        g = gains_factory()
        assert trigger_threshold(0.0, 0.0, g) == pytest.approx(8 / 81)
        assert trigger_threshold(1.0, 0.0, g) == pytest.approx(0.03125)

    def test_zero_error_never_fires(self, gains_factory):
        g = gains_factory()
        for t in (0.0, 1.0, 100.0):
            fire, threshold = trigger_check(np.zeros(2), t, 0.0, g)
            assert not fire and threshold > 0

    def test_fires_at_threshold(self, gains_factory):
        g = gains_factory()
        fire, threshold = trigger_check(np.array([8 / 81, 0.0]), 0.0, 0.0, g)
        assert fire and threshold == pytest.approx(8 / 81)

    def test_threshold_decreasing(self, gains_factory):
        g = gains_factory()
        values = [trigger_threshold(t, 0.0, g) for t in np.linspace(0, 20, 50)]
        assert all(a > b > 0 for a, b in zip(values, values[1:]))

    def test_rejects_time_before_start(self, gains_factory):
        with pytest.raises(InvalidArgumentError):
            trigger_check(np.zeros(2), -1.0, 0.0, gains_factory())


class TestNeighborStorage:
    def test_dwell_filter(self, ref_s):
        store = NeighborStore(owner=1, in_neighbors=[2, 3])
        accept_neighbor_update(store, 2, 0.0, [1.0, 0.0], 0.001, ref_s)
        assert 2 in store
        accept_neighbor_update(store, 2, 0.0005, [5.0, 5.0], 0.001, ref_s)
        np.testing.assert_array_equal(store.record(2).eta, [1.0, 0.0])
        accept_neighbor_update(store, 2, 0.002, [0.5, 0.5], 0.001, ref_s)
        rec = store.record(2)
        assert rec.t_accept == 0.002
        np.testing.assert_allclose(rec.W_frozen, matrix_exponential(ref_s, -0.002) @ [0.5, 0.5])

    def test_exact_dwell_spacing_accepted(self, ref_s):
        store = NeighborStore(owner=1, in_neighbors=[2])
        dt = 1e-4
        assert offer_neighbor_update(store, 2, 3 * dt, [1.0, 0.0], 0.001, ref_s)
        assert offer_neighbor_update(store, 2, 13 * dt, [1.0, 0.0], 0.001, ref_s)

    def test_unknown_sender_ignored(self, ref_s, caplog):
        store = NeighborStore(owner=1, in_neighbors=[2])
        with caplog.at_level(logging.WARNING):
            assert not offer_neighbor_update(store, 9, 0.0, [1.0, 0.0], 0.001, ref_s)
        assert len(store) == 0
        assert "non-neighbor 9" in caplog.text

    def test_columns_in_sender_order(self, ref_s):
        store = NeighborStore(owner=4, in_neighbors=[3, 1, 2])
        for j in (3, 1, 2):
            accept_neighbor_update(store, j, 0.0, [float(j), -float(j)], 0.001, ref_s)
        np.testing.assert_array_equal(store.w_columns(), [[1, 2, 3], [-1, -2, -3]])


class TestObserver:
    def _state(self, S, t_trig, eta_trig, eta):
        w_self = matrix_exponential(S, -t_trig) @ eta_trig
        return ObserverState(np.asarray(eta, float), t_trig, np.asarray(eta_trig, float), w_self)

    def test_consistency_check(self, ref_s):
        obs = self._state(ref_s, 0.4, [1.0, 2.0], [0.0, 0.0])
        assert obs.is_consistent(matrix_exponential(ref_s, -0.4))
        assert not obs.is_consistent(np.eye(2))

    def test_zero_matrix_direct_evaluation(self, gains_factory):
        S = np.zeros((2, 2))
        g = Gains(mu1=1.0, mu2=2.0, alpha1=8.0, alpha2=3.0, alpha3=4.0, f=0)
        store = NeighborStore(owner=1, in_neighbors=[2])
        accept_neighbor_update(store, 2, 0.0, [0.0, 0.0], 0.001, S)
        obs = self._state(S, 0.0, [1.0, 0.0], [1.0, 0.0])
        np.testing.assert_allclose(observer_derivative(obs, store, S, g, 0.5), [-1.0, 0.0])

    def test_no_correction_when_estimates_agree(self, ref_s, gains_factory):
        g = gains_factory()
        store = NeighborStore(owner=1, in_neighbors=[2])
        accept_neighbor_update(store, 2, 0.0, [1.0, -1.0], 0.001, ref_s)
        obs = self._state(ref_s, 0.0, [1.0, -1.0], [0.3, 0.2])
        np.testing.assert_allclose(observer_derivative(obs, store, ref_s, g, 0.7), ref_s @ [0.3, 0.2], atol=1e-12)

    def test_coordinate_forms_agree(self, ref_s, gains_factory):
        rng = np.random.default_rng(9)
        g = gains_factory(f=1)
        for _ in range(50):
            store = NeighborStore(owner=1, in_neighbors=[2, 3, 4])
            for j in (2, 3, 4):
                accept_neighbor_update(store, j, rng.uniform(0, 1), rng.normal(size=2), 0.001, ref_s)
            t_trig = rng.uniform(0, 1)
            t = t_trig + rng.uniform(0, 2)
            obs = self._state(ref_s, t_trig, rng.normal(size=2), rng.normal(size=2))
            eta_dot = observer_derivative(obs, store, ref_s, g, t)
            w_dot = observer_w_derivative(obs.W_self_frozen, avbrd_fuse(store.w_columns(), g.f), g.mu1)
            residual = matrix_exponential(ref_s, -t) @ (eta_dot - ref_s @ obs.eta) - w_dot
            assert np.linalg.norm(residual) < 1e-9

    def test_insufficient_neighbors(self, ref_s, gains_factory):
        store = NeighborStore(owner=1, in_neighbors=[])
        obs = self._state(ref_s, 0.0, [0.0, 0.0], [0.0, 0.0])
        with pytest.raises(InsufficientNeighborsError):
            observer_derivative(obs, store, ref_s, gains_factory(), 0.0)


class TestControlLaw:
    def test_zero_sliding_variable(self, ref_s, gains_factory):
        g = gains_factory()
        eta = np.array([0.4, -0.3])
        eta_dot = np.array([0.2, 0.1])
        v = ref_s @ eta
        plant = PlantState(eta, v)
        phi = np.array([0.5, 1.0, 0.1, 0.6, 0.3])
        tau, phi_dot = control_update(plant, eta, eta_dot, ControllerState(phi), ref_s, g, 9.8)
        v_dot = ref_s @ eta_dot - g.mu2 * (v - eta_dot)
        np.testing.assert_allclose(tau.tau, regressor(eta, v, v_dot, v, 9.8) @ phi, atol=1e-12)
        np.testing.assert_allclose(phi_dot, 0.0, atol=1e-12)

    def test_general_law(self, ref_s, gains_factory):
        g = gains_factory()
        rng = np.random.default_rng(10)
        q, dq, eta, eta_dot = rng.normal(size=(4, 2))
        phi = rng.normal(size=5)
        tau, phi_dot = control_update(PlantState(q, dq), eta, eta_dot, ControllerState(phi), ref_s, g, 9.8)
        v = ref_s @ eta - g.mu2 * (q - eta)
        v_dot = ref_s @ eta_dot - g.mu2 * (dq - eta_dot)
        s = dq - v
        omega = regressor(q, dq, v_dot, v, 9.8)
        np.testing.assert_allclose(tau.tau, -80.0 * s + omega @ phi, rtol=1e-12)
        np.testing.assert_allclose(phi_dot, -0.6 * omega.T @ s, rtol=1e-12)


class TestGains:
    def test_reference_gains_pass_gate(self, gains_factory):
        g = gains_factory()
        assert float(g.k) * g.mu2 == 160.0

    @pytest.mark.parametrize("bad", [
        dict(mu1=0.0), dict(mu2=-1.0), dict(alpha1=0.0), dict(alpha2=1.0), dict(alpha3=0.5),
        dict(f=-1), dict(k=0.1), dict(F=0.0),
    ])
    def test_rejects_invalid(self, bad):
        values = dict(mu1=5.9, mu2=2.0, alpha1=8.0, alpha2=3.0, alpha3=4.0, f=0, k=80.0, F=0.6)
        values.update(bad)
        with pytest.raises(InvalidArgumentError):
            Gains(**values)

    def test_per_agent_arrays(self):
        g = Gains(mu1=5.9, mu2=2.0, alpha1=8.0, alpha2=3.0, alpha3=4.0, f=1, k=[80.0, 90.0], F=[0.6, 0.5])
        assert g.k.shape == (2,)
        assert g.with_f(0).f == 0


class TestObserverMatrix:
    def test_reference_matrix_is_quiet(self, ref_s, caplog):
        with caplog.at_level(logging.WARNING):
            ObserverMatrix(ref_s)
        assert caplog.text == ""

    def test_unstable_matrix_warns(self, caplog):
        with caplog.at_level(logging.WARNING):
            ObserverMatrix([[0.1, 0.0], [0.0, 0.0]])
        assert "real part" in caplog.text

    def test_rejects_non_square(self):
        with pytest.raises(InvalidArgumentError):
            ObserverMatrix([[1.0, 2.0]])
