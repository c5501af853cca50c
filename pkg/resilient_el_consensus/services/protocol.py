"""
Decision stack of a normal agent.

Covers the observer matrix exponential, the auxiliary variable
W = e^{-St} eta, the auxiliary-variable-based resilient decision (AVBRD),
the event trigger, neighbor storage updates, observer dynamics in both
coordinate forms and the adaptive control law.
"""
import logging
from dataclasses import dataclass
from typing import Dict, Tuple, Union

import numpy as np
from scipy.linalg import expm

from ..config import settings
from ..errors import InsufficientNeighborsError, InvalidArgumentError
from ..state.agent_state import ControllerState, NeighborStore, ObserverState
from .arm import PlantState, Torque, regressor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Gains:
    """Observer, trigger and controller gains.

    k and F may be scalars or per-agent arrays (indexed by agent position).
    """

    mu1: float
    mu2: float
    alpha1: float
    alpha2: float
    alpha3: float
    f: int
    k: Union[float, np.ndarray] = 80.0
    F: Union[float, np.ndarray] = 0.6

    def __post_init__(self):
        k = np.array(self.k, dtype=float)
        F = np.array(self.F, dtype=float)
        k.setflags(write=False)
        F.setflags(write=False)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "F", F)
        problems = []
        if not self.mu1 > 0:
            problems.append(f"mu1={self.mu1} must be > 0")
        if not self.mu2 > 0:
            problems.append(f"mu2={self.mu2} must be > 0")
        if not np.all(k > 0):
            problems.append("every k must be > 0")
        if not np.all(F > 0):
            problems.append("every F must be > 0")
        if not self.alpha1 > 0:
            problems.append(f"alpha1={self.alpha1} must be > 0")
        if not self.alpha2 > 1:
            problems.append(f"alpha2={self.alpha2} must be > 1")
        if not self.alpha3 > 1:
            problems.append(f"alpha3={self.alpha3} must be > 1")
        if isinstance(self.f, bool) or not isinstance(self.f, (int, np.integer)) or self.f < 0:
            problems.append(f"f={self.f!r} must be a non-negative integer")
        if self.mu2 > 0 and not np.all(k * self.mu2 > 0.5):
            problems.append("k * mu2 must exceed 1/2 for every agent")
        if problems:
            raise InvalidArgumentError("invalid gains: " + "; ".join(problems))

    def with_f(self, f: int) -> "Gains":
        return Gains(self.mu1, self.mu2, self.alpha1, self.alpha2, self.alpha3, f, self.k, self.F)


class ObserverMatrix:
    """System matrix S of the observer; eigenvalues should sit on the imaginary axis."""

    def __init__(self, S):
        mat = np.array(S, dtype=float)
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1] or mat.shape[0] < 1:
            raise InvalidArgumentError(f"S must be a square matrix, got shape {mat.shape}")
        if not np.all(np.isfinite(mat)):
            raise InvalidArgumentError("S must be finite")
        mat.setflags(write=False)
        self.S = mat
        worst = float(np.max(np.abs(np.linalg.eigvals(mat).real)))
        if worst > settings.eigen_tolerance:
            logger.warning(f"[Protocol] S has an eigenvalue with real part {worst:.3g}; observer states may be unbounded")

    @property
    def n(self) -> int:
        return self.S.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.S if dtype is None else self.S.astype(dtype)


def _as_matrix(S) -> np.ndarray:
    return S.S if isinstance(S, ObserverMatrix) else np.asarray(S, dtype=float)


def matrix_exponential(S, t: float) -> np.ndarray:
    """e^{St} by scaling and squaring with a Pade approximant (scipy.linalg.expm)."""
    return expm(_as_matrix(S) * float(t))


class ExponentialCache:
    """Memoizes e^{St} and e^{-St}; all agents share S so one entry per instant suffices."""

    def __init__(self, S):
        self._S = _as_matrix(S)
        self._forward: Dict[float, np.ndarray] = {}
        self._backward: Dict[float, np.ndarray] = {}

    def forward(self, t: float) -> np.ndarray:
        out = self._forward.get(t)
        if out is None:
            out = expm(self._S * t)
            self._forward[t] = out
        return out

    def backward(self, t: float) -> np.ndarray:
        out = self._backward.get(t)
        if out is None:
            out = expm(-self._S * t)
            self._backward[t] = out
        return out

    def prune(self, before: float) -> None:
        """Drop entries for instants earlier than `before`."""
        for table in (self._forward, self._backward):
            for key in [k for k in table if k < before]:
                del table[key]


def auxiliary_variable(S, t: float, eta) -> np.ndarray:
    """W = e^{-St} eta (eta may be batched along leading axes)."""
    return np.asarray(eta, dtype=float) @ matrix_exponential(S, -t).T


def open_loop_estimate(S, t_now: float, t_trig: float, eta_trig) -> np.ndarray:
    """eta_hat(t_now) = e^{S (t_now - t_trig)} eta_trig"""
    if t_now < t_trig:
        raise InvalidArgumentError(f"t_now={t_now} precedes trigger instant {t_trig}")
    return np.asarray(eta_trig, dtype=float) @ matrix_exponential(S, t_now - t_trig).T


def avbrd_fuse(W_cols, f: int) -> np.ndarray:
    """
    Auxiliary-variable-based resilient decision.

    Each dimension is sorted on its own; the result is the mean of the
    (f+1)-th and (m-f)-th smallest values.

    Args:
        W_cols: (n, m) matrix, one column per stored in-neighbor
        f: assumed local bound on Byzantine in-neighbors

    Returns:
        fused n-vector
    """
    cols = np.atleast_2d(np.asarray(W_cols, dtype=float))
    m = cols.shape[1] if cols.size else 0
    if f < 0:
        raise InvalidArgumentError(f"f must be non-negative, got {f}")
    if m < 2 * f + 1:
        raise InsufficientNeighborsError(f"resilient decision needs at least {2 * f + 1} in-neighbor values, has {m}")
    ordered = np.sort(cols, axis=1, kind="stable")
    return 0.5 * (ordered[:, f] + ordered[:, m - f - 1])


def trigger_threshold(t: float, t0: float, g: Gains) -> float:
    return g.alpha1 / (t - t0 + g.alpha2) ** g.alpha3


def trigger_check(e_eta, t: float, t0: float, g: Gains) -> Tuple[bool, float]:
    """Fire when ||e_eta|| reaches alpha1 / (t - t0 + alpha2)^alpha3."""
    if t < t0:
        raise InvalidArgumentError(f"t={t} precedes start time {t0}")
    threshold = trigger_threshold(t, t0, g)
    return bool(np.linalg.norm(e_eta) >= threshold), threshold


def accept_neighbor_update(store: NeighborStore, j: int, t: float, eta_j, dwell_min: float, S) -> NeighborStore:
    """
    Storage-update rule: keep j's broadcast if its spacing since j's last
    accepted broadcast is at least dwell_min (or j has no record yet).
    """
    offer_neighbor_update(store, j, t, eta_j, dwell_min, S)
    return store


def offer_neighbor_update(store: NeighborStore, j: int, t: float, eta_j, dwell_min: float, S, exp_minus_st=None) -> bool:
    """Same as accept_neighbor_update, reporting whether the message was kept."""
    if not store.knows(j):
        logger.warning(f"[Protocol] agent {store.owner} ignored message from non-neighbor {j} at t={t:.9g}")
        return False
    eta_j = np.asarray(eta_j, dtype=float)
    if exp_minus_st is None:
        exp_minus_st = matrix_exponential(S, -t)
    return store.offer(j, t, eta_j, exp_minus_st @ eta_j, dwell_min, settings.dwell_tolerance)


def observer_w_derivative(W_self_frozen, W_bar, mu1: float) -> np.ndarray:
    """dW/dt = -mu1 (W_hat_self - W_bar); constant between storage updates and own triggers."""
    return -mu1 * (np.asarray(W_self_frozen, dtype=float) - np.asarray(W_bar, dtype=float))


def observer_derivative(obs: ObserverState, store: NeighborStore, S, g: Gains, t: float) -> np.ndarray:
    """
    eta_dot = S eta - mu1 (eta_hat - eta_bar), with eta_bar = e^{St} W_bar and
    W_bar the resilient decision over the stored neighbor auxiliary variables.
    """
    w_bar = avbrd_fuse(store.w_columns(), g.f)
    eta_bar = matrix_exponential(S, t) @ w_bar
    eta_hat = open_loop_estimate(S, t, obs.t_last_trigger, obs.eta_at_trigger)
    return _as_matrix(S) @ obs.eta - g.mu1 * (eta_hat - eta_bar)


def control_update(
    plant: PlantState,
    eta,
    eta_dot,
    ctrl: ControllerState,
    S,
    g: Gains,
    grav,
) -> Tuple[Torque, np.ndarray]:
    """
    Adaptive control law.

        v = S eta - mu2 (q - eta)
        s = dq - v
        tau = -k s + Omega(q, dq, v_dot, v) phi_hat
        phi_hat_dot = -F Omega^T s

    Inputs may be batched over agents; per-agent k and F broadcast along the
    leading axis.

    Returns:
        (torque, phi_hat_dot)
    """
    tau, phi_dot, _ = _control_terms(plant.q, plant.dq, np.asarray(eta, dtype=float), np.asarray(eta_dot, dtype=float),
                                     ctrl.phi_hat, _as_matrix(S), g.mu2, g.k, g.F, grav)
    return Torque(tau), phi_dot


def _control_terms(q, dq, eta, eta_dot, phi_hat, S, mu2, k, F, grav):
    v = eta @ S.T - mu2 * (q - eta)
    v_dot = eta_dot @ S.T - mu2 * (dq - eta_dot)
    s = dq - v
    omega = regressor(q, dq, v_dot, v, grav)
    k = np.asarray(k)[..., None]
    F = np.asarray(F)[..., None]
    tau = -k * s + (omega @ phi_hat[..., None])[..., 0]
    phi_dot = -F * (s[..., None, :] @ omega)[..., 0, :]
    return tau, phi_dot, s
