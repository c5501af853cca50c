"""
Two-link robotic arm Euler-Lagrange dynamics.

    M(q) ddq + C(q, dq) dq + g(q) = tau

Every function broadcasts over leading axes, so one call can evaluate all
agents of a network at once (l of shape (N, 5), q of shape (N, 2), ...).
"""
from dataclasses import dataclass, field
from typing import Tuple, Union

import numpy as np

from ..errors import InertiaSingularError, InvalidArgumentError
from ..utils.integration import rk4_step

GRAVITY = 9.8
PARAM_COUNT = 5
DOF = 2

ArrayLike = Union[float, np.ndarray]


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class ArmParams:
    """Physical parameters l1..l5 and gravitational constant.

    l may carry leading batch axes, shape (..., 5); grav is a scalar or
    broadcasts against l[..., 0].
    """

    l: np.ndarray
    grav: ArrayLike = GRAVITY

    def __post_init__(self):
        l = _frozen(self.l)
        grav = _frozen(self.grav)
        if l.shape[-1:] != (PARAM_COUNT,):
            raise InvalidArgumentError(f"l must have {PARAM_COUNT} entries per arm, got shape {l.shape}")
        if not (np.all(np.isfinite(l)) and np.all(np.isfinite(grav))):
            raise InvalidArgumentError("arm parameters must be finite")
        if not np.all(l[..., 0] * l[..., 1] > l[..., 2] ** 2):
            raise InvalidArgumentError("arm parameters violate l1*l2 > l3**2 (inertia not positive definite)")
        object.__setattr__(self, "l", l)
        object.__setattr__(self, "grav", grav)


@dataclass(frozen=True)
class PlantState:
    """Joint positions q (rad) and velocities dq (rad/s), shape (..., 2)."""

    q: np.ndarray
    dq: np.ndarray

    def __post_init__(self):
        q = _frozen(self.q)
        dq = _frozen(self.dq)
        if q.shape[-1:] != (DOF,) or q.shape != dq.shape:
            raise InvalidArgumentError(f"q and dq must both have shape (..., {DOF}), got {q.shape} and {dq.shape}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(dq))):
            raise InvalidArgumentError("plant state must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "dq", dq)


@dataclass(frozen=True)
class Torque:
    tau: np.ndarray = field(default_factory=lambda: np.zeros(DOF))

    def __post_init__(self):
        tau = _frozen(self.tau)
        if tau.shape[-1:] != (DOF,) or not np.all(np.isfinite(tau)):
            raise InvalidArgumentError(f"torque must be finite with shape (..., {DOF}), got {tau.shape}")
        object.__setattr__(self, "tau", tau)


# ---------------------------------------------------------------------------
# Array-level terms


def _mat2(a11, a12, a21, a22) -> np.ndarray:
    a11, a12, a21, a22 = np.broadcast_arrays(a11, a12, a21, a22)
    return np.stack([np.stack([a11, a12], axis=-1), np.stack([a21, a22], axis=-1)], axis=-2)


def inertia_matrix(l: np.ndarray, q: np.ndarray) -> np.ndarray:
    c2 = np.cos(q[..., 1])
    m11 = l[..., 0] + l[..., 1] + 2.0 * l[..., 2] * c2
    m12 = l[..., 1] + l[..., 2] * c2
    return _mat2(m11, m12, m12, l[..., 1] + 0.0 * c2)


def coriolis_matrix(l: np.ndarray, q: np.ndarray, dq: np.ndarray) -> np.ndarray:
    s2 = np.sin(q[..., 1])
    l3 = l[..., 2]
    c11 = -l3 * dq[..., 1] * s2
    c12 = -l3 * (dq[..., 0] + dq[..., 1]) * s2
    c21 = l3 * dq[..., 0] * s2
    return _mat2(c11, c12, c21, 0.0 * c21)


def gravity_vector(l: np.ndarray, q: np.ndarray, grav: ArrayLike) -> np.ndarray:
    c1 = np.cos(q[..., 0])
    c12 = np.cos(q[..., 0] + q[..., 1])
    g2 = l[..., 4] * grav * c12
    g1 = l[..., 3] * grav * c1 + g2
    return np.stack(np.broadcast_arrays(g1, g2), axis=-1)


def inertia_derivative(l: np.ndarray, q: np.ndarray, dq: np.ndarray) -> np.ndarray:
    """Analytic dM/dt = dM/dq2 * dq2 (M depends on q2 only)."""
    w = -l[..., 2] * np.sin(q[..., 1]) * dq[..., 1]
    return _mat2(2.0 * w, w, w, 0.0 * w)


def regressor(q: np.ndarray, dq: np.ndarray, x: np.ndarray, y: np.ndarray, grav: ArrayLike) -> np.ndarray:
    """
    Regression matrix Omega(q, dq, x, y) of shape (..., 2, 5) with

        M(q) x + C(q, dq) y + g(q) = Omega @ l

    Columns collect the coefficients of l1..l5 in the printed M, C and g.
    """
    q1, q2 = q[..., 0], q[..., 1]
    c2 = np.cos(q2)
    s2 = np.sin(q2)
    gc12 = grav * np.cos(q1 + q2)
    x1, x2 = x[..., 0], x[..., 1]
    y1, y2 = y[..., 0], y[..., 1]
    dq1, dq2 = dq[..., 0], dq[..., 1]

    shape = np.broadcast_shapes(q1.shape, dq1.shape, x1.shape, y1.shape, np.shape(grav))
    out = np.zeros(shape + (DOF, PARAM_COUNT))
    out[..., 0, 0] = x1
    out[..., 0, 1] = x1 + x2
    out[..., 0, 2] = c2 * (2.0 * x1 + x2) - s2 * (dq2 * y1 + (dq1 + dq2) * y2)
    out[..., 0, 3] = grav * np.cos(q1)
    out[..., 0, 4] = gc12
    out[..., 1, 1] = x1 + x2
    out[..., 1, 2] = c2 * x1 + s2 * dq1 * y1
    out[..., 1, 4] = gc12
    return out


def acceleration(l: np.ndarray, q: np.ndarray, dq: np.ndarray, tau: np.ndarray, grav: ArrayLike) -> np.ndarray:
    """ddq = M^-1 (tau - C dq - g), solved in closed form for the 2x2 inertia.

    Entries of M, C and g are expanded inline; this is the innermost call of
    every plant integration step.
    """
    l1, l2, l3 = l[..., 0], l[..., 1], l[..., 2]
    q1, q2 = q[..., 0], q[..., 1]
    dq1, dq2 = dq[..., 0], dq[..., 1]
    c2 = np.cos(q2)
    h = l3 * np.sin(q2)
    g2 = l[..., 4] * grav * np.cos(q1 + q2)
    g1 = l[..., 3] * grav * np.cos(q1) + g2

    m11 = l1 + l2 + 2.0 * l3 * c2
    m12 = l2 + l3 * c2
    det = m11 * l2 - m12 * m12
    if np.any(det <= 1e-14):
        raise InertiaSingularError("inertia matrix is singular")
    # tau - C dq - g
    r1 = tau[..., 0] + h * (2.0 * dq1 + dq2) * dq2 - g1
    r2 = tau[..., 1] - h * dq1 * dq1 - g2

    a1 = (l2 * r1 - m12 * r2) / det
    a2 = (m11 * r2 - m12 * r1) / det
    out = np.empty(np.broadcast_shapes(a1.shape, a2.shape) + (DOF,))
    out[..., 0] = a1
    out[..., 1] = a2
    return out


# ---------------------------------------------------------------------------
# Operations


def dynamics_terms(p: ArmParams, s: PlantState) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inertia M, Coriolis C and gravity g at the given state."""
    return (
        inertia_matrix(p.l, s.q),
        coriolis_matrix(p.l, s.q, s.dq),
        gravity_vector(p.l, s.q, p.grav),
    )


def regression_matrix(s: PlantState, x, y, grav: ArrayLike = GRAVITY) -> np.ndarray:
    return regressor(s.q, s.dq, np.asarray(x, dtype=float), np.asarray(y, dtype=float), grav)


def forward_dynamics(p: ArmParams, s: PlantState, u: Torque) -> np.ndarray:
    return acceleration(p.l, s.q, s.dq, u.tau, p.grav)


def kinetic_energy(p: ArmParams, s: PlantState) -> np.ndarray:
    """0.5 * dq^T M(q) dq"""
    return 0.5 * np.einsum("...i,...ij,...j->...", s.dq, inertia_matrix(p.l, s.q), s.dq)


def integrate_plant_step(p: ArmParams, s: PlantState, u: Torque, dt: float) -> PlantState:
    """
    One RK4 step of (q, dq) with the torque held over the step.

    Args:
        p: arm parameters (possibly batched)
        s: state at the start of the step
        u: torque, constant during the step
        dt: step size in seconds, positive

    Returns:
        PlantState after dt
    """
    if not dt > 0:
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    x = np.concatenate([s.q, s.dq], axis=-1)
    x_next = rk4_step(lambda _t, z: plant_rate(p, z, u.tau), 0.0, x, dt)
    return PlantState(x_next[..., :DOF], x_next[..., DOF:])


def plant_rate(p: ArmParams, z: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """d/dt of the stacked state z = [q, dq]."""
    q, dq = z[..., :DOF], z[..., DOF:]
    out = np.empty_like(z)
    out[..., :DOF] = dq
    out[..., DOF:] = acceleration(p.l, q, dq, tau, p.grav)
    return out
