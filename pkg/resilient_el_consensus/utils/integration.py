"""
Fixed-step 4th order Runge-Kutta.
"""
from typing import Callable

import numpy as np

Derivative = Callable[[float, np.ndarray], np.ndarray]


def rk4_step(fn: Derivative, t: float, x: np.ndarray, dt: float) -> np.ndarray:
    """
    Advance x by one classical RK4 step.

    Args:
        fn: right-hand side f(t, x); must accept and return arrays shaped like x
        t: time at the start of the step
        x: state at t (any shape; leading axes are carried through)
        dt: step size

    Returns:
        state at t + dt
    """
    half = 0.5 * dt
    k1 = fn(t, x)
    k2 = fn(t + half, x + half * k1)
    k3 = fn(t + half, x + half * k2)
    k4 = fn(t + dt, x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
