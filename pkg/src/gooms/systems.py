"""Built-in dynamical systems with analytic step Jacobians.

Flows are discretized with fixed-step RK4; the Jacobian of the discrete step
is composed analytically from the flow Jacobian (variational RK4), so the
chain of step Jacobians is exact up to floating point.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class DynamicalSystem:
    """One discrete-time system: a step map and the Jacobian of that step."""

    name: str
    dim: int
    dt: float
    step: callable
    jacobian: callable
    default_state: np.ndarray = field(repr=False, default=None)


def _rk4_step(f, x, dt):
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def _rk4_jacobian(f, df, x, dt):
    eye = np.eye(len(x))
    k1 = f(x)
    l1 = df(x)
    x2 = x + 0.5 * dt * k1
    k2 = f(x2)
    l2 = df(x2) @ (eye + 0.5 * dt * l1)
    x3 = x + 0.5 * dt * k2
    k3 = f(x3)
    l3 = df(x3) @ (eye + 0.5 * dt * l2)
    x4 = x + dt * k3
    l4 = df(x4) @ (eye + dt * l3)
    return eye + (dt / 6.0) * (l1 + 2 * l2 + 2 * l3 + l4)


def _flow_system(name, dim, dt, f, df, default_state):
    return DynamicalSystem(
        name=name,
        dim=dim,
        dt=dt,
        step=lambda x: _rk4_step(f, x, dt),
        jacobian=lambda x: _rk4_jacobian(f, df, x, dt),
        default_state=np.asarray(default_state, dtype=np.float64),
    )


def lorenz(sigma=10.0, rho=28.0, beta=8.0 / 3.0, dt=0.01):
    def f(x):
        return np.array(
            [
                sigma * (x[1] - x[0]),
                x[0] * (rho - x[2]) - x[1],
                x[0] * x[1] - beta * x[2],
            ]
        )

    def df(x):
        return np.array(
            [
                [-sigma, sigma, 0.0],
                [rho - x[2], -1.0, -x[0]],
                [x[1], x[0], -beta],
            ]
        )

    return _flow_system("lorenz", 3, dt, f, df, [1.0, 1.0, 1.0])


def rossler(a=0.2, b=0.2, c=5.7, dt=0.05):
    def f(x):
        return np.array([-x[1] - x[2], x[0] + a * x[1], b + x[2] * (x[0] - c)])

    def df(x):
        return np.array(
            [
                [0.0, -1.0, -1.0],
                [1.0, a, 0.0],
                [x[2], 0.0, x[0] - c],
            ]
        )

    return _flow_system("rossler", 3, dt, f, df, [0.1, 0.0, 0.1])


def henon(a=1.4, b=0.3):
    def step(x):
        return np.array([1.0 - a * x[0] ** 2 + x[1], b * x[0]])

    def jacobian(x):
        return np.array([[-2.0 * a * x[0], 1.0], [b, 0.0]])

    return DynamicalSystem(
        name="henon",
        dim=2,
        dt=1.0,
        step=step,
        jacobian=jacobian,
        default_state=np.array([0.1, 0.1]),
    )


def identity_system(dim=3, dt=1.0):
    """Fixed-point map; every step Jacobian is the identity."""
    eye = np.eye(dim)
    return DynamicalSystem(
        name="identity",
        dim=dim,
        dt=dt,
        step=lambda x: x,
        jacobian=lambda x: eye.copy(),
        default_state=np.zeros(dim),
    )


BUILTIN_SYSTEMS = {
    "lorenz": lorenz,
    "rossler": rossler,
    "henon": henon,
}
