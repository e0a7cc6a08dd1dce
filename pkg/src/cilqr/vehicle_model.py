"""
Kinematic point-mass vehicle model used by the planner.

State  x = [px, py, v, psi]   (position [m], speed [m/s], yaw [rad])
Control u = [a, r]            (longitudinal acceleration [m/s^2], yaw rate [rad/s])

Explicit Euler discretization:

    px_{k+1}  = px_k  + v_k cos(psi_k) dt
    py_{k+1}  = py_k  + v_k sin(psi_k) dt
    v_{k+1}   = v_k   + a_k dt
    psi_{k+1} = psi_k + r_k dt

Yaw is never wrapped. All functions broadcast over leading batch dimensions.
"""

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

DoubleArray = npt.NDArray[np.float64]

PX, PY, V, PSI = 0, 1, 2, 3
ACC, YAW_RATE = 0, 1
STATE_DIM = 4
CONTROL_DIM = 2


def _check_finite(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values: {arr!r}")


def step(x: npt.ArrayLike, u: npt.ArrayLike, dt: float) -> DoubleArray:
    """Advance the state by one Euler step of length ``dt``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if not dt > 0 or not np.isfinite(dt):
        raise ValueError(f"dt must be a positive finite number, got {dt}")
    _check_finite("state", x)
    _check_finite("control", u)

    v = x[..., V]
    psi = x[..., PSI]
    out = np.empty(np.broadcast_shapes(x.shape[:-1], u.shape[:-1]) + (STATE_DIM,))
    out[..., PX] = x[..., PX] + v * np.cos(psi) * dt
    out[..., PY] = x[..., PY] + v * np.sin(psi) * dt
    out[..., V] = v + u[..., ACC] * dt
    out[..., PSI] = psi + u[..., YAW_RATE] * dt
    return out


def linearize(x: npt.ArrayLike, u: npt.ArrayLike, dt: float) -> tuple[DoubleArray, DoubleArray]:
    """Analytic Jacobians ``(fx, fu)`` of :func:`step`.

    Returns arrays of shape ``(..., 4, 4)`` and ``(..., 4, 2)``.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    _check_finite("state", x)
    _check_finite("control", u)

    batch = x.shape[:-1]
    v = x[..., V]
    psi = x[..., PSI]
    c, s = np.cos(psi), np.sin(psi)

    fx = np.broadcast_to(np.eye(STATE_DIM), batch + (STATE_DIM, STATE_DIM)).copy()
    fx[..., PX, V] = c * dt
    fx[..., PX, PSI] = -v * s * dt
    fx[..., PY, V] = s * dt
    fx[..., PY, PSI] = v * c * dt

    fu = np.zeros(batch + (STATE_DIM, CONTROL_DIM))
    fu[..., V, ACC] = dt
    fu[..., PSI, YAW_RATE] = dt
    return fx, fu


@dataclass(frozen=True)
class Trajectory:
    """Time-indexed states (T+1, 4) and controls (T, 2) at fixed step ``dt``."""

    states: DoubleArray
    controls: DoubleArray
    dt: float
    consistent: bool = False  # True when states were produced by rolling out controls

    def __post_init__(self) -> None:
        states = np.asarray(self.states, dtype=float)
        controls = np.asarray(self.controls, dtype=float).reshape(-1, CONTROL_DIM)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "controls", controls)
        if states.ndim != 2 or states.shape[1] != STATE_DIM:
            raise ValueError(f"states must have shape (T+1, 4), got {states.shape}")
        if states.shape[0] != controls.shape[0] + 1:
            raise ValueError("states must be exactly one longer than controls")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]


def rollout(x0: npt.ArrayLike, controls: npt.ArrayLike, dt: float) -> Trajectory:
    """Simulate ``controls`` from ``x0`` and return a dynamically-consistent trajectory."""
    controls = np.asarray(controls, dtype=float).reshape(-1, CONTROL_DIM)
    if controls.shape[0] == 0:
        raise ValueError("rollout needs at least one control")
    states = np.empty((controls.shape[0] + 1, STATE_DIM))
    states[0] = np.asarray(x0, dtype=float)
    for k, u in enumerate(controls):
        states[k + 1] = step(states[k], u, dt)
    return Trajectory(states, controls, dt, consistent=True)
