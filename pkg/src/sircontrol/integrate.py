"""Fixed-step RK4 integration on a shared uniform grid, forward and backward.

The forward state sweep and the backward costate sweep of the optimal-control
solver must live on exactly the same grid nodes, so the step size is fixed
and non-adaptive.  Control (and, in the backward sweep, state) samples at the
RK4 half-stages are linearly interpolated between the bracketing node values;
the direct-transcription solver differentiates exactly this rule, so it must
not change independently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import EpidemicState

__all__ = [
    "IntegrationError",
    "TimeGrid",
    "Trajectory",
    "rk4_step",
    "integrate_forward",
    "integrate_backward",
]


class IntegrationError(RuntimeError):
    """Raised when an integration produces a non-finite value (blow-up)."""


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of ``steps`` intervals on [t0, t_end]."""

    t0: float
    t_end: float
    steps: int

    def __post_init__(self):
        if not self.t_end > self.t0:
            raise ValueError(f"t_end={self.t_end} must exceed t0={self.t0}")
        if self.steps < 1:
            raise ValueError(f"steps={self.steps} must be >= 1")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t0) / self.steps

    @property
    def n_nodes(self) -> int:
        return self.steps + 1

    def times(self) -> np.ndarray:
        return np.linspace(self.t0, self.t_end, self.n_nodes)


@dataclass(frozen=True)
class Trajectory:
    """Node values of a state (or costate) trajectory on a grid.

    ``values`` has one row per grid node.  For state trajectories the columns
    are (S, I, R); costate trajectories reuse the container with columns
    (lam_S, lam_I, lam_R).
    """

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[0] != self.grid.n_nodes:
            raise ValueError(
                f"values shape {self.values.shape} does not match "
                f"{self.grid.n_nodes} grid nodes"
            )

    @property
    def s(self) -> np.ndarray:
        return self.values[:, 0]

    @property
    def i(self) -> np.ndarray:
        return self.values[:, 1]

    @property
    def r(self) -> np.ndarray:
        return self.values[:, 2]

    def state_at(self, k: int) -> EpidemicState:
        return EpidemicState.from_array(self.values[k])

    def conservation_error(self, n: float = 1.0) -> float:
        """Largest deviation of S+I+R from n over all nodes."""
        return float(np.max(np.abs(self.values.sum(axis=1) - n)))

    def min_component(self) -> float:
        return float(self.values.min())


def rk4_step(
    f: Callable[[float, np.ndarray], np.ndarray],
    t: float,
    x: np.ndarray,
    dt: float,
) -> np.ndarray:
    """One classical RK4 step; dt may be negative (backward sweep)."""
    if dt == 0.0:
        raise ValueError("dt must be nonzero")
    with np.errstate(over="ignore", invalid="ignore"):
        # overflow here is a diagnosed failure mode, not a warning condition
        k1 = f(t, x)
        k2 = f(t + 0.5 * dt, x + 0.5 * dt * k1)
        k3 = f(t + 0.5 * dt, x + 0.5 * dt * k2)
        k4 = f(t + dt, x + dt * k3)
        out = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise IntegrationError(f"non-finite state after step at t={t}")
    return out


def _check_controls(controls, grid: TimeGrid) -> None:
    if controls is not None and controls.grid != grid:
        raise ValueError("control signal is sampled on a different grid")


def integrate_forward(
    dynamics: Callable[[float, np.ndarray, np.ndarray | None], np.ndarray],
    x0: np.ndarray,
    grid: TimeGrid,
    controls=None,
) -> Trajectory:
    """Integrate ``dynamics(t, x, u)`` from x0 over the grid.

    ``controls`` is a node-sampled signal (or None for autonomous dynamics);
    its value at RK4 half-stages is the linear interpolant of the bracketing
    nodes.  States are never clipped; validity is the caller's post-hoc check.
    """
    _check_controls(controls, grid)
    times = grid.times()
    dt = grid.dt
    out = np.empty((grid.n_nodes, len(x0)))
    out[0] = x0
    x = np.asarray(x0, dtype=float)
    for k in range(grid.steps):
        t_k = times[k]
        if controls is None:
            f = lambda t, y: dynamics(t, y, None)  # noqa: E731
        else:
            u_a, u_b = controls.values[k], controls.values[k + 1]

            def f(t, y, u_a=u_a, u_b=u_b, t_k=t_k):
                w = (t - t_k) / dt
                return dynamics(t, y, u_a + w * (u_b - u_a))

        x = rk4_step(f, t_k, x, dt)
        out[k + 1] = x
    return Trajectory(grid, out)


def integrate_backward(
    adjoint_dynamics: Callable[
        [float, np.ndarray, np.ndarray, np.ndarray | None], np.ndarray
    ],
    lambda_end: np.ndarray,
    grid: TimeGrid,
    states: Trajectory,
    controls=None,
) -> Trajectory:
    """Integrate ``adjoint_dynamics(t, lam, x, u)`` from t_end down to t0.

    The stored terminal node is exactly ``lambda_end``.  State and control
    samples at the (negative) RK4 half-stages follow the same linear
    interpolation rule as the forward sweep.
    """
    if states.grid != grid:
        raise ValueError("state trajectory lives on a different grid")
    _check_controls(controls, grid)
    times = grid.times()
    dt = grid.dt
    out = np.empty((grid.n_nodes, len(lambda_end)))
    out[-1] = lambda_end
    lam = np.asarray(lambda_end, dtype=float)
    for k in range(grid.steps, 0, -1):
        t_k = times[k]
        x_a, x_b = states.values[k], states.values[k - 1]
        if controls is None:
            u_a = u_b = None

            def g(t, l, x_a=x_a, x_b=x_b, t_k=t_k):
                w = (t_k - t) / dt
                return adjoint_dynamics(t, l, x_a + w * (x_b - x_a), None)

        else:
            u_a, u_b = controls.values[k], controls.values[k - 1]

            def g(t, l, x_a=x_a, x_b=x_b, u_a=u_a, u_b=u_b, t_k=t_k):
                w = (t_k - t) / dt
                return adjoint_dynamics(
                    t, l, x_a + w * (x_b - x_a), u_a + w * (u_b - u_a)
                )

        lam = rk4_step(g, t_k, lam, -dt)
        out[k - 1] = lam
    return Trajectory(grid, out)
