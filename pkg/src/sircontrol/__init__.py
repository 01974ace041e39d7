"""SIR epidemic simulation and optimal-control strategy toolkit.

Library layout:

* :mod:`sircontrol.model` -- compartment states, parameters, model dynamics
* :mod:`sircontrol.integrate` -- fixed-step RK4 forward/backward integration
* :mod:`sircontrol.ocp` -- the three control problems and their two solvers
* :mod:`sircontrol.metrics` -- peak, infection period, terminal values, tables
* :mod:`sircontrol.cli` -- the ``sircontrol`` command-line tool
"""

from .integrate import IntegrationError, TimeGrid, Trajectory, integrate_backward, integrate_forward
from .metrics import (
    ComparisonTable,
    RunSummary,
    compare_strategies,
    infection_period,
    peak_infected,
    summarize_run,
    terminal_values,
)
from .model import ControlValue, EpidemicState, ModelParams
from .ocp import (
    AdjointState,
    ControlSignal,
    OcpSolution,
    Strategy,
    StrategySpec,
    adjoint_rhs,
    default_spec,
    hamiltonian,
    objective,
    objective_gradient,
    optimal_control_characterization,
    running_cost,
    solve_direct,
    solve_fbsm,
    uncontrolled_field,
)

__all__ = [
    "IntegrationError",
    "TimeGrid",
    "Trajectory",
    "integrate_forward",
    "integrate_backward",
    "ControlValue",
    "EpidemicState",
    "ModelParams",
    "AdjointState",
    "ControlSignal",
    "OcpSolution",
    "Strategy",
    "StrategySpec",
    "adjoint_rhs",
    "default_spec",
    "hamiltonian",
    "objective",
    "objective_gradient",
    "optimal_control_characterization",
    "running_cost",
    "solve_direct",
    "solve_fbsm",
    "uncontrolled_field",
    "ComparisonTable",
    "RunSummary",
    "compare_strategies",
    "infection_period",
    "peak_infected",
    "summarize_run",
    "terminal_values",
]
