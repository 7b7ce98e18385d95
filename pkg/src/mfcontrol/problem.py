"""The steering problem bundle and its cost/gradient pipeline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .adjoint import (AdjointTrajectory, gradient_of_cost, solve_adjoint,
                      terminal_adjoint)
from .errors import ConfigurationError
from .forward import (ControlTrajectory, ForwardTrajectory, n_steps_for,
                      solve_forward)
from .geometry import AgentState, DensityField
from .kernels import KernelSet
from .transport import (SplitPlane, TargetMeasure, bisect_split,
                        terminal_cost_cloud, terminal_cost_with_plane)

FloatArray = NDArray[np.float64]


@dataclass(frozen=True)
class Problem:
    """Everything that defines one steering instance except the control."""

    initial_density: DensityField
    initial_agents: AgentState
    target: TargetMeasure
    kernel_set: KernelSet
    dt: float
    T: float
    mass_threshold: float = 0.0

    def __post_init__(self):
        n_steps_for(self.T, self.dt)  # validates T/dt integrality

    @property
    def n_steps(self) -> int:
        return n_steps_for(self.T, self.dt)

    @property
    def n_agents(self) -> int:
        return self.initial_agents.n_agents

    def zero_control(self) -> ControlTrajectory:
        return ControlTrajectory.zeros(self.n_steps, self.n_agents)


@dataclass(frozen=True)
class CostEvaluation:
    """A forward solve together with its terminal split and costs.

    ``cost`` is the optimization objective: the terminal transport cost of
    the Lagrangian tracer quadrature.  The costate solve differentiates
    exactly this functional, so finite differences of ``cost`` match the
    computed gradient.  ``density_cost`` is the same cost evaluated on the
    finite-volume density; it trails the objective by the scheme's
    numerical diffusion and is reported as a diagnostic.
    """

    cost: float
    trajectory: ForwardTrajectory
    plane: SplitPlane
    density_cost: float


def evaluate_cost(problem: Problem,
                  control: ControlTrajectory) -> CostEvaluation:
    traj = solve_forward(problem.initial_density, problem.initial_agents,
                         control, problem.kernel_set, problem.dt, problem.T,
                         problem.mass_threshold)
    plane = bisect_split(traj.terminal_density, problem.target)
    cost = terminal_cost_cloud(traj.terminal_cloud, problem.target, plane)
    density_cost = terminal_cost_with_plane(traj.terminal_density,
                                            problem.target, plane)
    return CostEvaluation(cost, traj, plane, density_cost)


def compute_gradient(problem: Problem,
                     evaluation: CostEvaluation) -> tuple[FloatArray,
                                                          AdjointTrajectory]:
    """Control gradient of the terminal cost via the backward costate."""
    term = terminal_adjoint(evaluation.trajectory.terminal_cloud,
                            evaluation.plane, problem.target,
                            problem.n_agents)
    adj = solve_adjoint(evaluation.trajectory, term, problem.kernel_set)
    return gradient_of_cost(adj), adj


def control_from_array(problem: Problem, values) -> ControlTrajectory:
    v = np.asarray(values, dtype=np.float64)
    expected = (problem.n_steps, problem.n_agents, 2)
    if v.shape != expected:
        raise ConfigurationError(
            f"control shape {v.shape} does not match {expected}"
        )
    return ControlTrajectory(v)
