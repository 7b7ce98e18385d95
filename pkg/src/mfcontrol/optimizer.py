"""Projected gradient descent on the terminal cost (the outer loop).

Each iteration runs one forward solve, one backward costate solve, an
optional agent-wise gradient normalization, and an Armijo-backtracked
projected step.  The first-order optimality gap (how far the control is
from pointwise minimizing q . u over the admissible set) is recorded as a
diagnostic every iteration.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import NDArray

from .adjoint import AdjointTrajectory
from .errors import ConfigurationError
from .forward import ControlTrajectory
from .problem import (CostEvaluation, Problem, compute_gradient,
                      evaluate_cost)

FloatArray = NDArray[np.float64]

ZERO_NORM_GUARD = 1e-12


@dataclass(frozen=True)
class OptimizerConfig:
    step_size: float = 0.1
    u_max: float = 1.0
    armijo_c: float = 1e-4
    armijo_beta: float = 0.5
    max_backtracks: int = 20
    max_iters: int = 12
    cost_tolerance: float = 1e-5
    normalize_gradient: bool = True

    def __post_init__(self):
        if self.step_size <= 0 or self.u_max <= 0:
            raise ConfigurationError("step_size and u_max must be positive")
        if not 0 < self.armijo_beta < 1:
            raise ConfigurationError("armijo_beta must be in (0, 1)")
        if not 0 < self.armijo_c < 1:
            raise ConfigurationError("armijo_c must be in (0, 1)")


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    cost: float
    pmp_residual: float
    backtracks: int
    step_used: float


@dataclass(frozen=True)
class ArmijoResult:
    control: ControlTrajectory
    cost: float
    backtracks: int
    step_used: float
    stalled: bool


@dataclass(frozen=True)
class OptimizationResult:
    control: ControlTrajectory
    history: tuple[IterationRecord, ...]
    evaluation: CostEvaluation

    @property
    def cost(self) -> float:
        return self.evaluation.cost


def project_control(control: ControlTrajectory,
                    u_max: float) -> ControlTrajectory:
    """Euclidean projection onto the per-agent control balls: entries
    outside are radially rescaled, entries inside are untouched."""
    v = control.values
    norms = np.linalg.norm(v, axis=2, keepdims=True)
    scale = np.where(norms > u_max, u_max / np.where(norms > 0, norms, 1.0),
                     1.0)
    return ControlTrajectory(v * scale)


def normalize_gradient_agentwise(gradient: FloatArray,
                                 dt: float) -> FloatArray:
    """Scale each agent's whole gradient trajectory to unit discrete L2
    norm; agents with (numerically) zero gradient stay zero."""
    norms = np.sqrt(dt * np.sum(gradient ** 2, axis=(0, 2)))   # (M,)
    safe = np.where(norms > ZERO_NORM_GUARD, norms, 1.0)
    return gradient / safe[None, :, None]


def pmp_residual(gradient_q: FloatArray, control_values: FloatArray,
                 u_max: float, dt: float) -> float:
    """Relative L2 gap between q . u and its pointwise minimum over the
    product of control balls (which is -u_max * sum_m |q_m|)."""
    a = np.sum(gradient_q * control_values, axis=(1, 2))       # (n_steps,)
    b = -u_max * np.sum(np.linalg.norm(gradient_q, axis=2), axis=1)
    num = np.sqrt(dt * np.sum((a - b) ** 2))
    den = np.sqrt(dt * np.sum(b * b))
    return float(num / max(den, ZERO_NORM_GUARD))


def _inner(a: FloatArray, b: FloatArray, dt: float) -> float:
    return float(dt * np.sum(a * b))


def armijo_step(cost_fn: Callable[[ControlTrajectory], float],
                control: ControlTrajectory, raw_gradient: FloatArray,
                descent_direction: FloatArray, config: OptimizerConfig,
                current_cost: float, dt: float) -> ArmijoResult:
    """Backtracked projected step with the projected-gradient sufficient
    decrease test J(candidate) <= J(u) - c * step * <g, u - candidate>."""
    step = config.step_size
    for backtracks in range(config.max_backtracks + 1):
        candidate = project_control(
            ControlTrajectory(control.values - step * descent_direction),
            config.u_max)
        decrease = _inner(raw_gradient, control.values - candidate.values, dt)
        cost = cost_fn(candidate)
        if not np.isfinite(cost):
            raise RuntimeError(f"non-finite cost {cost} during line search")
        if cost <= current_cost - config.armijo_c * step * decrease:
            return ArmijoResult(candidate, cost, backtracks, step, False)
        step *= config.armijo_beta
    return ArmijoResult(control, current_cost, config.max_backtracks,
                        0.0, True)


def optimize(problem: Problem, config: OptimizerConfig,
             initial_control: ControlTrajectory | None = None,
             callback: Callable[[IterationRecord], None] | None = None
             ) -> OptimizationResult:
    """Run the full descent loop; see the module docstring."""
    control = initial_control if initial_control is not None \
        else problem.zero_control()
    control = project_control(control, config.u_max)
    dt = problem.dt

    last_eval: list[tuple[ControlTrajectory, CostEvaluation]] = []

    def cost_fn(c: ControlTrajectory) -> float:
        ev = evaluate_cost(problem, c)
        last_eval[:] = [(c, ev)]
        return ev.cost

    evaluation = evaluate_cost(problem, control)
    history: list[IterationRecord] = []

    for it in range(config.max_iters):
        gradient, _ = compute_gradient(problem, evaluation)
        residual = pmp_residual(gradient, control.values, config.u_max, dt)
        direction = normalize_gradient_agentwise(gradient, dt) \
            if config.normalize_gradient else gradient
        last_eval.clear()
        result = armijo_step(cost_fn, control, gradient, direction, config,
                             evaluation.cost, dt)
        record = IterationRecord(it, result.cost, residual,
                                 result.backtracks, result.step_used)
        history.append(record)
        if callback is not None:
            callback(record)
        if result.stalled:
            break
        previous_cost = evaluation.cost
        control = result.control
        if last_eval and last_eval[0][0] is control:
            evaluation = last_eval[0][1]
        else:
            evaluation = evaluate_cost(problem, control)
        if abs(previous_cost - result.cost) < config.cost_tolerance:
            break

    return OptimizationResult(control, tuple(history), evaluation)


@dataclass(frozen=True)
class GradientCheckRecord:
    epsilon: float
    finite_difference: float
    adjoint_value: float

    @property
    def relative_error(self) -> float:
        scale = max(abs(self.finite_difference), ZERO_NORM_GUARD)
        return abs(self.finite_difference - self.adjoint_value) / scale


def gradient_check(problem: Problem, control: ControlTrajectory,
                   direction: FloatArray,
                   epsilons: tuple[float, ...]) -> list[GradientCheckRecord]:
    """Compare the costate gradient pairing <q, direction> against central
    finite differences of the cost; the control must stay interior so no
    projection interferes."""
    gradient, _ = compute_gradient(problem, evaluate_cost(problem, control))
    adjoint_value = _inner(gradient, direction, problem.dt)
    out = []
    for eps in epsilons:
        plus = evaluate_cost(problem, ControlTrajectory(
            control.values + eps * direction)).cost
        minus = evaluate_cost(problem, ControlTrajectory(
            control.values - eps * direction)).cost
        fd = (plus - minus) / (2.0 * eps)
        out.append(GradientCheckRecord(eps, fd, adjoint_value))
    return out
