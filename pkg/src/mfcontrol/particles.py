"""Finite-N microscopic simulator for validating mean-field controls.

A sampled population of N equal-weight particles evolves under the exact
pairwise kernel sums (no grid), the agents follow the same controlled ODE
as in the mean-field solve, and the empirical terminal cost is compared
against the mean-field one over many seeds.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigurationError
from .forward import ControlTrajectory, step_agents
from .geometry import AgentState
from .kernels import KernelSet, kernel_K, kernel_f
from .transport import TargetMeasure, particle_assignment_cost

FloatArray = NDArray[np.float64]


@dataclass(frozen=True)
class ParticleEnsemble:
    """N particles in the plane, each carrying weight 1/N."""

    positions: FloatArray  # (N, 2)

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 1:
            raise ValueError("positions must have shape (N, 2), N >= 1")
        if not np.isfinite(p).all():
            raise ValueError("non-finite particle position")
        p.setflags(write=False)
        object.__setattr__(self, "positions", p)

    @property
    def n_particles(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class ValidationStats:
    """Multi-seed summary of empirical terminal costs.

    The standard deviation is the population one (ddof = 0): the seeds
    exhaust the runs being summarized rather than sampling a larger pool.
    """

    costs: FloatArray
    seeds: tuple[int, ...]
    n_particles: int

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.costs, dtype=np.float64))
        if len(c) != len(self.seeds) or len(c) < 1:
            raise ValueError("need one cost per seed")
        c.setflags(write=False)
        object.__setattr__(self, "costs", c)

    @property
    def mean(self) -> float:
        return float(np.mean(self.costs))

    @property
    def std(self) -> float:
        return float(np.std(self.costs))


def sample_initial(std: float, radius: float, N: int,
                   seed: int) -> ParticleEnsemble:
    """N i.i.d. draws from the Gaussian(0, std^2 I) conditioned on the ball
    of the given radius, by rejection.

    The generator is numpy's default PCG64 stream seeded with ``seed``,
    which is platform-stable, so a seed fully determines the ensemble.
    """
    if N < 1:
        raise ConfigurationError("need at least one particle")
    if std <= 0 or radius <= 0:
        raise ConfigurationError("std and radius must be positive")
    rng = np.random.default_rng(seed)
    out = np.empty((N, 2))
    filled = 0
    while filled < N:
        draw = rng.normal(0.0, std, size=(2 * (N - filled) + 16, 2))
        keep = draw[np.sum(draw * draw, axis=1) <= radius * radius]
        take = min(len(keep), N - filled)
        out[filled:filled + take] = keep[:take]
        filled += take
    return ParticleEnsemble(out)


def particle_velocities(ensemble: ParticleEnsemble,
                        agents: AgentState | None,
                        kernel_set: KernelSet) -> FloatArray:
    """Exact pairwise drift: (1/N) sum_i K(x_i - x_n) plus the mean agent
    repulsion; the i = n term vanishes since K(0) = 0."""
    x = ensemble.positions
    z = x[None, :, :] - x[:, None, :]                      # (N, N, 2), [n, i]
    vel = kernel_K(z, kernel_set).mean(axis=1)
    if agents is not None:
        za = agents.y[None, :, :] - x[:, None, :]          # (N, M, 2)
        vel = vel + kernel_f(za, kernel_set).mean(axis=1)
    return vel


def simulate_particles(ensemble: ParticleEnsemble, initial_agents: AgentState,
                       control: ControlTrajectory, kernel_set: KernelSet,
                       dt: float) -> tuple[ParticleEnsemble,
                                           tuple[AgentState, ...]]:
    """Forward Euler over the control's step grid; particles and agents are
    updated simultaneously from the time-t state."""
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    x = ensemble.positions.copy()
    agents = initial_agents
    agent_path = [agents]
    for n in range(control.n_steps):
        current = ParticleEnsemble(x)
        vel = particle_velocities(current, agents, kernel_set)
        agents = step_agents(agents, None, control.values[n], kernel_set, dt)
        x = x + dt * vel
        agent_path.append(agents)
    return ParticleEnsemble(x), tuple(agent_path)


def particle_terminal_cost(ensemble: ParticleEnsemble,
                           target: TargetMeasure) -> float:
    """Half the mean squared distance to the assigned atoms under the
    balanced two-atom assignment."""
    return particle_assignment_cost(ensemble.positions, target)


def validation_study(std: float, radius: float, initial_agents: AgentState,
                     target: TargetMeasure, control: ControlTrajectory,
                     kernel_set: KernelSet, dt: float, N: int,
                     seeds) -> ValidationStats:
    """Sample, simulate, and score once per seed; aggregate mean and
    population standard deviation."""
    seeds = tuple(int(s) for s in seeds)
    if not seeds:
        raise ConfigurationError("need at least one seed")
    costs = np.empty(len(seeds))
    for i, seed in enumerate(seeds):
        ens = sample_initial(std, radius, N, seed)
        final, _ = simulate_particles(ens, initial_agents, control,
                                      kernel_set, dt)
        costs[i] = particle_terminal_cost(final, target)
    return ValidationStats(costs, seeds, N)
