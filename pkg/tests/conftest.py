"""Shared fixtures: case-study objects and small fast problem instances."""
from __future__ import annotations

import numpy as np
import pytest

from mfcontrol import (AgentState, KernelSet, GaussianProfile, Problem,
                       TargetMeasure, build_grid, default_kernel_set,
                       solve_forward, truncated_gaussian_density)
from mfcontrol.cli import case_study_config_path, parse_config


@pytest.fixture(scope="session")
def case_config():
    return parse_config(case_study_config_path())


@pytest.fixture(scope="session")
def case_problem(case_config):
    return case_config.build_problem()


@pytest.fixture(scope="session")
def case_grid():
    return build_grid(-2.5, 2.5, -2.5, 2.5, 0.05)


@pytest.fixture(scope="session")
def case_density(case_grid):
    return truncated_gaussian_density(case_grid, 1.2, 0.8)


@pytest.fixture(scope="session")
def zero_control_trajectory(case_problem):
    """Full-resolution uncontrolled forward solve, shared across tests."""
    p = case_problem
    return solve_forward(p.initial_density, p.initial_agents,
                         p.zero_control(), p.kernel_set, p.dt, p.T)


@pytest.fixture
def zero_kernels():
    """All strengths zero: every interaction field vanishes identically."""
    return KernelSet(GaussianProfile(0.0, 0.25), GaussianProfile(0.0, 0.1),
                     GaussianProfile(0.0, 0.325), GaussianProfile(0.0, 0.1))


def small_problem(nx=20, dt=0.05, T=0.25, n_agents=2):
    """Coarse, fast instance for optimizer and CLI tests."""
    grid = build_grid(-2.0, 2.0, -2.0, 2.0, 4.0 / nx)
    density = truncated_gaussian_density(grid, 1.2, 0.8)
    agents = AgentState(np.array([[-1.2, 0.0], [1.2, 0.0]])[:n_agents])
    target = TargetMeasure(np.array([[0.0, -1.0], [0.0, 1.0]]))
    return Problem(density, agents, target, default_kernel_set(), dt, T)


@pytest.fixture
def tiny_problem():
    return small_problem()
