"""Forward solve of the coupled transport / agent system.

One explicit Euler step advances three views of the same dynamics from the
fields evaluated at the current time (Jacobi-style simultaneous update):

* cell masses via a conservative finite-volume update with a local
  Lax-Friedrichs face flux,
* tracer-node positions along the characteristics of the same field,
* agent positions under their mutual attraction plus the control.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .errors import ConfigurationError, InstabilityError
from .geometry import (AgentState, DensityField, LagrangianCloud,
                       extract_cloud)
from .kernels import (KernelSet, _moment_sum_lattice, agent_repulsion,
                      field_F, field_G)

FloatArray = NDArray[np.float64]

BOUNDARY_MASS_MONITOR = 1e-8


@dataclass(frozen=True)
class ControlTrajectory:
    """Piecewise-constant per-agent controls on the step grid."""

    values: FloatArray  # (n_steps, M, 2)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3 or v.shape[2] != 2:
            raise ValueError("control values must have shape (n_steps, M, 2)")
        if not np.isfinite(v).all():
            raise ValueError("non-finite control value")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_agents(self) -> int:
        return self.values.shape[1]

    @staticmethod
    def zeros(n_steps: int, n_agents: int) -> "ControlTrajectory":
        return ControlTrajectory(np.zeros((n_steps, n_agents, 2)))

    def max_agent_norm(self) -> float:
        return float(np.linalg.norm(self.values, axis=2).max(initial=0.0))

    def check_bound(self, u_max: float) -> None:
        worst = self.max_agent_norm()
        if worst > u_max + 1e-12:
            raise ConfigurationError(
                f"control norm {worst:.6g} exceeds the bound {u_max}"
            )


@dataclass(frozen=True)
class ForwardTrajectory:
    """Per-step states of a forward solve on the uniform time grid."""

    times: FloatArray                  # (n_steps + 1,)
    densities: tuple[DensityField, ...]
    clouds: tuple[LagrangianCloud, ...]
    agents: tuple[AgentState, ...]
    courants: FloatArray               # (n_steps,), pre-step Courant numbers

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.n_steps else 0.0

    @property
    def courant_max(self) -> float:
        return float(self.courants.max(initial=0.0))

    @property
    def terminal_density(self) -> DensityField:
        return self.densities[-1]

    @property
    def terminal_cloud(self) -> LagrangianCloud:
        return self.clouds[-1]


def _lattice_velocities(density: DensityField, xs: FloatArray, ys: FloatArray,
                        agents: AgentState | None,
                        kernel_set: KernelSet) -> tuple[FloatArray,
                                                        FloatArray]:
    """Both components of the transport field on a tensor-product lattice."""
    ks = kernel_set
    ax, ay = _moment_sum_lattice(density.grid, density.mass, xs, ys,
                                 ks.attract_mu.sigma)
    rx, ry = _moment_sum_lattice(density.grid, density.mass, xs, ys,
                                 ks.repel_mu.sigma)
    vx = ks.attract_mu.k * ax - ks.repel_mu.k * rx
    vy = ks.attract_mu.k * ay - ks.repel_mu.k * ry
    if agents is not None:
        kf, sf = ks.leader_repel.k, ks.leader_repel.sigma
        for m in range(agents.n_agents):
            zx = agents.y[m, 0] - xs[:, None]
            zy = agents.y[m, 1] - ys[None, :]
            e = np.exp((zx * zx + zy * zy) * (-0.5 / (sf * sf)))
            vx += (-kf / agents.n_agents) * e * zx
            vy += (-kf / agents.n_agents) * e * zy
    return vx, vy


def _llf_update(mass: FloatArray, vx_face: FloatArray, vy_face: FloatArray,
                dx: float, dt: float) -> FloatArray:
    """Conservative update from face velocities.

    Interior faces carry the local Lax-Friedrichs flux (which reduces to
    upwinding for a single face velocity); domain-boundary faces admit
    upwind outflow and zero inflow.
    """
    rho = mass / (dx * dx)
    fx = np.empty_like(vx_face)
    v = vx_face[1:-1, :]
    fx[1:-1, :] = (0.5 * v * (rho[:-1, :] + rho[1:, :])
                   - 0.5 * np.abs(v) * (rho[1:, :] - rho[:-1, :]))
    fx[0, :] = np.minimum(vx_face[0, :], 0.0) * rho[0, :]
    fx[-1, :] = np.maximum(vx_face[-1, :], 0.0) * rho[-1, :]

    fy = np.empty_like(vy_face)
    v = vy_face[:, 1:-1]
    fy[:, 1:-1] = (0.5 * v * (rho[:, :-1] + rho[:, 1:])
                   - 0.5 * np.abs(v) * (rho[:, 1:] - rho[:, :-1]))
    fy[:, 0] = np.minimum(vy_face[:, 0], 0.0) * rho[:, 0]
    fy[:, -1] = np.maximum(vy_face[:, -1], 0.0) * rho[:, -1]

    new = mass - dt * dx * (np.diff(fx, axis=0) + np.diff(fy, axis=1))
    # The monotone update is nonnegative in exact arithmetic; clear the
    # roundoff-scale negatives it can leave behind.
    np.maximum(new, 0.0, out=new)
    return new


def fv_step(density: DensityField, agents: AgentState | None,
            kernel_set: KernelSet, dt: float,
            step: int | None = None) -> tuple[DensityField, float]:
    """One finite-volume transport step; returns the new field and the
    step's Courant number (dt/dx times the largest |vx| + |vy| at cell
    centers)."""
    if dt <= 0:
        raise ConfigurationError("dt must be positive")
    g = density.grid
    vxf, _ = _lattice_velocities(density, g.x_faces, g.y_centers, agents,
                                 kernel_set)
    _, vyf = _lattice_velocities(density, g.x_centers, g.y_faces, agents,
                                 kernel_set)
    ccx, ccy = _lattice_velocities(density, g.x_centers, g.y_centers, agents,
                                   kernel_set)
    courant = float(dt / g.dx * (np.abs(ccx) + np.abs(ccy)).max())
    if courant > 1.0:
        raise InstabilityError(-1 if step is None else step, courant)
    new_mass = _llf_update(density.mass, vxf, vyf, g.dx, dt)
    return DensityField(g, new_mass), courant


def advect_cloud(cloud: LagrangianCloud, density: DensityField,
                 agents: AgentState | None, kernel_set: KernelSet,
                 dt: float) -> LagrangianCloud:
    """Move every tracer node by one Euler step of the transport field."""
    vel = field_F(density, cloud.positions, agents, kernel_set)
    return cloud.moved_to(cloud.positions + dt * vel)


def step_agents(agents: AgentState, density: DensityField,
                control_value: FloatArray, kernel_set: KernelSet,
                dt: float) -> AgentState:
    """One Euler step of the agent dynamics.

    The agent drift depends only on the agent positions in this model;
    the density argument is part of the interface for generality.
    """
    u = np.asarray(control_value, dtype=np.float64)
    if u.shape != agents.y.shape:
        raise ValueError("control value shape does not match agent count")
    return AgentState(agents.y + dt * (field_G(agents, kernel_set) + u))


def n_steps_for(T: float, dt: float) -> int:
    if dt <= 0 or T < 0:
        raise ConfigurationError("need dt > 0 and T >= 0")
    n = round(T / dt)
    if abs(n * dt - T) > 1e-9 * max(T, 1.0):
        raise ConfigurationError(f"T={T} is not an integer multiple of dt={dt}")
    return int(n)


def solve_forward(initial_density: DensityField, initial_agents: AgentState,
                  control: ControlTrajectory, kernel_set: KernelSet,
                  dt: float, T: float,
                  mass_threshold: float = 0.0) -> ForwardTrajectory:
    """Solve the coupled system on [0, T], storing every step.

    Per step, all fields are evaluated with the time-t state and the
    density, tracer cloud, and agents are then updated simultaneously.
    """
    n_steps = n_steps_for(T, dt)
    if control.n_steps != n_steps:
        raise ConfigurationError(
            f"control has {control.n_steps} steps, expected {n_steps}"
        )
    g = initial_density.grid
    densities = [initial_density]
    clouds = [extract_cloud(initial_density, mass_threshold)]
    agents = [initial_agents]
    courants = np.zeros(n_steps)
    boundary_warned = False

    for n in range(n_steps):
        density, cloud, ag = densities[-1], clouds[-1], agents[-1]
        new_density, courants[n] = fv_step(density, ag, kernel_set, dt, step=n)
        new_cloud = advect_cloud(cloud, density, ag, kernel_set, dt)
        new_agents = step_agents(ag, density, control.values[n], kernel_set, dt)
        if not boundary_warned:
            m = new_density.mass
            edge = m[0, :].sum() + m[-1, :].sum() + m[:, 0].sum() + m[:, -1].sum()
            if edge > BOUNDARY_MASS_MONITOR:
                warnings.warn(
                    f"boundary-adjacent mass {edge:.3g} exceeds "
                    f"{BOUNDARY_MASS_MONITOR:g} at step {n}; the compact-"
                    "support assumption is degrading", RuntimeWarning)
                boundary_warned = True
        densities.append(new_density)
        clouds.append(new_cloud)
        agents.append(new_agents)

    times = np.arange(n_steps + 1) * dt
    return ForwardTrajectory(times, tuple(densities), tuple(clouds),
                             tuple(agents), courants)
