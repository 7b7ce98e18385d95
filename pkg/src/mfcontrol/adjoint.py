"""Backward costate solve; the agent costate is the cost gradient.

The costate has one vector per tracer node (transported mass) and one per
controlled agent.  All measure integrals reuse the tracer quadrature: the
time-t measure is the pushforward of the initial one through the flow, so
integrals against either measure are weighted sums over the same node set.
The node-node coupling is evaluated exactly, in O(nodes^2) per step.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .forward import ForwardTrajectory
from .geometry import AgentState, LagrangianCloud
from .kernels import KernelSet, jacobian_f, jacobian_g
from .transport import SplitPlane, TargetMeasure, assign_sides

FloatArray = NDArray[np.float64]

_CHUNK_ROWS = 1024  # bounds the (rows, nodes) work arrays of the pair sum


@dataclass(frozen=True)
class AdjointState:
    """Costate vectors: p per tracer node, q per agent."""

    p: FloatArray  # (n_nodes, 2)
    q: FloatArray  # (M, 2)

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.p, dtype=np.float64))
        q = np.atleast_2d(np.asarray(self.q, dtype=np.float64))
        if p.ndim != 2 or p.shape[1] != 2 or q.ndim != 2 or q.shape[1] != 2:
            raise ValueError("p and q must have shape (n, 2)")
        if not (np.isfinite(p).all() and np.isfinite(q).all()):
            raise ValueError("non-finite costate entry")
        p.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)


@dataclass(frozen=True)
class ForwardSnapshot:
    """The forward data the costate right-hand side needs at one time."""

    cloud: LagrangianCloud
    agents: AgentState


@dataclass(frozen=True)
class AdjointTrajectory:
    """Costates on the forward time grid (terminal q is zero)."""

    times: FloatArray
    states: tuple[AdjointState, ...]

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])


def terminal_adjoint(cloud_at_T: LagrangianCloud, split_plane: SplitPlane,
                     target: TargetMeasure, n_agents: int) -> AdjointState:
    """Terminal condition: per node, position minus its assigned atom
    (the transport-map displacement); agent costates start at zero."""
    pos = cloud_at_T.positions
    side = assign_sides(pos, split_plane)
    z = np.where(side[:, None] == 1, target.atoms[0], target.atoms[1])
    return AdjointState(pos - z, np.zeros((n_agents, 2)))


def _pair_sums(positions: FloatArray, weights: FloatArray, p: FloatArray,
               kernel_set: KernelSet) -> tuple[FloatArray, FloatArray]:
    """Node-node coupling terms of the costate system.

    Writing the population-kernel Jacobian as phi(d) I + psi(d) z z^T,
    returns, per node i over z_ij = x_j - x_i:
      diag_i = [sum_j w_j DK(z_ij)] p_i   and
      mix_i  =  sum_j w_j DK(z_ij) p_j.
    """
    ka, sa = kernel_set.attract_mu.k, kernel_set.attract_mu.sigma
    kr, sr = kernel_set.repel_mu.k, kernel_set.repel_mu.sigma
    n = len(weights)
    px, py = p[:, 0], p[:, 1]
    wpx, wpy = weights * px, weights * py
    diag = np.empty((n, 2))
    mix = np.empty((n, 2))
    for start in range(0, n, _CHUNK_ROWS):
        rows = slice(start, min(start + _CHUNK_ROWS, n))
        zx = positions[None, :, 0] - positions[rows, 0][:, None]
        zy = positions[None, :, 1] - positions[rows, 1][:, None]
        d2 = zx * zx + zy * zy
        ea = np.exp(d2 * (-0.5 / (sa * sa)))
        er = np.exp(d2 * (-0.5 / (sr * sr)))
        phi = ka * ea - kr * er
        psi = kr / (sr * sr) * er - ka / (sa * sa) * ea
        a11 = (phi + psi * zx * zx) @ weights
        a12 = (psi * zx * zy) @ weights
        a22 = (phi + psi * zy * zy) @ weights
        diag[rows, 0] = a11 * px[rows] + a12 * py[rows]
        diag[rows, 1] = a12 * px[rows] + a22 * py[rows]
        t = zx * px[None, :] + zy * py[None, :]
        mix[rows, 0] = phi @ wpx + (psi * t * zx) @ weights
        mix[rows, 1] = phi @ wpy + (psi * t * zy) @ weights
    return diag, mix


def adjoint_rhs(state: AdjointState, snapshot: ForwardSnapshot,
                kernel_set: KernelSet) -> tuple[FloatArray, FloatArray]:
    """Backward-time right-hand sides (-dp/dt, -dq/dt) at one snapshot."""
    cloud, agents = snapshot.cloud, snapshot.agents
    pos, w = cloud.positions, cloud.weights
    p, q = state.p, state.q
    y = agents.y
    n_agents = agents.n_agents

    diag, mix = _pair_sums(pos, w, p, kernel_set)

    # agent-on-node repulsion Jacobians, z = y_m - x_i
    z_agent = y[None, :, :] - pos[:, None, :]              # (n, M, 2)
    df = jacobian_f(z_agent, kernel_set)                   # (n, M, 2, 2)
    df_sum = df.sum(axis=1) / n_agents                     # (n, 2, 2)
    dp = -diag - np.einsum("nab,nb->na", df_sum, p) + mix

    dq = np.einsum("nmab,na,n->mb", df, p, w) / n_agents
    z_pairs = y[None, :, :] - y[:, None, :]                # (M, M, 2), [m, j]
    dg = jacobian_g(z_pairs, kernel_set)                   # (M, M, 2, 2)
    dq += np.einsum("mjab,mjb->ma", dg,
                    q[None, :, :] - q[:, None, :]) / n_agents
    return dp, dq


def solve_adjoint(forward_trajectory: ForwardTrajectory,
                  terminal_state: AdjointState,
                  kernel_set: KernelSet) -> AdjointTrajectory:
    """Explicit backward sweep with the forward step size.

    Each step evaluates the right-hand side at the later time point:
    state(t - dt) = state(t) + dt * rhs(t).
    """
    clouds = forward_trajectory.clouds
    if terminal_state.p.shape[0] != clouds[-1].n_nodes:
        raise ValueError("terminal costate node count does not match the "
                         "forward cloud")
    dt = forward_trajectory.dt
    n_steps = forward_trajectory.n_steps
    states: list[AdjointState] = [terminal_state]
    for n in range(n_steps, 0, -1):
        snap = ForwardSnapshot(clouds[n], forward_trajectory.agents[n])
        dp, dq = adjoint_rhs(states[-1], snap, kernel_set)
        states.append(AdjointState(states[-1].p + dt * dp,
                                   states[-1].q + dt * dq))
    states.reverse()
    return AdjointTrajectory(forward_trajectory.times, tuple(states))


def gradient_of_cost(adjoint_trajectory: AdjointTrajectory) -> FloatArray:
    """Cost gradient w.r.t. the control, on the control grid.

    The value on control step n is the agent costate at time t_n; shape
    (n_steps, M, 2), matching the control layout.
    """
    return np.stack([s.q for s in adjoint_trajectory.states[:-1]], axis=0)
