"""Sparse control of a non-local population model toward a two-atom target.

The toolkit couples a conservative finite-volume transport solver for the
population density with controlled agent dynamics, computes terminal
transport costs to a two-atom target, differentiates the cost through a
backward costate sweep, and runs a projected gradient descent on the
per-agent controls.  A finite-N particle simulator validates the resulting
mean-field controls on sampled populations.
"""

from .errors import ConfigurationError, InstabilityError
from .geometry import (AgentState, DensityField, Grid, LagrangianCloud,
                       build_grid, extract_cloud, support_radius,
                       truncated_gaussian_density)
from .kernels import (GaussianProfile, KernelSet, convolve_K,
                      default_kernel_set, field_F, field_G, jacobian_K,
                      jacobian_f, jacobian_g, kernel_K, kernel_f, kernel_g)
from .forward import (ControlTrajectory, ForwardTrajectory, advect_cloud,
                      fv_step, n_steps_for, solve_forward, step_agents)
from .transport import (DiscreteMeasure, SplitPlane, TargetMeasure,
                        assign_particles_two_atoms, assign_side,
                        assign_sides, bisect_split, brute_force_transport,
                        particle_assignment_cost, terminal_cost,
                        terminal_cost_cloud, terminal_cost_with_plane)
from .adjoint import (AdjointState, AdjointTrajectory, adjoint_rhs,
                      gradient_of_cost, solve_adjoint, terminal_adjoint)
from .problem import (CostEvaluation, Problem, compute_gradient,
                      control_from_array, evaluate_cost)
from .optimizer import (GradientCheckRecord, IterationRecord,
                        OptimizationResult, OptimizerConfig, armijo_step,
                        gradient_check, normalize_gradient_agentwise,
                        optimize, pmp_residual, project_control)
from .particles import (ParticleEnsemble, ValidationStats,
                        particle_terminal_cost, sample_initial,
                        simulate_particles, validation_study)

__all__ = [name for name in dir() if not name.startswith("_")]

__version__ = "0.1.0"
