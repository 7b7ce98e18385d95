"""Command-line front end: config parsing, subcommands, and serialization.

Four subcommands cover the workflow: ``solve`` runs the descent and writes
the control plus diagnostics, ``forward`` replays a stored control,
``particles`` runs the finite-N validation study, and ``gradcheck``
compares the costate gradient against finite differences.

All numeric CSV output uses 17 significant digits so files round-trip
bit-faithfully through the tool's own readers.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import dataclass, field
from importlib import metadata, resources
from pathlib import Path

import numpy as np
import yaml
from numpy.typing import NDArray

from .errors import ConfigurationError, InstabilityError
from .forward import ControlTrajectory, solve_forward
from .geometry import (AgentState, DensityField, Grid, build_grid,
                       truncated_gaussian_density)
from .kernels import GaussianProfile, KernelSet
from .optimizer import (OptimizerConfig, gradient_check, optimize,
                        pmp_residual)
from .particles import validation_study
from .problem import Problem, evaluate_cost
from .transport import TargetMeasure, bisect_split, terminal_cost_with_plane

FloatArray = NDArray[np.float64]

FMT = "%.17g"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INSTABILITY = 3
EXIT_CHECK_FAILED = 4

GRADCHECK_TOLERANCE = 0.05


@dataclass(frozen=True)
class ParticleStudyConfig:
    N: int = 500
    seeds: tuple[int, ...] = tuple(range(50))


@dataclass(frozen=True)
class ProblemConfig:
    """Everything one run needs, as parsed from a config file."""

    grid: Grid
    kernel_set: KernelSet
    density_std: float
    density_radius: float
    initial_agents: AgentState
    target: TargetMeasure
    T: float
    dt: float
    optimizer: OptimizerConfig
    particles: ParticleStudyConfig
    output_dir: str = "out"
    snapshot_every: int = 25
    mass_threshold: float = 0.0

    def build_problem(self) -> Problem:
        density = truncated_gaussian_density(self.grid, self.density_std,
                                             self.density_radius)
        return Problem(density, self.initial_agents, self.target,
                       self.kernel_set, self.dt, self.T, self.mass_threshold)


def _require_keys(section: dict, allowed: set[str], path: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigurationError(
            f"unknown key(s) {sorted(unknown)} under '{path}'"
        )


def _get(section: dict, key: str, path: str, kind=float):
    if key not in section:
        raise ConfigurationError(f"missing key '{path}.{key}'")
    value = section[key]
    try:
        if kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise TypeError
            return float(value)
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise TypeError
            return int(value)
        if kind is bool:
            if not isinstance(value, bool):
                raise TypeError
            return value
        return kind(value)
    except (TypeError, ValueError):
        raise ConfigurationError(
            f"'{path}.{key}' must be a {kind.__name__}, got {value!r}"
        ) from None


def _point_list(section: dict, key: str, path: str) -> FloatArray:
    raw = section.get(key)
    if not isinstance(raw, list) or not raw:
        raise ConfigurationError(f"'{path}.{key}' must be a nonempty list "
                                 "of [x, y] pairs")
    out = []
    for i, item in enumerate(raw):
        if (not isinstance(item, list) or len(item) != 2 or
                any(isinstance(v, bool) or not isinstance(v, (int, float))
                    for v in item)):
            raise ConfigurationError(
                f"'{path}.{key}[{i}]' must be an [x, y] pair of numbers"
            )
        out.append([float(item[0]), float(item[1])])
    return np.array(out)


def _parse_profile(section, path: str) -> GaussianProfile:
    if not isinstance(section, dict):
        raise ConfigurationError(f"'{path}' must be a mapping with k, sigma")
    _require_keys(section, {"k", "sigma"}, path)
    return GaussianProfile(_get(section, "k", path),
                           _get(section, "sigma", path))


def parse_config_dict(data: dict) -> ProblemConfig:
    if not isinstance(data, dict):
        raise ConfigurationError("config root must be a mapping")
    _require_keys(data, {"grid", "kernels", "initial_density", "agents",
                         "target", "time", "optimizer", "particles",
                         "output"}, "")

    for name in ("grid", "kernels", "initial_density", "agents", "target",
                 "time"):
        if name not in data or not isinstance(data[name], dict):
            raise ConfigurationError(f"missing or non-mapping section "
                                     f"'{name}'")

    g = data["grid"]
    _require_keys(g, {"x_min", "x_max", "y_min", "y_max", "dx"}, "grid")
    grid = build_grid(_get(g, "x_min", "grid"), _get(g, "x_max", "grid"),
                      _get(g, "y_min", "grid"), _get(g, "y_max", "grid"),
                      _get(g, "dx", "grid"))

    k = data["kernels"]
    _require_keys(k, {"attract_mu", "repel_mu", "leader_repel",
                      "leader_attract"}, "kernels")
    kernel_set = KernelSet(
        _parse_profile(k.get("attract_mu"), "kernels.attract_mu"),
        _parse_profile(k.get("repel_mu"), "kernels.repel_mu"),
        _parse_profile(k.get("leader_repel"), "kernels.leader_repel"),
        _parse_profile(k.get("leader_attract"), "kernels.leader_attract"),
    )

    d = data["initial_density"]
    _require_keys(d, {"std", "radius"}, "initial_density")
    std = _get(d, "std", "initial_density")
    radius = _get(d, "radius", "initial_density")

    a = data["agents"]
    _require_keys(a, {"positions"}, "agents")
    agents = AgentState(_point_list(a, "positions", "agents"))

    t = data["target"]
    _require_keys(t, {"atoms"}, "target")
    atoms = _point_list(t, "atoms", "target")
    if atoms.shape != (2, 2):
        raise ConfigurationError("'target.atoms' must list exactly 2 atoms")
    target = TargetMeasure(atoms)

    tm = data["time"]
    _require_keys(tm, {"T", "dt"}, "time")
    T = _get(tm, "T", "time")
    dt = _get(tm, "dt", "time")

    opt_raw = data.get("optimizer", {})
    if not isinstance(opt_raw, dict):
        raise ConfigurationError("'optimizer' must be a mapping")
    allowed_opt = {"step_size", "u_max", "armijo_c", "armijo_beta",
                   "max_backtracks", "max_iters", "cost_tolerance",
                   "normalize_gradient"}
    _require_keys(opt_raw, allowed_opt, "optimizer")
    opt_kwargs = {}
    for key in allowed_opt:
        if key in opt_raw:
            kind = int if key in ("max_backtracks", "max_iters") else \
                bool if key == "normalize_gradient" else float
            opt_kwargs[key] = _get(opt_raw, key, "optimizer", kind)
    optimizer = OptimizerConfig(**opt_kwargs)

    part_raw = data.get("particles", {})
    if not isinstance(part_raw, dict):
        raise ConfigurationError("'particles' must be a mapping")
    _require_keys(part_raw, {"N", "seeds", "n_seeds"}, "particles")
    N = _get(part_raw, "N", "particles", int) if "N" in part_raw else 500
    if "seeds" in part_raw and "n_seeds" in part_raw:
        raise ConfigurationError("give 'particles.seeds' or "
                                 "'particles.n_seeds', not both")
    if "seeds" in part_raw:
        raw_seeds = part_raw["seeds"]
        if (not isinstance(raw_seeds, list) or not raw_seeds or
                any(isinstance(s, bool) or not isinstance(s, int)
                    for s in raw_seeds)):
            raise ConfigurationError("'particles.seeds' must be a nonempty "
                                     "list of integers")
        seeds = tuple(int(s) for s in raw_seeds)
    else:
        n_seeds = _get(part_raw, "n_seeds", "particles", int) \
            if "n_seeds" in part_raw else 50
        if n_seeds < 1:
            raise ConfigurationError("'particles.n_seeds' must be >= 1")
        seeds = tuple(range(n_seeds))
    if N < 1:
        raise ConfigurationError("'particles.N' must be >= 1")
    particles = ParticleStudyConfig(N, seeds)

    out_raw = data.get("output", {})
    if not isinstance(out_raw, dict):
        raise ConfigurationError("'output' must be a mapping")
    _require_keys(out_raw, {"dir", "snapshot_every"}, "output")
    out_dir = out_raw.get("dir", "out")
    if not isinstance(out_dir, str):
        raise ConfigurationError("'output.dir' must be a string")
    snapshot_every = _get(out_raw, "snapshot_every", "output", int) \
        if "snapshot_every" in out_raw else 25
    if snapshot_every < 1:
        raise ConfigurationError("'output.snapshot_every' must be >= 1")

    config = ProblemConfig(grid, kernel_set, std, radius, agents, target,
                           T, dt, optimizer, particles, out_dir,
                           snapshot_every)
    config.build_problem()  # fail fast on cross-field constraints
    return config


def parse_config(path) -> ProblemConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"config file not found: {p}")
    try:
        data = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"config is not valid YAML: {exc}") from exc
    return parse_config_dict(data)


def case_study_config_path() -> Path:
    """Path of the bundled case-study configuration."""
    return Path(str(resources.files("mfcontrol") / "configs"
                    / "case_study.yaml"))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def write_control_csv(path: Path, control: ControlTrajectory) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "agent", "ux", "uy"])
        for n in range(control.n_steps):
            for m in range(control.n_agents):
                w.writerow([n, m, FMT % control.values[n, m, 0],
                            FMT % control.values[n, m, 1]])


def read_control_csv(path, n_steps: int, n_agents: int) -> ControlTrajectory:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"control file not found: {p}")
    values = np.full((n_steps, n_agents, 2), np.nan)
    with open(p, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["step", "agent", "ux", "uy"]:
            raise ConfigurationError(
                f"control file {p} has header {header}, expected "
                "step,agent,ux,uy"
            )
        for i, row in enumerate(reader, start=2):
            try:
                n, m = int(row[0]), int(row[1])
                ux, uy = float(row[2]), float(row[3])
            except (ValueError, IndexError):
                raise ConfigurationError(
                    f"malformed row {i} in {p}: {row!r}"
                ) from None
            if not (0 <= n < n_steps and 0 <= m < n_agents):
                raise ConfigurationError(
                    f"row {i} in {p}: (step={n}, agent={m}) outside the "
                    f"{n_steps} x {n_agents} control grid"
                )
            values[n, m] = (ux, uy)
    if np.isnan(values).any():
        raise ConfigurationError(f"{p} does not cover every (step, agent)")
    return ControlTrajectory(values)


def write_density_snapshot(out_dir: Path, index: int, density: DensityField,
                           t: float) -> None:
    g = density.grid
    # ny rows of nx columns: row j holds the masses along y_centers[j]
    np.savetxt(out_dir / f"density_t{index}.csv", density.mass.T,
               delimiter=",", fmt=FMT)
    meta = {"x_min": g.x_min, "x_max": g.x_max, "y_min": g.y_min,
            "y_max": g.y_max, "dx": g.dx, "time": t}
    (out_dir / f"density_t{index}.json").write_text(
        json.dumps(meta, indent=2) + "\n")


def read_density_snapshot(out_dir: Path, index: int) -> tuple[DensityField,
                                                              float]:
    meta = json.loads((out_dir / f"density_t{index}.json").read_text())
    grid = build_grid(meta["x_min"], meta["x_max"], meta["y_min"],
                      meta["y_max"], meta["dx"])
    mass = np.loadtxt(out_dir / f"density_t{index}.csv", delimiter=",",
                      ndmin=2)
    return DensityField(grid, mass.T), float(meta["time"])


def write_agents_csv(path: Path, agent_states) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "agent", "x", "y"])
        for n, state in enumerate(agent_states):
            for m in range(state.n_agents):
                w.writerow([n, m, FMT % state.y[m, 0], FMT % state.y[m, 1]])


def read_agents_csv(path) -> list[AgentState]:
    rows: dict[int, dict[int, tuple[float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            rows.setdefault(int(row[0]), {})[int(row[1])] = (
                float(row[2]), float(row[3]))
    out = []
    for n in sorted(rows):
        per = rows[n]
        out.append(AgentState(np.array([per[m] for m in sorted(per)])))
    return out


def write_diagnostics_csv(path: Path, history) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "cost", "pmp_residual", "backtracks",
                    "step_used"])
        for rec in history:
            w.writerow([rec.iter, FMT % rec.cost, FMT % rec.pmp_residual,
                        rec.backtracks, FMT % rec.step_used])


def _write_manifest(out_dir: Path, command: str, config_path,
                    wall_time: float, extra: dict) -> None:
    try:
        version = metadata.version("mfcontrol")
    except metadata.PackageNotFoundError:
        version = "unknown"
    manifest = {
        "command": command,
        "config": yaml.safe_load(Path(config_path).read_text()),
        "config_path": str(config_path),
        "versions": {"mfcontrol": version, "numpy": np.__version__,
                     "python": sys.version.split()[0]},
        "wall_time_seconds": wall_time,
    }
    manifest.update(extra)
    (out_dir / "run_manifest.json").write_text(
        json.dumps(manifest, indent=2) + "\n")


def _write_trajectory(out_dir: Path, trajectory,
                      snapshot_every: int) -> None:
    n_steps = trajectory.n_steps
    indices = list(range(0, n_steps + 1, snapshot_every))
    if indices[-1] != n_steps:
        indices.append(n_steps)
    for idx in indices:
        write_density_snapshot(out_dir, idx, trajectory.densities[idx],
                               float(trajectory.times[idx]))
    write_agents_csv(out_dir / "agents.csv", trajectory.agents)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_solve(config: ProblemConfig, config_path, out_dir: Path) -> int:
    start = time.perf_counter()
    problem = config.build_problem()
    result = optimize(problem, config.optimizer,
                      callback=lambda rec: print(
                          f"iter {rec.iter:3d}  cost {rec.cost:.6f}  "
                          f"pmp {rec.pmp_residual:.4f}  "
                          f"backtracks {rec.backtracks}"))
    write_control_csv(out_dir / "control.csv", result.control)
    write_diagnostics_csv(out_dir / "diagnostics.csv", result.history)
    _write_trajectory(out_dir, result.evaluation.trajectory,
                      config.snapshot_every)
    _write_manifest(out_dir, "solve", config_path,
                    time.perf_counter() - start,
                    {"final_cost": result.cost,
                     "iterations": len(result.history),
                     "max_courant": result.evaluation.trajectory.courant_max})
    print(f"final cost {result.cost:.6f} after {len(result.history)} "
          f"iteration(s); outputs in {out_dir}")
    return EXIT_OK


def cmd_forward(config: ProblemConfig, config_path, control_path,
                out_dir: Path) -> int:
    start = time.perf_counter()
    problem = config.build_problem()
    if control_path is None:
        control = problem.zero_control()
    else:
        control = read_control_csv(control_path, problem.n_steps,
                                   problem.n_agents)
    control.check_bound(config.optimizer.u_max)
    evaluation = evaluate_cost(problem, control)
    _write_trajectory(out_dir, evaluation.trajectory, config.snapshot_every)
    summary = {"terminal_cost": evaluation.cost,
               "terminal_cost_density": evaluation.density_cost,
               "max_courant": evaluation.trajectory.courant_max}
    (out_dir / "forward_summary.json").write_text(
        json.dumps(summary, indent=2) + "\n")
    _write_manifest(out_dir, "forward", config_path,
                    time.perf_counter() - start, summary)
    print(f"terminal cost {evaluation.cost:.6f}, max Courant "
          f"{evaluation.trajectory.courant_max:.4f}")
    return EXIT_OK


def cmd_particles(config: ProblemConfig, config_path, control_path,
                  out_dir: Path, seed_override: int | None) -> int:
    start = time.perf_counter()
    problem = config.build_problem()
    if control_path is None:
        control = problem.zero_control()
    else:
        control = read_control_csv(control_path, problem.n_steps,
                                   problem.n_agents)
    control.check_bound(config.optimizer.u_max)
    seeds = (seed_override,) if seed_override is not None \
        else config.particles.seeds

    from .particles import (particle_terminal_cost, sample_initial,
                            simulate_particles)
    costs = []
    for seed in seeds:
        ens = sample_initial(config.density_std, config.density_radius,
                             config.particles.N, seed)
        final, _ = simulate_particles(ens, config.initial_agents, control,
                                      config.kernel_set, config.dt)
        costs.append(particle_terminal_cost(final, config.target))
        np.savetxt(out_dir / f"particles_seed{seed}.csv", final.positions,
                   delimiter=",", fmt=FMT, header="x,y", comments="")

    with open(out_dir / "particles_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "cost"])
        for seed, cost in zip(seeds, costs):
            w.writerow([seed, FMT % cost])
    arr = np.array(costs)
    summary = {"mean": float(arr.mean()), "std": float(arr.std()),
               "N": config.particles.N, "n_seeds": len(seeds)}
    (out_dir / "particles_summary.json").write_text(
        json.dumps(summary, indent=2) + "\n")
    _write_manifest(out_dir, "particles", config_path,
                    time.perf_counter() - start, summary)
    print(f"mean cost {summary['mean']:.6f} (std {summary['std']:.6f}) "
          f"over {len(seeds)} seed(s), N={config.particles.N}")
    return EXIT_OK


def cmd_gradcheck(config: ProblemConfig, config_path,
                  out_dir: Path) -> int:
    start = time.perf_counter()
    problem = config.build_problem()
    rng = np.random.default_rng(0)
    shape = (problem.n_steps, problem.n_agents, 2)
    # interior base point and bounded direction so the projection is inactive
    control = ControlTrajectory(
        0.2 * config.optimizer.u_max * rng.standard_normal(shape)
        / max(1.0, np.sqrt(2.0)))
    direction = rng.standard_normal(shape)
    direction /= np.abs(direction).max()
    epsilons = (1e-3, 1e-4, 1e-5)
    records = gradient_check(problem, control, direction, epsilons)
    print(f"{'epsilon':>10}  {'finite diff':>22}  {'costate':>22}  "
          f"{'rel error':>10}")
    for rec in records:
        print(f"{rec.epsilon:>10.1e}  {rec.finite_difference:>22.15e}  "
              f"{rec.adjoint_value:>22.15e}  {rec.relative_error:>10.2e}")
    best = min(rec.relative_error for rec in records)
    passed = best < GRADCHECK_TOLERANCE
    _write_manifest(out_dir, "gradcheck", config_path,
                    time.perf_counter() - start,
                    {"best_relative_error": best, "passed": passed})
    print(f"gradient check {'passed' if passed else 'FAILED'} "
          f"(best relative error {best:.2e}, tolerance "
          f"{GRADCHECK_TOLERANCE})")
    return EXIT_OK if passed else EXIT_CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfcontrol",
        description="Sparse control of a population density toward a "
                    "two-atom target",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("solve", "run the projected gradient descent"),
            ("forward", "forward solve under a stored control"),
            ("particles", "finite-N validation study"),
            ("gradcheck", "costate gradient vs finite differences")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="YAML config path")
        p.add_argument("--out", default=None,
                       help="output directory (default: from config)")
        p.add_argument("--snapshot-every", type=int, default=None,
                       help="write every K-th density snapshot")
        if name in ("forward", "particles"):
            p.add_argument("--control", default=None,
                           help="control.csv to replay (default: zero)")
        if name == "particles":
            p.add_argument("--seed-override", type=int, default=None,
                           help="run this single seed only")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = parse_config(args.config)
        if args.snapshot_every is not None:
            if args.snapshot_every < 1:
                raise ConfigurationError("--snapshot-every must be >= 1")
            config = ProblemConfig(
                config.grid, config.kernel_set, config.density_std,
                config.density_radius, config.initial_agents, config.target,
                config.T, config.dt, config.optimizer, config.particles,
                config.output_dir, args.snapshot_every,
                config.mass_threshold)
        out_dir = Path(args.out if args.out is not None else
                       config.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "solve":
            return cmd_solve(config, args.config, out_dir)
        if args.command == "forward":
            return cmd_forward(config, args.config, args.control, out_dir)
        if args.command == "particles":
            return cmd_particles(config, args.config, args.control, out_dir,
                                 args.seed_override)
        return cmd_gradcheck(config, args.config, out_dir)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InstabilityError as exc:
        print(f"numerical instability: {exc}", file=sys.stderr)
        return EXIT_INSTABILITY


if __name__ == "__main__":
    sys.exit(main())
