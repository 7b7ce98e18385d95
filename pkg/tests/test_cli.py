import json

import numpy as np
import pytest
import yaml

from mfcontrol import ControlTrajectory
from mfcontrol.cli import (EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_INSTABILITY,
                           EXIT_OK,
                           case_study_config_path, main, parse_config,
                           read_agents_csv, read_control_csv,
                           read_density_snapshot, write_control_csv)


def tiny_config_dict(**overrides):
    data = {
        "grid": {"x_min": -2.0, "x_max": 2.0, "y_min": -2.0, "y_max": 2.0,
                 "dx": 0.2},
        "kernels": {
            "attract_mu": {"k": 3.0, "sigma": 0.25},
            "repel_mu": {"k": 30.0, "sigma": 0.1},
            "leader_repel": {"k": 22.0, "sigma": 0.325},
            "leader_attract": {"k": 30.0, "sigma": 0.1},
        },
        "initial_density": {"std": 1.2, "radius": 0.8},
        "agents": {"positions": [[-1.0, 0.0], [1.0, 0.0]]},
        "target": {"atoms": [[0.0, -1.0], [0.0, 1.0]]},
        "time": {"T": 0.25, "dt": 0.05},
        "optimizer": {"max_iters": 2},
        "particles": {"N": 8, "seeds": [3]},
        "output": {"snapshot_every": 2},
    }
    data.update(overrides)
    return data


@pytest.fixture
def tiny_config_path(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(tiny_config_dict()))
    return path


class TestParseConfig:
    def test_bundled_case_study(self):
        cfg = parse_config(case_study_config_path())
        assert cfg.T == 1.5 and cfg.dt == 0.005
        assert cfg.grid.dx == 0.05
        assert cfg.initial_agents.n_agents == 6
        assert cfg.optimizer.u_max == 1.0
        assert cfg.optimizer.step_size == 0.1
        assert cfg.build_problem().n_steps == 300

    def test_non_divisor_dt_accepted(self, tmp_path):
        d = tiny_config_dict()
        d["time"] = {"T": 1.5, "dt": 0.004}
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump(d))
        assert parse_config(p).build_problem().n_steps == 375

    def test_inverted_kernel_ranges_rejected(self, tmp_path):
        d = tiny_config_dict()
        d["kernels"]["repel_mu"]["sigma"] = 0.5
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump(d))
        rc = main(["solve", "--config", str(p)])
        assert rc == EXIT_CONFIG

    def test_unknown_key_rejected_with_path(self, tmp_path):
        d = tiny_config_dict()
        d["grid"]["dy"] = 0.1
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump(d))
        with pytest.raises(Exception, match="grid"):
            parse_config(p)

    def test_missing_file(self, tmp_path):
        rc = main(["solve", "--config", str(tmp_path / "nope.yaml")])
        assert rc == EXIT_CONFIG

    def test_type_errors_name_the_key(self, tmp_path):
        d = tiny_config_dict()
        d["time"]["dt"] = "soon"
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump(d))
        with pytest.raises(Exception, match="time.dt"):
            parse_config(p)


class TestSolveCommand:
    def test_zero_iterations_writes_initial_control(self, tmp_path):
        d = tiny_config_dict()
        d["optimizer"] = {"max_iters": 0}
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump(d))
        out = tmp_path / "out"
        assert main(["solve", "--config", str(p),
                     "--out", str(out)]) == EXIT_OK
        control = read_control_csv(out / "control.csv", 5, 2)
        np.testing.assert_array_equal(control.values, 0.0)
        assert (out / "diagnostics.csv").read_text().splitlines()[0] == \
            "iter,cost,pmp_residual,backtracks,step_used"

    def test_solve_outputs_and_monotone_cost(self, tiny_config_path,
                                             tmp_path):
        out = tmp_path / "run"
        assert main(["solve", "--config", str(tiny_config_path),
                     "--out", str(out)]) == EXIT_OK
        lines = (out / "diagnostics.csv").read_text().splitlines()
        costs = [float(line.split(",")[1]) for line in lines[1:]]
        assert len(costs) <= 2
        assert all(costs[i + 1] <= costs[i] + 1e-15
                   for i in range(len(costs) - 1))
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["command"] == "solve"
        assert "numpy" in manifest["versions"]
        # snapshots exist at first and last step
        assert (out / "density_t0.csv").exists()
        assert (out / "density_t5.json").exists()

    def test_rerun_is_byte_identical(self, tiny_config_path, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        for out in (out1, out2):
            assert main(["solve", "--config", str(tiny_config_path),
                         "--out", str(out)]) == EXIT_OK
        for name in ("control.csv", "diagnostics.csv", "agents.csv",
                     "density_t0.csv", "density_t5.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


class TestForwardCommand:
    def test_zero_control_default(self, tiny_config_path, tmp_path):
        out = tmp_path / "fwd"
        assert main(["forward", "--config", str(tiny_config_path),
                     "--out", str(out)]) == EXIT_OK
        summary = json.loads((out / "forward_summary.json").read_text())
        assert summary["terminal_cost"] > 0.0
        assert 0.0 <= summary["max_courant"] <= 1.0

    def test_control_roundtrip(self, tiny_config_path, tmp_path):
        rng = np.random.default_rng(0)
        control = ControlTrajectory(0.3 * rng.standard_normal((5, 2, 2)))
        path = tmp_path / "control.csv"
        write_control_csv(path, control)
        back = read_control_csv(path, 5, 2)
        np.testing.assert_array_equal(back.values, control.values)
        out = tmp_path / "fwd"
        assert main(["forward", "--config", str(tiny_config_path),
                     "--control", str(path), "--out", str(out)]) == EXIT_OK

    def test_control_exceeding_bound_rejected(self, tiny_config_path,
                                              tmp_path):
        control = ControlTrajectory(np.full((5, 2, 2), 2.0))
        path = tmp_path / "control.csv"
        write_control_csv(path, control)
        rc = main(["forward", "--config", str(tiny_config_path),
                   "--control", str(path), "--out", str(tmp_path / "x")])
        assert rc == EXIT_CONFIG

    def test_unstable_step_size_exit_code(self, tmp_path):
        d = tiny_config_dict()
        d["time"] = {"T": 1.0, "dt": 0.5}   # dt/dx = 2.5, Courant blows up
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump(d))
        rc = main(["forward", "--config", str(p),
                   "--out", str(tmp_path / "x")])
        assert rc == EXIT_INSTABILITY

    def test_malformed_control_rejected(self, tiny_config_path, tmp_path):
        path = tmp_path / "control.csv"
        path.write_text("step,agent,ux,uy\n0,0,0.1\n")
        rc = main(["forward", "--config", str(tiny_config_path),
                   "--control", str(path), "--out", str(tmp_path / "x")])
        assert rc == EXIT_CONFIG


class TestParticlesCommand:
    def test_single_seed_summary(self, tiny_config_path, tmp_path):
        out = tmp_path / "pt"
        assert main(["particles", "--config", str(tiny_config_path),
                     "--out", str(out)]) == EXIT_OK
        lines = (out / "particles_summary.csv").read_text().splitlines()
        assert lines[0] == "seed,cost"
        assert len(lines) == 2
        summary = json.loads((out / "particles_summary.json").read_text())
        assert summary["N"] == 8 and summary["n_seeds"] == 1
        assert (out / "particles_seed3.csv").exists()

    def test_seed_override(self, tiny_config_path, tmp_path):
        out = tmp_path / "pt"
        assert main(["particles", "--config", str(tiny_config_path),
                     "--seed-override", "11", "--out", str(out)]) == EXIT_OK
        lines = (out / "particles_summary.csv").read_text().splitlines()
        assert lines[1].startswith("11,")


class TestGradcheckCommand:
    def test_runs_and_reports(self, tmp_path, capsys):
        # finer dt so the discrete-gradient gap is inside the tolerance
        d = tiny_config_dict()
        d["grid"]["dx"] = 0.1
        d["time"] = {"T": 0.25, "dt": 0.00625}
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump(d))
        rc = main(["gradcheck", "--config", str(p),
                   "--out", str(tmp_path / "gc")])
        captured = capsys.readouterr()
        assert "rel error" in captured.out
        assert rc == EXIT_OK

    def test_too_coarse_resolution_fails(self, tmp_path):
        # two giant steps: the discrete gradient gap dwarfs the tolerance
        d = tiny_config_dict()
        d["grid"]["dx"] = 0.5
        d["time"] = {"T": 0.25, "dt": 0.125}
        p = tmp_path / "c.yaml"
        p.write_text(yaml.safe_dump(d))
        rc = main(["gradcheck", "--config", str(p),
                   "--out", str(tmp_path / "gc")])
        assert rc == EXIT_CHECK_FAILED


class TestRoundTrips:
    def test_density_snapshot_roundtrip(self, tiny_config_path, tmp_path):
        out = tmp_path / "fwd"
        main(["forward", "--config", str(tiny_config_path),
              "--out", str(out)])
        density, t = read_density_snapshot(out, 0)
        assert t == 0.0
        assert abs(density.mass.sum() - 1.0) <= 1e-12

    def test_agents_roundtrip(self, tiny_config_path, tmp_path):
        out = tmp_path / "fwd"
        main(["forward", "--config", str(tiny_config_path),
              "--out", str(out)])
        states = read_agents_csv(out / "agents.csv")
        assert len(states) == 6   # 5 steps + initial
        assert states[0].n_agents == 2
        np.testing.assert_allclose(states[0].y, [[-1.0, 0.0], [1.0, 0.0]])
