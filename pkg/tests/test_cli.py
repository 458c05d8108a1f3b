import csv
import json
import subprocess
import sys

import numpy as np
import pytest

import geomcmc
from geomcmc import MetricField, SamplerConfig, TargetDensity
from geomcmc import cli
from geomcmc.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from geomcmc.samplers import Hamiltonian


def write_config(tmp_path, cfg, name="config.json"):
    cfg = {"output_dir": str(tmp_path / "out"), **cfg}
    path = tmp_path / name
    path.write_text(json.dumps(cfg), encoding="utf-8")
    return path


def read_csv(path):
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    comments = [line for line in lines if line.startswith("#")]
    body = [line for line in lines if not line.startswith("#")]
    rows = list(csv.reader(body))
    return comments, rows[0], [[float(x) for x in row] for row in rows[1:]]


MINIMAL = {
    "model": {"name": "gaussian", "dim": 2},
    "sampler": {"name": "hmc", "step_size": 0.3, "n_steps": 5, "n_samples": 100, "seed": 1},
}

FUNNEL_EQUIVALENT = {
    "model": {"name": "funnel-centered", "n_individuals": 1},
    "metric": {"kind": "equivalent", "reparam": "noncentering"},
    "sampler": {"name": "hmc", "step_size": 0.1, "n_steps": 16, "n_samples": 10, "seed": 0},
    "outputs": ["deviation_grid"],
}


class TestRun:
    def test_minimal_config(self, tmp_path, capsys):
        assert main(["run", str(write_config(tmp_path, MINIMAL))]) == EXIT_OK
        comments, header, rows = read_csv(tmp_path / "out" / "chain_0.csv")
        assert len(rows) == 100
        assert header == ["iteration", "q_1", "q_2", "accepted", "energy_error", "divergent"]
        report = json.loads(capsys.readouterr().out)
        assert report["chains"][0]["accept_rate"] > 0.5
        assert (tmp_path / "out" / "summary.json").exists()

    def test_typo_in_sampler_name(self, tmp_path, capsys):
        cfg = {**MINIMAL, "sampler": {**MINIMAL["sampler"], "name": "hcm"}}
        assert main(["run", str(write_config(tmp_path, cfg))]) == EXIT_CONFIG
        assert "sampler.name" in capsys.readouterr().err

    def test_unknown_key(self, tmp_path, capsys):
        cfg = {**MINIMAL, "sampler": {**MINIMAL["sampler"], "stepsize": 0.1}}
        assert main(["run", str(write_config(tmp_path, cfg))]) == EXIT_CONFIG
        err = capsys.readouterr().err
        assert "stepsize" in err and "sampler" in err

    def test_missing_file(self, tmp_path, capsys):
        assert main(["run", str(tmp_path / "nope.json")]) == EXIT_CONFIG
        assert "cannot read config" in capsys.readouterr().err

    def test_conflicting_parameterization(self, tmp_path):
        cfg = {**MINIMAL, "model": {"name": "funnel-centered"}, "parameterization": "non_centered"}
        assert main(["run", str(write_config(tmp_path, cfg))]) == EXIT_CONFIG

    def test_equivalent_metric_requires_centered_funnel(self, tmp_path):
        cfg = {**MINIMAL, "metric": {"kind": "equivalent"}}
        assert main(["run", str(write_config(tmp_path, cfg))]) == EXIT_CONFIG

    def test_position_length_checked(self, tmp_path, capsys):
        cfg = {**MINIMAL, "initial_position": [0.0, 0.0, 0.0]}
        assert main(["run", str(write_config(tmp_path, cfg))]) == EXIT_CONFIG
        assert "initial_position" in capsys.readouterr().err

    def test_every_output_starts_with_config_comment(self, tmp_path):
        cfg = {**FUNNEL_EQUIVALENT, "outputs": ["chain", "summary", "trajectory", "deviation_grid"]}
        cfg["deviation_grid"] = {"n_points": 5}
        assert main(["run", str(write_config(tmp_path, cfg))]) == EXIT_OK
        out = tmp_path / "out"
        for name in ("chain_0.csv", "trajectory.csv", "deviation_grid.csv"):
            first = (out / name).read_text(encoding="utf-8").splitlines()[0]
            assert first.startswith(f"# geomcmc {geomcmc.__version__} config=")
            resolved = json.loads(first.split("config=", 1)[1])
            assert resolved["metric"] == {"kind": "equivalent", "reparam": "noncentering"}
            assert resolved["sampler"]["n_chains"] == 1
        summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
        assert summary["version"] == geomcmc.__version__ and summary["config"]["model"]["name"] == "funnel"

    def test_seventeen_significant_digits(self, tmp_path):
        assert main(["run", str(write_config(tmp_path, MINIMAL))]) == EXIT_OK
        text = (tmp_path / "out" / "chain_0.csv").read_text(encoding="utf-8").splitlines()
        value = text[3].split(",")[1]
        assert float(format(float(value), ".17g")) == float(value)

    def test_byte_identical_reruns(self, tmp_path):
        path = write_config(tmp_path, MINIMAL)
        assert main(["run", str(path), "--output-dir", str(tmp_path / "a")]) == EXIT_OK
        assert main(["run", str(path), "--output-dir", str(tmp_path / "b")]) == EXIT_OK
        for name in ("chain_0.csv", "summary.json"):
            a = (tmp_path / "a" / name).read_bytes()
            b = (tmp_path / "b" / name).read_bytes()
            assert a.replace(b"/a", b"/b") == b

    def test_seed_override(self, tmp_path):
        path = write_config(tmp_path, MINIMAL)
        main(["run", str(path), "--output-dir", str(tmp_path / "a"), "--seed", "1"])
        main(["run", str(path), "--output-dir", str(tmp_path / "b"), "--seed", "2"])
        main(["run", str(path), "--output-dir", str(tmp_path / "c")])
        _, _, a = read_csv(tmp_path / "a" / "chain_0.csv")
        _, _, b = read_csv(tmp_path / "b" / "chain_0.csv")
        comments, _, c = read_csv(tmp_path / "c" / "chain_0.csv")
        assert a == c and a != b
        assert not (tmp_path / "out").exists()

    def test_parallel_chains_match_serial(self, tmp_path):
        cfg = {**MINIMAL, "sampler": {**MINIMAL["sampler"], "n_chains": 2, "n_samples": 30}}
        path = write_config(tmp_path, cfg)
        assert main(["run", str(path), "--output-dir", str(tmp_path / "serial")]) == EXIT_OK
        assert main(["run", str(path), "--output-dir", str(tmp_path / "par"), "--jobs", "2"]) == EXIT_OK
        for i in range(2):
            _, _, serial = read_csv(tmp_path / "serial" / f"chain_{i}.csv")
            _, _, par = read_csv(tmp_path / "par" / f"chain_{i}.csv")
            assert serial == par
        _, _, c0 = read_csv(tmp_path / "serial" / "chain_0.csv")
        _, _, c1 = read_csv(tmp_path / "serial" / "chain_1.csv")
        assert c0 != c1

    def test_bad_jobs(self, tmp_path):
        assert main(["run", str(write_config(tmp_path, MINIMAL)), "--jobs", "0"]) == EXIT_CONFIG

    def test_runtime_failure_removes_partial_outputs(self, tmp_path, monkeypatch, capsys):
        cfg = {**MINIMAL, "outputs": ["chain", "summary", "trajectory"]}

        def boom(*args, **kwargs):
            raise RuntimeError("simulated failure")

        monkeypatch.setattr(cli, "command_trajectory", boom)
        assert main(["run", str(write_config(tmp_path, cfg))]) == EXIT_RUNTIME
        assert "simulated failure" in capsys.readouterr().err
        assert list((tmp_path / "out").iterdir()) == []

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "geomcmc", "run", str(write_config(tmp_path, MINIMAL))],
            capture_output=True,
            text=True,
            check=False,
        )
        assert proc.returncode == EXIT_OK, proc.stderr
        assert json.loads(proc.stdout)["chains"][0]["n_divergent"] == 0


class TestDeviationCommand:
    def test_equivalent_metric_grid(self, tmp_path, capsys):
        path = write_config(tmp_path, FUNNEL_EQUIVALENT)
        assert main(["deviation", str(path), "--grid", "random:200:3"]) == EXIT_OK
        _, header, rows = read_csv(tmp_path / "out" / "deviation_grid.csv")
        assert header == ["q_1", "q_2", "q_3", "delta_abs_det", "delta_max_abs"]
        assert len(rows) == 200
        assert max(row[-1] for row in rows) < 1e-4
        assert max(row[-2] for row in rows) < 1e-4
        assert json.loads(capsys.readouterr().out)["n_points"] == 200

    def test_identity_metric_grid_is_not_optimal(self, tmp_path):
        cfg = {**FUNNEL_EQUIVALENT, "metric": {"kind": "identity"}}
        assert main(["deviation", str(write_config(tmp_path, cfg)), "--grid", "box:-1:1:3"]) == EXIT_OK
        _, _, rows = read_csv(tmp_path / "out" / "deviation_grid.csv")
        assert len(rows) == 27
        assert max(row[-1] for row in rows) > 0.1

    def test_bad_grid(self, tmp_path, capsys):
        assert main(["deviation", str(write_config(tmp_path, FUNNEL_EQUIVALENT)), "--grid", "hex:3"]) == EXIT_CONFIG
        assert "--grid" in capsys.readouterr().err


class TestTrajectory:
    def test_single_step_gives_two_rows(self, tmp_path):
        cfg = {**MINIMAL, "sampler": {**MINIMAL["sampler"], "n_steps": 1}}
        assert main(["trajectory", str(write_config(tmp_path, cfg))]) == EXIT_OK
        comments, header, rows = read_csv(tmp_path / "out" / "trajectory.csv")
        assert header == ["step", "q_1", "q_2", "p_1", "p_2", "H"]
        assert [row[0] for row in rows] == [0, 1]
        assert "# divergent=false" in comments

    def test_steps_flag(self, tmp_path):
        assert main(["trajectory", str(write_config(tmp_path, MINIMAL)), "--steps", "7"]) == EXIT_OK
        _, _, rows = read_csv(tmp_path / "out" / "trajectory.csv")
        assert len(rows) == 8

    def test_mala_trajectory_is_one_step(self, tmp_path):
        cfg = {**MINIMAL, "sampler": {"name": "mala", "step_size": 0.5}}
        assert main(["trajectory", str(write_config(tmp_path, cfg))]) == EXIT_OK
        _, _, rows = read_csv(tmp_path / "out" / "trajectory.csv")
        assert len(rows) == 2

    def test_rwm_rejected(self, tmp_path, capsys):
        cfg = {**MINIMAL, "sampler": {"name": "rwm"}}
        assert main(["trajectory", str(write_config(tmp_path, cfg))]) == EXIT_CONFIG
        assert "trajectory" in capsys.readouterr().err

    def test_flat_target_keeps_momentum(self):
        flat = TargetDensity(lambda q: 0.0, 2, gradient=lambda q: np.zeros(2), name="flat")
        rows, info = cli.trajectory_rows(
            Hamiltonian(flat, MetricField.identity(2)),
            [0.0, 0.0],
            [0.3, -1.2],
            SamplerConfig(step_size=0.1, n_steps=10),
            10,
        )
        momenta = np.array([row[3:5] for row in rows])
        np.testing.assert_array_equal(momenta, np.tile([0.3, -1.2], (11, 1)))
        assert not info["divergent"]

    def test_funnel_neck_divergence_is_recorded(self, tmp_path, capsys):
        cfg = {
            "model": {"name": "funnel-centered"},
            "sampler": {"name": "hmc", "step_size": 0.1, "n_steps": 16},
            "trajectory": {"initial_position": [0.0, -3.0, 0.0], "initial_momentum": [0.5, -1.0, 0.2]},
        }
        assert main(["trajectory", str(write_config(tmp_path, cfg))]) == EXIT_OK
        comments, _, rows = read_csv(tmp_path / "out" / "trajectory.csv")
        assert "# divergent=true" in comments
        assert len(rows) <= 17
        assert json.loads(capsys.readouterr().out)["divergent"] is True

    def test_equivalent_metric_trajectory_conserves_energy(self, tmp_path):
        cfg = {
            **FUNNEL_EQUIVALENT,
            "trajectory": {"initial_position": [0.0, 0.0, 0.0], "initial_momentum": [0.5, 0.5, 0.5]},
        }
        assert main(["trajectory", str(write_config(tmp_path, cfg))]) == EXIT_OK
        comments, _, rows = read_csv(tmp_path / "out" / "trajectory.csv")
        assert "# divergent=false" in comments and len(rows) == 17
        energies = [row[-1] for row in rows]
        assert max(energies) - min(energies) < 1e-2


@pytest.fixture(scope="module")
def comparison(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("compare")
    cfg = {
        "model": {"name": "funnel", "n_individuals": 1},
        "sampler": {"name": "hmc", "step_size": 0.1, "n_steps": 16, "n_samples": 120, "seed": 4, "n_chains": 2},
    }
    assert main(["compare", str(write_config(tmp_path, cfg))]) == EXIT_OK
    return json.loads((tmp_path / "out" / "comparison.json").read_text(encoding="utf-8"))


class TestCompare:
    def test_setups_present(self, comparison):
        assert set(comparison["setups"]) == {"centered_identity", "noncentered_identity", "centered_equivalent"}
        for entry in comparison["setups"].values():
            assert len(entry["ess"]) == 2 and all(len(e) == 3 for e in entry["ess"])

    def test_identical_seeds(self, comparison):
        seeds = [entry["seeds"] for entry in comparison["setups"].values()]
        assert seeds == [[4, 5]] * 3

    def test_deviation_contrast(self, comparison):
        assert max(comparison["setups"]["centered_equivalent"]["delta_mean"]) < 1e-4
        assert min(comparison["setups"]["centered_identity"]["delta_mean"]) > 0.1
        assert max(comparison["setups"]["noncentered_identity"]["delta_mean"]) < 1e-12

    def test_rejects_non_funnel(self, tmp_path):
        assert main(["compare", str(write_config(tmp_path, MINIMAL))]) == EXIT_CONFIG
