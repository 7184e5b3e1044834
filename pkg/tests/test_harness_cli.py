import json
from pathlib import Path

from hopnet import harness, kernels
from hopnet.cli import main
from hopnet.config import RunConfig, load_config
from hopnet.tensorio import load_tensor

TINY = "configs/tiny.json"


class TestSelfTest:
    def test_fresh_build_passes(self):
        report = harness.selftest()
        assert report.ok, report.summary()
        assert len(report.checks) >= 8
        assert "PASS" in report.summary()

    def test_injected_sign_error_is_caught(self, monkeypatch):
        real = kernels.K_to_L

        def flipped(stack, sigma, lattice_size):
            out = real(stack, sigma, lattice_size)
            out.L = -out.L
            return out

        monkeypatch.setattr(kernels, "K_to_L", flipped)
        report = harness.selftest()
        failed = {name for name, ok, _ in report.checks if not ok}
        assert "operator-identity" in failed
        assert not report.ok

    def test_checks_are_deterministic(self):
        a = harness.selftest()
        b = harness.selftest()
        assert [c[:2] for c in a.checks] == [c[:2] for c in b.checks]


class TestRunExperiment:
    def test_tiny_run_artifacts_and_determinism(self, tmp_path):
        cfg = load_config(TINY)
        m1 = harness.run_experiment(cfg, tmp_path / "a")
        m2 = harness.run_experiment(cfg, tmp_path / "b")
        sums1 = {a["path"]: a["sha256"] for a in m1.artifacts}
        sums2 = {a["path"]: a["sha256"] for a in m2.artifacts}
        assert sums1 == sums2
        for name in sums1:
            assert (tmp_path / "a" / name).exists()
        assert (tmp_path / "a" / "manifest.json").exists()
        man = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert man["config_hash"] == m1.config_hash

    def test_zero_model_run_is_noise_level(self, tmp_path):
        tree = json.loads(Path(TINY).read_text())
        tree["model"] = {"family": "zero", "params": {}}
        tree["ladder"] = {"n": [2, 3], "weight_draws": 16, "noise_replicas": 16}
        tree["march"]["ensemble"] = 64
        cfg = RunConfig.from_dict(tree)
        harness.run_experiment(cfg, tmp_path)
        rows = (tmp_path / "convergence.csv").read_text().splitlines()[1:]
        for row in rows:
            cells = row.split(",")
            diff, dse = float(cells[-2]), float(cells[-1])
            assert diff < 5 * dse

    def test_quenched_tensor_shapes(self, tmp_path):
        cfg = load_config(TINY)
        harness.run_experiment(cfg, tmp_path)
        arr, meta = load_tensor(tmp_path / "quenched_N5.bin")
        assert arr.shape == (4, 4, 5, 7)  # draws, replicas, sites, nodes
        assert meta["draws"] == 4

    def test_shipped_configs_run_crash_free(self, tmp_path):
        for name in ("configs/tiny.json", "configs/default.json"):
            man = harness.run_experiment(load_config(name), tmp_path / Path(name).stem)
            assert man.summary["medians"]


class TestCli:
    def test_validate_ok_and_strict_failure(self, capsys):
        assert main(["validate", "--config", TINY]) == 0
        out = capsys.readouterr().out
        assert "ok" in out

    def test_validate_zero_model(self, tmp_path):
        tree = json.loads(Path(TINY).read_text())
        tree["model"] = {"family": "zero", "params": {}}
        p = tmp_path / "zero.json"
        p.write_text(json.dumps(tree))
        assert main(["validate", "--config", str(p)]) == 1
        assert main(["validate", "--config", str(p), "--lenient"]) == 0
        assert main(["weights", "validate", "--config", str(p), "--lenient"]) == 0

    def test_weights_sample_and_simulate(self, tmp_path, capsys):
        wpath = tmp_path / "J.bin"
        assert main(["weights", "sample", "--config", TINY, "--out", str(wpath)]) == 0
        arr, meta = load_tensor(wpath)
        assert arr.shape == (5, 5) and meta["n"] == 2
        tpath = tmp_path / "traj.bin"
        assert main(["simulate", "quenched", "--config", TINY, "--weights", str(wpath),
                     "--out", str(tpath), "--replicas", "3"]) == 0
        paths, _ = load_tensor(tpath)
        assert paths.shape == (3, 5, 7)
        assert Path(str(tpath) + ".summary.csv").exists()

    def test_kernels_pipeline(self, tmp_path):
        wpath = tmp_path / "J.bin"
        tpath = tmp_path / "traj.bin"
        main(["weights", "sample", "--config", TINY, "--out", str(wpath)])
        main(["simulate", "quenched", "--config", TINY, "--weights", str(wpath),
              "--out", str(tpath), "--replicas", "8"])
        prefix = str(tmp_path / "stack")
        assert main(["kernels", "build", "--config", TINY, "--trajectories", str(tpath),
                     "--out", prefix]) == 0
        assert main(["kernels", "check", "--kernels", prefix]) == 0
        rpath = tmp_path / "resolvent.bin"
        assert main(["kernels", "resolvent", "--kernels", prefix, "--out", str(rpath)]) == 0
        arr, meta = load_tensor(rpath)
        assert meta["p_used"] >= 1 and meta["tail_bound"] <= 1e-8

    def test_limit_commands(self, tmp_path):
        outdir = tmp_path / "march"
        assert main(["limit", "march", "--config", TINY, "--out", str(outdir)]) == 0
        assert (outdir / "limit_Z.bin").exists()
        assert (outdir / "limit_probes.csv").exists()
        cpath = tmp_path / "closed.bin"
        assert main(["limit", "closed-form", "--config", TINY, "--kernels",
                     str(outdir / "kernels"), "--out", str(cpath), "--ensemble", "8"]) == 0
        arr, _ = load_tensor(cpath)
        assert arr.shape == (8, 9, 7)
        spath = tmp_path / "single.bin"
        assert main(["limit", "single-site", "--config", TINY, "--out", str(spath),
                     "--lambda2", "1.5"]) == 0
        arr, _ = load_tensor(spath)
        assert arr.shape[1] == 1

    def test_run_and_compare(self, tmp_path, capsys):
        outdir = tmp_path / "run"
        assert main(["run", "--config", TINY, "--outdir", str(outdir)]) == 0
        assert main(["compare", "--run", str(outdir)]) == 0
        out = capsys.readouterr().out
        assert "median" in out or "convergence" in out

    def test_selftest_exit_code(self):
        assert main(["selftest"]) == 0

    def test_missing_config_is_validation_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"seed": 1, "sde": {"sigma": -1.0}}))
        assert main(["validate", "--config", str(bad)]) == 1
        assert "validation error" in capsys.readouterr().err
        assert main(["validate", "--config", str(tmp_path / "absent.json")]) == 1
        assert "cannot read config" in capsys.readouterr().err
