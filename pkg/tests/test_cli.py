import json
import math
import os

import numpy as np
import pytest

from mdlprobe.cli import main, run_experiment_config, write_experiment_outputs
from mdlprobe.datasets import read_dataset, write_dataset, Dataset
from mdlprobe.reports import validate_report

FAST_PROBE = {"arch": "linear", "hidden": 1, "lr": 0.01, "batch": 32, "epochs": 40,
              "variational_epochs": 30}

SYNTH = {
    "kind": "linear",
    "n": 700,
    "dim": 6,
    "classes": 3,
    "noise": 0.02,
    "type_dims": 3,
    "seed": 5,
    "splits": [0.6, 0.2, 0.2],
}


def fast_config(method, tmp_path, seeds=(0,), **kw):
    config = {
        "method": method,
        "seeds": list(seeds),
        "data": {"synthetic": dict(SYNTH)},
        "probe": dict(FAST_PROBE),
        "fractions": [25, 50, 100],
        "mc_samples": 2,
        "jobs": 1,
        "out": str(tmp_path / "out"),
    }
    config.update(kw)
    return config


def strip_created(path):
    with open(path) as f:
        doc = json.load(f)
    doc.pop("created")
    return json.dumps(doc, sort_keys=True)


class TestGen:
    def test_linear_roundtrip(self, tmp_path, capsys):
        out = str(tmp_path / "task")
        rc = main(["gen", "linear", "--n", "100", "--dim", "4", "--classes", "3",
                   "--type-dims", "2", "--seed", "1", "--out", out])
        assert rc == 0
        info = json.loads(capsys.readouterr().out)
        ds = read_dataset(info["features"], info["labels"])
        assert ds.n == 100 and ds.dim == 4 and ds.K == 3
        assert ds.type_ids is not None

    def test_gaussian_reports_mi(self, tmp_path, capsys):
        rc = main(["gen", "gaussian", "--n", "50", "--dim", "3", "--mu", "0.0",
                   "--seed", "2", "--out", str(tmp_path / "g")])
        assert rc == 0
        info = json.loads(capsys.readouterr().out)
        assert info["true_mi_bits"] == 0.0

    def test_control_and_split(self, tmp_path, capsys):
        base = str(tmp_path / "task")
        main(["gen", "linear", "--n", "120", "--dim", "4", "--classes", "3",
              "--type-dims", "2", "--seed", "1", "--out", base])
        capsys.readouterr()
        rc = main(["gen", "control", "--data", base, "--seed", "3", "--out", base + ".ctrl"])
        assert rc == 0
        capsys.readouterr()
        ctrl = read_dataset(base + ".ctrl.features.bin", base + ".ctrl.labels.bin")
        for t in np.unique(ctrl.type_ids):
            vals = ctrl.y[ctrl.type_ids == t]
            assert np.all(vals == vals[0])
        rc = main(["gen", "split", "--data", base, "--splits", "0.5,0.25,0.25",
                   "--seed", "4", "--out", base])
        assert rc == 0
        paths = json.loads(capsys.readouterr().out)
        assert paths["train"]["n"] + paths["dev"]["n"] + paths["test"]["n"] == 120

    def test_random_features(self, tmp_path, capsys):
        base = str(tmp_path / "t")
        main(["gen", "linear", "--n", "40", "--dim", "6", "--classes", "2",
              "--seed", "0", "--out", base])
        capsys.readouterr()
        rc = main(["gen", "random-features", "--data", base, "--hidden", "3",
                   "--seed", "1", "--out", base + ".rf"])
        assert rc == 0
        rf = read_dataset(base + ".rf.features.bin", base + ".rf.labels.bin")
        assert rf.dim == 3 and np.all(rf.X >= 0)


class TestEngine:
    def test_baselines_only(self, tmp_path):
        report = run_experiment_config(fast_config("baselines", tmp_path))
        methods = [r["method"] for r in report["results"]]
        assert methods == ["uniform", "prior"]
        uni = report["results"][0]
        n = uni["n"]
        assert uni["total_bits"] == pytest.approx(n * math.log2(3), rel=1e-12)
        validate_report(report)

    def test_both_methods_cardinality_and_aggregates(self, tmp_path):
        report = run_experiment_config(fast_config("both", tmp_path, seeds=(0, 1, 2)))
        online = [r for r in report["results"] if r["method"] == "online"]
        var = [r for r in report["results"] if r["method"] == "variational"]
        assert len(online) == 3 and len(var) == 3
        aggs = {a["method"]: a for a in report["aggregates"]}
        assert aggs["online"]["n_seeds"] == 3
        assert aggs["online"]["std_total_bits"] >= 0.0
        assert aggs["variational"]["mean_model_bits"] is not None
        for r in var:
            assert r["pruned_architecture"].count("-") == 0  # linear probe: one layer
            assert r["total_bits"] == pytest.approx(r["data_bits"] + r["model_bits"], rel=1e-9)

    def test_online_record_identities(self, tmp_path):
        report = run_experiment_config(fast_config("online", tmp_path))
        rec = [r for r in report["results"] if r["method"] == "online"][0]
        t1 = rec["schedule"]["timesteps"][0]
        expect = t1 * math.log2(rec["num_classes"]) + sum(rec["per_block_bits"])
        assert rec["total_bits"] == pytest.approx(expect, rel=1e-9)
        assert rec["kbits"] == pytest.approx(rec["total_bits"] / 1000, rel=2e-4)
        assert rec["model_bits"] == pytest.approx(rec["total_bits"] - rec["final_ce_bits"], rel=1e-9)
        assert len(rec["learning_curve"]) == len(rec["schedule"]["timesteps"]) - 1

    def test_jobs_invariance(self, tmp_path):
        c1 = fast_config("online", tmp_path, seeds=(0, 1))
        c2 = fast_config("online", tmp_path, seeds=(0, 1))
        c2["jobs"] = 2
        r1 = run_experiment_config(c1)
        r2 = run_experiment_config(c2)
        r1.pop("created"), r2.pop("created")
        r1.pop("jobs"), r2.pop("jobs")
        r1["config"].pop("jobs"), r2["config"].pop("jobs")
        assert json.dumps(r1, sort_keys=True) == json.dumps(r2, sort_keys=True)


class TestCliCommands:
    def test_code_online_and_curves(self, tmp_path, capsys):
        config = fast_config("online", tmp_path)
        cpath = tmp_path / "config.json"
        cpath.write_text(json.dumps(config))
        rc = main(["run", "--config", str(cpath)])
        assert rc == 0
        report_path = capsys.readouterr().out.strip()
        assert os.path.basename(report_path) == "report.json"
        curves_dir = str(tmp_path / "curves")
        rc = main(["report", "curves", "--report", report_path, "--out", curves_dir])
        assert rc == 0
        csvs = [f for f in os.listdir(curves_dir) if f.endswith(".csv")]
        assert len(csvs) == 1
        lines = open(os.path.join(curves_dir, csvs[0])).read().strip().split("\n")
        with open(report_path) as f:
            rec = [r for r in json.load(f)["results"] if r["method"] == "online"][0]
        assert len(lines) == 1 + len(rec["schedule"]["timesteps"]) - 1
        last_cum = float(lines[-1].split(",")[-1])
        assert last_cum == pytest.approx(rec["total_bits"], rel=1e-12)

    def test_curves_on_baseline_report_errors(self, tmp_path, capsys):
        config = fast_config("baselines", tmp_path)
        report = run_experiment_config(config)
        path = write_experiment_outputs(report, config["out"])
        rc = main(["report", "curves", "--report", path, "--out", str(tmp_path / "c")])
        assert rc == 2
        err = json.loads(capsys.readouterr().err)
        assert "no curve" in err["message"]

    def test_variational_writes_pruned_arch(self, tmp_path, capsys):
        config = fast_config("variational", tmp_path)
        cpath = tmp_path / "c.json"
        cpath.write_text(json.dumps(config))
        rc = main(["run", "--config", str(cpath)])
        assert rc == 0
        out_dir = config["out"]
        assert os.path.exists(os.path.join(out_dir, "pruned_arch.txt"))

    def test_exit_code_usage(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"method": "nope", "seeds": [0], "data": {}}))
        rc = main(["run", "--config", str(bad)])
        assert rc == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "ConfigError"

    def test_exit_code_data(self, tmp_path, capsys):
        config = fast_config("baselines", tmp_path)
        config["data"] = {"train": str(tmp_path / "missing")}
        cpath = tmp_path / "c.json"
        cpath.write_text(json.dumps(config))
        rc = main(["run", "--config", str(cpath)])
        assert rc == 3

    def test_exit_code_numerical(self, tmp_path, capsys):
        X = np.full((40, 2), np.inf, dtype=np.float64)
        ds = Dataset(X, np.zeros(40, dtype=np.int64), 2)
        write_dataset(ds, str(tmp_path / "inf.features.bin"), str(tmp_path / "inf.labels.bin"))
        config = {
            "method": "online",
            "seeds": [0],
            "data": {"train": str(tmp_path / "inf")},
            "probe": dict(FAST_PROBE),
            "fractions": [50, 100],
            "out": str(tmp_path / "out"),
        }
        cpath = tmp_path / "c.json"
        cpath.write_text(json.dumps(config))
        rc = main(["run", "--config", str(cpath)])
        assert rc == 4
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "NumericalError"

    def test_determinism_byte_identical(self, tmp_path):
        config = fast_config("both", tmp_path)
        cpath = tmp_path / "c.json"
        cpath.write_text(json.dumps(config))
        assert main(["run", "--config", str(cpath)]) == 0
        first = strip_created(os.path.join(config["out"], "report.json"))
        assert main(["run", "--config", str(cpath)]) == 0
        second = strip_created(os.path.join(config["out"], "report.json"))
        assert first == second

    def test_run_overrides(self, tmp_path, capsys):
        config = fast_config("online", tmp_path)
        cpath = tmp_path / "c.json"
        cpath.write_text(json.dumps(config))
        rc = main(["run", "--config", str(cpath), "--seeds", "3,4", "--out", str(tmp_path / "o2")])
        assert rc == 0
        capsys.readouterr()
        with open(tmp_path / "o2" / "report.json") as f:
            report = json.load(f)
        assert sorted(r["seed"] for r in report["results"]) == [3, 4]

    def test_sweep_cardinality(self, tmp_path, capsys):
        base = str(tmp_path / "task")
        main(["gen", "linear", "--n", "260", "--dim", "4", "--classes", "3",
              "--seed", "1", "--out", base])
        main(["gen", "split", "--data", base, "--splits", "0.5,0.25,0.25",
              "--seed", "2", "--out", base])
        capsys.readouterr()
        rc = main([
            "sweep", "--train", base + ".train", "--dev", base + ".dev",
            "--test", base + ".test", "--method", "online",
            "--archs", "linear,mlp1", "--hiddens", "4",
            "--epochs", "20", "--fractions", "50,100", "--seeds", "0,1",
            "--out", str(tmp_path / "sweepout"),
        ])
        assert rc == 0
        capsys.readouterr()
        with open(tmp_path / "sweepout" / "report.json") as f:
            report = json.load(f)
        settings = sorted({r["setting"] for r in report["results"]})
        assert settings == ["linear", "mlp1-h4"]
        assert len(report["results"]) == 4  # 2 settings x 2 seeds
        aggs = [(a["method"], a["setting"]) for a in report["aggregates"]]
        assert len(aggs) == 2

    def test_probe_command(self, tmp_path, capsys):
        base = str(tmp_path / "task")
        main(["gen", "linear", "--n", "300", "--dim", "4", "--classes", "3",
              "--seed", "1", "--out", base])
        main(["gen", "split", "--data", base, "--splits", "0.6,0.2,0.2",
              "--seed", "2", "--out", base])
        capsys.readouterr()
        rc = main([
            "probe", "--train", base + ".train", "--dev", base + ".dev",
            "--test", base + ".test", "--arch", "linear", "--lr", "0.01",
            "--epochs", "60", "--out", str(tmp_path / "probeout"),
        ])
        assert rc == 0
        with open(tmp_path / "probeout" / "report.json") as f:
            report = json.load(f)
        rec = report["results"][0]
        assert rec["method"] == "probe"
        assert rec["accuracy"] > 0.8
