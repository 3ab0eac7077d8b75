import csv
import json

import numpy as np
import pytest
import yaml

from paretofair.cli import ExperimentConfig, load_datasets, main, oversample, run_method
from paretofair.data import load_csv
from paretofair.metrics import GroupReport

SYNTH = {"n_per_group": [120, 40],
         "cluster_means": [[[-1.5, 0.0], [1.5, 0.0]], [[0.0, 2.0], [0.0, 4.0]]],
         "cluster_stddev": [[1.0, 1.0], [1.0, 1.0]],
         "label_noise_rate": [0.05, 0.05], "seed": 0}
SPLIT = {"train_fraction": 0.5, "eval_fraction": 0.25, "test_fraction": 0.25}
TRAIN = {"steps": 60, "batch_size": 16, "learning_rate": 0.1, "eval_every": 20}


def write_config(tmp_path, name="exp", drop=(), **doc):
    base = {"name": name, "data": {"synthetic": SYNTH, "split": SPLIT}, "train": TRAIN,
            "seeds": [0, 1, 2], "out": str(tmp_path / "runs" / name)}
    base.update(doc)
    for key in drop:
        del base[key]
    path = tmp_path / f"{name}.yaml"
    path.write_text(yaml.safe_dump(base))
    return str(path)


def read_csv(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    assert lines[0].startswith("# paretofair")
    return list(csv.DictReader(lines[1:]))


# --- config validation -----------------------------------------------------

def test_generate_writes_stratified_split(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["generate", "--config", cfg, "--out", str(tmp_path / "g1")]) == 0
    tr = load_csv(tmp_path / "g1" / "train.csv")
    ev = load_csv(tmp_path / "g1" / "eval.csv")
    te = load_csv(tmp_path / "g1" / "test.csv")
    assert tr.n + ev.n + te.n == 160
    assert abs(tr.n - 80) <= 4 and abs(ev.n - 40) <= 4
    meta = json.loads((tmp_path / "g1" / "metadata.json").read_text())
    assert meta["group_names"] == ["g0", "g1"]
    assert meta["provenance"]["config_sha256"] == ExperimentConfig.load(cfg).config_hash
    main(["generate", "--config", cfg, "--out", str(tmp_path / "g2")])
    for name in ("train.csv", "eval.csv", "test.csv", "metadata.json"):
        assert (tmp_path / "g1" / name).read_bytes() == (tmp_path / "g2" / name).read_bytes()


@pytest.mark.parametrize("change, needle", [
    ({"data": {"synthetic": SYNTH, "split": dict(SPLIT, test_fraction=0.5)}}, "test_fraction"),
    ({"train": dict(TRAIN, seed=3)}, "train.seed"),
    ({"trian": {}}, "trian"),
    ({"method": "magic"}, "method"),
    ({"data": {"benchmark": "nope"}}, "data.benchmark"),
    ({"decompose": {"loss": "hinge"}}, "decompose.loss"),
])
def test_invalid_configs_exit_2(tmp_path, capsys, change, needle):
    cfg = write_config(tmp_path, **change)
    assert main(["generate", "--config", cfg]) == 2
    assert needle in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "absent.yaml")]) == 2
    assert main(["train"]) == 2


def test_sweep_values_are_sorted(tmp_path):
    cfg = ExperimentConfig.load(write_config(tmp_path, sweep=[5, 0, 1]))
    assert cfg.sweep == (0.0, 1.0, 5.0)


# --- training ----------------------------------------------------------------

def test_train_baseline_three_seeds(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert main(["train", "--config", cfg, "--out", str(out), "--method", "baseline"]) == 0
    rows = read_csv(out / "baseline" / "seeds.csv")
    assert [r["seed"] for r in rows] == ["0", "1", "2"]
    agg = read_csv(out / "aggregate_baseline.csv")
    assert agg[0]["n_seeds"] == "3"
    accs = [float(r["min_group_accuracy"]) for r in rows]
    assert float(agg[0]["min_group_accuracy_mean"]) == pytest.approx(np.mean(accs), rel=1e-8)
    h = ExperimentConfig.load(cfg).config_hash
    model = json.loads((out / "baseline" / "seed_1" / "model.json").read_text())
    assert model["provenance"]["config_sha256"] == h
    report = json.loads((out / "baseline" / "seed_1" / "report.json").read_text())
    assert report["meta"]["seed"] == 1
    assert GroupReport.from_dict(report).group_names == ("g0", "g1")
    assert "min_group_accuracy=" in capsys.readouterr().out


def test_flags_after_subcommand_and_seed_offset(tmp_path):
    cfg = write_config(tmp_path, seeds=[0])
    out = tmp_path / "o"
    assert main(["train", "--config", cfg, "--out", str(out), "--seed-offset", "5"]) == 0
    assert (out / "baseline" / "seed_5" / "model.json").exists()


def test_parallel_jobs_are_byte_identical(tmp_path):
    cfg = write_config(tmp_path, method="adaptive_gsmote", seeds=[0, 1],
                       augment={"m": 3, "k": 2}, adaptive={"augment_batch": 4})
    main(["train", "--config", cfg, "--out", str(tmp_path / "a"), "--jobs", "1"])
    main(["train", "--config", cfg, "--out", str(tmp_path / "b"), "--jobs", "2"])
    for rel in ("adaptive_gsmote/seeds.csv", "adaptive_gsmote/seed_1/model.json",
                "adaptive_gsmote/seed_1/pool.csv", "aggregate_adaptive_gsmote.csv"):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_zero_weight_regularized_equals_baseline(tmp_path):
    cfg = ExperimentConfig.load(write_config(tmp_path, method="regularized"))
    tr, ev, _, _ = load_datasets(cfg, 0)
    a = run_method(cfg, "baseline", 0, tr, ev)
    b = run_method(cfg, "regularized", 0, tr, ev, reg_weight=0.0)
    assert np.array_equal(a.model.params, b.model.params)


def test_oversample_balances_cells(tmp_path):
    cfg = ExperimentConfig.load(write_config(tmp_path))
    tr = load_datasets(cfg, 0)[0]
    bal = oversample(tr, seed=0)
    sizes = {len(bal.cell_indices(g, y)) for g in range(2) for y in (0, 1)}
    biggest = max(len(tr.cell_indices(g, y)) for g in range(2) for y in (0, 1))
    assert sizes == {biggest}
    assert set(bal.row_key()) <= set(tr.row_key())
    assert oversample(tr, 0).row_key() == bal.row_key()


def test_divergence_exits_4(tmp_path):
    cfg = write_config(tmp_path, seeds=[0], train=dict(TRAIN, learning_rate=1e308))
    out = tmp_path / "d"
    assert main(["train", "--config", cfg, "--out", str(out)]) == 4
    assert (out / "baseline" / "seed_0" / "FAILED").exists()
    assert read_csv(out / "aggregate_baseline.csv")[0]["failed_seeds"] == "0"


# --- sweeps ------------------------------------------------------------------

def test_single_value_sweep_flags_undefined_correlation(tmp_path, capsys):
    cfg = write_config(tmp_path, seeds=[0], sweep=[1.0])
    out = tmp_path / "s"
    assert main(["sweep", "--config", cfg, "--out", str(out)]) == 0
    corr = json.loads((out / "sweep_correlations.json").read_text())
    assert "undefined" in corr["spearman_reg_weight_deo"]
    assert "(undefined)" in capsys.readouterr().out


def test_sweep_rows_sorted_by_weight(tmp_path):
    cfg = write_config(tmp_path, seeds=[0], sweep=[2.0, 0.0])
    out = tmp_path / "s"
    main(["sweep", "--config", cfg, "--out", str(out)])
    rows = read_csv(out / "sweep.csv")
    assert [float(r["reg_weight"]) for r in rows] == [0.0, 2.0]
    assert (out / "sweep" / "reg_2" / "seed_0" / "report.json").exists()


def test_sweep_mk_marks_invalid_cells(tmp_path):
    cfg = write_config(tmp_path, seeds=[0], method="gsmote", sweep_mk={"m": [2], "k": [1, 3]})
    out = tmp_path / "mk"
    assert main(["sweep-mk", "--config", cfg, "--out", str(out)]) == 0
    rows = read_csv(out / "sweep_mk.csv")
    assert [(r["k"], r["valid"]) for r in rows] == [("1", "True"), ("3", "False")]


# --- evaluate and audit ------------------------------------------------------

def test_evaluate_saved_model(tmp_path, capsys):
    cfg = write_config(tmp_path, seeds=[0])
    out = tmp_path / "e"
    main(["generate", "--config", cfg, "--out", str(out)])
    main(["train", "--config", cfg, "--out", str(out)])
    rep_path = tmp_path / "eval_report.json"
    assert main(["evaluate", "--model", str(out / "baseline" / "seed_0" / "model.json"),
                 "--data", str(out / "test.csv"), "--metadata", str(out / "metadata.json"),
                 "--out", str(rep_path)]) == 0
    fresh = GroupReport.from_dict(json.loads(rep_path.read_text()))
    stored = GroupReport.from_dict(
        json.loads((out / "baseline" / "seed_0" / "report.json").read_text()))
    np.testing.assert_array_equal(fresh.tp, stored.tp)
    assert "min_group_accuracy=" in capsys.readouterr().out


def _report_file(tmp_path, name, accs, names=("a", "b")):
    tp = [int(100 * a) for a in accs]
    fn = [100 - t for t in tp]
    rep = GroupReport(names, tp, [0, 0], [100, 100], fn)
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(rep.to_dict()))
    return str(path)


def test_audit_exit_codes(tmp_path, capsys):
    base = _report_file(tmp_path, "base", [0.9, 0.8])
    better = _report_file(tmp_path, "better", [0.91, 0.85])
    worse = _report_file(tmp_path, "worse", [0.85, 0.7])
    other = _report_file(tmp_path, "other", [0.9, 0.8], names=("a", "c"))
    assert main(["audit", base, better]) == 0
    assert "pareto_improvement" in capsys.readouterr().out
    assert main(["audit", base, worse, "--out", str(tmp_path / "v.json")]) == 3
    verdict = json.loads((tmp_path / "v.json").read_text())
    assert verdict["verdict"] == "leveling_down" and "provenance" in verdict
    assert main(["audit", base, other]) == 2
    assert main(["audit", base, str(tmp_path / "absent.json")]) == 2


# --- decomposition -----------------------------------------------------------

def test_squared_decomposition_identity(tmp_path, capsys):
    cfg = write_config(tmp_path, seeds=[0],
                       data={"synthetic": SYNTH, "holdout": {"eval_n_per_group": [20, 20],
                                                             "test_n_per_group": [30, 30]}},
                       decompose={"loss": "squared", "replicates": 5, "capacity": "low",
                                  "steps": 50})
    out = tmp_path / "dec"
    assert main(["decompose", "--config", cfg, "--out", str(out), "--points"]) == 0
    text = capsys.readouterr().out
    assert text.count("N+B+V=") == 2
    doc = json.loads((out / "decompose" / "seed_0.json").read_text())
    for g in doc["groups"]:
        assert g["err"] == pytest.approx(g["N"] + g["B"] + g["V"], abs=1e-12)
    assert doc["meta"]["capacity"] == "low"
    assert len(read_csv(out / "decompose" / "points_seed_0.csv")) == 60


def test_symmetric_benchmark_fairness_within_noise(tmp_path):
    cfg = write_config(tmp_path, data={"benchmark": "symmetric"}, seeds=[0], drop=["train"],
                       decompose={"replicates": 11, "capacity": "low"})
    out = tmp_path / "sym"
    assert main(["decompose", "--config", cfg, "--out", str(out)]) == 0
    rep = json.loads((out / "decompose" / "seed_0.json").read_text())
    assert rep["e_fair"]["g0|g1"] <= 3 * rep["e_fair_se"]["g0|g1"]


@pytest.mark.slow
def test_capacity_flips_dominant_term(tmp_path):
    path = write_config(tmp_path, data={"benchmark": "interpolation"}, seeds=[0],
                        drop=["train"], decompose={"replicates": 21})
    seen = {}
    for cap in ("low", "high"):
        out = tmp_path / cap
        assert main(["decompose", "--config", path, "--out", str(out),
                     "--capacity", cap]) == 0
        seen[cap] = json.loads((out / "decompose" / "seed_0.json").read_text())["dominant"]
    assert seen == {"low": "bias_noise", "high": "variance"}
