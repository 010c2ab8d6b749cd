"""End-to-end tests of the command-line pipeline, run in-process."""

import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest

import climfs.cli as cli
from climfs.cli import load_config, main, resolve_fit_config
from climfs.dataset import load_manifest, load_masks
from climfs.errors import NumericError
from climfs.model import fit, load_state


def base_config(out_dir) -> dict:
    return {
        "data": {"synthetic": {"n": 40, "views": 2, "clusters": 3,
                               "informative": 4, "noise": 6, "seed": 7}},
        "scenario": {"kind": "mixed", "delta": 0.3, "seed": 7},
        "fit": {"lambda": 0.5, "beta": 0.5, "k": 4, "c": 3,
                "max_iter": 150, "tol": 1e-5, "seed": 7},
        "feature_ratios": [0.2],
        "eval_runs": 5,
        "out_dir": str(out_dir),
    }


def write_config(path, cfg) -> str:
    Path(path).write_text(json.dumps(cfg))
    return str(path)


def run_pipeline(root, mutate=None) -> Path:
    cfg = base_config(root / "out")
    if mutate:
        mutate(cfg)
    p = write_config(root / "cfg.json", cfg)
    for command in ("simulate", "fit", "evaluate", "diagnose"):
        assert main([command, "--config", p]) == 0, command
    return root / "out"


@pytest.fixture(scope="module")
def two_runs(tmp_path_factory):
    a = tmp_path_factory.mktemp("run_a")
    b = tmp_path_factory.mktemp("run_b")
    return run_pipeline(a), run_pipeline(b)


# ------------------------------------------------------------- simulate


def test_simulate_twice_byte_identical_masks(two_runs):
    out_a, out_b = two_runs
    for name in ("mask_view0.csv", "mask_view1.csv", "view0.csv",
                 "labels.csv", "masks.json", "manifest.json"):
        assert (out_a / "dataset" / name).read_bytes() \
            == (out_b / "dataset" / name).read_bytes()


def test_synthetic_labels_cover_every_cluster(two_runs):
    out_a, _ = two_runs
    labels = np.loadtxt(out_a / "dataset" / "labels.csv", dtype=int)
    assert len(set(labels.tolist())) == 3


def test_view_missing_guard_keeps_every_sample_alive(tmp_path):
    cfg = base_config(tmp_path / "out")
    cfg["scenario"] = {"kind": "view", "delta": 0.5, "seed": 3}
    p = write_config(tmp_path / "cfg.json", cfg)
    assert main(["simulate", "--config", p]) == 0
    masks = load_masks(tmp_path / "out" / "dataset" / "masks.json")
    alive = np.zeros(masks.masks[0].shape[1], dtype=bool)
    for m in masks.masks:
        alive |= m.any(axis=0)
    assert alive.all()


def test_seed_flag_changes_generated_data(tmp_path):
    cfg = base_config(tmp_path / "ignored")
    p = write_config(tmp_path / "cfg.json", cfg)
    for seed in (1, 2):
        assert main(["simulate", "--config", p,
                     "--out", str(tmp_path / f"o{seed}"),
                     "--seed", str(seed)]) == 0
    v1 = (tmp_path / "o1" / "dataset" / "view0.csv").read_bytes()
    v2 = (tmp_path / "o2" / "dataset" / "view0.csv").read_bytes()
    assert v1 != v2


# ------------------------------------------------------------------ fit


def test_fit_trace_columns_and_monotone_objective(two_runs):
    out_a, _ = two_runs
    lines = (out_a / "fit" / "climfs" / "trace.csv").read_text().splitlines()
    header = lines[0].split(",")
    for col in ("iter", "objective", "recon", "w_l21", "fv_l1", "smooth",
                "cross_view", "s_quad", "fusion", "fstar_smooth",
                "orth_penalty", "max_violation", "seconds"):
        assert col in header
    obj = np.array([float(line.split(",")[header.index("objective")])
                    for line in lines[1:]])
    assert (np.diff(obj) <= 1e-9 * np.maximum(1.0, np.abs(obj[:-1]))).all()
    assert (obj[0] > obj[-1])


def test_fit_result_reports_convergence(two_runs):
    out_a, _ = two_runs
    result = json.loads((out_a / "fit" / "climfs"
                         / "fit_result.json").read_text())
    assert result["converged"] is True
    assert result["method"] == "climfs"
    assert result["timing"]["seconds"] > 0


def test_infinite_tol_trace_has_exactly_one_row(tmp_path):
    cfg = base_config(tmp_path / "out")
    cfg["fit"]["tol"] = float("inf")
    p = write_config(tmp_path / "cfg.json", cfg)
    assert main(["simulate", "--config", p]) == 0
    assert main(["fit", "--config", p]) == 0
    lines = (tmp_path / "out" / "fit" / "climfs"
             / "trace.csv").read_text().strip().splitlines()
    assert len(lines) == 2          # header + one iteration
    assert lines[1].split(",")[0] == "1"


def test_strict_flag_turns_nonconvergence_into_exit_4(tmp_path):
    cfg = base_config(tmp_path / "out")
    cfg["fit"]["max_iter"] = 2
    cfg["fit"]["tol"] = 1e-13
    p = write_config(tmp_path / "cfg.json", cfg)
    assert main(["simulate", "--config", p]) == 0
    assert main(["fit", "--config", p, "--strict"]) == 4
    assert main(["fit", "--config", p]) == 0

    with pytest.warns(UserWarning, match="unconverged"):
        assert main(["diagnose", "--config", p]) == 0
    assert (tmp_path / "out" / "diagnose" / "climfs.json").exists()


def test_checkpoint_written_by_fit_resumes_identically(tmp_path):
    def long(cfg):
        cfg["fit"]["max_iter"] = 12
        cfg["fit"]["tol"] = 1e-13

    cfg_a = base_config(tmp_path / "a")
    long(cfg_a)
    pa = write_config(tmp_path / "cfg_a.json", cfg_a)
    assert main(["simulate", "--config", pa]) == 0
    assert main(["fit", "--config", pa]) == 0

    cfg_b = base_config(tmp_path / "b")
    long(cfg_b)
    cfg_b["fit"]["max_iter"] = 8
    pb = write_config(tmp_path / "cfg_b.json", cfg_b)
    assert main(["simulate", "--config", pb]) == 0
    assert main(["fit", "--config", pb]) == 0

    state, fc, comps = load_state(tmp_path / "b" / "fit" / "climfs" / "state")
    ds = load_manifest(tmp_path / "b" / "dataset" / "manifest.json")
    masks = load_masks(tmp_path / "b" / "dataset" / "masks.json")
    _, trace = fit(ds, masks, dataclasses.replace(fc, max_iter=4),
                   components=comps, state=state)

    lines = (tmp_path / "a" / "fit" / "climfs"
             / "trace.csv").read_text().splitlines()
    col = lines[0].split(",").index("objective")
    straight = np.array([float(line.split(",")[col]) for line in lines[1:]])
    assert np.array_equal(straight[8:], trace.objectives())


# ------------------------------------------------------- evaluate/ablate


def test_single_method_single_ratio_gives_one_report(two_runs):
    out_a, _ = two_runs
    reports = sorted((out_a / "eval" / "climfs").glob("report_*.json"))
    assert [r.name for r in reports] == ["report_r0.2.json"]


def test_summary_csv_means_equal_report_means(two_runs):
    out_a, _ = two_runs
    lines = (out_a / "eval" / "summary.csv").read_text().strip().splitlines()
    assert lines[0] == "method,ratio,acc_mean,nmi_mean"
    for line in lines[1:]:
        method, ratio, acc, nmi = line.split(",")
        report = json.loads((out_a / "eval" / method
                             / f"report_r{ratio}.json").read_text())
        assert float(acc) == report["acc_mean"]
        assert float(nmi) == report["nmi_mean"]
        assert report["feature_ratio"] == float(ratio)


def test_ablate_covers_full_model_and_three_variants(tmp_path):
    cfg = base_config(tmp_path / "out")
    cfg["data"]["synthetic"]["n"] = 30
    cfg["fit"]["max_iter"] = 6
    cfg["fit"]["tol"] = 1e-13
    cfg["fit"]["k"] = 3
    cfg["eval_runs"] = 3
    p = write_config(tmp_path / "cfg.json", cfg)
    assert main(["simulate", "--config", p]) == 0
    assert main(["ablate", "--config", p]) == 0
    lines = (tmp_path / "out" / "eval"
             / "summary.csv").read_text().strip().splitlines()
    methods = [line.split(",")[0] for line in lines[1:]]
    assert len(methods) == 4
    assert set(methods) == {"climfs", "climfs-i", "climfs-ii", "climfs-iii"}
    for m in methods:
        assert (tmp_path / "out" / "fit" / m / "state"
                / "header.json").exists()


# --------------------------------------------------------- determinism


def _strip_timing(payload: dict) -> dict:
    payload.pop("timing", None)
    return payload


def test_result_jsons_identical_across_runs_modulo_timing(two_runs):
    out_a, out_b = two_runs
    rel_paths = ["fit/climfs/fit_result.json",
                 "eval/climfs/report_r0.2.json",
                 "diagnose/climfs.json"]
    for rel in rel_paths:
        da = _strip_timing(json.loads((out_a / rel).read_text()))
        db = _strip_timing(json.loads((out_b / rel).read_text()))
        assert json.dumps(da, sort_keys=True) == json.dumps(db, sort_keys=True), rel


def test_trace_objectives_identical_across_runs(two_runs):
    out_a, out_b = two_runs

    def objectives(root):
        lines = (root / "fit" / "climfs" / "trace.csv").read_text().splitlines()
        col = lines[0].split(",").index("objective")
        return [line.split(",")[col] for line in lines[1:]]

    assert objectives(out_a) == objectives(out_b)


def test_config_snapshot_sits_next_to_every_output(two_runs):
    out_a, _ = two_runs
    for sub in ("dataset", "fit/climfs", "eval/climfs", "diagnose"):
        snap = json.loads((out_a / sub / "config.json").read_text())
        assert snap["out_dir"] == str(out_a)
        assert snap["fit"]["lambda"] == 0.5


# --------------------------------------------------------- config errors


def invalid_config_cases():
    def drop_out_dir(cfg):
        del cfg["out_dir"]

    def both_sources(cfg):
        cfg["data"]["manifest"] = "nowhere.json"

    def neither_source(cfg):
        cfg["data"] = {}

    def top_typo(cfg):
        cfg["featur_ratios"] = [0.2]

    def fit_typo(cfg):
        cfg["fit"]["lamda"] = 1.0

    def scenario_typo(cfg):
        cfg["scenario"]["detla"] = 0.2

    def bad_method(cfg):
        cfg["method"] = "pca"

    def bad_ratio(cfg):
        cfg["feature_ratios"] = [0.2, 1.5]

    def empty_ratios(cfg):
        cfg["feature_ratios"] = []

    def bad_runs(cfg):
        cfg["eval_runs"] = 0

    def bad_kind(cfg):
        cfg["scenario"]["kind"] = "sideways"

    def bad_delta(cfg):
        cfg["scenario"]["delta"] = 1.5

    def bad_fit_value(cfg):
        cfg["fit"]["k"] = 0

    return [drop_out_dir, both_sources, neither_source, top_typo, fit_typo,
            scenario_typo, bad_method, bad_ratio, empty_ratios, bad_runs,
            bad_kind, bad_delta, bad_fit_value]


@pytest.mark.parametrize("mutate", invalid_config_cases(),
                         ids=lambda f: f.__name__)
def test_invalid_config_exits_2(tmp_path, mutate):
    cfg = base_config(tmp_path / "out")
    mutate(cfg)
    p = write_config(tmp_path / "cfg.json", cfg)
    assert main(["simulate", "--config", p]) == 2


def test_unreadable_or_malformed_config_exits_2(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "absent.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["simulate", "--config", str(bad)]) == 2
    lst = tmp_path / "list.json"
    lst.write_text("[1, 2]")
    assert main(["simulate", "--config", str(lst)]) == 2


def test_fit_before_simulate_exits_2(tmp_path):
    p = write_config(tmp_path / "cfg.json", base_config(tmp_path / "out"))
    assert main(["fit", "--config", p]) == 2
    assert main(["evaluate", "--config", p]) == 2
    assert main(["diagnose", "--config", p]) == 2


def test_evaluate_before_fit_exits_2(tmp_path):
    p = write_config(tmp_path / "cfg.json", base_config(tmp_path / "out"))
    assert main(["simulate", "--config", p]) == 0
    assert main(["evaluate", "--config", p]) == 2


def test_evaluate_without_labels_exits_2(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(2):
        np.savetxt(tmp_path / f"v{i}.csv", rng.normal(size=(5, 20)),
                   delimiter=",")
    (tmp_path / "manifest.json").write_text(json.dumps({
        "views": [{"name": f"v{i}", "path": f"v{i}.csv"} for i in range(2)],
        "labels": None}))
    cfg = base_config(tmp_path / "out")
    cfg["data"] = {"manifest": str(tmp_path / "manifest.json")}
    cfg["fit"].update(k=3, c=2, max_iter=2, tol=1e-13)
    p = write_config(tmp_path / "cfg.json", cfg)
    assert main(["simulate", "--config", p]) == 0
    assert main(["fit", "--config", p]) == 0
    assert main(["evaluate", "--config", p]) == 2


# --------------------------------------------------------- numeric errors


@pytest.mark.parametrize("exc", [NumericError("update diverged"),
                                 np.linalg.LinAlgError("singular")],
                         ids=["numeric", "linalg"])
def test_optimizer_failure_exits_3(tmp_path, monkeypatch, exc):
    p = write_config(tmp_path / "cfg.json", base_config(tmp_path / "out"))
    assert main(["simulate", "--config", p]) == 0

    def boom(*args, **kwargs):
        raise exc

    monkeypatch.setattr(cli, "fit", boom)
    assert main(["fit", "--config", p]) == 3


# ----------------------------------------------------------- unit pieces


def test_lambda_config_key_maps_onto_lam():
    fc = resolve_fit_config({"fit": {"lambda": 0.25, "k": 3, "c": 2}})
    assert fc.lam == 0.25
    assert fc.k == 3


def test_load_config_fills_defaults(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps({"data": {"synthetic": {"n": 10, "views": 2,
                                                    "clusters": 2,
                                                    "informative": 2,
                                                    "noise": 0}},
                             "out_dir": "x"}))
    cfg = load_config(p)
    assert cfg["feature_ratios"] == [0.2]
    assert cfg["eval_runs"] == 50
