import csv
import json
import math

import numpy as np
import pandas as pd
import pytest

from fairtrim import report
from fairtrim.cli import EXIT_CONFIG, EXIT_DATA, main
from fairtrim.debias import EliminationRound, EliminationTrace
from fairtrim.gbt import ImportanceReport
from fairtrim.report import (
    AUC_PLOT,
    AUC_SUMMARY,
    COLUMNS,
    CORRELATIONS,
    GAIN_HISTORY,
    MODEL_RESULTS,
    THRESHOLD_CURVES,
    VARIABLES_REMOVED,
    VARIMP_SUMMARY,
    SchemaError,
    append_csv,
    build_report,
    describe,
    label_order,
    long_label,
    short_label,
)

FAST_RUN = {"gbt": {"nrounds": 40, "eta": 0.3},
            "pipeline": {"bootstrap_resamples": 0, "partition_floor": 0}}
SMALL_CITY = {"grid_rows": 10, "grid_cols": 10, "n_shifts": 8, "n_features": 12}


def write_json(path, doc):
    path.write_text(json.dumps(doc))
    return path


def header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


@pytest.fixture(scope="module")
def city(tmp_path_factory):
    root = tmp_path_factory.mktemp("city")
    cfg = write_json(root / "synth.json", SMALL_CITY)
    assert main(["synth", "--config", str(cfg), "--out", str(root / "data"), "--seed", "3"]) == 0
    return root


@pytest.fixture(scope="module")
def results(city, tmp_path_factory):
    out = tmp_path_factory.mktemp("results")
    cfg = write_json(city / "run.json", FAST_RUN)
    code = main(["run", "--data", str(city / "data"), "--config", str(cfg), "--out", str(out),
                 "--reps", "2", "--seed", "1", "--tau", "0.05", "--run-id", "golden",
                 "--agency", "synthville", "--crime-model", "burglary"])
    assert code == 0
    return out


# ---------------------------------------------------------------- labels & stats

def test_labels():
    assert long_label("Static") == "Remove high cor low gain"
    assert long_label("Remove 3") == "Remove high gain 3"
    assert short_label("Remove high gain 3") == "Remove 3"
    assert short_label(long_label("Original")) == "Original"
    labels = ["Remove 2", "Original", "Remove high gain 1", "Static"]
    assert sorted(labels, key=label_order) == ["Original", "Static", "Remove high gain 1",
                                               "Remove 2"]
    with pytest.raises(ValueError):
        label_order("Final")


def test_describe_two_values():
    d = describe([0.9, 0.8])
    assert d["mean"] == pytest.approx(0.85, abs=1e-15)
    assert d["sd"] == pytest.approx(math.sqrt(0.005), abs=1e-15)
    assert d["sd"] == pytest.approx(0.0707107, abs=1e-7)
    assert d["se"] == pytest.approx(0.05, abs=1e-15)
    assert (d["median"], d["min"], d["max"], d["n"]) == (pytest.approx(0.85), 0.8, 0.9, 2)


def test_describe_single_value():
    d = describe([0.7])
    assert math.isnan(d["sd"]) and math.isnan(d["se"])
    with pytest.raises(ValueError):
        describe([])


# ---------------------------------------------------------------- tables

def fake_trace(rep, aucs, removed):
    rounds = []
    for i, (a, rem) in enumerate(zip(aucs, removed)):
        label = ["Original", "Static"][i] if i < 2 else f"Remove {i - 1}"
        rounds.append(EliminationRound(label, tuple(rem),
                                       ImportanceReport([("x", 0.75), ("y", 0.25)]), a,
                                       ("x", "y")))
    rounds[-1] = EliminationRound(**{**rounds[-1].__dict__, "stop_reason": "max_iterations"})
    return EliminationTrace("b", 0.05, rep, rounds, run_id="r", agency="a", crime_model="c")


def test_trace_frames_rows():
    traces = [fake_trace(1, [0.9, 0.9, 0.85], [(), (), ("p", "q", "s")]),
              fake_trace(2, [0.8, 0.8], [(), ()])]
    frames = report.trace_frames(traces)
    rem = frames[VARIABLES_REMOVED]
    assert list(rem.features_removed) == ["p", "q", "s"]
    assert set(rem.iteration) == {"Remove high gain 1"}
    assert len(frames[MODEL_RESULTS]) == 5
    for name, frame in frames.items():
        assert list(frame.columns) == COLUMNS[name]


def test_append_schema_clash(tmp_path):
    path = tmp_path / MODEL_RESULTS
    frame = pd.DataFrame([[1] * 10], columns=COLUMNS[MODEL_RESULTS])
    append_csv(frame, path)
    append_csv(frame, path)
    assert len(pd.read_csv(path)) == 2
    with pytest.raises(SchemaError):
        append_csv(frame.iloc[:, ::-1], path)


def write_results(tmp_path, aucs_by_rep):
    rows = []
    for rep, aucs in enumerate(aucs_by_rep, start=1):
        for it, a in zip(["Original", "Remove high cor low gain"], aucs):
            rows.append([rep, 0.05, "r", "a", "c", "b", it, "constant", 0, a])
    pd.DataFrame(rows, columns=COLUMNS[MODEL_RESULTS]).to_csv(tmp_path / MODEL_RESULTS,
                                                              index=False)
    pd.DataFrame(columns=COLUMNS[VARIMP_SUMMARY]).to_csv(tmp_path / VARIMP_SUMMARY, index=False)
    pd.DataFrame(columns=COLUMNS[VARIABLES_REMOVED]).to_csv(tmp_path / VARIABLES_REMOVED,
                                                            index=False)


def test_report_statistics(tmp_path):
    write_results(tmp_path, [[0.9, 0.9], [0.8, 0.8]])
    build_report(tmp_path)
    summary = pd.read_csv(tmp_path / AUC_SUMMARY)
    assert list(summary.iteration) == ["Original", "Static"]
    assert summary["mean"].tolist() == pytest.approx([0.85, 0.85], abs=1e-15)
    assert summary["se"].tolist() == pytest.approx([0.05, 0.05], abs=1e-15)
    plot = pd.read_csv(tmp_path / AUC_PLOT)
    assert plot["lower"][0] == pytest.approx(0.85 - 1.96 * 0.05)


def test_report_single_rep_blank_sd(tmp_path):
    write_results(tmp_path, [[0.9, 0.85]])
    build_report(tmp_path)
    with open(tmp_path / AUC_SUMMARY, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    for row in rows:
        assert row["sd"] == "" and row["se"] == ""
        assert row["n"] == "1"


def test_report_empty_input(tmp_path):
    write_results(tmp_path, [])
    assert main(["report", "--results", str(tmp_path)]) == EXIT_DATA


def test_report_missing_table(tmp_path):
    assert main(["report", "--results", str(tmp_path)]) == EXIT_DATA


# ---------------------------------------------------------------- end to end

def test_run_writes_canonical_tables(results):
    for name, cols in COLUMNS.items():
        assert header(results / name) == cols
    manifest = json.loads((results / "manifest-golden.json").read_text())
    assert manifest["run_id"] == "golden" and manifest["reps"] == 2


def test_run_ids_echoed(results):
    for name in COLUMNS:
        df = pd.read_csv(results / name, dtype=str)
        assert set(df.run_id) == {"golden"}
        assert set(df.agency) == {"synthville"}
        assert set(df.crime_model) == {"burglary"}


def test_varimp_ranks_and_gains(results):
    vi = pd.read_csv(results / VARIMP_SUMMARY)
    for _, grp in vi.groupby(["rep", "racevar", "iteration"]):
        assert list(grp["rank"]) == list(range(1, len(grp) + 1))
        assert np.all(np.diff(grp["Gain"].to_numpy()) <= 0)
        assert abs(grp["Gain"].sum() - 1) < 1e-6


def test_varimp_joins_model_results(results):
    vi = pd.read_csv(results / VARIMP_SUMMARY)
    mr = pd.read_csv(results / MODEL_RESULTS)
    keys = ["run_id", "rep", "racevar", "iteration"]
    counts = mr.groupby(keys).size()
    assert (counts == 1).all()
    joined = vi[keys].drop_duplicates().merge(mr[keys], on=keys, how="left", indicator=True)
    assert (joined["_merge"] == "both").all()


def test_removed_rows_match_traces(results):
    rem = pd.read_csv(results / VARIABLES_REMOVED)
    cors = pd.read_csv(results / CORRELATIONS)
    assert not rem.duplicated(["rep", "racevar", "features_removed"]).any()
    assert set(rem.features_removed) <= set(cors.Feature)


def test_report_idempotent_and_outputs(results, tmp_path):
    first = [p.read_bytes() for p in build_report(results, tmp_path)]
    second = [p.read_bytes() for p in build_report(results, tmp_path)]
    assert first == second
    for name in (AUC_SUMMARY, AUC_PLOT, GAIN_HISTORY, THRESHOLD_CURVES):
        assert (tmp_path / name).exists()
    summary = pd.read_csv(tmp_path / AUC_SUMMARY)
    head = summary[summary.iteration.isin(["Original", "Static"])]
    assert len(head) == 8 and (head.n == 2).all()
    assert (summary.n <= 2).all()


def test_report_svg(results, tmp_path):
    pytest.importorskip("matplotlib")
    paths = build_report(results, tmp_path, svg=True)
    svgs = [p for p in paths if p.suffix == ".svg"]
    assert len(svgs) == 2
    assert all(p.read_text().lstrip().startswith("<?xml") for p in svgs)


def test_run_without_removals_shape(city, tmp_path):
    cfg = write_json(tmp_path / "run.json", {**FAST_RUN, "cor_cutoff_static": 2.0,
                                             "threshold_tau": 50.0})
    code = main(["run", "--data", str(city / "data"), "--config", str(cfg), "--out",
                 str(tmp_path / "res"), "--reps", "2", "--mitigate-vars",
                 "nonwhite.percentage"])
    assert code == 0
    mr = pd.read_csv(tmp_path / "res" / MODEL_RESULTS)
    assert len(mr) == 4
    assert list(mr.iteration) == ["Original", "Remove high cor low gain"] * 2
    rem = pd.read_csv(tmp_path / "res" / VARIABLES_REMOVED)
    assert rem.empty


def test_run_appends(city, tmp_path):
    cfg = write_json(tmp_path / "run.json", FAST_RUN)
    args = ["run", "--data", str(city / "data"), "--config", str(cfg), "--out",
            str(tmp_path), "--mitigate-vars", "blackalone.percentage"]
    assert main(args + ["--run-id", "one"]) == 0
    n = len(pd.read_csv(tmp_path / MODEL_RESULTS))
    assert main(args + ["--run-id", "two"]) == 0
    mr = pd.read_csv(tmp_path / MODEL_RESULTS)
    assert len(mr) == 2 * n
    assert header(tmp_path / MODEL_RESULTS) == COLUMNS[MODEL_RESULTS]


# ---------------------------------------------------------------- cli

def test_synth_outputs_byte_identical(tmp_path):
    cfg = write_json(tmp_path / "s.json", SMALL_CITY)
    for d in ("a", "b"):
        assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / d)]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == ["features.csv", "labels.csv", "truth.json", "weights.csv"]
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_synth_degenerate_grid(tmp_path):
    cfg = write_json(tmp_path / "s.json", {"grid_rows": 0, "grid_cols": 0})
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path / "x")]) == EXIT_CONFIG


def test_config_errors(city, tmp_path):
    data = str(city / "data")
    bad = write_json(tmp_path / "bad.json", {"E": 0})
    assert main(["run", "--data", data, "--config", str(bad), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["run", "--data", data, "--out", str(tmp_path), "--tau", "x"]) == EXIT_CONFIG
    assert main(["run", "--data", data, "--out", str(tmp_path), "--reps", "0"]) == EXIT_CONFIG
    assert main(["run", "--out", str(tmp_path)]) == 2
    missing = str(tmp_path / "nothing.json")
    assert main(["synth", "--config", missing, "--out", str(tmp_path)]) == EXIT_CONFIG


def test_data_errors(city, tmp_path):
    cfg = write_json(tmp_path / "run.json", FAST_RUN)
    assert main(["run", "--data", str(tmp_path / "none"), "--out", str(tmp_path)]) == EXIT_DATA
    code = main(["run", "--data", str(city / "data"), "--config", str(cfg), "--out",
                 str(tmp_path), "--bias-vars", "not.a.column"])
    assert code == EXIT_DATA


def test_threshold_curve_command(tmp_path):
    out = tmp_path / "curves.csv"
    assert main(["threshold-curve", "--out", str(out), "--points", "50"]) == 0
    df = pd.read_csv(out)
    assert sorted(df.threshold.unique()) == [0.05, 0.15, 0.3]
    assert len(df) == 150
    assert main(["threshold-curve", "--out", str(out), "--points", "1"]) == EXIT_CONFIG
