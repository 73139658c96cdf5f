"""Trace tables and summary reports.

A mitigation run appends to four CSV tables in a results directory.
:func:`build_report` reads them back and writes the AUC summary, plot data
and boundary-curve samples.
"""
import math
import re
import statistics
from pathlib import Path

import numpy as np
import pandas as pd

from .dataset import DataError
from .debias import ORIGINAL, DEFAULT_THRESHOLDS, STATIC, threshold_curve

VARIABLES_REMOVED = "variablesremoved.csv"
VARIMP_SUMMARY = "varimpsummary.csv"
MODEL_RESULTS = "modelresultsummary.csv"
CORRELATIONS = "correlations.csv"

COLUMNS = {
    VARIABLES_REMOVED: ["rep", "run_id", "agency", "crime_model", "threshold", "racevar",
                        "iteration", "features_removed"],
    VARIMP_SUMMARY: ["rep", "run_id", "agency", "crime_model", "threshold", "racevar",
                     "iteration", "rank", "Feature", "Gain"],
    MODEL_RESULTS: ["rep", "threshold", "run_id", "agency", "crime_model", "racevar",
                    "iteration", "weightstrategy", "useTuner", "auc"],
    CORRELATIONS: ["run_id", "agency", "crime_model", "Feature", "RaceVar", "correlation"],
}

AUC_SUMMARY = "auc_summary.csv"
AUC_PLOT = "auc_plot.csv"
GAIN_HISTORY = "gain_history.csv"
THRESHOLD_CURVES = "threshold_curves.csv"

GROUP_KEYS = ["agency", "crime_model", "threshold", "racevar", "iteration"]

_REMOVE_LONG = re.compile(r"^Remove high gain (\d+)$")
_REMOVE_SHORT = re.compile(r"^Remove (\d+)$")


class SchemaError(DataError):
    """Existing table has different columns than the one being appended."""


def long_label(label):
    """Table spelling of a round label."""
    if label == STATIC:
        return "Remove high cor low gain"
    m = _REMOVE_SHORT.match(label)
    if m:
        return f"Remove high gain {m.group(1)}"
    return label


def short_label(label):
    """Report spelling of a round label; accepts either spelling."""
    if label == "Remove high cor low gain":
        return STATIC
    m = _REMOVE_LONG.match(label)
    if m:
        return f"Remove {m.group(1)}"
    return label


def label_order(label):
    """Sort key placing Original, Static, Remove 1, Remove 2, ..."""
    label = short_label(label)
    if label == ORIGINAL:
        return 0
    if label == STATIC:
        return 1
    m = _REMOVE_SHORT.match(label)
    if m:
        return 1 + int(m.group(1))
    raise ValueError(f"unknown iteration label {label!r}")


# ---------------------------------------------------------------- writing

def trace_frames(traces):
    """The three per-round tables for a list of traces, in canonical column
    order."""
    removed, varimp, results = [], [], []
    for tr in traces:
        ids = {"rep": tr.rep, "run_id": tr.run_id, "agency": tr.agency,
               "crime_model": tr.crime_model, "threshold": tr.threshold,
               "racevar": tr.racevar}
        for rnd in tr.rounds:
            it = long_label(rnd.label)
            for f in rnd.removed:
                removed.append({**ids, "iteration": it, "features_removed": f})
            for rank, (f, g) in enumerate(rnd.importances, start=1):
                varimp.append({**ids, "iteration": it, "rank": rank, "Feature": f, "Gain": g})
            results.append({**ids, "iteration": it, "weightstrategy": tr.weight_strategy,
                            "useTuner": tr.tuner_used, "auc": rnd.auc})
    return {
        VARIABLES_REMOVED: pd.DataFrame(removed, columns=COLUMNS[VARIABLES_REMOVED]),
        VARIMP_SUMMARY: pd.DataFrame(varimp, columns=COLUMNS[VARIMP_SUMMARY]),
        MODEL_RESULTS: pd.DataFrame(results, columns=COLUMNS[MODEL_RESULTS]),
    }


def correlation_frame(cors, run_id="", agency="", crime_model=""):
    df = cors[["Feature", "RaceVar", "correlation"]].copy()
    df.insert(0, "crime_model", crime_model)
    df.insert(0, "agency", agency)
    df.insert(0, "run_id", run_id)
    return df[COLUMNS[CORRELATIONS]]


def _check_header(frame, path):
    path = Path(path)
    if not path.exists() or path.stat().st_size == 0:
        return False
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\r\n").split(",")
    if header != list(frame.columns):
        raise SchemaError(f"{path.name}: existing columns {header} "
                          f"differ from {list(frame.columns)}")
    return True


def append_csv(frame, path):
    """Append ``frame`` to ``path``, writing the header only for a new file.

    Raises :class:`SchemaError` if the existing header differs.
    """
    exists = _check_header(frame, path)
    frame.to_csv(path, mode="a" if exists else "w", header=not exists, index=False)


def write_trace_tables(traces, cors, out_dir, run_id="", agency="", crime_model=""):
    """Append a run's traces and correlations to the four tables."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frames = trace_frames(traces)
    frames[CORRELATIONS] = correlation_frame(cors, run_id, agency, crime_model)
    # check every header before touching any file
    for name, frame in frames.items():
        _check_header(frame, out_dir / name)
    for name in COLUMNS:
        append_csv(frames[name], out_dir / name)
    return [out_dir / name for name in COLUMNS]


def read_table(results_dir, name):
    path = Path(results_dir) / name
    if not path.exists():
        raise DataError(f"missing table {path}")
    df = pd.read_csv(path, keep_default_na=False, na_values=[""], float_precision="round_trip",
                     dtype={"run_id": str, "agency": str, "crime_model": str})
    if list(df.columns) != COLUMNS[name]:
        raise SchemaError(f"{name}: unexpected columns {list(df.columns)}")
    for col in ("run_id", "agency", "crime_model"):
        if col in df:
            df[col] = df[col].fillna("")
    return df


# ---------------------------------------------------------------- report

def describe(values):
    """n, mean, median, min, max, sample sd and its standard error.

    ``sd`` and ``se`` are NaN when n == 1.
    """
    x = [float(v) for v in values]
    n = len(x)
    if n == 0:
        raise ValueError("no values")
    sd = statistics.stdev(x) if n > 1 else math.nan
    return {
        "n": n,
        "mean": math.fsum(x) / n,
        "median": statistics.median(x),
        "min": min(x),
        "max": max(x),
        "sd": sd,
        "se": sd / math.sqrt(n),
    }


def summarize_auc(results):
    """Per (agency, crime_model, threshold, racevar, iteration) AUC summary
    with short iteration labels, in round order."""
    if results.empty:
        raise DataError("no model results to summarize")
    df = results.copy()
    df["iteration"] = df["iteration"].map(short_label)
    rows = []
    for key, grp in df.groupby(GROUP_KEYS, sort=False):
        rows.append({**dict(zip(GROUP_KEYS, key)), **describe(grp["auc"])})
    out = pd.DataFrame(rows)
    out["_order"] = out["iteration"].map(label_order)
    out = out.sort_values(["agency", "crime_model", "threshold", "racevar", "_order"],
                          kind="stable")
    return out.drop(columns="_order").reset_index(drop=True)


def auc_plot_data(summary):
    """Mean AUC per round with a 95% normal interval on the mean."""
    out = summary[GROUP_KEYS + ["n", "mean"]].copy()
    out.insert(5, "step", summary["iteration"].map(label_order))
    out["lower"] = summary["mean"] - 1.96 * summary["se"]
    out["upper"] = summary["mean"] + 1.96 * summary["se"]
    return out


def gain_history(varimp, removed):
    """Gain of every feature at each round of each trace, from Original up to
    the last round it took part in. Features present but unused get 0."""
    keys = ["run_id", "agency", "crime_model", "threshold", "racevar", "rep"]
    cols = keys + ["step", "iteration", "Feature", "Gain"]
    rows = []
    removed_by = {}
    for key, grp in removed.groupby(keys, sort=False):
        removed_by[key] = {f: label_order(it) for f, it in
                           zip(grp["features_removed"], grp["iteration"])}
    for key, grp in varimp.groupby(keys, sort=False):
        steps = sorted({label_order(it) for it in grp["iteration"]})
        labels = {label_order(it): short_label(it) for it in grp["iteration"]}
        gains = {(label_order(it), f): g for it, f, g in
                 zip(grp["iteration"], grp["Feature"], grp["Gain"])}
        gone = removed_by.get(key, {})
        for f in pd.unique(grp["Feature"]):
            for s in steps:
                if f in gone and s >= gone[f]:
                    break
                rows.append((*key, s, labels[s], f, gains.get((s, f), 0.0)))
    return pd.DataFrame(rows, columns=cols)


def threshold_curve_samples(thresholds=DEFAULT_THRESHOLDS, n=200, config=None):
    """Boundary correlation on a gain grid for each tolerance; empty where
    the boundary leaves the unit square."""
    gains = np.linspace(0, 1, n + 1)[1:]
    frames = []
    for tau in thresholds:
        frames.append(pd.DataFrame({"threshold": tau, "gain": gains,
                                    "correlation": threshold_curve(tau, gains, config)}))
    return pd.concat(frames, ignore_index=True)


def build_report(results_dir, out_dir=None, svg=False, config=None):
    """Write the summary, plot-data and boundary-curve CSVs, overwriting any
    previous report. Returns the written paths."""
    results_dir = Path(results_dir)
    out_dir = Path(out_dir) if out_dir is not None else results_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    results = read_table(results_dir, MODEL_RESULTS)
    summary = summarize_auc(results)
    varimp = read_table(results_dir, VARIMP_SUMMARY)
    removed = read_table(results_dir, VARIABLES_REMOVED)
    taus = sorted(set(DEFAULT_THRESHOLDS) | set(float(t) for t in results["threshold"]))
    outputs = {
        AUC_SUMMARY: summary,
        AUC_PLOT: auc_plot_data(summary),
        GAIN_HISTORY: gain_history(varimp, removed),
        THRESHOLD_CURVES: threshold_curve_samples(taus, config=config),
    }
    paths = []
    for name, frame in outputs.items():
        frame.to_csv(out_dir / name, index=False)
        paths.append(out_dir / name)
    if svg:
        paths.append(render_auc_svg(outputs[AUC_PLOT], out_dir / "auc_plot.svg"))
        paths.append(render_curve_svg(outputs[THRESHOLD_CURVES], out_dir / "threshold_curves.svg"))
    return paths


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def render_auc_svg(plot, path):
    """Line chart of mean AUC per round with its interval (needs matplotlib)."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    for key, grp in plot.groupby(["agency", "crime_model", "threshold", "racevar"]):
        grp = grp.sort_values("step")
        ax.plot(grp["step"], grp["mean"], marker="o",
                label=" ".join(str(k) for k in key if k != ""))
        if grp["lower"].notna().any():
            ax.fill_between(grp["step"], grp["lower"], grp["upper"], alpha=0.2)
        ax.set_xticks(grp["step"], grp["iteration"], rotation=30)
    ax.set_ylabel("test AUC")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
    return Path(path)


def render_curve_svg(curves, path):
    """Boundary curves in the (gain, |correlation|) plane (needs matplotlib)."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    for tau, grp in curves.groupby("threshold"):
        ax.plot(grp["gain"], grp["correlation"], label=f"tau = {tau:g}")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("gain")
    ax.set_ylabel("|correlation|")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)
    return Path(path)
