"""Command-line driver.

Subcommands::

    fairtrim synth            generate a synthetic city
    fairtrim run              mitigation experiment, appends the four trace tables
    fairtrim report           AUC summary, plot data and boundary curves
    fairtrim threshold-curve  sample the bias-tolerance boundary

Exit status is 0 on success, 2 for configuration errors and 3 for data
errors. Set ``FAIRTRIM_LOG`` (DEBUG, INFO, WARNING, ...) for log output.
"""
import argparse
import json
import logging
import os
import sys
import uuid
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .dataset import DataError, holdout_last, load_chronon_csv
from .debias import DEFAULT_THRESHOLDS, BiasConfig, PipelineOptions, parse_run_config, run_experiment
from .errors import ConfigError
from .gbt import DegenerateModelError, GbtParams
from .report import build_report, render_curve_svg, threshold_curve_samples, write_trace_tables
from .synth import SynthConfig, generate_city, write_city

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3

log = logging.getLogger("fairtrim")


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _floats(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


def _names(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return doc


def cmd_synth(config_path, out_dir, seed=None):
    """Generate a city and write its CSVs plus ``truth.json``."""
    doc = _read_json(config_path) if config_path else {}
    if seed is not None:
        doc["seed"] = seed
    try:
        cfg = SynthConfig.from_dict(doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    table, truth = generate_city(cfg)
    paths = write_city(table, truth, out_dir)
    log.info("wrote %d chronons, %d features to %s", len(table), len(table.feature_names),
             out_dir)
    return paths


def cmd_run(data_dir, out_dir, config_path=None, reps=1, seed=0, threads=None, taus=None,
            bias_vars=None, run_id=None, agency="", crime_model="", mitigate_vars=None):
    """Run the mitigation experiment on a dataset directory and append the
    four trace tables to ``out_dir``. Returns the manifest dict."""
    started = _now()
    if config_path:
        bias, params, options = parse_run_config(_read_json(config_path))
    else:
        bias, params, options = BiasConfig(), GbtParams(), PipelineOptions()
    if bias_vars:
        bias = replace(bias, harmful_bias_variables=tuple(bias_vars))
    if threads is not None:
        options = replace(options, threads=threads)
    taus = list(taus) if taus else [bias.threshold_tau]
    if reps < 1:
        raise ConfigError("--reps must be >= 1")
    run_id = run_id or uuid.uuid4().hex

    data_dir = Path(data_dir)
    weights = data_dir / "weights.csv"
    table = load_chronon_csv(data_dir / "features.csv", data_dir / "labels.csv",
                             weights if weights.exists() else None)
    missing = [b for b in bias.harmful_bias_variables if b not in table.feature_names]
    if missing:
        raise DataError(f"bias variables missing from the data: {missing}")
    pool, test = holdout_last(table, options.test_fraction)

    out_dir = Path(out_dir)
    for tau in taus:
        cfg = replace(bias, threshold_tau=tau)
        log.info("run %s: tau=%g, %d reps", run_id, tau, reps)
        traces, cors = run_experiment(pool, test, cfg, params, options, reps, seed,
                                      run_id, agency, crime_model, mitigate_vars)
        write_trace_tables(traces, cors, out_dir, run_id, agency, crime_model)

    manifest = {
        "run_id": run_id, "agency": agency, "crime_model": crime_model,
        "data_dir": str(data_dir), "config": None if config_path is None else str(config_path),
        "seed": seed, "reps": reps, "threads": options.threads, "thresholds": taus,
        "bias_variables": list(bias.harmful_bias_variables),
        "version": __version__, "started": started, "finished": _now(),
    }
    with open(out_dir / f"manifest-{run_id}.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    return manifest


def cmd_report(results_dir, out_dir=None, svg=False):
    return build_report(results_dir, out_dir, svg)


def cmd_threshold_curve(out_path, taus=DEFAULT_THRESHOLDS, points=200, config_path=None,
                        svg=False):
    bias = parse_run_config(_read_json(config_path))[0] if config_path else BiasConfig()
    curves = threshold_curve_samples(taus, points, bias)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    curves.to_csv(out_path, index=False)
    paths = [out_path]
    if svg:
        paths.append(render_curve_svg(curves, out_path.with_suffix(".svg")))
    return paths


def build_parser():
    parser = argparse.ArgumentParser(prog="fairtrim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic city")
    p.add_argument("--config", help="JSON generator config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("run", help="run the mitigation experiment")
    p.add_argument("--data", required=True, help="directory with features/labels CSVs")
    p.add_argument("--config", help="JSON run config (bias constants, gbt, pipeline)")
    p.add_argument("--out", required=True, help="results directory (tables are appended)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reps", type=int, default=1)
    p.add_argument("--threads", type=int)
    p.add_argument("--tau", type=_floats, help="tolerance(s), comma separated")
    p.add_argument("--bias-vars", type=_names, help="harmful bias variables, comma separated")
    p.add_argument("--mitigate-vars", type=_names,
                   help="subset of the bias variables to run mitigation for")
    p.add_argument("--run-id", help="identifier echoed into every row (default: random)")
    p.add_argument("--agency", default="")
    p.add_argument("--crime-model", default="")

    p = sub.add_parser("report", help="summarize trace tables")
    p.add_argument("--results", required=True, help="directory holding the trace tables")
    p.add_argument("--out", help="report directory (default: the results directory)")
    p.add_argument("--svg", action="store_true", help="also render SVG charts")

    p = sub.add_parser("threshold-curve", help="sample the tolerance boundary")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--tau", type=_floats, default=list(DEFAULT_THRESHOLDS))
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--config", help="JSON run config supplying the constants")
    p.add_argument("--svg", action="store_true")
    return parser


def _configure_logging():
    level = os.environ.get("FAIRTRIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, which doubles as the config code
        return exc.code
    _configure_logging()
    try:
        if args.command == "synth":
            cmd_synth(args.config, args.out, args.seed)
        elif args.command == "run":
            cmd_run(args.data, args.out, args.config, args.reps, args.seed, args.threads,
                    args.tau, args.bias_vars, args.run_id, args.agency, args.crime_model,
                    args.mitigate_vars)
        elif args.command == "report":
            cmd_report(args.results, args.out, args.svg)
        else:
            if args.points < 2:
                raise ConfigError("--points must be >= 2")
            cmd_threshold_curve(args.out, args.tau, args.points, args.config, args.svg)
    except ConfigError as exc:
        print(f"fairtrim: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DegenerateModelError, KeyError) as exc:
        print(f"fairtrim: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
