"""Bias scoring and the iterative eliminate-and-retrain loop.

A feature's bias score combines its normalized gain ``g`` in the current
model with the magnitude ``c`` of its rank correlation to a protected-class
variable::

    score = (ln(A + B*g*c + C*g*c**3) - D) / E

Features scoring above the tolerance ``threshold_tau`` are removed and the
model is retrained, until nothing scores above the line, accuracy degrades
too far, or the round budget runs out.
"""
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np
import pandas as pd

from .dataset import DegenerateSplitError, generate_weights, partition_train_val
from .errors import ConfigError
from .gbt import (
    GbtParams,
    ImportanceReport,
    cross_validate_rounds,
    gain_importance,
    predict,
    random_search,
    train,
)
from .metrics import AucResult, auc, bootstrap_auc_ci, spearman_matrix
from .synth import BIAS_VARIABLES

log = logging.getLogger(__name__)

# Time and weather columns whose correlation with any protected-class
# variable is null by construction; never cut.
DEFAULT_EXEMPT = (
    "calculated-lunarillumination-mean",
    "dates-isCalmHoliday-max",
    "dates-isNoisyHoliday-max",
    "dayOfMonth",
    "dow", "dow0", "dow1", "dow2", "dow3", "dow4", "dow5", "dow6",
    "monthOfYear",
    "shift", "shift1", "shift2", "shift3",
    "weather-humidity-mean",
    "weather-precipIntensity-mean",
    "weather-pressure-mean",
    "weather-temperature-mean",
    "weather-windSpeed-mean",
)
DEFAULT_BIAS_VARIABLES = BIAS_VARIABLES
DEFAULT_THRESHOLDS = (0.05, 0.15, 0.3)

ORIGINAL = "Original"
STATIC = "Static"
STOP_REASONS = ("no_features_above_threshold", "auc_degraded", "max_iterations",
                "no_eligible_features")


def removal_label(k):
    return f"Remove {k}"


@dataclass(frozen=True)
class BiasConfig:
    threshold_tau: float = 0.05
    A: float = 2.0
    B: float = 10.0
    C: float = 20.0
    D: float = 0.69
    E: float = 2.0
    cor_cutoff_static: float = 0.5
    gain_cutoff_static: float = 0.1
    max_iter: int = 5
    auc_max_drop_pct: float = 10.0
    exempt_features: tuple = DEFAULT_EXEMPT
    harmful_bias_variables: tuple = DEFAULT_BIAS_VARIABLES

    def __post_init__(self):
        object.__setattr__(self, "exempt_features", tuple(self.exempt_features))
        object.__setattr__(self, "harmful_bias_variables", tuple(self.harmful_bias_variables))
        if self.E == 0:
            raise ConfigError("constant E must be non-zero")
        if _min_log_argument(self.A, self.B, self.C) <= 0:
            raise ConfigError("A + B*g*c + C*g*c^3 must stay positive on [0,1]x[0,1]")
        if self.max_iter < 0:
            raise ConfigError("max_iter must be >= 0")
        if not 0 <= self.auc_max_drop_pct <= 100:
            raise ConfigError("auc_max_drop_pct must lie in [0, 100]")

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown bias config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def _min_log_argument(A, B, C):
    # A + g*(B*c + C*c^3) is linear in g, so the minimum sits at g=0 or g=1;
    # at g=1 check c in {0, 1} and the cubic's stationary point.
    candidates = [0.0, 1.0]
    if C != 0 and -B / (3 * C) > 0:
        c = np.sqrt(-B / (3 * C))
        if c <= 1:
            candidates.append(c)
    at_one = min(A + B * c + C * c ** 3 for c in candidates)
    return min(A, at_one)


@dataclass(frozen=True)
class PipelineOptions:
    """Everything the experiment driver needs beyond the bias config."""

    combos: tuple = (("constant", 0),)
    limit_obs: int = 2_000_000
    limit_val: int = None
    partition_floor: int = 100_000
    test_fraction: float = 0.2
    bootstrap_resamples: int = 2000
    tuner_iter: int = 18
    threads: int = 1

    def __post_init__(self):
        combos = tuple((str(s), int(t)) for s, t in self.combos)
        object.__setattr__(self, "combos", combos)
        if not combos:
            raise ConfigError("at least one model combo is required")
        for strategy, tuner in combos:
            if strategy not in ("constant", "exponential") or tuner not in (0, 1):
                raise ConfigError(f"bad model combo {(strategy, tuner)}")
        if self.bootstrap_resamples and self.bootstrap_resamples < 100:
            raise ConfigError("bootstrap_resamples must be 0 or >= 100")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")


def load_run_config(path):
    """Read a JSON run config: BiasConfig keys at top level plus optional
    ``"gbt"`` and ``"pipeline"`` sections. Returns ``(bias, params, options)``."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return parse_run_config(doc)


def parse_run_config(doc):
    doc = dict(doc)
    gbt = doc.pop("gbt", {})
    pipeline = doc.pop("pipeline", {})
    bias = BiasConfig.from_dict(doc)
    try:
        params = GbtParams.from_dict(gbt)
        options = PipelineOptions(**pipeline)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return bias, params, options


# ---------------------------------------------------------------- scoring

def bias_score(correlation, gain, config=None):
    """Bias score of a feature from its correlation and normalized gain.

    The magnitude of the correlation is used, so anti-correlation with a
    protected class counts the same as positive correlation.
    """
    cfg = config or BiasConfig()
    c = np.abs(np.asarray(correlation, dtype=float))
    g = np.asarray(gain, dtype=float)
    arg = cfg.A + cfg.B * g * c + cfg.C * g * c ** 3
    if np.any(arg <= 0):
        raise ValueError("log argument must be positive")
    score = (np.log(arg) - cfg.D) / cfg.E
    return float(score) if score.ndim == 0 else score


def threshold_curve(tau, gains, config=None):
    """Correlation magnitude on the boundary ``score == tau`` for each gain.

    Solves ``C*c^3 + B*c - K/g = 0`` with ``K = exp(E*tau + D) - A`` in closed
    form (one real root since B, C > 0). Entries are NaN where the boundary
    leaves the unit square or does not exist.
    """
    cfg = config or BiasConfig()
    if cfg.B <= 0 or cfg.C <= 0:
        raise ValueError("closed-form boundary needs B, C > 0")
    g = np.atleast_1d(np.asarray(gains, dtype=float))
    K = np.exp(cfg.E * tau + cfg.D) - cfg.A
    out = np.full(g.shape, np.nan)
    ok = (g > 0) & (K > 0)
    p = cfg.B / cfg.C
    q = -K / (g[ok] * cfg.C)
    disc = np.sqrt(q * q / 4 + p ** 3 / 27)
    c = np.cbrt(-q / 2 + disc) + np.cbrt(-q / 2 - disc)
    # one Newton step cleans the cancellation in the Cardano sum
    c -= (c ** 3 + p * c + q) / (3 * c * c + p)
    out[ok] = c
    out[out > 1] = np.nan
    return out


# ---------------------------------------------------------------- correlations

def correlate_features(table, bias_vars):
    """Spearman correlation of every non-bias feature with each bias variable.

    Returns a DataFrame with columns ``Feature, RaceVar, correlation``; rows
    are grouped by bias variable, features in table order. Constant features
    get NaN.
    """
    bias_vars = list(bias_vars)
    unknown = [b for b in bias_vars if b not in table.feature_names]
    if unknown:
        raise KeyError(f"unknown bias variables: {unknown}")
    features = [f for f in table.feature_names if f not in bias_vars]
    rho = spearman_matrix(table.select(features).features, table.select(bias_vars).features)
    return pd.DataFrame({
        "Feature": np.tile(features, len(bias_vars)),
        "RaceVar": np.repeat(bias_vars, len(features)),
        "correlation": rho.T.ravel(),
    })


def strip_bias_variables(table, bias_vars):
    present = [b for b in bias_vars if b in table.feature_names]
    if not present:
        return table
    return table.drop(present)


def _correlations_for(cors, racevar=None):
    if racevar is not None:
        cors = cors[cors["RaceVar"] == racevar]
    elif cors["RaceVar"].nunique() > 1:
        raise ValueError("correlation table spans several bias variables")
    return dict(zip(cors["Feature"], cors["correlation"]))


def _candidates(cors, config, features):
    lookup = _correlations_for(cors)
    exempt = set(config.exempt_features)
    names = lookup if features is None else [f for f in features if f in lookup]
    return [(f, lookup[f]) for f in names if f not in exempt and not pd.isna(lookup[f])]


def static_cutoff(cors, importances, config=None, features=None):
    """Features with ``|rho| >= cor_cutoff_static`` and gain below
    ``gain_cutoff_static``. Exempt and undefined-correlation features are
    never returned; features absent from ``importances`` count as gain 0."""
    cfg = config or BiasConfig()
    return [f for f, rho in _candidates(cors, cfg, features)
            if abs(rho) >= cfg.cor_cutoff_static and importances.gain(f) < cfg.gain_cutoff_static]


def threshold_cut(cors, importances, config=None, features=None):
    """Features whose bias score exceeds ``threshold_tau``."""
    cfg = config or BiasConfig()
    return [f for f, rho in _candidates(cors, cfg, features)
            if bias_score(rho, importances.gain(f), cfg) > cfg.threshold_tau]


# ---------------------------------------------------------------- model fits

def derive_seed(master, *path):
    """Independent 32-bit seed for the node ``path`` under ``master``."""
    return int(np.random.SeedSequence([int(master), *map(int, path)]).generate_state(1)[0])


@dataclass(eq=False)
class FitResult:
    model: object
    auc: AucResult
    importances: object
    weight_strategy: str = "constant"
    tuner_used: int = 0


@dataclass(frozen=True, eq=False)
class MitigationData:
    """The train/validation partition and the fixed hold-out test set."""

    split: object
    test: object


def fit_model(data, features, weight_strategy, tuner_used, params, seed,
              bootstrap_resamples=2000, threads=1, tuner_iter=18):
    """Cross-validate the round count, fit on the full training split and
    score the hold-out test set."""
    split = data.split
    train_t = split.train.select(features)
    val_t = split.validate.select(features)
    sub = replace(split, train=train_t, validate=val_t)
    w_train, _ = generate_weights(sub, weight_strategy)
    params = params.replace(scale_pos_weight=split.class_ratio_r, seed=seed)
    if tuner_used:
        params = random_search(train_t, val_t, w_train, params, tuner_iter,
                               derive_seed(seed, 7))
    nrounds = cross_validate_rounds(train_t, w_train, params, threads)
    model = train(train_t, None, w_train, params.replace(nrounds=nrounds))
    scores = predict(model, data.test.features, data.test.feature_names)
    labels = data.test.presence
    if bootstrap_resamples:
        result = bootstrap_auc_ci(labels, scores, bootstrap_resamples, 0.95,
                                  derive_seed(seed, 11))
    else:
        point = auc(labels, scores)
        n_pos = int(labels.sum())
        result = AucResult(point, point, point, n_pos, len(labels) - n_pos)
    try:
        importances = gain_importance(model)
    except ValueError:
        # a stump-free model carries no importances; nothing can be cut
        importances = ImportanceReport([])
    return FitResult(model, result, importances, weight_strategy, tuner_used)


def select_winning_model(data, combos, params, seed, **fit_kw):
    """Fit every ``(weight_strategy, tuner_used)`` combo and keep the one with
    the highest test AUC; earlier combos win ties. Returns ``(fit, index)``."""
    fits = []
    features = data.split.train.feature_names
    for i, (strategy, tuner) in enumerate(combos):
        try:
            fits.append((fit_model(data, features, strategy, tuner, params, seed, **fit_kw), i))
        except ValueError as exc:
            log.warning("combo %s/%s failed: %s", strategy, tuner, exc)
    if not fits:
        raise RuntimeError("every model combo failed")
    best = max(fits, key=lambda fi: (fi[0].auc.metric, -fi[1]))
    return best


# ---------------------------------------------------------------- the loop

@dataclass(frozen=True, eq=False)
class EliminationRound:
    label: str
    removed: tuple
    importances: object
    auc: float
    features: tuple
    auc_low: float = None
    auc_high: float = None
    stop_reason: str = None


@dataclass(eq=False)
class EliminationTrace:
    racevar: str
    threshold: float
    rep: int
    rounds: list
    weight_strategy: str = "constant"
    tuner_used: int = 0
    run_id: str = ""
    agency: str = ""
    crime_model: str = ""

    @property
    def stop_reason(self):
        return self.rounds[-1].stop_reason

    @property
    def removed(self):
        return [f for r in self.rounds for f in r.removed]


def _round(label, removed, fit, features):
    return EliminationRound(label, tuple(removed), fit.importances, fit.auc.metric,
                            tuple(features), fit.auc.low_ci, fit.auc.high_ci)


def run_mitigation(data, bias_var, cors, winning, config=None, params=None, seed=0,
                   refit=None, rep=1, fit_kw=None):
    """Eliminate features correlated with ``bias_var`` and retrain.

    ``winning`` is the FitResult of the model trained on all (bias-stripped)
    features. ``refit(features, step)`` may replace the default retraining,
    which calls :func:`fit_model` with the winner's weight strategy and tuner
    flag.
    """
    cfg = config or BiasConfig()
    params = params or GbtParams()
    fit_kw = fit_kw or {}
    if refit is None:
        # every round reuses the winner's seed so AUC differences between
        # rounds reflect the feature set, not resampling noise
        def refit(features, step):
            return fit_model(data, features, winning.weight_strategy, winning.tuner_used,
                             params, seed, **fit_kw)

    cors = cors[cors["RaceVar"] == bias_var]
    exempt = set(cfg.exempt_features)
    rho = _correlations_for(cors)
    features = list(winning.model.feature_names)
    rounds = [_round(ORIGINAL, (), winning, features)]

    removed = static_cutoff(cors, winning.importances, cfg, features)
    current = winning
    if removed:
        features = [f for f in features if f not in removed]
        current = refit(features, 1)
    rounds.append(_round(STATIC, removed, current, features))

    stop = "max_iterations"
    for i in range(1, cfg.max_iter + 1):
        eligible = [f for f in features
                    if f not in exempt and f in rho and not pd.isna(rho[f])]
        if not eligible:
            stop = "no_eligible_features"
            break
        removed = threshold_cut(cors, current.importances, cfg, features)
        if not removed:
            stop = "no_features_above_threshold"
            break
        remaining = [f for f in features if f not in removed]
        if not remaining:
            stop = "no_eligible_features"
            break
        log.info("%s rep %d round %d removes %s", bias_var, rep, i, removed)
        last_auc = current.auc.metric
        features = remaining
        current = refit(features, i + 1)
        rounds.append(_round(removal_label(i), removed, current, features))
        if current.auc.metric < last_auc * (1 - cfg.auc_max_drop_pct / 100):
            stop = "auc_degraded"
            break
    rounds[-1] = replace(rounds[-1], stop_reason=stop)
    return EliminationTrace(bias_var, cfg.threshold_tau, rep, rounds,
                            winning.weight_strategy, winning.tuner_used)


def run_experiment(pool, test, config=None, params=None, options=None, reps=1, seed=0,
                   run_id="", agency="", crime_model="", mitigate_vars=None):
    """Repeat partition, model selection and per-bias-variable mitigation.

    Correlations are computed on ``pool`` before the bias columns are
    stripped. Every harmful bias variable is stripped from the features;
    ``mitigate_vars`` restricts which of them get a mitigation trace
    (default: all). Returns ``(traces, correlations)``; traces are ordered by
    rep, then bias variable.
    """
    cfg = config or BiasConfig()
    params = params or GbtParams()
    opts = options or PipelineOptions()
    if reps < 1:
        raise ValueError("reps must be >= 1")
    stripped = [b for b in cfg.harmful_bias_variables if b in pool.feature_names]
    bias_vars = stripped if mitigate_vars is None else list(mitigate_vars)
    missing = [b for b in bias_vars if b not in stripped]
    if missing:
        raise KeyError(f"bias variables not in the table: {missing}")
    cors = correlate_features(pool, stripped)
    pool = strip_bias_variables(pool, stripped)
    test = strip_bias_variables(test, stripped)
    fit_kw = {"bootstrap_resamples": opts.bootstrap_resamples, "threads": opts.threads,
              "tuner_iter": opts.tuner_iter}

    traces = []
    for rep in range(1, reps + 1):
        split = _partition(pool, opts, derive_seed(seed, rep, 0))
        data = MitigationData(split, test)
        rep_seed = derive_seed(seed, rep)
        winning, combo = select_winning_model(data, opts.combos, params, rep_seed, **fit_kw)
        log.info("rep %d: combo %d wins with test AUC %.4f", rep, combo, winning.auc.metric)

        def mitigate(j):
            return run_mitigation(data, bias_vars[j], cors, winning, cfg, params,
                                  rep_seed, rep=rep, fit_kw=fit_kw)

        if opts.threads > 1 and len(bias_vars) > 1:
            with ThreadPoolExecutor(opts.threads) as ex:
                rep_traces = list(ex.map(mitigate, range(len(bias_vars))))
        else:
            rep_traces = [mitigate(j) for j in range(len(bias_vars))]
        for trace in rep_traces:
            trace.run_id, trace.agency, trace.crime_model = run_id, agency, crime_model
        traces.extend(rep_traces)
    return traces, cors


def _partition(pool, opts, seed, attempts=10):
    for attempt in range(attempts):
        try:
            return partition_train_val(pool, opts.limit_obs, opts.limit_val,
                                       derive_seed(seed, attempt), opts.partition_floor)
        except DegenerateSplitError:
            continue
    raise DegenerateSplitError(f"no usable partition after {attempts} attempts")
