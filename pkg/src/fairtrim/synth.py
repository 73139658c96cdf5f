"""Synthetic city generator with planted ground truth, and census-style
feature engineering.

The generated city is a raster of cells observed over a run of police shifts.
Crime risk is driven by smooth, right-skewed latent fields; a separate smooth
spatial gradient plays the role of the protected-class (segregation) field.
Each engineered feature mixes one latent field with the bias field, so the
correlation/importance structure the debiasing loop operates on is known in
advance.
"""
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import ndimage, optimize, stats
from scipy.special import expit, logit

from .dataset import ChrononTable, write_chronon_csv
from .errors import ConfigError

BIAS_VARIABLES = (
    "blackalone.percentage",
    "hispanic.percentage",
    "nonwhite.percentage",
    "whitealone.percentage",
)
RACE_COLUMNS = ("white", "black", "amerindian", "asian", "hawaiian", "otherrace", "tworaces")


@dataclass(frozen=True)
class RedundancyGroup:
    """Features sharing one latent risk field.

    ``mixing[j]`` is member ``j``'s weight on the bias field; ``noise[j]``
    overrides the config-wide noise level for that member.
    """

    latent: int
    mixing: tuple
    noise: tuple = None

    @property
    def size(self):
        return len(self.mixing)


def default_groups():
    return (RedundancyGroup(latent=0, mixing=(0.0, 0.85), noise=(0.35, 0.02)),)


@dataclass(frozen=True)
class SynthConfig:
    grid_rows: int = 40
    grid_cols: int = 25
    n_shifts: int = 10
    shifts_per_day: int = 3
    n_latent_risk: int = 3
    n_features: int = 60
    redundancy_groups: tuple = field(default_factory=default_groups)
    bias_base_rate: float = 0.45
    crime_base_rate: float = 0.1
    noise_sd: float = 0.5
    risk_strength: float = 2.0
    risk_skew: float = 0.8
    temporal_amplitude: float = 0.3
    smoothness: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.grid_rows < 2 or self.grid_cols < 2:
            raise ConfigError("degenerate grid: need at least 2x2 cells")
        if self.n_shifts < 1 or self.shifts_per_day < 1:
            raise ConfigError("need at least one shift")
        if self.n_latent_risk < 1:
            raise ConfigError("need at least one latent risk field")
        if not 0 < self.bias_base_rate < 1:
            raise ConfigError("bias_base_rate must lie in (0, 1)")
        if not 0 <= self.crime_base_rate < 1:
            raise ConfigError("crime_base_rate must lie in [0, 1)")
        if self.noise_sd < 0:
            raise ConfigError("noise_sd must be >= 0")
        groups = tuple(g if isinstance(g, RedundancyGroup) else RedundancyGroup(**g)
                       for g in self.redundancy_groups)
        object.__setattr__(self, "redundancy_groups", groups)
        for g in groups:
            if not 0 <= g.latent < self.n_latent_risk:
                raise ConfigError(f"group latent index {g.latent} out of range")
            if any(not 0 <= m <= 1 for m in g.mixing):
                raise ConfigError("mixing coefficients must lie in [0, 1]")
            if g.noise is not None and len(g.noise) != g.size:
                raise ConfigError("per-member noise must match group size")
        if self.n_features < sum(g.size for g in groups):
            raise ConfigError("n_features smaller than total redundancy group size")

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "redundancy_groups" in data:
            data["redundancy_groups"] = tuple(
                RedundancyGroup(g["latent"], tuple(g["mixing"]),
                                None if g.get("noise") is None else tuple(g["noise"]))
                for g in data["redundancy_groups"])
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_json(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------- census side

def zscore(column):
    """Center to mean 0 and scale to sample standard deviation 1."""
    x = np.asarray(column, dtype=float)
    if x.size < 2:
        raise ValueError("zscore needs at least two values")
    sd = x.std(ddof=1)
    if not sd > 0:
        raise ValueError("zero variance column")
    out = (x - x.mean()) / sd
    # second pass removes the residual mean left by rounding
    return out - out.mean()


def median_impute(column):
    x = np.array(column, dtype=float)
    missing = np.isnan(x)
    if missing.all():
        raise ValueError("column has no defined values")
    if missing.any():
        x[missing] = np.median(x[~missing])
    return x


def near_zero_variance(column, freq_cut=19.0, unique_cut=0.1):
    """True for constant columns, or columns with few distinct values where
    the most common value dominates the runner-up by more than ``freq_cut``."""
    values, counts = np.unique(np.asarray(column), return_counts=True)
    if len(values) <= 1:
        return True
    top = np.sort(counts)[::-1]
    return (len(values) / len(column)) < unique_cut and top[0] / top[1] > freq_cut


def engineer_census_features(stats):
    """Density, percent, median/mean and race-share columns from raw block
    counts, followed by near-zero-variance filtering and z-scoring.

    ``stats`` is a DataFrame with the count columns produced by
    :func:`generate_block_stats` and an ``area`` column.
    """
    s = stats
    if (s["area"] <= 0).any():
        raise ValueError("cell areas must be positive")
    out = pd.DataFrame(index=s.index)
    for name, col in [("house", "houses"), ("population", "population"),
                      ("vehicles", "vehicles"), ("vacanthouses", "vacant"),
                      ("rentedhouses", "rented"), ("unemployment", "unemployed"),
                      ("popbelowpovertylevel", "poverty"), ("hhnoincome", "hhnoincome"),
                      ("belowhsedu", "belowhs")]:
        out[f"{name}.density"] = s[col] / s["area"]

    out["age.median"] = s["median_age"]
    out["hhincome.median"] = s["median_income"]
    out["rent.median"] = s["median_rent"]
    out["hhsz.mean"] = np.minimum(10, s["population"] / (s["houses"] + 1))

    out["hhnoincome.percent"] = s["hhnoincome"] / (s["houses"] + 1)
    out["vacanthouses.percent"] = s["vacant"] / (s["houses"] + 1)
    out["rentedhouses.percent"] = s["rented"] / (s["occupied"] + 1)
    out["unemployment.percent"] = s["unemployed"] / (s["laborforce"] + 1)
    out["belowhsedu.percent"] = s["belowhs"] / (s["population"] + 1)
    out["popbelowpovertylevel.percent"] = s["poverty"] / (s["population"] + 1)

    race_total = s[list(RACE_COLUMNS)].sum(axis=1).astype(float)
    race_total = race_total.where(race_total > 0)
    nonwhite = s[[c for c in RACE_COLUMNS if c != "white"]].sum(axis=1)
    out["whitealone.percentage"] = s["white"] / race_total
    out["blackalone.percentage"] = s["black"] / race_total
    out["hispanic.percentage"] = s["hispanic"] / race_total
    out["nonwhite.percentage"] = nonwhite / race_total

    for col in out.columns:
        out[col] = median_impute(out[col].to_numpy())
    keep = [c for c in out.columns if not near_zero_variance(out[c].to_numpy())]
    out = out[keep]
    for col in keep:
        out[col] = zscore(out[col].to_numpy())
    return out


def generate_block_stats(bias, latents, rng, bias_base_rate=0.45):
    """Raw census-style counts per cell driven by the bias and latent fields."""
    n = len(bias)
    z = rng.standard_normal((6, n))
    risk = latents[-1]
    population = rng.poisson(np.exp(6.0 + 0.3 * latents[min(1, len(latents) - 1)] + 0.2 * z[0]))
    houses = rng.binomial(population, 0.4)
    vacant = rng.binomial(houses, expit(-2.5 + 0.4 * risk + 0.3 * bias))
    occupied = houses - vacant
    rented = rng.binomial(occupied, expit(0.6 * bias + 0.2 * risk))
    laborforce = rng.binomial(population, 0.5)
    unemployed = rng.binomial(laborforce, expit(-2.8 + 0.4 * bias + 0.3 * risk))
    poverty = rng.binomial(population, expit(-1.7 + 0.5 * bias + 0.4 * risk))
    hhnoincome = rng.binomial(occupied, expit(-3.0 + 0.5 * bias))
    belowhs = rng.binomial(population, expit(-2.0 + 0.6 * bias))
    vehicles = rng.poisson(1.5 * houses)

    nonwhite_share = expit(logit(bias_base_rate) + 1.5 * bias)
    black_frac = expit(0.5 * bias + 0.5 * z[1])
    other = (1 - black_frac) * np.array([0.05, 0.35, 0.05, 0.25, 0.30])[:, None]
    shares = np.vstack([1 - nonwhite_share, nonwhite_share * black_frac, nonwhite_share * other])
    races = np.array([rng.multinomial(population[i], shares[:, i]) for i in range(n)]).T
    hispanic = rng.binomial(population, expit(-1.0 + 0.8 * bias + 0.5 * z[2]))

    stats = pd.DataFrame({
        "population": population, "houses": houses, "occupied": occupied,
        "vacant": vacant, "rented": rented, "laborforce": laborforce,
        "unemployed": unemployed, "poverty": poverty, "hhnoincome": hhnoincome,
        "belowhs": belowhs, "vehicles": vehicles, "hispanic": hispanic,
        "median_age": 38 + 4 * z[3] - 2 * bias,
        "median_income": 60000 * np.exp(-0.2 * bias + 0.1 * z[4]),
        "median_rent": 1200 * np.exp(-0.1 * bias + 0.1 * z[5]),
        "area": 62500.0 * (1 + 0.1 * rng.random(n)),
    })
    for j, name in enumerate(RACE_COLUMNS):
        stats[name] = races[j]
    return stats


# ---------------------------------------------------------------- city

def _smooth_field(rng, shape, sigma):
    z = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="reflect")
    return zscore(z.ravel())


def _orthogonalize(x, basis):
    x = x - x.mean()
    for b in basis:
        x = x - (x @ b) / (b @ b) * b
    return zscore(x)


def _rank_decorrelate(x, ref, n_iter=50, tol=1e-6):
    """Reorder the values of ``x`` so their rank correlation with ``ref``
    vanishes, disturbing the ordering of ``x`` as little as possible."""
    values = np.sort(x)
    r = stats.rankdata(ref)
    r = r - r.mean()
    r /= np.linalg.norm(r)
    y = x
    for _ in range(n_iter):
        ranks = stats.rankdata(y, method="ordinal")
        ranks = ranks - ranks.mean()
        rho = ranks @ r / np.linalg.norm(ranks)
        if abs(rho) < tol:
            break
        y = ranks - (ranks @ r) * r
    return values[stats.rankdata(y, method="ordinal") - 1]


def _crime_intercept(log_rate, target):
    """Intercept giving mean P(count > 0) equal to ``target``."""
    def prevalence(a):
        return np.mean(-np.expm1(-np.exp(a + log_rate))) - target
    return optimize.brentq(prevalence, -30, 10, xtol=1e-12)


def generate_city(config=None):
    """Simulate a city. Returns ``(table, truth)``.

    ``table`` holds every chronon (cell x shift) with engineered features,
    the four race-share bias columns and Poisson crime counts. ``truth`` is a
    JSON-ready dict describing how each feature was built.
    """
    cfg = config or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    shape = (cfg.grid_rows, cfg.grid_cols)
    n_cells = shape[0] * shape[1]
    rows, cols = np.divmod(np.arange(n_cells), shape[1])

    theta = rng.uniform(0, 2 * np.pi)
    gradient = (np.cos(theta) * rows / shape[0] + np.sin(theta) * cols / shape[1])
    bias = zscore(gradient + 0.3 * _smooth_field(rng, shape, cfg.smoothness))

    latents = []
    for _ in range(cfg.n_latent_risk):
        z = _orthogonalize(_smooth_field(rng, shape, cfg.smoothness), [bias] + latents)
        latents.append(zscore(np.exp(cfg.risk_skew * z)))
    latents = [_orthogonalize(l, [bias]) for l in latents]

    shifts = np.arange(cfg.n_shifts)
    shift_of_day = shifts % cfg.shifts_per_day
    day = shifts // cfg.shifts_per_day
    dow = day % 7
    temperature = np.cumsum(rng.standard_normal(cfg.n_shifts)) + 3 * np.sin(
        2 * np.pi * shift_of_day / cfg.shifts_per_day)
    cycle = cfg.temporal_amplitude * np.cos(2 * np.pi * shift_of_day / cfg.shifts_per_day)

    # cell-major within each shift: row index = shift * n_cells + cell
    cell = np.tile(np.arange(n_cells), cfg.n_shifts)
    shift = np.repeat(shifts, n_cells)

    spatial_rate = cfg.risk_strength * latents[0]
    if cfg.n_latent_risk > 1:
        spatial_rate = spatial_rate + 0.3 * cfg.risk_strength * latents[1]
    log_rate = spatial_rate[cell] + cycle[shift]
    if cfg.crime_base_rate > 0:
        intercept = _crime_intercept(log_rate, cfg.crime_base_rate)
        count = rng.poisson(np.exp(intercept + log_rate))
    else:
        intercept = None
        count = np.zeros(len(cell), dtype=np.int64)

    columns = {}
    info = {}
    columns["shift"] = shift_of_day[shift].astype(float)
    info["shift"] = {"kind": "temporal"}
    for k in range(1, cfg.shifts_per_day + 1):
        columns[f"shift{k}"] = (shift_of_day[shift] == k - 1).astype(float)
        info[f"shift{k}"] = {"kind": "temporal"}
    columns["dow"] = dow[shift].astype(float)
    info["dow"] = {"kind": "temporal"}
    for k in range(7):
        columns[f"dow{k}"] = (dow[shift] == k).astype(float)
        info[f"dow{k}"] = {"kind": "temporal"}
    columns["weather-temperature-mean"] = temperature[shift]
    info["weather-temperature-mean"] = {"kind": "temporal"}
    temporal = list(columns)

    census = engineer_census_features(generate_block_stats(bias, latents, rng, cfg.bias_base_rate))
    for name in census.columns:
        columns[name] = census[name].to_numpy()[cell]
        info[name] = {"kind": "bias" if name in BIAS_VARIABLES else "census"}

    def mixed(latent, mixing, noise_sd):
        clean = latents[latent] + noise_sd * rng.standard_normal(n_cells)
        clean = zscore(_rank_decorrelate(clean, bias))
        return (1 - mixing) * clean + mixing * bias

    n_model = len(temporal) + sum(1 for n in census.columns if n not in BIAS_VARIABLES)
    for gi, grp in enumerate(cfg.redundancy_groups):
        for j, m in enumerate(grp.mixing):
            sd = cfg.noise_sd if grp.noise is None else grp.noise[j]
            name = f"group{gi}.member{j}"
            columns[name] = mixed(grp.latent, m, sd)[cell]
            info[name] = {"kind": "group", "group": gi, "latent": grp.latent,
                          "mixing": m, "noise": sd}
            n_model += 1
    # fillers avoid the grouped latents so each group owns its signal
    grouped = {g.latent for g in cfg.redundancy_groups}
    filler_latents = [l for l in range(cfg.n_latent_risk) if l not in grouped] or list(
        range(cfg.n_latent_risk))
    k = 0
    while n_model < cfg.n_features:
        latent = filler_latents[k % len(filler_latents)]
        m = 0.0
        sd = float(cfg.noise_sd * (1 + 2 * rng.random()))
        name = f"feature{k:02d}"
        columns[name] = mixed(latent, m, sd)[cell]
        info[name] = {"kind": "filler", "latent": latent, "mixing": m, "noise": sd}
        n_model += 1
        k += 1

    names = list(columns)
    table = ChrononTable(
        shift, cell, rows[cell], cols[cell], np.column_stack([columns[n] for n in names]),
        names, count, (count > 0).astype(int), np.ones(len(cell)),
    )
    truth = {
        "config": _config_dict(cfg),
        "bias_variables": [n for n in BIAS_VARIABLES if n in census.columns],
        "exempt_features": temporal,
        "features": info,
        "crime_intercept": intercept,
        "bias_field": bias.tolist(),
        "latent_fields": [l.tolist() for l in latents],
    }
    return table, truth


def _config_dict(cfg):
    d = asdict(cfg)
    d["redundancy_groups"] = [
        {"latent": g.latent, "mixing": list(g.mixing),
         "noise": None if g.noise is None else list(g.noise)}
        for g in cfg.redundancy_groups]
    return d


def write_city(table, truth, out_dir):
    """Write the three chronon CSVs and ``truth.json``; returns the paths."""
    out_dir = Path(out_dir)
    paths = write_chronon_csv(table, out_dir)
    truth_path = out_dir / "truth.json"
    with open(truth_path, "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return paths + [truth_path]
