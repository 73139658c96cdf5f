"""Chronon tables: loading, validation, train/validation partitioning and
temporal weighting.

A chronon is one (raster cell, police shift) pair. Every table carries the
four key columns ``datetime, cellid, row, col`` alongside the feature matrix,
the crime count/presence labels and a per-row base weight.
"""
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import DataError

KEY_COLUMNS = ("datetime", "cellid", "row", "col")
LABEL_COLUMNS = ("count", "presence")
WEIGHT_STRATEGIES = ("constant", "exponential")


class DegenerateSplitError(DataError):
    """A partition left the train or validation side without positives."""


@dataclass(frozen=True, eq=False)
class ChrononTable:
    datetime: np.ndarray
    cellid: np.ndarray
    row: np.ndarray
    col: np.ndarray
    features: np.ndarray
    feature_names: tuple
    count: np.ndarray
    presence: np.ndarray
    base_weights: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.datetime)
        if self.base_weights is None:
            object.__setattr__(self, "base_weights", np.ones(n))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        feats = np.asarray(self.features, dtype=float)
        if feats.ndim != 2:
            feats = feats.reshape(n, -1)
        object.__setattr__(self, "features", feats)
        for name in ("cellid", "row", "col", "count", "presence"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64))
        object.__setattr__(self, "datetime", np.asarray(self.datetime, dtype=np.int64))
        object.__setattr__(self, "base_weights", np.asarray(self.base_weights, dtype=float))
        self.validate()

    def validate(self):
        n = len(self.datetime)
        arrays = [self.cellid, self.row, self.col, self.count, self.presence,
                  self.base_weights, self.features]
        if any(len(a) != n for a in arrays):
            raise DataError("parallel arrays have unequal row counts")
        if self.features.shape[1] != len(self.feature_names):
            raise DataError("feature name count does not match feature columns")
        if len(set(self.feature_names)) != len(self.feature_names):
            raise DataError("duplicate feature names")
        overlap = set(self.feature_names) & set(KEY_COLUMNS + LABEL_COLUMNS)
        if overlap:
            raise DataError(f"reserved column names used as features: {sorted(overlap)}")
        if np.isnan(self.features).any() or np.isnan(self.base_weights).any():
            raise DataError("NaN values in chronon table")
        if (self.row < 0).any() or (self.col < 0).any():
            raise DataError("row and col must be non-negative")
        if (self.count < 0).any():
            raise DataError("counts must be non-negative")
        if (self.base_weights < 0).any():
            raise DataError("base weights must be non-negative")
        if not np.array_equal(self.presence, (self.count > 0).astype(np.int64)):
            raise DataError("presence inconsistent with count")
        keys = self.datetime.astype(np.int64) * (self.cellid.max(initial=0) + 1) + self.cellid
        if n and len(np.unique(keys)) != n:
            raise DataError("duplicate (datetime, cellid) keys")

    def __len__(self):
        return len(self.datetime)

    @property
    def n_positive(self):
        return int(self.presence.sum())

    def take(self, index):
        index = np.asarray(index)
        return ChrononTable(
            self.datetime[index], self.cellid[index], self.row[index], self.col[index],
            self.features[index], self.feature_names, self.count[index],
            self.presence[index], self.base_weights[index],
        )

    def column(self, name):
        return self.features[:, self.feature_names.index(name)]

    def select(self, names):
        """Return a table restricted to ``names`` (in the given order)."""
        missing = [n for n in names if n not in self.feature_names]
        if missing:
            raise DataError(f"unknown features: {missing}")
        idx = [self.feature_names.index(n) for n in names]
        return ChrononTable(
            self.datetime, self.cellid, self.row, self.col, self.features[:, idx],
            tuple(names), self.count, self.presence, self.base_weights,
        )

    def drop(self, names):
        names = set(names)
        return self.select([n for n in self.feature_names if n not in names])

    def to_frames(self):
        """Features, labels and weights frames in the on-disk CSV layout."""
        keys = pd.DataFrame({
            "datetime": self.datetime, "cellid": self.cellid,
            "row": self.row, "col": self.col,
        })
        feats = pd.concat(
            [keys, pd.DataFrame(self.features, columns=list(self.feature_names))], axis=1)
        labels = keys.assign(count=self.count, presence=self.presence)
        weights = keys.assign(weight=self.base_weights)
        return feats, labels, weights


@dataclass(frozen=True, eq=False)
class SplitResult:
    train: ChrononTable
    validate: ChrononTable
    class_ratio_r: float


def _read_keyed(path, required):
    try:
        frame = pd.read_csv(path, encoding="utf-8", float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    cols = list(frame.columns)
    if tuple(cols[:4]) != KEY_COLUMNS:
        raise DataError(f"{path}: first four columns must be {','.join(KEY_COLUMNS)}")
    for name in required:
        if name not in cols:
            raise DataError(f"{path}: missing column {name!r}")
    if frame.isna().any().any():
        raise DataError(f"{path}: NaN or empty cell")
    if frame.duplicated(["datetime", "cellid"]).any():
        raise DataError(f"{path}: duplicate (datetime, cellid) keys")
    return frame


def _align(base, other, path):
    if len(other) != len(base):
        raise DataError(f"key mismatch: {path} has {len(other)} rows, expected {len(base)}")
    merged = base[["datetime", "cellid"]].merge(
        other, on=["datetime", "cellid"], how="left", suffixes=("", "_other"),
        indicator=True, validate="one_to_one")
    if (merged["_merge"] != "both").any():
        raise DataError(f"key mismatch between features and {path}")
    return merged.drop(columns="_merge")


def load_chronon_csv(features_path, labels_path, weights_path=None):
    """Read the features/labels(/weights) CSV triple into a ChrononTable.

    Rows are joined on ``(datetime, cellid)`` and returned in the order of the
    features file. Without a weights file every base weight is 1.
    """
    feats = _read_keyed(features_path, ())
    labels = _align(feats, _read_keyed(labels_path, LABEL_COLUMNS), labels_path)
    if weights_path is not None:
        weights = _align(feats, _read_keyed(weights_path, ("weight",)), weights_path)["weight"]
        weights = weights.to_numpy(dtype=float)
    else:
        weights = np.ones(len(feats))

    names = [c for c in feats.columns if c not in KEY_COLUMNS]
    try:
        values = feats[names].to_numpy(dtype=float)
    except ValueError as exc:
        raise DataError(f"{features_path}: non-numeric feature values") from exc
    count = labels["count"].to_numpy()
    presence = labels["presence"].to_numpy()
    if ((count > 0).astype(int) != presence).any():
        raise DataError("presence inconsistent with count")
    return ChrononTable(
        feats["datetime"].to_numpy(), feats["cellid"].to_numpy(),
        feats["row"].to_numpy(), feats["col"].to_numpy(), values, names,
        count, presence, weights,
    )


def write_chronon_csv(table, out_dir, prefix=""):
    """Write a table as ``features.csv``, ``labels.csv`` and ``weights.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, frame in zip(("features", "labels", "weights"), table.to_frames()):
        path = out_dir / f"{prefix}{name}.csv"
        frame.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
        paths.append(path)
    return paths


def holdout_last(table, fraction):
    """Split off the chronons in the latest ``fraction`` of distinct shifts as
    a hold-out test set. Returns ``(pool, test)``."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    shifts = np.unique(table.datetime)
    n_test = max(1, int(round(fraction * len(shifts))))
    if n_test >= len(shifts):
        raise DataError("not enough distinct shifts for a hold-out set")
    cutoff = shifts[-n_test]
    test = table.datetime >= cutoff
    return table.take(np.flatnonzero(~test)), table.take(np.flatnonzero(test))


def partition_train_val(table, limit_obs, limit_val=None, seed=0, floor=100_000):
    """Stratified train/validation partition.

    When fewer than ``floor`` rows would remain outside ``limit_obs`` the train
    size falls back to two thirds of the table. Rows are stratified on the
    integer crime count; a stratum with a single row always goes to train.
    """
    n = len(table)
    if n == 0:
        raise DataError("empty table")
    if table.n_positive == 0 or table.n_positive == n:
        raise DataError("table needs both positive and negative labels")
    if limit_obs < 1:
        raise ValueError("limit_obs must be positive")
    if n - limit_obs < floor:
        limit_obs = round(n * 0.666)
    frac = min(limit_obs / n, 1.0)

    rng = np.random.default_rng(seed)
    train_idx = []
    for value in np.unique(table.count):
        members = np.flatnonzero(table.count == value)
        if len(members) == 1:
            train_idx.append(members)
            continue
        k = int(np.floor(frac * len(members) + 0.5))
        train_idx.append(np.sort(rng.choice(members, size=k, replace=False)))
    train_idx = np.sort(np.concatenate(train_idx))
    val_mask = np.ones(n, dtype=bool)
    val_mask[train_idx] = False
    val_idx = np.flatnonzero(val_mask)
    if limit_val is not None and limit_val < len(val_idx):
        val_idx = np.sort(rng.choice(val_idx, size=limit_val, replace=False))

    train = table.take(train_idx)
    validate = table.take(val_idx)
    if train.n_positive == 0 or validate.n_positive == 0:
        raise DegenerateSplitError("partition left a side without positive labels")
    return SplitResult(train, validate, len(train) / train.n_positive)


def exp_weight_halflife(indexes, halflife=56.0, zerobelow=0.01):
    """Weights ``2 ** -((max - index) / halflife)``; values under ``zerobelow``
    become zero."""
    indexes = np.asarray(indexes, dtype=float)
    if indexes.size == 0:
        raise ValueError("indexes must be non-empty")
    if halflife <= 0:
        raise ValueError("halflife must be positive")
    weights = np.exp2(-(indexes.max() - indexes) / halflife)
    return np.where(weights >= zerobelow, weights, 0.0)


def exp_weight_endat(indexes, endat=0.01):
    """Exponential weights reaching exactly ``endat`` at the earliest index."""
    indexes = np.asarray(indexes, dtype=float)
    if indexes.size == 0:
        raise ValueError("indexes must be non-empty")
    if not 0 < endat < 1:
        raise ValueError("endat must lie in (0, 1)")
    span = indexes.max() - indexes.min()
    if span <= 0:
        raise ValueError("degenerate index range")
    halflife = -span / np.log2(endat)
    return exp_weight_halflife(indexes, halflife, 0.0)


def _temporal_factor(table, strategy):
    if strategy == "constant":
        return np.ones(len(table))
    if strategy == "exponential":
        if np.ptp(table.datetime) == 0:
            return np.ones(len(table))
        return exp_weight_endat(table.datetime, 0.1)
    raise ValueError(f"unknown weight strategy {strategy!r}")


def generate_weights(split, strategy="constant"):
    """Per-row weights ``(train, validate)``: temporal factor times base weight."""
    return (_temporal_factor(split.train, strategy) * split.train.base_weights,
            _temporal_factor(split.validate, strategy) * split.validate.base_weights)
