"""Boosted model containers, prediction, gain importance and JSON I/O."""
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.special import expit

from ._kernels import LEAF, _predict_tree

SCHEMA_VERSION = 1


class DegenerateModelError(ValueError):
    """Training data admits no model (single class, or no split gain)."""


@dataclass(frozen=True)
class GbtParams:
    """Learner hyperparameters. Defaults are the production values."""

    eta: float = 0.1
    gamma: float = 2.0
    max_depth: int = 5
    min_child_weight: float = 6.0
    max_delta_step: float = 2.0
    subsample: float = 0.86
    colsample_bytree: float = 0.42
    reg_lambda: float = 4.0
    alpha: float = 4.0
    nrounds: int = 500
    early_stopping_rounds: int = 10
    scale_pos_weight: float = 1.0
    nfold: int = 4
    seed: int = 0
    tree_method: str = "exact"

    def __post_init__(self):
        checks = [
            (self.eta >= 0, "eta must be >= 0"),
            (self.gamma >= 0, "gamma must be >= 0"),
            (self.max_depth >= 1, "max_depth must be >= 1"),
            (self.max_depth <= 16, "max_depth must be <= 16"),
            (self.min_child_weight >= 0, "min_child_weight must be >= 0"),
            (self.max_delta_step >= 0, "max_delta_step must be >= 0"),
            (0 < self.subsample <= 1, "subsample must lie in (0, 1]"),
            (0 < self.colsample_bytree <= 1, "colsample_bytree must lie in (0, 1]"),
            (self.reg_lambda >= 0, "lambda must be >= 0"),
            (self.alpha >= 0, "alpha must be >= 0"),
            (self.nrounds >= 1, "nrounds must be >= 1"),
            (self.early_stopping_rounds >= 1, "early_stopping_rounds must be >= 1"),
            (self.scale_pos_weight > 0, "scale_pos_weight must be > 0"),
            (self.nfold >= 2, "nfold must be >= 2"),
            (self.tree_method in ("exact", "hist"), "tree_method must be 'exact' or 'hist'"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    def replace(self, **changes):
        if "lambda" in changes:
            changes["reg_lambda"] = changes.pop("lambda")
        return GbtParams(**{**asdict(self), **changes})

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "lambda" in data:
            data["reg_lambda"] = data.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown learner parameters: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True, eq=False)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    cover: np.ndarray

    @property
    def n_nodes(self):
        return len(self.feature)

    def is_leaf(self):
        return self.feature == LEAF

    def depth(self):
        depth = np.zeros(self.n_nodes, dtype=int)
        for nd in range(self.n_nodes):
            if self.feature[nd] != LEAF:
                depth[self.left[nd]] = depth[nd] + 1
                depth[self.right[nd]] = depth[nd] + 1
        return int(depth.max())

    def add_to(self, X, out):
        _predict_tree(X, self.feature, self.threshold, self.left, self.right, self.value, out)


def _logit(p):
    return float(np.log(p) - np.log1p(-p))


@dataclass(eq=False)
class BoostedModel:
    trees: list
    base_score: float
    feature_names: tuple
    best_iteration: int
    params: GbtParams = field(default_factory=GbtParams)
    history: list = field(default_factory=list)

    @property
    def base_margin(self):
        return float(np.clip(_logit(self.base_score), -10.0, 10.0))

    def _matrix(self, features, feature_names=None):
        if feature_names is None:
            X = np.asarray(features, dtype=float)
            if X.ndim != 2 or X.shape[1] != len(self.feature_names):
                raise ValueError("feature matrix does not match model features")
            return np.ascontiguousarray(X)
        names = list(feature_names)
        missing = [n for n in self.feature_names if n not in names]
        if missing:
            raise KeyError(f"missing feature columns: {missing}")
        idx = [names.index(n) for n in self.feature_names]
        return np.ascontiguousarray(np.asarray(features, dtype=float)[:, idx])

    def predict_margin(self, features, feature_names=None, n_trees=None):
        X = self._matrix(features, feature_names)
        out = np.full(X.shape[0], self.base_margin)
        n_trees = self.best_iteration if n_trees is None else n_trees
        for tree in self.trees[:n_trees]:
            tree.add_to(X, out)
        return out

    def to_dict(self):
        return {
            "schema": "fairtrim.boosted_model",
            "version": SCHEMA_VERSION,
            "feature_names": list(self.feature_names),
            "base_score": self.base_score,
            "best_iteration": self.best_iteration,
            "params": asdict(self.params),
            "history": [float(v) for v in self.history],
            "trees": [
                {
                    "nodes": [
                        {
                            "feature": (None if t.feature[k] == LEAF
                                        else self.feature_names[t.feature[k]]),
                            "threshold": float(t.threshold[k]),
                            "left": int(t.left[k]),
                            "right": int(t.right[k]),
                            "value": float(t.value[k]),
                            "gain": float(t.gain[k]),
                            "cover": float(t.cover[k]),
                        }
                        for k in range(t.n_nodes)
                    ]
                }
                for t in self.trees
            ],
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("schema") != "fairtrim.boosted_model":
            raise ValueError("not a boosted model document")
        if doc.get("version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported model schema version {doc.get('version')}")
        names = tuple(doc["feature_names"])
        trees = []
        for t in doc["trees"]:
            nodes = t["nodes"]
            trees.append(Tree(
                np.array([LEAF if n["feature"] is None else names.index(n["feature"])
                          for n in nodes], dtype=np.int32),
                np.array([n["threshold"] for n in nodes], dtype=float),
                np.array([n["left"] for n in nodes], dtype=np.int32),
                np.array([n["right"] for n in nodes], dtype=np.int32),
                np.array([n["value"] for n in nodes], dtype=float),
                np.array([n["gain"] for n in nodes], dtype=float),
                np.array([n["cover"] for n in nodes], dtype=float),
            ))
        return cls(trees, float(doc["base_score"]), names, int(doc["best_iteration"]),
                   GbtParams(**doc["params"]), list(doc.get("history", [])))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def predict(model, features, feature_names=None):
    """Crime-presence probabilities from the first ``best_iteration`` trees.

    If ``feature_names`` is given, columns are looked up by name (extra
    columns are ignored); otherwise ``features`` must already be in the
    model's column order.
    """
    return expit(model.predict_margin(features, feature_names))


class ImportanceReport:
    """Normalized per-feature gain, sorted descending."""

    def __init__(self, entries):
        self.entries = [(str(f), float(g)) for f, g in entries]
        self._lookup = dict(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def __contains__(self, feature):
        return feature in self._lookup

    def __repr__(self):
        return f"ImportanceReport({self.entries!r})"

    def gain(self, feature):
        """Gain of ``feature``; 0 for features never used in a split."""
        return self._lookup.get(feature, 0.0)

    def as_dict(self):
        return dict(self.entries)

    @classmethod
    def from_raw(cls, raw):
        total = sum(raw.values())
        if not total > 0:
            raise ValueError("model has zero total split gain")
        items = sorted(((f, g / total) for f, g in raw.items() if g > 0),
                       key=lambda fg: (-fg[1], fg[0]))
        return cls(items)


def gain_importance(model):
    """Sum of recorded split gains per feature, normalized to one."""
    raw = {}
    for tree in model.trees[: model.best_iteration]:
        split = tree.feature != LEAF
        for f, g in zip(tree.feature[split], tree.gain[split]):
            name = model.feature_names[f]
            raw[name] = raw.get(name, 0.0) + float(g)
    if not raw:
        raise ValueError("model has no splits")
    return ImportanceReport.from_raw(raw)
