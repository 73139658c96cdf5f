"""Second-order boosting for weighted binary logistic loss."""
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.special import expit, log_expit

from ..metrics import auc
from ._kernels import LEAF, _grow, make_bins, presort
from .model import BoostedModel, DegenerateModelError, GbtParams, Tree

# search box of the hyperparameter tuner
TUNER_BOUNDS = {
    "max_depth": (1, 13),
    "eta": (0.02, 0.3),
    "subsample": (0.5, 1.0),
    "colsample_bytree": (0.2, 1.0),
}


def logistic_grad_hess(prediction_raw, label, weight=1.0, pos_scale=1.0):
    """Gradient and hessian of the weighted logistic loss w.r.t. the margin.

    Positive rows have their weight multiplied by ``pos_scale``. Works on
    scalars or arrays.
    """
    label = np.asarray(label, dtype=float)
    w = np.asarray(weight, dtype=float) * np.where(label == 1, pos_scale, 1.0)
    p = expit(np.asarray(prediction_raw, dtype=float))
    grad = w * (p - label)
    hess = w * p * (1.0 - p)
    if grad.ndim == 0:
        return float(grad), float(hess)
    return grad, hess


def logistic_loss(margin, label, weight=1.0, pos_scale=1.0):
    """Weighted negative log-likelihood summed over rows."""
    label = np.asarray(label, dtype=float)
    w = np.asarray(weight, dtype=float) * np.where(label == 1, pos_scale, 1.0)
    margin = np.asarray(margin, dtype=float)
    nll = -(label * log_expit(margin) + (1.0 - label) * log_expit(-margin))
    return float(np.sum(w * nll))


def training_objective(model, X, y, weights, n_trees=None):
    """Weighted logistic loss plus L2/L1 penalties on the (shrunken) leaf
    values of the first ``n_trees`` trees."""
    n_trees = len(model.trees) if n_trees is None else n_trees
    p = model.params
    margin = model.predict_margin(X, n_trees=n_trees)
    penalty = 0.0
    for tree in model.trees[:n_trees]:
        leaves = tree.value[tree.feature == LEAF]
        penalty += 0.5 * p.reg_lambda * np.sum(leaves ** 2) + p.alpha * np.sum(np.abs(leaves))
    return logistic_loss(margin, y, weights, p.scale_pos_weight) + penalty


class Booster:
    """Incremental boosting state over one training matrix."""

    def __init__(self, X, y, weights, params, seed, X_eval=None):
        self.X = np.ascontiguousarray(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        self.params = params
        n, n_feat = self.X.shape
        self.eff_w = np.asarray(weights, dtype=float) * np.where(
            self.y == 1, params.scale_pos_weight, 1.0)
        total = self.eff_w.sum()
        rate = (self.eff_w @ self.y) / total if total > 0 else 0.5
        rate = min(max(rate, 1e-12), 1 - 1e-12)
        self.base_score = float(expit(np.clip(np.log(rate) - np.log1p(-rate), -10, 10)))
        base_margin = np.clip(np.log(self.base_score) - np.log1p(-self.base_score), -10, 10)
        self.margin = np.full(n, base_margin)
        self.X_eval = None if X_eval is None else np.ascontiguousarray(X_eval, dtype=float)
        self.eval_margin = None if X_eval is None else np.full(len(X_eval), base_margin)
        self.rng = np.random.default_rng(seed)
        self.trees = []

        if params.tree_method == "hist":
            self._bins, self._cuts, self._n_cuts = make_bins(self.X)
            self._order = np.zeros((n_feat, 0), dtype=np.int64)
            self._sorted = np.zeros((n_feat, 0))
        else:
            self._order, self._sorted = presort(self.X)
            self._bins = np.zeros((0, n_feat), dtype=np.uint8)
            self._cuts = np.zeros((n_feat, 1))
            self._n_cuts = np.zeros(n_feat, dtype=np.int64)

    def step(self):
        p = self.params
        n, n_feat = self.X.shape
        prob = expit(self.margin)
        g = self.eff_w * (prob - self.y)
        h = self.eff_w * prob * (1.0 - prob)
        if p.subsample < 1.0:
            row_node = np.where(self.rng.random(n) < p.subsample, 0, -1).astype(np.int64)
        else:
            row_node = np.zeros(n, dtype=np.int64)
        if p.colsample_bytree < 1.0:
            k = max(1, int(round(p.colsample_bytree * n_feat)))
            feats = np.sort(self.rng.choice(n_feat, size=k, replace=False)).astype(np.int64)
        else:
            feats = np.arange(n_feat, dtype=np.int64)
        arrays = _grow(self.X, self._order, self._sorted, self._bins, self._cuts, self._n_cuts,
                       p.tree_method == "hist", g, h, row_node, feats, p.max_depth,
                       p.reg_lambda, p.gamma, p.min_child_weight, p.alpha,
                       p.max_delta_step, p.eta)
        tree = Tree(*arrays)
        tree.add_to(self.X, self.margin)
        if self.X_eval is not None:
            tree.add_to(self.X_eval, self.eval_margin)
        self.trees.append(tree)
        return tree


def _check_labels(y):
    if y.min() == y.max():
        raise DegenerateModelError("all training labels are identical")


def train_arrays(X, y, weights, params, X_val=None, y_val=None, feature_names=None):
    """Fit on plain arrays. With a validation set, stop once validation AUC
    has not improved for ``early_stopping_rounds`` rounds; otherwise run
    exactly ``nrounds`` rounds."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if feature_names is None:
        feature_names = tuple(f"f{i}" for i in range(X.shape[1]))
    if X.shape[1] == 0:
        raise DegenerateModelError("no features to train on")
    _check_labels(y)
    booster = Booster(X, y, weights, params, params.seed, X_val)
    history = []
    best_auc = -np.inf
    best_iteration = params.nrounds
    since_best = 0
    for t in range(params.nrounds):
        booster.step()
        if X_val is None:
            continue
        score = auc(y_val, booster.eval_margin)
        history.append(score)
        if score > best_auc:
            best_auc, best_iteration, since_best = score, t + 1, 0
        else:
            since_best += 1
            if since_best >= params.early_stopping_rounds:
                break
    return BoostedModel(booster.trees, booster.base_score, tuple(feature_names),
                        best_iteration, params, history)


def train(train, validate, weights, params=None):
    """Fit on a training ChrononTable, early-stopping on ``validate``.

    ``validate`` may be ``None`` to run exactly ``params.nrounds`` rounds.
    """
    params = params or GbtParams()
    X_val = y_val = None
    if validate is not None:
        X_val, y_val = validate.features, validate.presence
    return train_arrays(train.features, train.presence, weights, params, X_val, y_val,
                        train.feature_names)


def stratified_folds(y, nfold, seed):
    """Index pairs ``(train_idx, test_idx)`` with each class dealt round-robin
    over folds after a seeded shuffle."""
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(y), dtype=np.int64)
    for cls in np.unique(y):
        members = np.flatnonzero(y == cls)
        fold_of[rng.permutation(members)] = np.arange(len(members)) % nfold
    return [(np.flatnonzero(fold_of != k), np.flatnonzero(fold_of == k)) for k in range(nfold)]


def cross_validate_rounds(train, weights, params=None, threads=1, folds=None):
    """Number of boosting rounds maximizing mean held-out fold AUC.

    Folds advance in lockstep and stop once the mean has not improved for
    ``early_stopping_rounds`` rounds. ``folds`` overrides the stratified
    split. Threads only change wall time, never the result.
    """
    params = params or GbtParams()
    X = np.asarray(train.features, dtype=float)
    y = np.asarray(train.presence)
    weights = np.asarray(weights, dtype=float)
    _check_labels(y)
    if folds is None:
        if params.nfold > len(y):
            raise ValueError("more folds than training rows")
        folds = stratified_folds(y, params.nfold, [params.seed, 1])
    boosters = []
    for k, (tr, te) in enumerate(folds):
        for part in (tr, te):
            if len(np.unique(y[part])) < 2:
                raise ValueError(f"fold {k} lacks a class")
        boosters.append((Booster(X[tr], y[tr], weights[tr], params, [params.seed, 2, k], X[te]),
                         y[te]))

    def advance(item):
        booster, y_te = item
        booster.step()
        return auc(y_te, booster.eval_margin)

    best_mean = -np.inf
    best_round = 1
    since_best = 0
    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        for t in range(params.nrounds):
            if pool is None:
                scores = [advance(b) for b in boosters]
            else:
                scores = list(pool.map(advance, boosters))
            mean = float(np.mean(scores))
            if mean > best_mean:
                best_mean, best_round, since_best = mean, t + 1, 0
            else:
                since_best += 1
                if since_best >= params.early_stopping_rounds:
                    break
    finally:
        if pool is not None:
            pool.shutdown()
    return best_round


def random_search(train, validate, weights, params=None, n_iter=18, seed=0):
    """Seeded random search over ``TUNER_BOUNDS`` scored by best validation
    AUC under early stopping. Returns the winning ``GbtParams``."""
    params = params or GbtParams()
    rng = np.random.default_rng(seed)
    best, best_score = params, -np.inf
    for _ in range(n_iter):
        lo, hi = TUNER_BOUNDS["max_depth"]
        candidate = params.replace(
            max_depth=int(rng.integers(lo, hi + 1)),
            eta=float(rng.uniform(*TUNER_BOUNDS["eta"])),
            subsample=float(rng.uniform(*TUNER_BOUNDS["subsample"])),
            colsample_bytree=float(rng.uniform(*TUNER_BOUNDS["colsample_bytree"])),
        )
        model = train_arrays(train.features, train.presence, weights, candidate,
                             validate.features, validate.presence, train.feature_names)
        score = max(model.history)
        if score > best_score:
            best, best_score = candidate, score
    return best
