"""Ranking metrics: Mann-Whitney AUC with a stratified bootstrap interval, and
Spearman rank correlation with average ranks for ties."""
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata


@dataclass(frozen=True)
class AucResult:
    metric: float
    low_ci: float
    high_ci: float
    n_pos: int
    n_neg: int


def _split_classes(labels, scores):
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=float)
    if labels.shape != scores.shape or labels.ndim != 1:
        raise ValueError("labels and scores must be 1-d arrays of equal length")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative label")
    return pos, scores, n_pos, n_neg


def _auc_from_ranks(ranks, pos, n_pos, n_neg):
    return (ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auc(labels, scores):
    """Probability that a random positive outscores a random negative.

    Ties count one half. Uses the rank-sum form of the Mann-Whitney U
    statistic, so the cost is one sort.
    """
    pos, scores, n_pos, n_neg = _split_classes(labels, scores)
    return float(_auc_from_ranks(rankdata(scores), pos, n_pos, n_neg))


def bootstrap_auc_ci(labels, scores, resamples=2000, level=0.95, seed=0):
    """Point AUC plus a percentile interval from a stratified bootstrap.

    Positives and negatives are resampled separately with replacement so every
    replicate keeps the original class counts.
    """
    if resamples < 100:
        raise ValueError("resamples must be >= 100")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    pos, scores, n_pos, n_neg = _split_classes(labels, scores)
    point = _auc_from_ranks(rankdata(scores), pos, n_pos, n_neg)

    rng = np.random.default_rng(seed)
    pos_scores = scores[pos]
    neg_scores = scores[~pos]
    mask = np.zeros(n_pos + n_neg, dtype=bool)
    mask[:n_pos] = True
    stats = np.empty(resamples)
    for b in range(resamples):
        sample = np.concatenate([
            pos_scores[rng.integers(0, n_pos, n_pos)],
            neg_scores[rng.integers(0, n_neg, n_neg)],
        ])
        stats[b] = _auc_from_ranks(rankdata(sample), mask, n_pos, n_neg)

    tail = (1.0 - level) / 2.0
    low, high = np.quantile(stats, [tail, 1.0 - tail])
    # percentile bounds can miss the point estimate on tiny samples
    low = min(float(low), point)
    high = max(float(high), point)
    return AucResult(float(point), low, high, n_pos, n_neg)


def spearman(x, y):
    """Spearman's rho as the Pearson correlation of average ranks.

    Returns ``None`` (undefined) when either input has no rank variance,
    e.g. a constant column.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("length mismatch between x and y")
    if x.size < 2:
        raise ValueError("spearman needs at least two observations")
    rx = rankdata(x)
    ry = rankdata(y)
    rx -= rx.mean()
    ry -= ry.mean()
    sxx = rx @ rx
    syy = ry @ ry
    if sxx == 0.0 or syy == 0.0:
        return None
    return float(np.clip((rx @ ry) / np.sqrt(sxx * syy), -1.0, 1.0))


def spearman_matrix(features, targets):
    """Spearman correlations between every column of ``features`` and every
    column of ``targets``; shape ``(n_features, n_targets)``. Undefined
    entries are NaN."""
    features = np.asarray(features, dtype=float)
    targets = np.asarray(targets, dtype=float)
    fr = rankdata(features, axis=0)
    tr = rankdata(targets, axis=0)
    fr -= fr.mean(axis=0)
    tr -= tr.mean(axis=0)
    fn = np.sqrt((fr * fr).sum(axis=0))
    tn = np.sqrt((tr * tr).sum(axis=0))
    with np.errstate(divide="ignore", invalid="ignore"):
        out = (fr.T @ tr) / np.outer(fn, tn)
    out[(fn == 0)[:, None] | (tn == 0)[None, :]] = np.nan
    return np.clip(out, -1.0, 1.0)
