"""Compiled inner loops for level-wise tree growth.

Both growers scan features in ascending index order and candidate thresholds
in ascending value order, replacing the incumbent only on a strictly larger
score. Summation order is fixed, so results do not depend on threading.
"""
import numpy as np
from numba import njit

LEAF = -1


@njit(cache=True, nogil=True)
def _leaf_value(G, H, lam, alpha, max_delta_step, eta):
    a = abs(G) - alpha
    if a <= 0.0:
        return 0.0
    w = a / (H + lam)
    if G > 0.0:
        w = -w
    if max_delta_step > 0.0:
        if w > max_delta_step:
            w = max_delta_step
        elif w < -max_delta_step:
            w = -max_delta_step
    return eta * w


@njit(cache=True, nogil=True)
def _split_score(GL, HL, GR, HR, G, H, lam, gamma):
    return 0.5 * (GL * GL / (HL + lam) + GR * GR / (HR + lam) - G * G / (H + lam)) - gamma


@njit(cache=True, nogil=True)
def _midpoint(a, b):
    m = a + (b - a) * 0.5
    if m <= a:
        m = b
    return m


@njit(cache=True, nogil=True)
def _grow(X, order, sorted_x, bins, cuts, n_cuts, use_hist, g, h, row_node, feats,
          max_depth, lam, gamma, min_child_weight, alpha, max_delta_step, eta):
    """Grow one tree. ``row_node`` holds 0 for sampled rows and -1 otherwise;
    it is overwritten with each row's final node id.

    Returns parallel node arrays (feature, threshold, left, right, value,
    gain, cover) trimmed to the number of nodes created.
    """
    n = X.shape[0]
    max_nodes = 2 ** (max_depth + 1) - 1
    feature = np.full(max_nodes, LEAF, dtype=np.int32)
    threshold = np.zeros(max_nodes)
    left = np.full(max_nodes, -1, dtype=np.int32)
    right = np.full(max_nodes, -1, dtype=np.int32)
    value = np.zeros(max_nodes)
    gain = np.zeros(max_nodes)
    cover = np.zeros(max_nodes)
    Gs = np.zeros(max_nodes)

    G0 = 0.0
    H0 = 0.0
    for i in range(n):
        if row_node[i] == 0:
            G0 += g[i]
            H0 += h[i]
    Gs[0] = G0
    cover[0] = H0
    n_nodes = 1

    is_open = np.zeros(max_nodes, dtype=np.bool_)
    is_open[0] = True
    level_start = 0
    level_end = 1

    best_score = np.zeros(max_nodes)
    best_feat = np.full(max_nodes, -1, dtype=np.int32)
    best_thr = np.zeros(max_nodes)
    best_bin = np.zeros(max_nodes, dtype=np.int32)
    GL = np.zeros(max_nodes)
    HL = np.zeros(max_nodes)
    last = np.zeros(max_nodes)
    seen = np.zeros(max_nodes, dtype=np.bool_)
    # hist buffers, one slot per node of the current level
    width = 2 ** max_depth
    hG = np.zeros((width, 256))
    hH = np.zeros((width, 256))
    hN = np.zeros((width, 256), dtype=np.int64)

    for depth in range(max_depth):
        any_open = False
        for nd in range(level_start, level_end):
            if cover[nd] < 2.0 * min_child_weight:
                is_open[nd] = False
            if is_open[nd]:
                any_open = True
            best_score[nd] = 0.0
            best_feat[nd] = -1
        if not any_open:
            break

        for fi in range(feats.shape[0]):
            f = feats[fi]
            if use_hist:
                for s in range(level_end - level_start):
                    for b in range(n_cuts[f] + 1):
                        hG[s, b] = 0.0
                        hH[s, b] = 0.0
                        hN[s, b] = 0
                for i in range(n):
                    nd = row_node[i]
                    if nd < 0 or not is_open[nd]:
                        continue
                    s = nd - level_start
                    b = bins[i, f]
                    hG[s, b] += g[i]
                    hH[s, b] += h[i]
                    hN[s, b] += 1
                for nd in range(level_start, level_end):
                    if not is_open[nd]:
                        continue
                    s = nd - level_start
                    G = Gs[nd]
                    H = cover[nd]
                    total = 0
                    for b in range(n_cuts[f] + 1):
                        total += hN[s, b]
                    gl = 0.0
                    hl = 0.0
                    nl = 0
                    for b in range(n_cuts[f]):
                        gl += hG[s, b]
                        hl += hH[s, b]
                        nl += hN[s, b]
                        if hN[s, b] == 0 or nl == 0 or nl == total:
                            continue
                        hr = H - hl
                        if hl >= min_child_weight and hr >= min_child_weight:
                            sc = _split_score(gl, hl, G - gl, hr, G, H, lam, gamma)
                            if sc > best_score[nd]:
                                best_score[nd] = sc
                                best_feat[nd] = f
                                best_thr[nd] = cuts[f, b]
                                best_bin[nd] = b
            else:
                for nd in range(level_start, level_end):
                    GL[nd] = 0.0
                    HL[nd] = 0.0
                    seen[nd] = False
                for k in range(n):
                    i = order[f, k]
                    nd = row_node[i]
                    if nd < 0 or not is_open[nd]:
                        continue
                    x = sorted_x[f, k]
                    if seen[nd] and x != last[nd]:
                        hl = HL[nd]
                        hr = cover[nd] - hl
                        if hl >= min_child_weight and hr >= min_child_weight:
                            gl = GL[nd]
                            sc = _split_score(gl, hl, Gs[nd] - gl, hr, Gs[nd], cover[nd],
                                              lam, gamma)
                            if sc > best_score[nd]:
                                best_score[nd] = sc
                                best_feat[nd] = f
                                best_thr[nd] = _midpoint(last[nd], x)
                    GL[nd] += g[i]
                    HL[nd] += h[i]
                    last[nd] = x
                    seen[nd] = True

        next_start = n_nodes
        for nd in range(level_start, level_end):
            if not is_open[nd] or best_feat[nd] < 0:
                continue
            feature[nd] = best_feat[nd]
            threshold[nd] = best_thr[nd]
            gain[nd] = best_score[nd]
            left[nd] = n_nodes
            right[nd] = n_nodes + 1
            is_open[n_nodes] = True
            is_open[n_nodes + 1] = True
            n_nodes += 2
        if n_nodes == next_start:
            break

        for nd in range(next_start, n_nodes):
            Gs[nd] = 0.0
            cover[nd] = 0.0
        for i in range(n):
            nd = row_node[i]
            if nd < level_start or nd >= level_end or feature[nd] == LEAF:
                continue
            f = feature[nd]
            if use_hist:
                go_left = bins[i, f] <= best_bin[nd]
            else:
                go_left = X[i, f] < threshold[nd]
            child = left[nd] if go_left else right[nd]
            row_node[i] = child
            Gs[child] += g[i]
            cover[child] += h[i]
        level_start = next_start
        level_end = n_nodes

    for nd in range(n_nodes):
        value[nd] = _leaf_value(Gs[nd], cover[nd], lam, alpha, max_delta_step, eta)
    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(), left[:n_nodes].copy(),
            right[:n_nodes].copy(), value[:n_nodes].copy(), gain[:n_nodes].copy(),
            cover[:n_nodes].copy())


@njit(cache=True, nogil=True)
def _predict_tree(X, feature, threshold, left, right, value, out):
    """Add the tree's leaf values to ``out`` in place."""
    for i in range(X.shape[0]):
        nd = 0
        while feature[nd] != LEAF:
            if X[i, feature[nd]] < threshold[nd]:
                nd = left[nd]
            else:
                nd = right[nd]
        out[i] += value[nd]


def presort(X):
    """Row order per feature and the values in that order, both shaped
    ``(n_features, n_rows)``; stable."""
    order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T.astype(np.int64))
    return order, np.ascontiguousarray(np.take_along_axis(X.T, order, axis=1))


def make_bins(X, max_bins=256):
    """Quantize each column into at most ``max_bins`` bins.

    Cut points are midpoints between consecutive distinct values when a column
    has at most ``max_bins`` of them, so histogram splits reproduce exact
    splits on such data. Row ``i`` falls in bin ``#(cuts <= x)``.
    """
    n, F = X.shape
    cuts = np.zeros((F, max_bins - 1))
    n_cuts = np.zeros(F, dtype=np.int64)
    bins = np.zeros((n, F), dtype=np.uint8)
    for f in range(F):
        u = np.unique(X[:, f])
        if len(u) <= max_bins:
            c = u[:-1] + (u[1:] - u[:-1]) * 0.5
            c = np.where(c <= u[:-1], u[1:], c)
        else:
            q = np.quantile(X[:, f], np.linspace(0, 1, max_bins + 1)[1:-1], method="higher")
            c = np.unique(q)
        n_cuts[f] = len(c)
        cuts[f, : len(c)] = c
        bins[:, f] = np.searchsorted(c, X[:, f], side="right")
    return bins, cuts, n_cuts
