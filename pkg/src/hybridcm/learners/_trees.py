"""Histogram tree kernels shared by the forest and boosting learners.

Features are pre-binned to uint8 codes; a split "code <= b" is stored
together with the raw threshold ``edges[b]`` so inference runs on raw
values.  All kernels are numba-compiled and deterministic given their seed.
"""
import numpy as np
from numba import njit

MAX_BINS = 255


def make_bin_edges(X, max_bins=MAX_BINS):
    """Per-feature split thresholds: midpoints of distinct values, or quantiles when there are too many."""
    edges = []
    for j in range(X.shape[1]):
        col = np.unique(X[:, j])
        if col.size > max_bins:
            q = np.linspace(0, 1, max_bins + 1)[1:-1]
            edges.append(np.unique(np.quantile(X[:, j], q, method="inverted_cdf")))
            continue
        edges.append((col[:-1] + col[1:]) / 2.0)
    return edges


def apply_bins(X, edges):
    out = np.empty(X.shape, dtype=np.uint8)
    for j, e in enumerate(edges):
        out[:, j] = np.searchsorted(e, X[:, j], side="left")
    return out


def edges_table(edges):
    width = max((len(e) for e in edges), default=0)
    table = np.full((len(edges), max(width, 1)), np.inf)
    for j, e in enumerate(edges):
        table[j, :len(e)] = e
    return table


# ---------------------------------------------------------------- forest


@njit(cache=True)
def _gini_sweep_sorted(codes, ys, n_classes, min_leaf, left, right):
    """Best 'code <= b' split for a small node by sorting; returns (score, b)."""
    n = codes.shape[0]
    order = np.argsort(codes, kind="mergesort")
    for c in range(n_classes):
        left[c] = 0
        right[c] = 0
    for i in range(n):
        right[ys[i]] += 1
    sl = 0.0
    sr = 0.0
    for c in range(n_classes):
        sr += right[c] * right[c]
    best = -1.0
    best_b = -1
    for k in range(n - 1):
        c = ys[order[k]]
        sl += 2 * left[c] + 1
        left[c] += 1
        sr -= 2 * right[c] - 1
        right[c] -= 1
        nl = k + 1
        nr = n - nl
        if codes[order[k]] == codes[order[k + 1]]:
            continue
        if nl < min_leaf or nr < min_leaf:
            continue
        score = sl / nl + sr / nr
        if score > best:
            best = score
            best_b = codes[order[k]]
    return best, best_b


@njit(cache=True)
def _gini_sweep_hist(codes, ys, n_classes, n_bins, min_leaf, hist, left, right):
    n = codes.shape[0]
    bmin = 255
    bmax = 0
    for i in range(n):
        b = codes[i]
        if b < bmin:
            bmin = b
        if b > bmax:
            bmax = b
    for b in range(bmin, bmax + 1):
        for c in range(n_classes):
            hist[b, c] = 0
    for c in range(n_classes):
        left[c] = 0
        right[c] = 0
    for i in range(n):
        hist[codes[i], ys[i]] += 1
        right[ys[i]] += 1
    sl = 0.0
    sr = 0.0
    for c in range(n_classes):
        sr += right[c] * right[c]
    nl = 0
    best = -1.0
    best_b = -1
    for b in range(bmin, bmax):
        moved = 0
        for c in range(n_classes):
            m = hist[b, c]
            if m > 0:
                sl += 2 * left[c] * m + m * m
                left[c] += m
                sr -= 2 * right[c] * m - m * m
                right[c] -= m
                moved += m
        if moved == 0:
            continue
        nl += moved
        nr = n - nl
        if nl < min_leaf or nr < min_leaf:
            continue
        score = sl / nl + sr / nr
        if score > best:
            best = score
            best_b = b
    return best, best_b


@njit(cache=True)
def grow_classification_tree(Xb, y, rows, n_classes, n_bins, mtry, max_depth, min_leaf, seed):
    """Depth-first CART growth with Gini splits on a random feature subset per node.

    ``rows`` lists (possibly repeated) training row indices.  Returns node
    arrays (feature, split_bin, left, right, leaf_class, n_nodes).
    """
    np.random.seed(seed)
    n = rows.shape[0]
    p = Xb.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int32)
    split_bin = np.zeros(cap, dtype=np.int32)
    left_child = np.full(cap, -1, dtype=np.int32)
    right_child = np.full(cap, -1, dtype=np.int32)
    leaf_class = np.zeros(cap, dtype=np.int32)

    idx = rows.copy()
    stack_node = np.empty(cap, dtype=np.int32)
    stack_lo = np.empty(cap, dtype=np.int64)
    stack_hi = np.empty(cap, dtype=np.int64)
    stack_depth = np.empty(cap, dtype=np.int32)
    sp = 0
    stack_node[0] = 0
    stack_lo[0] = 0
    stack_hi[0] = n
    stack_depth[0] = 0
    sp = 1
    n_nodes = 1

    counts = np.zeros(n_classes, dtype=np.int64)
    left = np.zeros(n_classes, dtype=np.int64)
    right = np.zeros(n_classes, dtype=np.int64)
    hist = np.zeros((n_bins, n_classes), dtype=np.int64)
    codes = np.empty(n, dtype=np.uint8)
    ys = np.empty(n, dtype=np.int64)
    feats = np.arange(p)

    while sp > 0:
        sp -= 1
        node = stack_node[sp]
        lo = stack_lo[sp]
        hi = stack_hi[sp]
        depth = stack_depth[sp]
        m = hi - lo
        for c in range(n_classes):
            counts[c] = 0
        for i in range(lo, hi):
            counts[y[idx[i]]] += 1
        major = 0
        n_present = 0
        for c in range(n_classes):
            if counts[c] > counts[major]:
                major = c
            if counts[c] > 0:
                n_present += 1
        leaf_class[node] = major
        if n_present <= 1 or m < 2 * min_leaf or (max_depth >= 0 and depth >= max_depth):
            continue

        for i in range(lo, hi):
            ys[i - lo] = y[idx[i]]
        best_score = -1.0
        best_f = -1
        best_b = -1
        # lazy Fisher-Yates: keep drawing past mtry only while no valid split exists
        for k in range(p):
            if k >= mtry and best_f >= 0:
                break
            j = k + np.random.randint(p - k)
            f = feats[j]
            feats[j] = feats[k]
            feats[k] = f
            for i in range(lo, hi):
                codes[i - lo] = Xb[idx[i], f]
            if m <= 48:
                score, b = _gini_sweep_sorted(codes[:m], ys[:m], n_classes, min_leaf, left, right)
            else:
                score, b = _gini_sweep_hist(codes[:m], ys[:m], n_classes, n_bins, min_leaf,
                                            hist, left, right)
            if b >= 0 and score > best_score:
                best_score = score
                best_f = f
                best_b = b
        if best_f < 0:
            continue

        # in-place partition of idx[lo:hi]
        i = lo
        j = hi - 1
        while i <= j:
            if Xb[idx[i], best_f] <= best_b:
                i += 1
            else:
                t = idx[i]
                idx[i] = idx[j]
                idx[j] = t
                j -= 1
        mid = i
        if mid == lo or mid == hi:
            continue
        feature[node] = best_f
        split_bin[node] = best_b
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left_child[node] = lc
        right_child[node] = rc
        stack_node[sp] = rc
        stack_lo[sp] = mid
        stack_hi[sp] = hi
        stack_depth[sp] = depth + 1
        sp += 1
        stack_node[sp] = lc
        stack_lo[sp] = lo
        stack_hi[sp] = mid
        stack_depth[sp] = depth + 1
        sp += 1

    return (feature[:n_nodes].copy(), split_bin[:n_nodes].copy(), left_child[:n_nodes].copy(),
            right_child[:n_nodes].copy(), leaf_class[:n_nodes].copy())


@njit(cache=True)
def tree_apply(X, feature, threshold, left_child, right_child):
    """Leaf index reached by each row of raw ``X``."""
    n = X.shape[0]
    out = np.empty(n, dtype=np.int32)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left_child[node]
            else:
                node = right_child[node]
        out[i] = node
    return out


@njit(cache=True)
def forest_votes(X, offsets, feature, threshold, left_child, right_child, leaf_class, n_classes):
    """Vote counts per class summed over trees stored back to back."""
    n = X.shape[0]
    votes = np.zeros((n, n_classes), dtype=np.int64)
    n_trees = offsets.shape[0] - 1
    for t in range(n_trees):
        base = offsets[t]
        for i in range(n):
            node = 0
            while feature[base + node] >= 0:
                if X[i, feature[base + node]] <= threshold[base + node]:
                    node = left_child[base + node]
                else:
                    node = right_child[base + node]
            votes[i, leaf_class[base + node]] += 1
    return votes


# ---------------------------------------------------------------- boosting


@njit(cache=True)
def _build_hist(Xb, g, h, idx, lo, hi, hist):
    p = Xb.shape[1]
    hist[:] = 0.0
    for i in range(lo, hi):
        r = idx[i]
        gi = g[r]
        hi_ = h[r]
        for f in range(p):
            b = Xb[r, f]
            hist[f, b, 0] += gi
            hist[f, b, 1] += hi_


@njit(cache=True)
def _best_newton_split(hist, n_bins_per_feature, G, H, lam, min_child_weight, gamma):
    p = hist.shape[0]
    parent = G * G / (H + lam)
    best_gain = gamma
    best_f = -1
    best_b = -1
    for f in range(p):
        gl = 0.0
        hl = 0.0
        for b in range(n_bins_per_feature[f] - 1):
            gl += hist[f, b, 0]
            hl += hist[f, b, 1]
            hr = H - hl
            if hl < min_child_weight or hr < min_child_weight:
                continue
            gr = G - gl
            gain = 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - parent)
            if gain > best_gain:
                best_gain = gain
                best_f = f
                best_b = b
    return best_f, best_b


@njit(cache=True)
def grow_newton_tree(Xb, g, h, n_bins_per_feature, max_bins, max_depth, lam, min_child_weight,
                     gamma):
    """Level-wise second-order regression tree (XGBoost-style gain).

    Returns node arrays (feature, split_bin, left, right, leaf_value) and the
    leaf index of every training row.  Histograms of the larger child are
    obtained by subtraction from the parent.
    """
    n = Xb.shape[0]
    p = Xb.shape[1]
    cap = 2 ** (max_depth + 1)
    feature = np.full(cap, -1, dtype=np.int32)
    split_bin = np.zeros(cap, dtype=np.int32)
    left_child = np.full(cap, -1, dtype=np.int32)
    right_child = np.full(cap, -1, dtype=np.int32)
    value = np.zeros(cap, dtype=np.float64)
    node_lo = np.zeros(cap, dtype=np.int64)
    node_hi = np.zeros(cap, dtype=np.int64)
    node_G = np.zeros(cap)
    node_H = np.zeros(cap)
    # only nodes above the last level carry histograms; their ids are < 2**max_depth
    hists = np.empty((2 ** max_depth, p, max_bins, 2))

    idx = np.arange(n)
    G = 0.0
    H = 0.0
    for i in range(n):
        G += g[i]
        H += h[i]
    node_lo[0] = 0
    node_hi[0] = n
    node_G[0] = G
    node_H[0] = H
    _build_hist(Xb, g, h, idx, 0, n, hists[0])
    n_nodes = 1
    level = np.zeros(1, dtype=np.int32)
    for depth in range(max_depth):
        nxt = np.empty(2 * level.shape[0], dtype=np.int32)
        n_next = 0
        for node in level:
            f, b = _best_newton_split(hists[node], n_bins_per_feature, node_G[node], node_H[node],
                                      lam, min_child_weight, gamma)
            if f < 0:
                continue
            lo = node_lo[node]
            hi = node_hi[node]
            i = lo
            j = hi - 1
            while i <= j:
                if Xb[idx[i], f] <= b:
                    i += 1
                else:
                    t = idx[i]
                    idx[i] = idx[j]
                    idx[j] = t
                    j -= 1
            mid = i
            lc = n_nodes
            rc = n_nodes + 1
            n_nodes += 2
            feature[node] = f
            split_bin[node] = b
            left_child[node] = lc
            right_child[node] = rc
            node_lo[lc] = lo
            node_hi[lc] = mid
            node_lo[rc] = mid
            node_hi[rc] = hi
            gl = 0.0
            hl = 0.0
            for k in range(b + 1):
                gl += hists[node, f, k, 0]
                hl += hists[node, f, k, 1]
            node_G[lc] = gl
            node_H[lc] = hl
            node_G[rc] = node_G[node] - gl
            node_H[rc] = node_H[node] - hl
            if depth + 1 < max_depth:
                small, large = (lc, rc) if mid - lo <= hi - mid else (rc, lc)
                _build_hist(Xb, g, h, idx, node_lo[small], node_hi[small], hists[small])
                hists[large] = hists[node] - hists[small]
            nxt[n_next] = lc
            nxt[n_next + 1] = rc
            n_next += 2
        level = nxt[:n_next]
        if n_next == 0:
            break

    leaf_of_row = np.empty(n, dtype=np.int32)
    for node in range(n_nodes):
        if feature[node] < 0:
            value[node] = -node_G[node] / (node_H[node] + lam)
            for i in range(node_lo[node], node_hi[node]):
                leaf_of_row[idx[i]] = node
    return (feature[:n_nodes].copy(), split_bin[:n_nodes].copy(), left_child[:n_nodes].copy(),
            right_child[:n_nodes].copy(), value[:n_nodes].copy(), leaf_of_row)


@njit(cache=True)
def boosted_scores(X, offsets, tree_class, feature, threshold, left_child, right_child, value,
                   n_classes, lr, base):
    n = X.shape[0]
    F = np.empty((n, n_classes))
    for i in range(n):
        for c in range(n_classes):
            F[i, c] = base[c]
    n_trees = offsets.shape[0] - 1
    for t in range(n_trees):
        o = offsets[t]
        c = tree_class[t]
        for i in range(n):
            node = 0
            while feature[o + node] >= 0:
                if X[i, feature[o + node]] <= threshold[o + node]:
                    node = left_child[o + node]
                else:
                    node = right_child[o + node]
            F[i, c] += lr * value[o + node]
    return F
