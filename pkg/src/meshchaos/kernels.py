"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Every kernel exists twice: ``_<name>_numpy`` (vectorised numpy) and
``_<name>_loop`` (explicit loops, compiled with numba when available). The
public name is bound to one of them at import time according to
``meshchaos._accel.USE_NUMBA``. ``IMPLEMENTATIONS["numpy"]`` and
``IMPLEMENTATIONS["numba"]`` expose both so tests and benchmarks can compare
them directly.
"""

import numpy as np

from meshchaos._accel import USE_NUMBA, njit

SSE = 0
GINI = 1


# -- covering-array scoring -------------------------------------------------


def _tuple_scores_numpy(cands, combos, strides, offsets, uncovered):
    codes = offsets[None, :] + (cands[:, combos] * strides[None, :, :]).sum(axis=2)
    return uncovered[codes].sum(axis=1).astype(np.int64)


def _tuple_scores_loop(cands, combos, strides, offsets, uncovered):
    n = cands.shape[0]
    m, s = combos.shape
    out = np.zeros(n, dtype=np.int64)
    for r in range(n):
        total = 0
        for c in range(m):
            code = offsets[c]
            for j in range(s):
                code += cands[r, combos[c, j]] * strides[c, j]
            if uncovered[code]:
                total += 1
        out[r] = total
    return out


def _tuple_codes_numpy(rows, combos, strides, offsets):
    return offsets[None, :] + (rows[:, combos] * strides[None, :, :]).sum(axis=2)


def _tuple_codes_loop(rows, combos, strides, offsets):
    n = rows.shape[0]
    m, s = combos.shape
    out = np.empty((n, m), dtype=np.int64)
    for r in range(n):
        for c in range(m):
            code = offsets[c]
            for j in range(s):
                code += rows[r, combos[c, j]] * strides[c, j]
            out[r, c] = code
    return out


# -- sequence tallies ------------------------------------------------------


def _transition_counts_numpy(seq, k):
    counts = np.zeros((k, k), dtype=np.float64)
    if seq.shape[0] > 1:
        np.add.at(counts, (seq[:-1], seq[1:]), 1.0)
    return counts


def _transition_counts_loop(seq, k):
    counts = np.zeros((k, k), dtype=np.float64)
    for t in range(1, seq.shape[0]):
        counts[seq[t - 1], seq[t]] += 1.0
    return counts


def _symbol_counts_numpy(seq, k):
    return np.bincount(seq, minlength=k).astype(np.float64)


def _symbol_counts_loop(seq, k):
    counts = np.zeros(k, dtype=np.float64)
    for t in range(seq.shape[0]):
        counts[seq[t]] += 1.0
    return counts


# -- decision-tree split search --------------------------------------------


def _best_split_numpy(x, y, min_leaf, criterion):
    # x sorted ascending; y is (n, q): response columns (SSE) or one-hot classes (GINI)
    n = x.shape[0]
    if n < 2 * min_leaf:
        return 0.0, -1
    cs = np.cumsum(y, axis=0)
    total = cs[-1]
    idx = np.arange(min_leaf, n - min_leaf + 1)
    idx = idx[x[idx - 1] < x[idx]]
    if idx.size == 0:
        return 0.0, -1
    nl = idx.astype(np.float64)
    nr = n - nl
    left = cs[idx - 1]
    right = total[None, :] - left
    if criterion == SSE:
        sq = np.cumsum(y * y, axis=0)
        tot_sq = sq[-1]
        left_sq = sq[idx - 1]
        parent = (tot_sq - total * total / n).sum()
        child = ((left_sq - left * left / nl[:, None]) + ((tot_sq - left_sq) - right * right / nr[:, None])).sum(axis=1)
    else:
        parent = n - (total * total).sum() / n
        child = (nl - (left * left).sum(axis=1) / nl) + (nr - (right * right).sum(axis=1) / nr)
    gain = parent - child
    best = int(np.argmax(gain))
    return float(gain[best]), int(idx[best])


def _best_split_loop(x, y, min_leaf, criterion):
    n, q = y.shape
    if n < 2 * min_leaf:
        return 0.0, -1
    total = np.zeros(q)
    tot_sq = np.zeros(q)
    for i in range(n):
        for j in range(q):
            total[j] += y[i, j]
            tot_sq[j] += y[i, j] * y[i, j]
    if criterion == SSE:
        parent = 0.0
        for j in range(q):
            parent += tot_sq[j] - total[j] * total[j] / n
    else:
        acc = 0.0
        for j in range(q):
            acc += total[j] * total[j]
        parent = n - acc / n
    left = np.zeros(q)
    left_sq = np.zeros(q)
    best_gain = -np.inf
    best_idx = -1
    for i in range(1, n - min_leaf + 1):
        for j in range(q):
            left[j] += y[i - 1, j]
            left_sq[j] += y[i - 1, j] * y[i - 1, j]
        if i < min_leaf or not x[i - 1] < x[i]:
            continue
        nl = float(i)
        nr = float(n - i)
        if criterion == SSE:
            child = 0.0
            for j in range(q):
                r = total[j] - left[j]
                child += (left_sq[j] - left[j] * left[j] / nl) + ((tot_sq[j] - left_sq[j]) - r * r / nr)
        else:
            al = 0.0
            ar = 0.0
            for j in range(q):
                r = total[j] - left[j]
                al += left[j] * left[j]
                ar += r * r
            child = (nl - al / nl) + (nr - ar / nr)
        gain = parent - child
        if gain > best_gain:
            best_gain = gain
            best_idx = i
    if best_idx < 0:
        return 0.0, -1
    return best_gain, best_idx


IMPLEMENTATIONS = {
    "numpy": {
        "tuple_scores": _tuple_scores_numpy,
        "tuple_codes": _tuple_codes_numpy,
        "transition_counts": _transition_counts_numpy,
        "symbol_counts": _symbol_counts_numpy,
        "best_split": _best_split_numpy,
    },
    "numba": {
        "tuple_scores": njit(_tuple_scores_loop),
        "tuple_codes": njit(_tuple_codes_loop),
        "transition_counts": njit(_transition_counts_loop),
        "symbol_counts": njit(_symbol_counts_loop),
        "best_split": njit(_best_split_loop),
    },
}

BACKEND = "numba" if USE_NUMBA else "numpy"
_active = IMPLEMENTATIONS[BACKEND]

tuple_scores = _active["tuple_scores"]
tuple_codes = _active["tuple_codes"]
transition_counts = _active["transition_counts"]
symbol_counts = _active["symbol_counts"]
best_split = _active["best_split"]
