"""Pure-Python versions of the compiled kernels (same results, slower)."""

import numpy as np


def lcs_length(a, b):
    a, b = list(a), list(b)
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def top1(matrix, query):
    e = np.asarray(matrix, dtype=np.float64)
    q = np.asarray(query, dtype=np.float64)
    if e.shape[0] == 0:
        raise ValueError("empty index")
    if q.shape[0] != e.shape[1]:
        raise ValueError(f"query dim {q.shape[0]} != index dim {e.shape[1]}")
    best_i, best = 0, None
    for i in range(e.shape[0]):
        s = 0.0
        for k in range(e.shape[1]):
            s += e[i, k] * q[k]
        if best is None or s > best:
            best_i, best = i, s
    return best_i, best
