"""Pure-Python hot kernels.

Reference implementations of the loops that dominate runtime. The compiled
module ``_ckernels`` mirrors these functions one-to-one; ``emolab.kernels``
picks whichever is importable.
"""

from __future__ import annotations

import numpy as np

OPT_TOL = 1e-12


def _northwest_corner(a, b):
    m, n = len(a), len(b)
    ar = list(a)
    br = list(b)
    flow = np.zeros((m, n))
    cells = []
    i = j = 0
    while True:
        x = min(ar[i], br[j])
        flow[i, j] = x
        cells.append((i, j))
        ar[i] -= x
        br[j] -= x
        if i == m - 1 and j == n - 1:
            break
        if i == m - 1:
            j += 1
        elif j == n - 1:
            i += 1
        elif ar[i] <= br[j]:
            i += 1
        else:
            j += 1
    return flow, cells


def _potentials(cost, cells, m, n):
    rows = [[] for _ in range(m)]
    cols = [[] for _ in range(n)]
    for i, j in cells:
        rows[i].append(j)
        cols[j].append(i)
    u = [0.0] * m
    v = [0.0] * n
    seen_r = [False] * m
    seen_c = [False] * n
    seen_r[0] = True
    stack = [(0, True)]
    while stack:
        node, is_row = stack.pop()
        if is_row:
            for j in rows[node]:
                if not seen_c[j]:
                    seen_c[j] = True
                    v[j] = cost[node, j] - u[node]
                    stack.append((j, False))
        else:
            for i in cols[node]:
                if not seen_r[i]:
                    seen_r[i] = True
                    u[i] = cost[i, node] - v[node]
                    stack.append((i, True))
    return np.asarray(u), np.asarray(v), rows, cols


def _tree_path(rows, cols, p, q, m, n):
    """Cells on the tree path from column ``q`` back to row ``p``."""
    # node ids: rows 0..m-1, columns m..m+n-1
    parent = [-1] * (m + n)
    parent[p] = p
    stack = [p]
    target = m + q
    while stack:
        node = stack.pop()
        if node == target:
            break
        if node < m:
            for j in rows[node]:
                if parent[m + j] == -1:
                    parent[m + j] = node
                    stack.append(m + j)
        else:
            for i in cols[node - m]:
                if parent[i] == -1:
                    parent[i] = node
                    stack.append(i)
    path = []
    node = target
    while node != p:
        prev = parent[node]
        if node < m:
            path.append((node, prev - m))
        else:
            path.append((prev, node - m))
        node = prev
    return path


def transport_simplex(a, b, cost, max_iter=0):
    """Solve the balanced transportation LP by the network simplex method.

    ``a`` (m,) are supplies, ``b`` (n,) demands with equal totals and ``cost``
    an (m, n) matrix. Returns ``(flow, u, v, iterations)`` where ``u``/``v``
    are dual potentials certifying optimality (``cost - u - v >= -1e-12``).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cost = np.asarray(cost, dtype=np.float64)
    m, n = len(a), len(b)
    if max_iter <= 0:
        max_iter = 50 * m * n + 1000
    flow, cells = _northwest_corner(a, b)
    is_basic = np.zeros((m, n), dtype=bool)
    for i, j in cells:
        is_basic[i, j] = True
    bland = False
    degenerate_run = 0
    it = 0
    while True:
        u, v, rows, cols = _potentials(cost, cells, m, n)
        reduced = cost - u[:, None] - v[None, :]
        reduced[is_basic] = 0.0
        if bland:
            neg = np.flatnonzero(reduced.ravel() < -OPT_TOL)
            if neg.size == 0:
                break
            k = int(neg[0])
        else:
            k = int(np.argmin(reduced))
            if reduced.flat[k] >= -OPT_TOL:
                break
        if it >= max_iter:
            raise RuntimeError("network simplex exceeded %d pivots" % max_iter)
        p, q = divmod(k, n)
        path = _tree_path(rows, cols, p, q, m, n)
        # path[0] touches column q and takes the negative sign
        theta = None
        leave = -1
        for idx in range(0, len(path), 2):
            i, j = path[idx]
            x = flow[i, j]
            if (
                theta is None
                or x < theta
                or (x == theta and i * n + j < path[leave][0] * n + path[leave][1])
            ):
                theta = x
                leave = idx
        for idx, (i, j) in enumerate(path):
            if idx % 2 == 0:
                flow[i, j] -= theta
            else:
                flow[i, j] += theta
        flow[p, q] += theta
        li, lj = path[leave]
        flow[li, lj] = 0.0
        is_basic[li, lj] = False
        is_basic[p, q] = True
        cells[cells.index((li, lj))] = (p, q)
        if theta <= 0.0:
            degenerate_run += 1
            if degenerate_run > m * n:
                bland = True
        else:
            degenerate_run = 0
        it += 1
    np.maximum(flow, 0.0, out=flow)
    return flow, u, v, it


def lcs_length(x, y):
    """Length of the longest common subsequence of two integer sequences."""
    if len(x) == 0 or len(y) == 0:
        return 0
    prev = [0] * (len(y) + 1)
    for xi in x:
        cur = [0]
        for j, yj in enumerate(y):
            if xi == yj:
                cur.append(prev[j] + 1)
            else:
                cur.append(max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]
