# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; same contracts as ``emolab._pykernels``."""

import numpy as np

cdef double OPT_TOL = 1e-12


cdef void _adjacency(long[::1] ci, long[::1] cj, Py_ssize_t K, Py_ssize_t m, Py_ssize_t n,
                     long[::1] start, long[::1] fill, long[::1] adj):
    # CSR over nodes (rows 0..m-1, cols m..m+n-1); adj holds cell ids
    cdef Py_ssize_t k, node
    for node in range(m + n + 1):
        start[node] = 0
    for k in range(K):
        start[ci[k] + 1] += 1
        start[m + cj[k] + 1] += 1
    for node in range(m + n):
        start[node + 1] += start[node]
    for node in range(m + n):
        fill[node] = start[node]
    for k in range(K):
        adj[fill[ci[k]]] = k
        fill[ci[k]] += 1
        adj[fill[m + cj[k]]] = k
        fill[m + cj[k]] += 1


def transport_simplex(a, b, cost, long max_iter=0):
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t n = b.shape[0]
    cdef Py_ssize_t K = m + n - 1
    if max_iter <= 0:
        max_iter = 50 * m * n + 1000

    flow_arr = np.zeros((m, n), dtype=np.float64)
    u_arr = np.zeros(m, dtype=np.float64)
    v_arr = np.zeros(n, dtype=np.float64)
    cdef double[:, ::1] flow = flow_arr
    cdef double[:, ::1] C = cost
    cdef double[::1] u = u_arr
    cdef double[::1] v = v_arr
    cdef double[::1] ar = a.copy()
    cdef double[::1] br = b.copy()
    cdef long[::1] ci = np.zeros(K, dtype=np.int64)
    cdef long[::1] cj = np.zeros(K, dtype=np.int64)
    cdef char[:, ::1] is_basic = np.zeros((m, n), dtype=np.int8)
    cdef long[::1] start = np.zeros(m + n + 1, dtype=np.int64)
    cdef long[::1] fill = np.zeros(m + n, dtype=np.int64)
    cdef long[::1] adj = np.zeros(2 * K, dtype=np.int64)
    cdef long[::1] parent = np.zeros(m + n, dtype=np.int64)
    cdef long[::1] via = np.zeros(m + n, dtype=np.int64)
    cdef long[::1] stack = np.zeros(m + n, dtype=np.int64)
    cdef long[::1] path = np.zeros(K, dtype=np.int64)

    cdef Py_ssize_t i = 0, j = 0, k = 0, t, node, other, top, plen
    cdef double x, theta, best, r
    cdef long p, q, leave, it = 0, degenerate_run = 0
    cdef bint bland = False

    # northwest corner start
    while True:
        x = ar[i] if ar[i] < br[j] else br[j]
        flow[i, j] = x
        ci[k] = i
        cj[k] = j
        is_basic[i, j] = 1
        k += 1
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

    while True:
        _adjacency(ci, cj, K, m, n, start, fill, adj)
        # potentials by DFS from row 0, u[0] = 0
        for node in range(m + n):
            parent[node] = -1
        parent[0] = 0
        u[0] = 0.0
        top = 0
        stack[top] = 0
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            for t in range(start[node], start[node + 1]):
                k = adj[t]
                if node < m:
                    other = m + cj[k]
                else:
                    other = ci[k]
                if parent[other] == -1:
                    parent[other] = node
                    if other >= m:
                        v[other - m] = C[ci[k], cj[k]] - u[ci[k]]
                    else:
                        u[other] = C[ci[k], cj[k]] - v[cj[k]]
                    stack[top] = other
                    top += 1

        p = -1
        best = 0.0
        for i in range(m):
            for j in range(n):
                if is_basic[i, j]:
                    continue
                r = C[i, j] - u[i] - v[j]
                if r < -OPT_TOL:
                    if bland:
                        p = i
                        q = j
                        break
                    if p == -1 or r < best:
                        best = r
                        p = i
                        q = j
            if bland and p != -1:
                break
        if p == -1:
            break
        if it >= max_iter:
            raise RuntimeError("network simplex exceeded %d pivots" % max_iter)

        # tree path from row p to column q
        for node in range(m + n):
            parent[node] = -1
        parent[p] = p
        top = 0
        stack[top] = p
        top += 1
        while top > 0:
            top -= 1
            node = stack[top]
            if node == m + q:
                break
            for t in range(start[node], start[node + 1]):
                k = adj[t]
                if node < m:
                    other = m + cj[k]
                else:
                    other = ci[k]
                if parent[other] == -1:
                    parent[other] = node
                    via[other] = k
                    stack[top] = other
                    top += 1
        plen = 0
        node = m + q
        while node != p:
            path[plen] = via[node]
            plen += 1
            node = parent[node]

        leave = -1
        theta = 0.0
        for t in range(0, plen, 2):
            k = path[t]
            x = flow[ci[k], cj[k]]
            if (leave == -1 or x < theta or
                    (x == theta and ci[k] * n + cj[k] < ci[leave] * n + cj[leave])):
                theta = x
                leave = k
        for t in range(plen):
            k = path[t]
            if t % 2 == 0:
                flow[ci[k], cj[k]] -= theta
            else:
                flow[ci[k], cj[k]] += theta
        flow[p, q] += theta
        flow[ci[leave], cj[leave]] = 0.0
        is_basic[ci[leave], cj[leave]] = 0
        is_basic[p, q] = 1
        ci[leave] = p
        cj[leave] = q
        if theta <= 0.0:
            degenerate_run += 1
            if degenerate_run > m * n:
                bland = True
        else:
            degenerate_run = 0
        it += 1

    np.maximum(flow_arr, 0.0, out=flow_arr)
    return flow_arr, u_arr, v_arr, it


def lcs_length(x, y):
    cdef long[::1] xs = np.ascontiguousarray(x, dtype=np.int64)
    cdef long[::1] ys = np.ascontiguousarray(y, dtype=np.int64)
    cdef Py_ssize_t nx = xs.shape[0], ny = ys.shape[0], i, j
    if nx == 0 or ny == 0:
        return 0
    cdef long[::1] prev = np.zeros(ny + 1, dtype=np.int64)
    cdef long[::1] cur = np.zeros(ny + 1, dtype=np.int64)
    cdef long[::1] tmp
    for i in range(nx):
        cur[0] = 0
        for j in range(ny):
            if xs[i] == ys[j]:
                cur[j + 1] = prev[j] + 1
            elif prev[j + 1] >= cur[j]:
                cur[j + 1] = prev[j + 1]
            else:
                cur[j + 1] = cur[j]
        tmp = prev
        prev = cur
        cur = tmp
    return int(prev[ny])
