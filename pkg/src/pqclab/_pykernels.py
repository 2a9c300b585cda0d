"""Pure-Python/NumPy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` exactly, including accumulation order, so the
two backends produce bit-identical results.
"""
import heapq

import numpy as np


def dijkstra(nbr, cost, opp, sources):
    """Multi-source shortest cost-to-go over reversed edges.

    ``nbr[u, a]`` is the destination of action ``a`` from ``u`` (or -1) and
    ``cost[u, a]`` its edge cost. ``opp[a]`` is the action undoing ``a``, so
    the predecessors of ``v`` are ``nbr[v, :]``.
    """
    nbr = np.ascontiguousarray(nbr, dtype=np.int32)
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    n, n_act = nbr.shape
    dist = np.full(n, np.inf)
    done = np.zeros(n, dtype=bool)
    heap = []
    for s in sources:
        s = int(s)
        if dist[s] > 0.0:
            dist[s] = 0.0
            heap.append((0.0, s))
    heapq.heapify(heap)
    nbr_l = nbr.tolist()
    cost_l = cost.tolist()
    opp_l = [int(o) for o in opp]
    dist_l = dist.tolist()
    while heap:
        d, v = heapq.heappop(heap)
        if done[v]:
            continue
        done[v] = True
        row = nbr_l[v]
        for a in range(n_act):
            u = row[a]
            if u < 0 or done[u]:
                continue
            nd = d + cost_l[u][opp_l[a]]
            if nd < dist_l[u]:
                dist_l[u] = nd
                heapq.heappush(heap, (nd, u))
    return np.array(dist_l, dtype=np.float64)


def im2col(x, k, stride):
    """(B, H, W, C) -> (B*Ho*Wo, k*k*C) patch matrix for a valid convolution."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    b, h, w, c = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    cols = np.empty((b, ho, wo, k, k, c), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i, j, :] = x[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]
    return cols.reshape(b * ho * wo, k * k * c)


def col2im(cols, shape, k, stride):
    """Adjoint of :func:`im2col`: scatter-add patches back to (B, H, W, C)."""
    b, h, w, c = shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    cols6 = np.asarray(cols, dtype=np.float64).reshape(b, ho, wo, k, k, c)
    out = np.zeros((b, h, w, c), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            out[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += cols6[:, :, :, i, j, :]
    return out
