"""Hot numeric kernels with a numba path and a pure-numpy/python path.

Every kernel exists in two flavours that compute the same thing:

* ``NUMPY`` - vectorised numpy where that is natural, plain python loops
  for the graph searches.
* ``NUMBA`` - explicit ``@njit`` loops.

``ACTIVE`` points at the backend selected by ``PAWNN_NUMBA`` (see
:mod:`pawnn._accel`). Library code calls ``kernels.ACTIVE.<name>``; tests
and the benchmark address both backends directly.

Array conventions
-----------------
Quadratic forms are stored as COO triplets over *real* coordinates
``x = [Re v; Im v]``: ``h[r] = sum q_val * x[q_i] * x[q_j] + sum l_val * x[l_i]``
where the quadratic entries of each row describe a full symmetric matrix.

Block-sparse layers use the node-major layout ``(batch, n_nodes, width)``
and a block list ``(brow, bcol)`` sorted by row then column. Every row and
every column holds at least its diagonal block.
"""

from __future__ import annotations

from collections import deque
from types import SimpleNamespace

import numpy as np

from . import _accel
from ._accel import njit

_EVAL_CHUNK = 256
# reassociation lets the block inner loops vectorise; no NaN/inf assumptions
_BLOCK_MATH = {"reassoc", "contract"}


# ---------------------------------------------------------------------------
# quadratic measurement forms
# ---------------------------------------------------------------------------


def _quad_eval_np(qrow, qi, qj, qv, lrow, li, lv, X, n_meas):
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    S = X.shape[0]
    out = np.empty((S, n_meas))
    for s0 in range(0, S, _EVAL_CHUNK):
        Xc = X[s0:s0 + _EVAL_CHUNK]
        sc = Xc.shape[0]
        offs = (np.arange(sc) * n_meas)[:, None]
        quad = qv * Xc[:, qi] * Xc[:, qj]
        lin = lv * Xc[:, li]
        h = np.bincount((qrow + offs).ravel(), weights=quad.ravel(), minlength=sc * n_meas)
        h += np.bincount((lrow + offs).ravel(), weights=lin.ravel(), minlength=sc * n_meas)
        out[s0:s0 + sc] = h.reshape(sc, n_meas)
    return out


@njit
def _quad_eval_nb(qrow, qi, qj, qv, lrow, li, lv, X, n_meas):
    S = X.shape[0]
    out = np.zeros((S, n_meas))
    for s in range(S):
        for k in range(qrow.shape[0]):
            out[s, qrow[k]] += qv[k] * X[s, qi[k]] * X[s, qj[k]]
        for k in range(lrow.shape[0]):
            out[s, lrow[k]] += lv[k] * X[s, li[k]]
    return out


def _quad_jac_np(qrow, qi, qj, qv, lrow, li, lv, x, n_meas, n_coord):
    x = np.asarray(x, dtype=np.float64)
    flat_q = qrow * n_coord + qi
    flat_l = lrow * n_coord + li
    H = np.bincount(flat_q, weights=2.0 * qv * x[qj], minlength=n_meas * n_coord)
    H += np.bincount(flat_l, weights=lv, minlength=n_meas * n_coord)
    return H.reshape(n_meas, n_coord)


@njit
def _quad_jac_nb(qrow, qi, qj, qv, lrow, li, lv, x, n_meas, n_coord):
    H = np.zeros((n_meas, n_coord))
    for k in range(qrow.shape[0]):
        H[qrow[k], qi[k]] += 2.0 * qv[k] * x[qj[k]]
    for k in range(lrow.shape[0]):
        H[lrow[k], li[k]] += lv[k]
    return H


def _quad_eval_nb_wrap(qrow, qi, qj, qv, lrow, li, lv, X, n_meas):
    X = np.ascontiguousarray(np.atleast_2d(X), dtype=np.float64)
    return _quad_eval_nb(qrow, qi, qj, qv, lrow, li, lv, X, n_meas)


def _quad_jac_nb_wrap(qrow, qi, qj, qv, lrow, li, lv, x, n_meas, n_coord):
    x = np.ascontiguousarray(x, dtype=np.float64)
    return _quad_jac_nb(qrow, qi, qj, qv, lrow, li, lv, x, n_meas, n_coord)


# ---------------------------------------------------------------------------
# block-sparse layers
# ---------------------------------------------------------------------------


def _block_forward_np(h, W, brow, bcol, row_start):
    g = h[:, bcol, :].transpose(1, 0, 2)                 # (nb, B, din)
    prod = np.matmul(g, W.transpose(0, 2, 1))            # (nb, B, dout)
    out = np.add.reduceat(prod, row_start[:-1], axis=0)  # (N, B, dout)
    return np.ascontiguousarray(out.transpose(1, 0, 2))


def _block_backward_np(delta, W, brow, bcol, col_order, col_start):
    d = delta[:, brow, :].transpose(1, 0, 2)             # (nb, B, dout)
    prod = np.matmul(d, W)                               # (nb, B, din)
    out = np.add.reduceat(prod[col_order], col_start[:-1], axis=0)
    return np.ascontiguousarray(out.transpose(1, 0, 2))


def _block_wgrad_np(delta, h, brow, bcol):
    d = delta[:, brow, :].transpose(1, 2, 0)             # (nb, dout, B)
    g = h[:, bcol, :].transpose(1, 0, 2)                 # (nb, B, din)
    return np.matmul(d, g)


@njit(fastmath=_BLOCK_MATH)
def _block_forward_nb(h, W, brow, bcol, row_start):
    B = h.shape[0]
    N = row_start.shape[0] - 1
    dout = W.shape[1]
    din = W.shape[2]
    out = np.zeros((B, N, dout))
    for b in range(B):
        for i in range(N):
            for k in range(row_start[i], row_start[i + 1]):
                j = bcol[k]
                for r in range(dout):
                    acc = 0.0
                    for c in range(din):
                        acc += W[k, r, c] * h[b, j, c]
                    out[b, i, r] += acc
    return out


@njit(fastmath=_BLOCK_MATH)
def _block_backward_nb(delta, W, brow, bcol, col_order, col_start):
    B = delta.shape[0]
    N = col_start.shape[0] - 1
    dout = W.shape[1]
    din = W.shape[2]
    out = np.zeros((B, N, din))
    for b in range(B):
        for j in range(N):
            for p in range(col_start[j], col_start[j + 1]):
                k = col_order[p]
                i = brow[k]
                for r in range(dout):
                    d = delta[b, i, r]
                    for c in range(din):
                        out[b, j, c] += W[k, r, c] * d
    return out


@njit(fastmath=_BLOCK_MATH)
def _block_wgrad_nb(delta, h, brow, bcol):
    nb = brow.shape[0]
    B = delta.shape[0]
    dout = delta.shape[2]
    din = h.shape[2]
    G = np.zeros((nb, dout, din))
    for k in range(nb):
        i = brow[k]
        j = bcol[k]
        for b in range(B):
            for r in range(dout):
                d = delta[b, i, r]
                for c in range(din):
                    G[k, r, c] += d * h[b, j, c]
    return G


# ---------------------------------------------------------------------------
# tree searches
# ---------------------------------------------------------------------------


def _longest_partition_path_py(indptr, indices, adj_edge, is_cut, n_edges):
    """Longest shortest path over all subgraphs left by cutting ``is_cut``.

    Returns ``(length, path)`` with ``path`` an int array of vertex indices.
    Subgraphs are scanned in order of their smallest non-cut vertex, then
    edges joining two cut vertices in edge order; the first subgraph reaching
    the maximum wins. Within a subgraph the double sweep starts at that
    smallest vertex and every farthest-vertex tie goes to the smaller index.
    """
    n = indptr.shape[0] - 1
    label = np.full(n_edges, -1, dtype=np.int64)
    seen = np.zeros(n, dtype=np.bool_)
    roots = []
    n_lab = 0
    for u in range(n):
        if is_cut[u] or seen[u]:
            continue
        seen[u] = True
        roots.append(u)
        queue = deque([u])
        while queue:
            a = queue.popleft()
            for p in range(indptr[a], indptr[a + 1]):
                label[adj_edge[p]] = n_lab
                w = indices[p]
                if not is_cut[w] and not seen[w]:
                    seen[w] = True
                    queue.append(w)
        n_lab += 1
    # edges whose both endpoints are cut form their own subgraph
    for a in range(n):
        for p in range(indptr[a], indptr[a + 1]):
            e = adj_edge[p]
            if label[e] == -1:
                label[e] = n_lab
                roots.append(a)
                n_lab += 1

    dist = np.full(n, -1, dtype=np.int64)
    parent = np.full(n, -1, dtype=np.int64)

    def sweep(start, k):
        touched = [start]
        dist[start] = 0
        parent[start] = -1
        queue = deque([start])
        far, far_d = start, 0
        while queue:
            a = queue.popleft()
            expand = a == start or not is_cut[a]
            if not expand:
                continue
            for p in range(indptr[a], indptr[a + 1]):
                if label[adj_edge[p]] != k:
                    continue
                w = indices[p]
                if dist[w] == -1:
                    dist[w] = dist[a] + 1
                    parent[w] = a
                    touched.append(w)
                    queue.append(w)
                    if dist[w] > far_d or (dist[w] == far_d and w < far):
                        far, far_d = w, dist[w]
        return far, far_d, touched

    best_len, best_k, best_a = -1, -1, -1
    for k in range(n_lab):
        a, _, touched = sweep(roots[k], k)
        for t in touched:
            dist[t] = -1
        b, d, touched = sweep(a, k)
        for t in touched:
            dist[t] = -1
        if d > best_len:
            best_len, best_k, best_a = d, k, a
    if best_k < 0:
        return 0, np.zeros(1, dtype=np.int64)
    b, d, touched = sweep(best_a, best_k)
    path = [b]
    while path[-1] != best_a:
        path.append(parent[path[-1]])
    return d, np.array(path[::-1], dtype=np.int64)


@njit
def _sweep_nb(indptr, indices, adj_edge, is_cut, label, k, start, dist, parent, queue):
    head = 0
    tail = 1
    queue[0] = start
    dist[start] = 0
    parent[start] = -1
    far = start
    far_d = 0
    while head < tail:
        a = queue[head]
        head += 1
        if a != start and is_cut[a]:
            continue
        for p in range(indptr[a], indptr[a + 1]):
            if label[adj_edge[p]] != k:
                continue
            w = indices[p]
            if dist[w] == -1:
                dist[w] = dist[a] + 1
                parent[w] = a
                queue[tail] = w
                tail += 1
                if dist[w] > far_d or (dist[w] == far_d and w < far):
                    far = w
                    far_d = dist[w]
    return far, far_d, tail


@njit
def _longest_partition_path_nb(indptr, indices, adj_edge, is_cut, n_edges):
    n = indptr.shape[0] - 1
    label = np.full(n_edges, -1, dtype=np.int64)
    seen = np.zeros(n, dtype=np.bool_)
    roots = np.empty(n + n_edges, dtype=np.int64)
    queue = np.empty(n + 1, dtype=np.int64)
    n_lab = 0
    for u in range(n):
        if is_cut[u] or seen[u]:
            continue
        seen[u] = True
        roots[n_lab] = u
        head = 0
        tail = 1
        queue[0] = u
        while head < tail:
            a = queue[head]
            head += 1
            for p in range(indptr[a], indptr[a + 1]):
                label[adj_edge[p]] = n_lab
                w = indices[p]
                if not is_cut[w] and not seen[w]:
                    seen[w] = True
                    queue[tail] = w
                    tail += 1
        n_lab += 1
    for a in range(n):
        for p in range(indptr[a], indptr[a + 1]):
            e = adj_edge[p]
            if label[e] == -1:
                label[e] = n_lab
                roots[n_lab] = a
                n_lab += 1

    dist = np.full(n, -1, dtype=np.int64)
    parent = np.full(n, -1, dtype=np.int64)
    best_len = -1
    best_k = -1
    best_a = -1
    for k in range(n_lab):
        a, _, tail = _sweep_nb(indptr, indices, adj_edge, is_cut, label, k,
                               roots[k], dist, parent, queue)
        for t in range(tail):
            dist[queue[t]] = -1
        _, d, tail = _sweep_nb(indptr, indices, adj_edge, is_cut, label, k,
                               a, dist, parent, queue)
        for t in range(tail):
            dist[queue[t]] = -1
        if d > best_len:
            best_len = d
            best_k = k
            best_a = a
    if best_k < 0:
        return 0, np.zeros(1, dtype=np.int64)
    b, d, tail = _sweep_nb(indptr, indices, adj_edge, is_cut, label, best_k,
                           best_a, dist, parent, queue)
    path = np.empty(d + 1, dtype=np.int64)
    v = b
    for t in range(d, -1, -1):
        path[t] = v
        v = parent[v]
    return d, path


def _bfs_tree_py(indptr, indices, start):
    n = indptr.shape[0] - 1
    dist = np.full(n, -1, dtype=np.int64)
    parent = np.full(n, -1, dtype=np.int64)
    dist[start] = 0
    queue = deque([start])
    while queue:
        a = queue.popleft()
        for p in range(indptr[a], indptr[a + 1]):
            w = indices[p]
            if dist[w] == -1:
                dist[w] = dist[a] + 1
                parent[w] = a
                queue.append(w)
    return dist, parent


@njit
def _bfs_tree_nb(indptr, indices, start):
    n = indptr.shape[0] - 1
    dist = np.full(n, -1, dtype=np.int64)
    parent = np.full(n, -1, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    dist[start] = 0
    queue[0] = start
    head = 0
    tail = 1
    while head < tail:
        a = queue[head]
        head += 1
        for p in range(indptr[a], indptr[a + 1]):
            w = indices[p]
            if dist[w] == -1:
                dist[w] = dist[a] + 1
                parent[w] = a
                queue[tail] = w
                tail += 1
    return dist, parent


# ---------------------------------------------------------------------------
# exhaustive hitting-set search
# ---------------------------------------------------------------------------


def _first_hitting_np(masks, bits, K, max_combos):
    """First K-combination (lexicographic over candidate positions) whose
    union of ``bits`` intersects every row of ``masks``.

    ``masks`` is ``(n_sets, n_words)`` uint64, ``bits`` is ``(n_cand, n_words)``.
    Returns ``(combo_or_empty, n_examined, exhausted)``.
    """
    from itertools import combinations, islice

    n_cand = bits.shape[0]
    if masks.shape[0] == 0:
        return np.arange(K, dtype=np.int64), 1, True
    it = combinations(range(n_cand), K)
    examined = 0
    chunk = 8192
    while examined < max_combos:
        take = min(chunk, max_combos - examined)
        block = np.fromiter(
            (i for c in islice(it, take) for i in c), dtype=np.int64
        ).reshape(-1, K)
        if block.shape[0] == 0:
            return np.zeros(0, dtype=np.int64), examined, True
        sel = np.bitwise_or.reduce(bits[block], axis=1)          # (c, W)
        hit = ((sel[:, None, :] & masks[None, :, :]) != 0).any(axis=2).all(axis=1)
        where = np.flatnonzero(hit)
        if where.size:
            return block[where[0]].copy(), examined + int(where[0]) + 1, True
        examined += block.shape[0]
        if block.shape[0] < take:
            return np.zeros(0, dtype=np.int64), examined, True
    return np.zeros(0, dtype=np.int64), examined, False


@njit
def _first_hitting_nb(masks, bits, K, max_combos):
    n_cand = bits.shape[0]
    n_words = bits.shape[1]
    n_sets = masks.shape[0]
    if n_sets == 0:
        return np.arange(K).astype(np.int64), 1, True
    idx = np.arange(K).astype(np.int64)
    sel = np.zeros(n_words, dtype=np.uint64)
    examined = 0
    while examined < max_combos:
        examined += 1
        for w in range(n_words):
            acc = np.uint64(0)
            for t in range(K):
                acc |= bits[idx[t], w]
            sel[w] = acc
        ok = True
        for m in range(n_sets):
            hit = False
            for w in range(n_words):
                if (masks[m, w] & sel[w]) != 0:
                    hit = True
                    break
            if not hit:
                ok = False
                break
        if ok:
            return idx.copy(), examined, True
        i = K - 1
        while i >= 0 and idx[i] == n_cand - K + i:
            i -= 1
        if i < 0:
            return np.zeros(0, dtype=np.int64), examined, True
        idx[i] += 1
        for j in range(i + 1, K):
            idx[j] = idx[j - 1] + 1
    return np.zeros(0, dtype=np.int64), examined, False


NUMPY = SimpleNamespace(
    name="numpy",
    quad_eval=_quad_eval_np,
    quad_jacobian=_quad_jac_np,
    block_forward=_block_forward_np,
    block_backward=_block_backward_np,
    block_weight_grad=_block_wgrad_np,
    longest_partition_path=_longest_partition_path_py,
    bfs_tree=_bfs_tree_py,
    first_hitting=_first_hitting_np,
)

NUMBA = SimpleNamespace(
    name="numba",
    quad_eval=_quad_eval_nb_wrap,
    quad_jacobian=_quad_jac_nb_wrap,
    block_forward=_block_forward_nb,
    block_backward=_block_backward_nb,
    block_weight_grad=_block_wgrad_nb,
    longest_partition_path=_longest_partition_path_nb,
    bfs_tree=_bfs_tree_nb,
    first_hitting=_first_hitting_nb,
)

ACTIVE = NUMBA if _accel.ENABLED else NUMPY
