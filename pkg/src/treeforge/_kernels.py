"""Compiled inner loops of tree growth and traversal.

Dense and CSC growth share one threshold scan.  For a candidate feature the
node samples are split three ways (negative, zero, positive values); the two
non-zero groups are sorted by (value, sample id) and the zero block enters
the running statistics as ``total - neg - pos``.  Both input layouts feed
the scan with bit-identical arrays, so both grow bit-identical trees.
"""

import heapq

import numpy as np
from numba import njit

SUMSQ = 0  # gini (on one-hot targets) and variance share the sum-of-squares proxy
ENTROPY = 1

_REL_TOL = 1e-10
_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)


@njit(cache=True)
def node_seed(seed, node_id):
    """splitmix64 finalizer of (seed, node_id), truncated to 32 bits."""
    z = np.uint64(seed) + (np.uint64(node_id) + np.uint64(1)) * np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return np.int64(z & np.uint64(0xFFFFFFFF))


@njit(cache=True)
def swap(L, mapping, p1, p2):
    a = L[p1]
    b = L[p2]
    L[p1] = b
    L[p2] = a
    mapping[b] = p1
    mapping[a] = p2


@njit(cache=True)
def extract_nnz_mapping(indptr, indices, data, j, L, mapping, start, end,
                        neg_v, neg_i, pos_v, pos_i):
    start_p = end
    end_n = start
    n_neg = 0
    n_pos = 0
    for k in range(indptr[j], indptr[j + 1]):
        index = indices[k]
        value = data[k]
        i = mapping[index]
        if start <= i and i < end:
            if value > 0:
                pos_v[n_pos] = value
                pos_i[n_pos] = index
                n_pos += 1
                start_p -= 1
                swap(L, mapping, i, start_p)
            else:
                neg_v[n_neg] = value
                neg_i[n_neg] = index
                n_neg += 1
                swap(L, mapping, i, end_n)
                end_n += 1
    return n_neg, n_pos


@njit(cache=True)
def extract_nnz_bsearch(indptr, indices, data, j, L, mapping, start, end,
                        neg_v, neg_i, pos_v, pos_i):
    seg = np.sort(L[start:end])
    for t in range(end - start):
        L[start + t] = seg[t]
        mapping[seg[t]] = start + t
    lo = indptr[j]
    hi = indptr[j + 1]
    col = indices[lo:hi]
    start_p = end
    end_n = start
    n_neg = 0
    n_pos = 0
    # iterate the sorted copy: swapping inside L would skip or revisit entries
    for t in range(end - start):
        sid = seg[t]
        p = np.searchsorted(col, sid)
        if p < hi - lo and col[p] == sid:
            value = data[lo + p]
            i = mapping[sid]
            if value > 0:
                pos_v[n_pos] = value
                pos_i[n_pos] = sid
                n_pos += 1
                start_p -= 1
                swap(L, mapping, i, start_p)
            else:
                neg_v[n_neg] = value
                neg_i[n_neg] = sid
                n_neg += 1
                swap(L, mapping, i, end_n)
                end_n += 1
    return n_neg, n_pos


@njit(cache=True)
def use_mapping(node_size, n_nz):
    # binary search only pays off when the node is small next to the column
    return not node_size * np.log(n_nz) < 0.1 * n_nz


@njit(cache=True)
def extract_nnz(indptr, indices, data, j, L, mapping, start, end,
                neg_v, neg_i, pos_v, pos_i):
    n_nz = indptr[j + 1] - indptr[j]
    if n_nz == 0:
        return 0, 0
    if use_mapping(end - start, n_nz):
        return extract_nnz_mapping(indptr, indices, data, j, L, mapping, start, end,
                                   neg_v, neg_i, pos_v, pos_i)
    return extract_nnz_bsearch(indptr, indices, data, j, L, mapping, start, end,
                               neg_v, neg_i, pos_v, pos_i)


@njit(cache=True)
def _xlogx(x):
    if x <= 0.0:
        return 0.0
    return x * np.log(x)


@njit(cache=True)
def _proxy(acc, T, nl, m, crit, n_out):
    nr = m - nl
    s = 0.0
    K = T.shape[0]
    if crit == SUMSQ:
        for k in range(K):
            r = T[k] - acc[k]
            s += acc[k] * acc[k] / nl + r * r / nr
    else:
        for k in range(K):
            s += _xlogx(acc[k]) + _xlogx(T[k] - acc[k])
        s -= n_out * (_xlogx(float(nl)) + _xlogx(float(nr)))
    return s


@njit(cache=True)
def proxy_base(T, m, crit, n_out):
    """Proxy value of the unsplit node; ``(proxy - base) / m`` is the impurity decrease."""
    s = 0.0
    if crit == SUMSQ:
        for k in range(T.shape[0]):
            s += T[k] * T[k] / m
    else:
        for k in range(T.shape[0]):
            s += _xlogx(T[k])
        s -= n_out * _xlogx(float(m))
    return s


_RUN = 16


@njit(cache=True)
def sort_by_value(vals, ids, n):
    """Stable sort of the first n (value, id) pairs by value; ids arrive ascending.

    Bottom-up merge sort over insertion-sorted runs, in place.
    """
    if n < 2:
        return
    for lo in range(0, n, _RUN):
        hi = min(lo + _RUN, n)
        for a in range(lo + 1, hi):
            v = vals[a]
            i = ids[a]
            b = a - 1
            while b >= lo and vals[b] > v:
                vals[b + 1] = vals[b]
                ids[b + 1] = ids[b]
                b -= 1
            vals[b + 1] = v
            ids[b + 1] = i
    if n <= _RUN:
        return
    sv = vals[:n].copy()
    si = ids[:n].copy()
    src_v, src_i, dst_v, dst_i = sv, si, vals, ids
    in_src = True  # the current runs live in (src_v, src_i)
    width = _RUN
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            a = lo
            b = mid
            for t in range(lo, hi):
                if a < mid and (b >= hi or src_v[a] <= src_v[b]):
                    dst_v[t] = src_v[a]
                    dst_i[t] = src_i[a]
                    a += 1
                else:
                    dst_v[t] = src_v[b]
                    dst_i[t] = src_i[b]
                    b += 1
        src_v, dst_v = dst_v, src_v
        src_i, dst_i = dst_i, src_i
        in_src = not in_src
        width *= 2
    if in_src:
        vals[:n] = sv
        ids[:n] = si


@njit(cache=True)
def scan(neg_v, neg_i, n_neg, pos_v, pos_i, n_pos, n_zero, W, T,
         crit, n_out, random_mode, u, acc, P):
    """Best (or random) threshold of one feature.

    Returns ``(found, proxy, threshold)``; inputs must already be sorted.
    """
    K = W.shape[1]
    m = n_neg + n_zero + n_pos
    for k in range(K):
        acc[k] = 0.0
        P[k] = 0.0
    for t in range(n_pos):
        row = pos_i[t]
        for k in range(K):
            P[k] += W[row, k]
    zflag = 1 if n_zero > 0 else 0
    n_items = n_neg + zflag + n_pos
    if n_neg > 0:
        vmin = neg_v[0]
    elif n_zero > 0:
        vmin = 0.0
    else:
        vmin = pos_v[0]
    if n_pos > 0:
        vmax = pos_v[n_pos - 1]
    elif n_zero > 0:
        vmax = 0.0
    else:
        vmax = neg_v[n_neg - 1]
    if not vmin < vmax:
        return False, -np.inf, 0.0
    tau = 0.0
    if random_mode:
        tau = vmin + u * (vmax - vmin)
        if tau >= vmax:
            tau = vmin
    best = -np.inf
    best_thr = 0.0
    nl = 0
    for t in range(n_items):
        if t < n_neg:
            row = neg_i[t]
            for k in range(K):
                acc[k] += W[row, k]
            nl += 1
            v = neg_v[t]
        elif t < n_neg + zflag:
            for k in range(K):
                acc[k] = acc[k] + (T[k] - acc[k] - P[k])
            nl += n_zero
            v = 0.0
        else:
            q = t - n_neg - zflag
            row = pos_i[q]
            for k in range(K):
                acc[k] += W[row, k]
            nl += 1
            v = pos_v[q]
        if t == n_items - 1:
            break
        tn = t + 1
        if tn < n_neg:
            nv = neg_v[tn]
        elif tn < n_neg + zflag:
            nv = 0.0
        else:
            nv = pos_v[tn - n_neg - zflag]
        if nv == v:
            continue
        if random_mode:
            if v <= tau and tau < nv:
                return True, _proxy(acc, T, nl, m, crit, n_out), tau
            continue
        pr = _proxy(acc, T, nl, m, crit, n_out)
        if pr > best:
            best = pr
            thr = 0.5 * (v + nv)
            if not thr < nv:
                thr = v
            best_thr = thr
    if random_mode:
        return False, -np.inf, 0.0
    return best > -np.inf, best, best_thr


@njit(cache=True)
def gather_dense(Xd, ids, j, neg_v, neg_i, pos_v, pos_i):
    n_neg = 0
    n_pos = 0
    for t in range(ids.shape[0]):
        sid = ids[t]
        v = Xd[sid, j]
        if v < 0:
            neg_v[n_neg] = v
            neg_i[n_neg] = sid
            n_neg += 1
        elif v > 0:
            pos_v[n_pos] = v
            pos_i[n_pos] = sid
            n_pos += 1
    return n_neg, n_pos


@njit(cache=True)
def find_split(sparse, Xd, indptr, indices, data, p, L, mapping, start, end, ids,
               W, T, crit, n_out, k_features, random_mode, seed, node_id,
               neg_v, neg_i, pos_v, pos_i, acc, P):
    """Search the best split of the node ``L[start:end]`` (``ids`` = sorted samples).

    Returns ``(found, feature, threshold, proxy)``.
    """
    np.random.seed(node_seed(seed, node_id))
    m = end - start
    feats = np.arange(p)
    best = -np.inf
    best_f = -1
    best_thr = 0.0
    n_seen = 0
    for i in range(p):
        r = i + np.random.randint(0, p - i)
        tmp = feats[i]
        feats[i] = feats[r]
        feats[r] = tmp
        j = feats[i]
        if sparse:
            n_neg, n_pos = extract_nnz(indptr, indices, data, j, L, mapping, start, end,
                                       neg_v, neg_i, pos_v, pos_i)
        else:
            n_neg, n_pos = gather_dense(Xd, ids, j, neg_v, neg_i, pos_v, pos_i)
        n_zero = m - n_neg - n_pos
        if n_neg == m or n_pos == m or n_zero == m:
            if n_neg == m:
                sort_by_value(neg_v, neg_i, n_neg)
                if neg_v[0] == neg_v[n_neg - 1]:
                    continue
            elif n_pos == m:
                sort_by_value(pos_v, pos_i, n_pos)
                if pos_v[0] == pos_v[n_pos - 1]:
                    continue
            else:
                continue
        else:
            sort_by_value(neg_v, neg_i, n_neg)
            sort_by_value(pos_v, pos_i, n_pos)
        n_seen += 1
        u = np.random.random() if random_mode else 0.0
        found, pr, thr = scan(neg_v, neg_i, n_neg, pos_v, pos_i, n_pos, n_zero, W, T,
                              crit, n_out, random_mode, u, acc, P)
        if found and pr > best:
            best = pr
            best_f = j
            best_thr = thr
        if n_seen >= k_features:
            break
    return best_f >= 0, best_f, best_thr, best


@njit(cache=True)
def _init_node(nid, start, end, depth, n_total, sparse, Xd, indptr, indices, data, p,
               L, mapping, W, V, crit, n_out, n_min, max_depth, k_features, random_mode,
               seed, n_samples, impurity, value, node_depth, node_start, node_end,
               split_feature, split_thr, split_gain,
               neg_v, neg_i, pos_v, pos_i, acc, P, T, search=True):
    """Fill the per-node records of a new node and search its split.

    Returns the weighted impurity decrease of the chosen split, or -1.
    ``search=False`` only fills the records (the node will stay a leaf).
    """
    m = end - start
    K = W.shape[1]
    ids = np.sort(L[start:end])
    for k in range(K):
        T[k] = 0.0
    for t in range(m):
        for k in range(K):
            T[k] += W[ids[t], k]
    dv = V.shape[1]
    for k in range(dv):
        value[nid, k] = 0.0
    for t in range(m):
        for k in range(dv):
            value[nid, k] += V[ids[t], k]
    for k in range(dv):
        value[nid, k] /= m
    imp = 0.0
    if crit == SUMSQ:
        for k in range(K):
            mean = T[k] / m
            s = 0.0
            for t in range(m):
                dlt = W[ids[t], k] - mean
                s += dlt * dlt
            imp += s / m
    else:
        for k in range(K):
            if T[k] > 0:
                pk = T[k] / m
                imp -= pk * np.log(pk)
    pure = True
    for t in range(1, m):
        for k in range(K):
            if W[ids[t], k] != W[ids[0], k]:
                pure = False
                break
        if not pure:
            break
    n_samples[nid] = m
    impurity[nid] = imp
    node_depth[nid] = depth
    node_start[nid] = start
    node_end[nid] = end
    split_feature[nid] = -1
    if not search or pure or m < 2 or m < n_min or (max_depth >= 0 and depth >= max_depth):
        return -1.0
    found, f, thr, pr = find_split(sparse, Xd, indptr, indices, data, p, L, mapping,
                                   start, end, ids, W, T, crit, n_out, k_features,
                                   random_mode, seed, nid, neg_v, neg_i, pos_v, pos_i,
                                   acc, P)
    if not found:
        return -1.0
    gain = (pr - proxy_base(T, m, crit, n_out)) / m
    if not gain > _REL_TOL * imp:
        return -1.0
    split_feature[nid] = f
    split_thr[nid] = thr
    split_gain[nid] = gain
    return gain * m / n_total


@njit(cache=True)
def _partition(sparse, Xd, indptr, indices, data, L, mapping, start, end, j, thr,
               neg_v, neg_i, pos_v, pos_i, buf):
    """Reorder ``L[start:end]`` so that samples with x_j <= thr come first."""
    if sparse:
        n_neg, n_pos = extract_nnz(indptr, indices, data, j, L, mapping, start, end,
                                   neg_v, neg_i, pos_v, pos_i)
        if thr < 0:
            lo = start
            hi = start + n_neg
            nl = 0
            for t in range(n_neg):
                if neg_v[t] <= thr:
                    buf[nl] = neg_i[t]
                    nl += 1
            split = lo + nl
            for t in range(n_neg):
                if not neg_v[t] <= thr:
                    buf[nl] = neg_i[t]
                    nl += 1
        else:
            lo = end - n_pos
            hi = end
            nl = 0
            # positives were pushed from the end: the t-th sits at end - 1 - t
            for t in range(n_pos - 1, -1, -1):
                if pos_v[t] <= thr:
                    buf[nl] = pos_i[t]
                    nl += 1
            split = lo + nl
            for t in range(n_pos - 1, -1, -1):
                if not pos_v[t] <= thr:
                    buf[nl] = pos_i[t]
                    nl += 1
        for t in range(hi - lo):
            L[lo + t] = buf[t]
            mapping[buf[t]] = lo + t
        return split
    nl = 0
    for t in range(start, end):
        if Xd[L[t], j] <= thr:
            buf[nl] = L[t]
            nl += 1
    split = start + nl
    for t in range(start, end):
        if not Xd[L[t], j] <= thr:
            buf[nl] = L[t]
            nl += 1
    for t in range(end - start):
        L[start + t] = buf[t]
        mapping[buf[t]] = start + t
    return split


@njit(cache=True)
def grow_kernel(sparse, Xd, indptr, indices, data, p, W, V, crit, n_out, n_min,
                max_depth, max_leaves, k_features, random_mode, seed):
    n = W.shape[0]
    K = W.shape[1]
    cap = 2 * n
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    n_samples = np.zeros(cap, dtype=np.int64)
    impurity = np.zeros(cap)
    wgain = np.zeros(cap)
    value = np.zeros((cap, V.shape[1]))
    node_depth = np.zeros(cap, dtype=np.int64)
    node_start = np.zeros(cap, dtype=np.int64)
    node_end = np.zeros(cap, dtype=np.int64)
    split_feature = np.full(cap, -1, dtype=np.int64)
    split_thr = np.zeros(cap)
    split_gain = np.zeros(cap)

    L = np.arange(n)
    mapping = np.arange(n)
    neg_v = np.empty(n)
    pos_v = np.empty(n)
    neg_i = np.empty(n, dtype=np.int64)
    pos_i = np.empty(n, dtype=np.int64)
    buf = np.empty(n, dtype=np.int64)
    acc = np.empty(K)
    P = np.empty(K)
    T = np.empty(K)
    best_first = max_leaves > 0

    node_count = 1
    pr = _init_node(0, 0, n, 0, n, sparse, Xd, indptr, indices, data, p, L, mapping, W, V,
                    crit, n_out, n_min, max_depth, k_features, random_mode, seed,
                    n_samples, impurity, value, node_depth, node_start, node_end,
                    split_feature, split_thr, split_gain, neg_v, neg_i, pos_v, pos_i,
                    acc, P, T)
    heap = [(0.0, np.int64(0))]
    heap.pop()
    if pr >= 0:
        heapq.heappush(heap, (-pr if best_first else 0.0, np.int64(0)))
    n_leaves = 1
    while len(heap) > 0:
        if best_first and n_leaves >= max_leaves:
            break
        item = heapq.heappop(heap)
        nid = item[1]
        start = node_start[nid]
        end = node_end[nid]
        j = split_feature[nid]
        thr = split_thr[nid]
        mid = _partition(sparse, Xd, indptr, indices, data, L, mapping, start, end, j, thr,
                         neg_v, neg_i, pos_v, pos_i, buf)
        feature[nid] = j
        threshold[nid] = thr
        wgain[nid] = split_gain[nid] * (end - start) / n
        lid = node_count
        rid = node_count + 1
        node_count += 2
        left[nid] = lid
        right[nid] = rid
        n_leaves += 1
        # once the leaf budget is spent the children cannot split; skip their search
        grow_more = not (best_first and n_leaves >= max_leaves)
        for cid, cs, ce in ((lid, start, mid), (rid, mid, end)):
            pr = _init_node(cid, cs, ce, node_depth[nid] + 1, n, sparse, Xd, indptr, indices,
                            data, p, L, mapping, W, V, crit, n_out, n_min, max_depth,
                            k_features, random_mode, seed, n_samples, impurity, value,
                            node_depth, node_start, node_end, split_feature, split_thr,
                            split_gain, neg_v, neg_i, pos_v, pos_i, acc, P, T, grow_more)
            if pr >= 0:
                heapq.heappush(heap, (-pr if best_first else float(cid), np.int64(cid)))
    c = node_count
    return (feature[:c].copy(), threshold[:c].copy(), left[:c].copy(), right[:c].copy(),
            n_samples[:c].copy(), impurity[:c].copy(), wgain[:c].copy(), value[:c].copy())


@njit(cache=True)
def apply_dense(feature, threshold, left, right, X):
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@njit(cache=True)
def apply_csr(feature, threshold, left, right, indptr, indices, data, n_rows, p):
    out = np.empty(n_rows, dtype=np.int64)
    nz_mask = np.full(p, -1, dtype=np.int64)
    nz_value = np.zeros(p)
    for i in range(n_rows):
        for k in range(indptr[i], indptr[i + 1]):
            nz_mask[indices[k]] = i
            nz_value[indices[k]] = data[k]
        node = 0
        while feature[node] >= 0:
            j = feature[node]
            v = nz_value[j] if nz_mask[j] == i else 0.0
            if v <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = node
    return out


@njit(cache=True)
def path_lengths(feature, threshold, left, right, X):
    """Number of nodes on each sample's root-to-leaf path."""
    n = X.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        node = 0
        c = 1
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
            c += 1
        out[i] = c
    return out


@njit(cache=True)
def fill_paths(feature, threshold, left, right, X, offset, indptr, indices, fill):
    """Write each sample's path node ids (+offset) into CSR slots at ``fill``."""
    for i in range(X.shape[0]):
        node = 0
        pos = indptr[i] + fill[i]
        indices[pos] = offset
        pos += 1
        while feature[node] >= 0:
            if X[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
            indices[pos] = offset + node
            pos += 1
        fill[i] = pos - indptr[i]
