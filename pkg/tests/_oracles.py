"""Independent brute-force oracles shared by the test modules.

Everything here is deliberately written against different primitives
than the package uses: distances via Floyd-Warshall instead of BFS,
aggregations via explicit python loops or dense matrices instead of
CSR kernels.  Slow and obvious beats fast and shared-bug.
"""

from __future__ import annotations

import numpy as np

INF = np.int64(1 << 40)


def floyd_warshall(n: int, edges: np.ndarray) -> np.ndarray:
    """All-pairs distances; -1 where unreachable."""
    d = np.full((n, n), INF, dtype=np.int64)
    np.fill_diagonal(d, 0)
    for u, v in np.asarray(edges).reshape(-1, 2):
        d[u, v] = d[v, u] = 1
    for k in range(n):
        d = np.minimum(d, d[:, k, None] + d[None, k, :])
    d[d >= INF] = -1
    return d


def frontier_hops(n: int, edges: np.ndarray, source: int) -> np.ndarray:
    """BFS by explicit frontier sets; distance labels from a single source."""
    adj = [set() for _ in range(n)]
    for u, v in np.asarray(edges).reshape(-1, 2):
        adj[u].add(int(v))
        adj[v].add(int(u))
    dist = np.full(n, -1, dtype=np.int64)
    dist[source] = 0
    frontier = {source}
    hop = 0
    while frontier:
        hop += 1
        nxt = set()
        for u in frontier:
            nxt |= adj[u]
        nxt = {v for v in nxt if dist[v] == -1}
        for v in nxt:
            dist[v] = hop
        frontier = nxt
    return dist


def seg_sum_loops(payload, idx, indptr, weights=None):
    n_seg = len(indptr) - 1
    out = np.zeros((n_seg, payload.shape[1]))
    for s in range(n_seg):
        for e in range(indptr[s], indptr[s + 1]):
            w = 1.0 if weights is None else weights[e]
            out[s] += w * payload[idx[e]]
    return out


def seg_max_loops(values, idx, indptr):
    n_seg = len(indptr) - 1
    out = np.full((n_seg, values.shape[1]), -np.inf)
    arg = np.full((n_seg, values.shape[1]), -1, dtype=np.int64)
    for s in range(n_seg):
        for e in range(indptr[s], indptr[s + 1]):
            src = idx[e]
            for j in range(values.shape[1]):
                if values[src, j] > out[s, j]:
                    out[s, j] = values[src, j]
                    arg[s, j] = src
    return out, arg


def random_structure(rng, n_src, n_dst, density=0.3, weighted=False):
    """Random CSR structure with some empty segments; returns kernel args."""
    pairs = []
    for d in range(n_dst):
        for s in range(n_src):
            if rng.random() < density:
                pairs.append((d, s))
    pairs.sort()
    dst = np.array([p[0] for p in pairs], dtype=np.int64)
    src = np.array([p[1] for p in pairs], dtype=np.int64)
    indptr = np.zeros(n_dst + 1, dtype=np.int64)
    np.cumsum(np.bincount(dst, minlength=n_dst), out=indptr[1:])
    weights = rng.standard_normal(len(pairs)) if weighted else None
    return src, indptr, weights


def glstm_dense_forward(cfg, params, edges, features, hops):
    """Independent per-node-loop gLSTM forward on one small graph.

    cfg: dict with layers, d_h, d_k, heads, input_norm, hidden_norm,
    activation, and the three ablate flags.  params: name -> ndarray
    with the package's layouts.  hops: list of per-layer hop distances.
    Returns (h, gate_log) where gate_log collects every input/forget
    gate value produced.
    """
    n = features.shape[0]
    dk, heads = cfg["d_k"], cfg["heads"]
    dist = floyd_warshall(n, edges)
    act = {"relu": lambda x: np.maximum(x, 0), "tanh": np.tanh}.get(cfg.get("activation"))

    def ln(x, gamma, beta, eps=1e-5):
        mu = x.mean(axis=-1, keepdims=True)
        v = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
        return (x - mu) / np.sqrt(v + eps) * gamma + beta

    h = features @ params["input_proj.weight"] + params["input_proj.bias"]
    C = np.zeros((n, heads, dk, dk))
    nrm = np.zeros((n, heads, dk))
    m_state = np.zeros((n, heads))
    gate_log = {"i": [], "f": []}

    for layer in range(cfg["layers"]):
        pre = f"layer{layer}."
        x = (
            ln(h, params[pre + "norm_in.gamma"], params[pre + "norm_in.beta"])
            if cfg.get("input_norm") == "layer"
            else h
        )
        hop = hops[layer]
        neigh = np.array(
            [x[dist[u] == hop].sum(axis=0) if (dist[u] == hop).any() else np.zeros_like(x[0]) for u in range(n)]
        )
        z = np.concatenate([x, neigh], axis=1)
        q = (z @ params[pre + "w_q"] + params[pre + "b_q"]).reshape(n, heads, dk)
        k = ((x @ params[pre + "w_k"] + params[pre + "b_k"]) / np.sqrt(dk)).reshape(n, heads, dk)
        v = (x @ params[pre + "w_v"] + params[pre + "b_v"]).reshape(n, heads, dk)
        itil = None if cfg.get("ablate_input_gate") else x @ params[pre + "w_i"] + params[pre + "b_i"]
        ftil = None if cfg.get("ablate_forget_gate") else x @ params[pre + "w_f"] + params[pre + "b_f"]

        C2, n2, m2 = np.empty_like(C), np.empty_like(nrm), np.empty_like(m_state)
        htil = np.empty((n, heads, dk))
        for u in range(n):
            members = [w for w in range(n) if dist[u, w] == hop] + [u]
            for a in range(heads):
                branches = []
                if ftil is not None:
                    branches.append(ftil[u, a] + m_state[u, a])
                elif itil is not None:
                    branches.append(m_state[u, a])
                if itil is not None:
                    branches.extend(itil[w, a] for w in members)
                elif ftil is not None:
                    branches.append(0.0)
                m_new = max(branches) if branches else 0.0
                f_gate = 1.0 if ftil is None else np.exp(ftil[u, a] + m_state[u, a] - m_new)
                if ftil is not None:
                    gate_log["f"].append(f_gate)
                Cn = f_gate * C[u, a]
                nn = f_gate * nrm[u, a]
                for w in members:
                    ig = 1.0 if itil is None else np.exp(itil[w, a] - m_new)
                    if itil is not None:
                        gate_log["i"].append(ig)
                    Cn = Cn + ig * np.outer(v[w, a], k[w, a])
                    nn = nn + ig * k[w, a]
                cq = Cn @ q[u, a]
                denom = max(abs(nn @ q[u, a]), 1.0)
                C2[u, a], n2[u, a], m2[u, a] = Cn, nn, m_new
                htil[u, a] = cq / denom
        C, nrm, m_state = C2, n2, m2

        ht = htil.reshape(n, heads * dk)
        if cfg.get("hidden_norm") == "group":
            g = params[pre + "norm_hidden.gamma"]
            b = params[pre + "norm_hidden.beta"]
            grouped = ht.reshape(n, heads, dk)
            mu = grouped.mean(axis=-1, keepdims=True)
            var = ((grouped - mu) ** 2).mean(axis=-1, keepdims=True)
            ht = ((grouped - mu) / np.sqrt(var + 1e-5)).reshape(n, heads * dk) * g + b
        if not cfg.get("ablate_output_gate"):
            o = 1.0 / (1.0 + np.exp(-(x @ params[pre + "w_o"] + params[pre + "b_o"])))
            ht = o * ht
        h = h + ht @ params[pre + "down.weight"] + params[pre + "down.bias"]
        if act is not None and layer + 1 < cfg["layers"]:
            h = act(h)
    return h, gate_log


def gcn_dense_forward(cfg, params, edges, features, hops):
    """Dense GCN oracle: h <- act(O h W) with per-hop normalized operators."""
    n = features.shape[0]
    dist = floyd_warshall(n, edges)
    h = features @ params["input_proj.weight"] + params["input_proj.bias"]
    for layer in range(cfg["layers"]):
        a = (dist == hops[layer]).astype(float)
        np.fill_diagonal(a, 1.0)
        dinv = 1.0 / np.sqrt(a.sum(axis=1))
        op = a * dinv[:, None] * dinv[None, :]
        h = op @ h @ params[f"layer{layer}.weight"]
        if cfg.get("activation") == "relu":
            h = np.maximum(h, 0.0)
    return h
