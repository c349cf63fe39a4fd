"""Graph core: simple undirected graphs, exact distances, aggregation structures.

Graphs are plain node-count + canonical edge list + dense float64
feature matrix.  Distances are exact BFS walk lengths with -1 as the
unreachable sentinel (distance matrices stay int64; no float inf).
EdgeStructure is the CSR form every aggregation kernel consumes: edges
grouped by destination with sources ascending inside a segment, plus
the precomputed transpose used by backward passes.

The text serialization is line-based: a header ``n d_in``, n feature
lines of d_in reals, then one ``u v`` line per edge.  Multi-graph files
separate blocks with a single blank line.  Feature reals are written
with repr, which round-trips float64 exactly.
"""

from __future__ import annotations

import io
from collections import deque
from dataclasses import dataclass

import numpy as np

UNREACHABLE = -1


@dataclass
class Graph:
    n: int
    edges: np.ndarray  # (m, 2) int64, u < v, lexicographically sorted
    features: np.ndarray  # (n, d_in) float64, d_in >= 1


def make_graph(n: int, edges, features) -> Graph:
    """Validate and canonicalize into a Graph.

    Edges may arrive in any order/orientation; self-loops and duplicate
    edges are rejected rather than silently dropped.
    """
    if n < 1:
        raise ValueError(f"graph needs at least one node, got n={n}")
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size:
        if e.min() < 0 or e.max() >= n:
            raise ValueError("edge endpoint out of range")
        if (e[:, 0] == e[:, 1]).any():
            raise ValueError("self-loops are not allowed")
        e = np.sort(e, axis=1)
        order = np.lexsort((e[:, 1], e[:, 0]))
        e = e[order]
        if e.shape[0] > 1 and (np.diff(e, axis=0) == 0).all(axis=1).any():
            raise ValueError("duplicate edge")
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] != n or f.shape[1] < 1:
        raise ValueError(f"features must be (n, d_in>=1), got {f.shape}")
    return Graph(n=n, edges=e, features=f)


def adjacency_lists(g: Graph) -> list[np.ndarray]:
    adj: list[list[int]] = [[] for _ in range(g.n)]
    for u, v in g.edges:
        adj[u].append(v)
        adj[v].append(u)
    return [np.array(sorted(a), dtype=np.int64) for a in adj]


def shortest_walk_distances(g: Graph) -> np.ndarray:
    """All-pairs BFS distances, int64, UNREACHABLE (-1) where no walk exists."""
    adj = adjacency_lists(g)
    dist = np.full((g.n, g.n), UNREACHABLE, dtype=np.int64)
    for s in range(g.n):
        row = dist[s]
        row[s] = 0
        q = deque([s])
        while q:
            u = q.popleft()
            du = row[u]
            for v in adj[u]:
                if row[v] == UNREACHABLE:
                    row[v] = du + 1
                    q.append(v)
    return dist


def is_connected(g: Graph) -> bool:
    return (shortest_walk_distances(g)[0] != UNREACHABLE).all()


def diameter(g: Graph) -> int:
    d = shortest_walk_distances(g)
    if (d == UNREACHABLE).any():
        raise ValueError("diameter of a disconnected graph is undefined")
    return int(d.max())


def eccentricities(g: Graph) -> np.ndarray:
    d = shortest_walk_distances(g)
    if (d == UNREACHABLE).any():
        raise ValueError("eccentricity of a disconnected graph is undefined")
    return d.max(axis=1)


@dataclass
class EdgeStructure:
    """CSR edge grouping for the aggregation kernels.

    idx[e] is the source row of edge e; destination segment s owns
    edges indptr[s]:indptr[s+1], sources ascending within a segment.
    weights is an optional constant per-edge factor (GCN operators).
    t_idx/t_indptr group the same edges by source; t_perm maps each
    transposed position back to the canonical edge id so per-edge
    weights can follow.
    """

    n_src: int
    n_dst: int
    idx: np.ndarray
    indptr: np.ndarray
    weights: np.ndarray | None
    t_idx: np.ndarray
    t_indptr: np.ndarray
    t_perm: np.ndarray

    @property
    def n_edges(self) -> int:
        return int(self.idx.shape[0])


def build_structure(
    n_src: int, n_dst: int, src, dst, weights=None
) -> EdgeStructure:
    src = np.asarray(src, dtype=np.int64).reshape(-1)
    dst = np.asarray(dst, dtype=np.int64).reshape(-1)
    if src.shape != dst.shape:
        raise ValueError("src/dst length mismatch")
    if src.size and (src.min() < 0 or src.max() >= n_src):
        raise ValueError("source index out of range")
    if dst.size and (dst.min() < 0 or dst.max() >= n_dst):
        raise ValueError("destination index out of range")
    w = None if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)

    order = np.lexsort((src, dst))
    src, dst = src[order], dst[order]
    if w is not None:
        w = np.ascontiguousarray(w[order])
    indptr = np.zeros(n_dst + 1, dtype=np.int64)
    np.cumsum(np.bincount(dst, minlength=n_dst), out=indptr[1:])

    t_perm = np.lexsort((dst, src))
    t_indptr = np.zeros(n_src + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n_src), out=t_indptr[1:])
    return EdgeStructure(
        n_src=n_src,
        n_dst=n_dst,
        idx=np.ascontiguousarray(src),
        indptr=indptr,
        weights=w,
        t_idx=np.ascontiguousarray(dst[t_perm]),
        t_indptr=t_indptr,
        t_perm=t_perm,
    )


def hop_structure(
    g: Graph,
    hop: int,
    include_self: bool = False,
    distances: np.ndarray | None = None,
) -> EdgeStructure:
    """Structure aggregating exactly the nodes at walk distance ``hop``.

    hop=1 is ordinary adjacency.  include_self adds a self edge to every
    segment (used by the state updates, which always see the node
    itself regardless of hop).
    """
    if hop < 1:
        raise ValueError("hop must be >= 1")
    if distances is None:
        distances = shortest_walk_distances(g)
    dst, src = np.nonzero(distances == hop)
    if include_self:
        loops = np.arange(g.n, dtype=np.int64)
        src = np.concatenate([src.astype(np.int64), loops])
        dst = np.concatenate([dst.astype(np.int64), loops])
    return build_structure(g.n, g.n, src, dst)


def gcn_message_matrix(g: Graph) -> np.ndarray:
    """Symmetric-normalized operator D^{-1/2} (A + I) D^{-1/2}, dense."""
    a = np.zeros((g.n, g.n))
    if g.edges.size:
        a[g.edges[:, 0], g.edges[:, 1]] = 1.0
        a[g.edges[:, 1], g.edges[:, 0]] = 1.0
    a[np.diag_indices(g.n)] = 1.0
    dinv = 1.0 / np.sqrt(a.sum(axis=1))
    return a * dinv[:, None] * dinv[None, :]


def khop_gcn_message_matrix(
    g: Graph, hop: int, distances: np.ndarray | None = None
) -> np.ndarray:
    """Per-hop normalized operator: the 1-hop formula on the hop-``hop`` edge set."""
    if hop < 1:
        raise ValueError("hop must be >= 1")
    if distances is None:
        distances = shortest_walk_distances(g)
    a = (distances == hop).astype(np.float64)
    a[np.diag_indices(g.n)] = 1.0
    dinv = 1.0 / np.sqrt(a.sum(axis=1))
    return a * dinv[:, None] * dinv[None, :]


def structure_from_dense(m: np.ndarray) -> EdgeStructure:
    """CSR structure over the nonzeros of a dense operator (weights kept)."""
    if m.ndim != 2:
        raise ValueError("expected a 2-d operator")
    dst, src = np.nonzero(m)
    return build_structure(m.shape[1], m.shape[0], src, dst, weights=m[dst, src])


def concat_structures(structs: list[EdgeStructure]) -> EdgeStructure:
    """Block-diagonal union of per-graph structures.

    Because every block's destinations precede the next block's, plain
    concatenation with index offsets preserves the canonical ordering;
    nothing is re-sorted.
    """
    if not structs:
        raise ValueError("nothing to concatenate")
    src_off = dst_off = edge_off = 0
    idx_parts, t_idx_parts, perm_parts, w_parts = [], [], [], []
    indptr_parts = [np.zeros(1, dtype=np.int64)]
    t_indptr_parts = [np.zeros(1, dtype=np.int64)]
    any_w = any(s.weights is not None for s in structs)
    if any_w and not all(s.weights is not None for s in structs):
        raise ValueError("cannot mix weighted and unweighted structures")
    for s in structs:
        idx_parts.append(s.idx + src_off)
        indptr_parts.append(s.indptr[1:] + edge_off)
        t_idx_parts.append(s.t_idx + dst_off)
        t_indptr_parts.append(s.t_indptr[1:] + edge_off)
        perm_parts.append(s.t_perm + edge_off)
        if any_w:
            w_parts.append(s.weights)
        src_off += s.n_src
        dst_off += s.n_dst
        edge_off += s.n_edges
    return EdgeStructure(
        n_src=src_off,
        n_dst=dst_off,
        idx=np.concatenate(idx_parts),
        indptr=np.concatenate(indptr_parts),
        weights=np.concatenate(w_parts) if any_w else None,
        t_idx=np.concatenate(t_idx_parts),
        t_indptr=np.concatenate(t_indptr_parts),
        t_perm=np.concatenate(perm_parts),
    )


def union_graphs(graphs: list[Graph]) -> tuple[Graph, np.ndarray]:
    """Disjoint union; returns the union and per-graph node offsets."""
    if not graphs:
        raise ValueError("nothing to union")
    d_in = graphs[0].features.shape[1]
    if any(g.features.shape[1] != d_in for g in graphs):
        raise ValueError("feature widths differ")
    offsets = np.cumsum([0] + [g.n for g in graphs])[:-1]
    edges = [g.edges + off for g, off in zip(graphs, offsets) if g.edges.size]
    union = Graph(
        n=int(sum(g.n for g in graphs)),
        edges=np.concatenate(edges) if edges else np.zeros((0, 2), dtype=np.int64),
        features=np.concatenate([g.features for g in graphs]),
    )
    return union, offsets


# Deterministic topology builders.

def ring_graph(n: int, features: np.ndarray) -> Graph:
    if n < 3:
        raise ValueError("ring needs n >= 3")
    e = [(i, (i + 1) % n) for i in range(n)]
    return make_graph(n, e, features)


def binary_tree_edges(depth: int) -> tuple[int, np.ndarray]:
    """Complete binary tree, root 0, level order; returns (n, edges)."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    n = 2 ** (depth + 1) - 1
    kids = np.arange(1, n, dtype=np.int64)
    parents = (kids - 1) // 2
    return n, np.stack([parents, kids], axis=1)


def star_edges(leaves: int) -> tuple[int, np.ndarray]:
    """Star with hub 0; returns (n, edges)."""
    if leaves < 1:
        raise ValueError("star needs at least one leaf")
    l = np.arange(1, leaves + 1, dtype=np.int64)
    return leaves + 1, np.stack([np.zeros(leaves, dtype=np.int64), l], axis=1)


def erdos_renyi(n: int, p: float, rng: np.random.Generator, features=None) -> Graph:
    iu, ju = np.triu_indices(n, k=1)
    mask = rng.random(iu.shape[0]) < p
    f = np.ones((n, 1)) if features is None else features
    return make_graph(n, np.stack([iu[mask], ju[mask]], axis=1), f)


def barabasi_albert(n: int, m: int, rng: np.random.Generator, features=None) -> Graph:
    """Preferential attachment; connected by construction for m >= 1."""
    if not 1 <= m < n:
        raise ValueError("need 1 <= m < n")
    edges: list[tuple[int, int]] = [(i, m) for i in range(m)]
    # repeated-endpoint list implements degree-proportional sampling
    stubs: list[int] = [e for pair in edges for e in pair]
    for v in range(m + 1, n):
        targets: set[int] = set()
        while len(targets) < m:
            targets.add(int(stubs[rng.integers(len(stubs))]))
        for t in sorted(targets):
            edges.append((t, v))
            stubs.extend((t, v))
    f = np.ones((n, 1)) if features is None else features
    return make_graph(n, edges, f)


def connected_erdos_renyi(
    n: int, p: float, rng: np.random.Generator, features=None, max_tries: int = 200
) -> Graph:
    for _ in range(max_tries):
        g = erdos_renyi(n, p, rng, features)
        if is_connected(g):
            return g
    raise RuntimeError(f"no connected ER graph after {max_tries} tries (n={n}, p={p})")


# Text serialization.

def write_graph(g: Graph, fh: io.TextIOBase) -> None:
    fh.write(f"{g.n} {g.features.shape[1]}\n")
    for row in g.features:
        fh.write(" ".join(repr(float(v)) for v in row) + "\n")
    for u, v in g.edges:
        fh.write(f"{u} {v}\n")


def _parse_block(lines: list[str], start_line: int) -> Graph:
    header = lines[0].split()
    if len(header) != 2:
        raise ValueError(f"line {start_line}: header must be 'n d_in'")
    n, d_in = int(header[0]), int(header[1])
    if len(lines) < 1 + n:
        raise ValueError(f"line {start_line}: expected {n} feature lines")
    feats = np.empty((n, d_in))
    for i in range(n):
        parts = lines[1 + i].split()
        if len(parts) != d_in:
            raise ValueError(
                f"line {start_line + 1 + i}: expected {d_in} reals, got {len(parts)}"
            )
        feats[i] = [float(p) for p in parts]
    edges = []
    for j, ln in enumerate(lines[1 + n :]):
        parts = ln.split()
        if len(parts) != 2:
            raise ValueError(f"line {start_line + 1 + n + j}: expected 'u v'")
        edges.append((int(parts[0]), int(parts[1])))
    return make_graph(n, edges, feats)


def read_graph(fh: io.TextIOBase) -> Graph:
    lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise ValueError("empty graph file")
    return _parse_block(lines, 1)


def write_graphs(path, graphs: list[Graph]) -> None:
    with open(path, "w") as fh:
        for i, g in enumerate(graphs):
            if i:
                fh.write("\n")
            write_graph(g, fh)


def read_graphs(path) -> list[Graph]:
    with open(path) as fh:
        raw = fh.read().split("\n")
    graphs = []
    block: list[str] = []
    block_start = 1
    for lineno, ln in enumerate(raw, start=1):
        if ln.strip():
            if not block:
                block_start = lineno
            block.append(ln)
        elif block:
            graphs.append(_parse_block(block, block_start))
            block = []
    if block:
        graphs.append(_parse_block(block, block_start))
    return graphs
