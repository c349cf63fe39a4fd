"""Seeded generators for the synthetic graph tasks.

Every generator is a pure function of its parameters and a seed: calling it
twice produces bitwise-identical splits.  Targets are computed by exact
oracles (BFS distances, direct construction), never by a model.

Instances carry plain data: a Graph, a target, and a meta dict of symbol
indices / flags.  Model-side concerns (embedding tables, feature assembly)
stay in the models module.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import graphs as gr

Target = Union[int, np.ndarray]


@dataclass
class TaskInstance:
    graph: gr.Graph
    target_node: Optional[int]  # None means node-level targets over all nodes
    target: Target
    meta: dict = field(default_factory=dict)


@dataclass
class TaskSplit:
    task: str
    train: list
    validation: list
    test: list
    seed: int

    def all_instances(self):
        return self.train + self.validation + self.test


DEFAULT_SIZES = (10_000, 1_000, 1_000)


def _split_rngs(seed: int) -> list[np.random.Generator]:
    # one independent stream per split; disjoint by SeedSequence spawning
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def _check_sizes(sizes) -> tuple[int, int, int]:
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != 3 or any(s < 0 for s in sizes) or sizes[0] < 1:
        raise ValueError(f"sizes must be (train>=1, val>=0, test>=0), got {sizes}")
    return sizes


# ---------------------------------------------------------------------------
# Neighbor associative recall, classification flavor.
#
# Topology for neighborhood size N (node order is part of the format):
#   0..N-1  neighbor nodes, each holding a distinct key symbol and a value
#           symbol sampled with replacement
#   N       central node (prediction target), zero features
#   N+1     intermediate node, zero features
#   N+2     query node, carries the key symbol of the selected neighbor
# ---------------------------------------------------------------------------


def nar_edges(n_neighbors: int) -> list[tuple[int, int]]:
    c, mid, q = n_neighbors, n_neighbors + 1, n_neighbors + 2
    return [(j, c) for j in range(n_neighbors)] + [(c, mid), (mid, q)]


def _nar_instance(n_neighbors: int, d_emb: int, rng: np.random.Generator) -> TaskInstance:
    n = n_neighbors + 3
    keys = rng.permutation(n_neighbors)
    values = rng.integers(0, n_neighbors, size=n_neighbors)
    selected = int(rng.integers(n_neighbors))

    key_ids = [-1] * n
    value_ids = [-1] * n
    for j in range(n_neighbors):
        key_ids[j] = int(keys[j])
        value_ids[j] = int(values[j])
    key_ids[n - 1] = int(keys[selected])  # query node repeats the selected key

    g = gr.make_graph(n, nar_edges(n_neighbors), np.zeros((n, 1)))
    return TaskInstance(
        graph=g,
        target_node=n_neighbors,
        target=int(values[selected]),
        meta={
            "task": "nar",
            "n_neighbors": n_neighbors,
            "d_emb": d_emb,
            "selected": selected,
            "key_ids": key_ids,
            "value_ids": value_ids,
        },
    )


def generate_nar(
    n_neighbors: int, d_emb: int = 16, sizes=DEFAULT_SIZES, seed: int = 0
) -> TaskSplit:
    """Key-value recall over a star of N neighbors, queried from two hops away.

    Instances store symbol indices only; the embedding tables that map them
    to vectors are trainable model parameters.  The classification target is
    the value symbol of the neighbor whose key matches the query.
    """
    if n_neighbors < 1 or d_emb < 1:
        raise ValueError("n_neighbors and d_emb must be >= 1")
    sizes = _check_sizes(sizes)
    parts = [
        [_nar_instance(n_neighbors, d_emb, rng) for _ in range(count)]
        for count, rng in zip(sizes, _split_rngs(seed))
    ]
    return TaskSplit("nar", *parts, seed=seed)


# ---------------------------------------------------------------------------
# Regression flavor: explicit feature vectors, no symbol tables.
# Feature layout per node, width V + 2N:
#   [0, V)        value vector (standard normal), neighbor nodes only
#   [V, V+N)      key one-hot, neighbor nodes only
#   [V+N, V+2N)   query one-hot, query node only
# ---------------------------------------------------------------------------


def _narr_instance(n_neighbors: int, value_dim: int, rng: np.random.Generator) -> TaskInstance:
    n = n_neighbors + 3
    keys = rng.permutation(n_neighbors)
    values = rng.standard_normal((n_neighbors, value_dim))
    selected = int(rng.integers(n_neighbors))

    feats = np.zeros((n, value_dim + 2 * n_neighbors))
    for j in range(n_neighbors):
        feats[j, :value_dim] = values[j]
        feats[j, value_dim + keys[j]] = 1.0
    feats[n - 1, value_dim + n_neighbors + keys[selected]] = 1.0

    g = gr.make_graph(n, nar_edges(n_neighbors), feats)
    return TaskInstance(
        graph=g,
        target_node=n_neighbors,
        target=values[selected].copy(),
        meta={
            "task": "narr",
            "n_neighbors": n_neighbors,
            "value_dim": value_dim,
            "selected": selected,
            "key_ids": [int(k) for k in keys] + [-1, -1, int(keys[selected])],
        },
    )


def generate_narr(
    n_neighbors: int, value_dim: int = 16, sizes=DEFAULT_SIZES, seed: int = 0
) -> TaskSplit:
    """Regression variant: recall the selected neighbor's real-valued vector."""
    if n_neighbors < 1 or value_dim < 1:
        raise ValueError("n_neighbors and value_dim must be >= 1")
    sizes = _check_sizes(sizes)
    parts = [
        [_narr_instance(n_neighbors, value_dim, rng) for _ in range(count)]
        for count, rng in zip(sizes, _split_rngs(seed))
    ]
    return TaskSplit("narr", *parts, seed=seed)


# ---------------------------------------------------------------------------
# Ring transfer: move a class label halfway around a ring.
# ---------------------------------------------------------------------------


def _ring_instance(ring_size: int, num_classes: int, rng: np.random.Generator) -> TaskInstance:
    cls = int(rng.integers(num_classes))
    feats = np.ones((ring_size, num_classes))
    marked = ring_size // 2  # antipodal to the source node 0
    feats[marked] = 0.0
    feats[marked, cls] = 1.0
    g = gr.ring_graph(ring_size, feats)
    return TaskInstance(
        graph=g,
        target_node=0,
        target=cls,
        meta={
            "task": "ring_transfer",
            "ring_size": ring_size,
            "num_classes": num_classes,
            "marked_node": marked,
            "depth": ring_size // 2,
        },
    )


def generate_ring_transfer(
    ring_size: int, num_classes: int = 5, sizes=DEFAULT_SIZES, seed: int = 0
) -> TaskSplit:
    """One-hot class at the node antipodal to the source; every other node is
    a constant ones-vector, so the only task information sits ⌊n/2⌋ hops away."""
    if ring_size < 3:
        raise ValueError("ring_size must be >= 3")
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    sizes = _check_sizes(sizes)
    parts = [
        [_ring_instance(ring_size, num_classes, rng) for _ in range(count)]
        for count, rng in zip(sizes, _split_rngs(seed))
    ]
    return TaskSplit("ring_transfer", *parts, seed=seed)


# ---------------------------------------------------------------------------
# Matched tree / star pairs for the depth-sensitivity probe.
# ---------------------------------------------------------------------------

TREE_FEATURE_DIM = 8


@dataclass
class TreeStarPair:
    depth: int
    tree: gr.Graph
    star: gr.Graph
    tree_leaves: np.ndarray  # node indices, length 2**depth
    star_leaves: np.ndarray


def generate_flat_vs_deep_trees(depths, seed: int = 0) -> list[TreeStarPair]:
    """For each depth k: a complete binary tree of depth k and a star with
    2**k leaves.  Root is node 0 in both; the same random-normal leaf
    features are installed in both graphs, internal nodes stay zero."""
    rng = np.random.default_rng(seed)
    pairs = []
    for depth in depths:
        if depth < 1:
            raise ValueError("depths must be >= 1")
        leaves = 2**depth
        leaf_feats = rng.standard_normal((leaves, TREE_FEATURE_DIM))

        tn, te = gr.binary_tree_edges(depth)
        tf = np.zeros((tn, TREE_FEATURE_DIM))
        tree_leaves = np.arange(tn - leaves, tn, dtype=np.int64)
        tf[tree_leaves] = leaf_feats

        sn, se = gr.star_edges(leaves)
        sf = np.zeros((sn, TREE_FEATURE_DIM))
        star_leaves = np.arange(1, sn, dtype=np.int64)
        sf[star_leaves] = leaf_feats

        pairs.append(
            TreeStarPair(
                depth=depth,
                tree=gr.make_graph(tn, te, tf),
                star=gr.make_graph(sn, se, sf),
                tree_leaves=tree_leaves,
                star_leaves=star_leaves,
            )
        )
    return pairs


# ---------------------------------------------------------------------------
# Graph property prediction on a mixed random-graph family.
# ---------------------------------------------------------------------------

GPP_TASKS = ("diameter", "eccentricity", "sssp")

# family defaults; every instance draws n and family parameters fresh
GPP_N_RANGE = (10, 35)
GPP_ER_P_RANGE = (0.1, 0.5)
GPP_BA_M_CHOICES = (1, 2, 3)


def _gpp_instance(task: str, rng: np.random.Generator) -> TaskInstance:
    n = int(rng.integers(GPP_N_RANGE[0], GPP_N_RANGE[1] + 1))
    if rng.random() < 0.5:
        p = float(rng.uniform(*GPP_ER_P_RANGE))
        g = gr.connected_erdos_renyi(n, p, rng)
        family = {"family": "er", "p": p}
    else:
        m = int(GPP_BA_M_CHOICES[rng.integers(len(GPP_BA_M_CHOICES))])
        g = gr.barabasi_albert(n, m, rng)
        family = {"family": "ba", "m": m}

    dist = gr.shortest_walk_distances(g)
    meta = {"task": f"gpp_{task}", "n": n, **family}
    if task == "diameter":
        target: Target = np.array([float(dist.max())])
        target_node: Optional[int] = None
        meta["graph_level"] = True
    elif task == "eccentricity":
        target = dist.max(axis=1).astype(np.float64)
        target_node = None
    elif task == "sssp":
        source = int(rng.integers(n))
        feats = np.ones((n, 2))
        feats[:, 1] = 0.0
        feats[source, 1] = 1.0  # source flag channel
        g = gr.make_graph(n, g.edges, feats)
        target = dist[source].astype(np.float64)
        target_node = None
        meta["source"] = source
    else:
        raise ValueError(f"unknown gpp task {task!r}, expected one of {GPP_TASKS}")
    return TaskInstance(graph=g, target_node=target_node, target=target, meta=meta)


def generate_gpp(task: str, sizes=DEFAULT_SIZES, seed: int = 0) -> TaskSplit:
    """Exact structural regression targets on connected ER / BA graphs.

    diameter: one scalar per graph.  eccentricity: one scalar per node.
    sssp: per-node hop distance from a flagged source node.  Targets are
    raw BFS outputs, deliberately un-normalized.
    """
    if task not in GPP_TASKS:
        raise ValueError(f"unknown gpp task {task!r}, expected one of {GPP_TASKS}")
    sizes = _check_sizes(sizes)
    parts = [
        [_gpp_instance(task, rng) for _ in range(count)]
        for count, rng in zip(sizes, _split_rngs(seed))
    ]
    return TaskSplit(f"gpp_{task}", *parts, seed=seed)


# ---------------------------------------------------------------------------
# Split serialization: graphs in the shared text format, targets and meta in
# a JSON-lines sidecar.  Line 1 of the sidecar is a header object.
# ---------------------------------------------------------------------------


def _target_to_json(t: Target):
    if isinstance(t, (int, np.integer)):
        return int(t)
    return np.asarray(t, dtype=np.float64).tolist()


def _target_from_json(t) -> Target:
    if isinstance(t, int):
        return t
    return np.asarray(t, dtype=np.float64)


def save_split(split: TaskSplit, graphs_path, meta_path) -> None:
    instances = split.all_instances()
    gr.write_graphs(graphs_path, [inst.graph for inst in instances])
    header = {
        "task": split.task,
        "seed": split.seed,
        "counts": [len(split.train), len(split.validation), len(split.test)],
    }
    with open(meta_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for inst in instances:
            row = {
                "target_node": inst.target_node,
                "target": _target_to_json(inst.target),
                "meta": inst.meta,
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_split(graphs_path, meta_path) -> TaskSplit:
    graph_list = gr.read_graphs(graphs_path)
    with open(meta_path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{meta_path}: empty sidecar")
    header = json.loads(lines[0])
    counts = header["counts"]
    if len(lines) - 1 != len(graph_list) or sum(counts) != len(graph_list):
        raise ValueError(
            f"{meta_path}: {len(lines) - 1} rows for {len(graph_list)} graphs, counts {counts}"
        )
    instances = []
    for g, line in zip(graph_list, lines[1:]):
        row = json.loads(line)
        instances.append(
            TaskInstance(
                graph=g,
                target_node=row["target_node"],
                target=_target_from_json(row["target"]),
                meta=row["meta"],
            )
        )
    a, b, _ = counts
    return TaskSplit(
        header["task"],
        instances[:a],
        instances[a : a + b],
        instances[a + b :],
        seed=header["seed"],
    )
