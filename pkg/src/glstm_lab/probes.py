"""Sensitivity diagnostics on trained or freshly initialized models.

Three probe families:
  * node-state Jacobians d h_t / d x_s and their L1 norms,
  * selected vs background Jacobian-norm ratios on recall instances,
  * a mixed second derivative ("mixing") between the query node's key
    coordinates and a neighbor's value coordinates, by central finite
    differences of analytic first derivatives.

All first derivatives are analytic.  The engine is first-order only, so
second derivatives are FD-of-gradient by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from . import models as md
from . import tasks as tk

# log10 floor for exactly-zero Jacobian norms (relu can null a path)
NORM_FLOOR = 1e-30


def _materialize_features(config, params, prepared: md.PreparedGraph) -> np.ndarray:
    """Assembled input features of one instance as plain float64 data."""
    if not config.embed_symbols:
        return prepared.graph.features.copy()
    batch = md.build_batch([prepared], config)
    return md.assemble_features(params, batch, config).data.copy()


def node_state_jacobians(
    config,
    params,
    prepared: md.PreparedGraph,
    target_node: int,
    feature_array: np.ndarray | None = None,
) -> np.ndarray:
    """Full Jacobian of the final state of one node w.r.t. every input.

    Returns J with J[a, s, i] = d h_target[a] / d x_s[i].  One taped
    forward/backward covers all d_h output coordinates: the instance is
    replicated d_h times in a disjoint batch and copy a contributes
    h[a * n + target, a] to the scalar root, so the gradient landing on
    copy a's feature rows is exactly row a of the Jacobian.
    """
    n = prepared.graph.n
    if not 0 <= target_node < n:
        raise ValueError(f"target node {target_node} outside graph of {n} nodes")
    d_state = config.d_h
    base = _materialize_features(config, params, prepared) if feature_array is None else feature_array
    if base.shape != (n, config.model_d_in):
        raise ValueError(f"feature array shape {base.shape} != {(n, config.model_d_in)}")

    if config.readout == "target_node" and prepared.readout_node is None:
        # only h is probed, but the forward still evaluates the readout head
        prepared = replace(prepared, readout_node=target_node)
    batch = md.build_batch([prepared] * d_state, config)
    leaf = ad.parameter(np.tile(base, (d_state, 1)))
    mask = np.zeros((d_state * n, d_state))
    mask[np.arange(d_state) * n + target_node, np.arange(d_state)] = 1.0
    with ad.Tape() as tape:
        out = md.model_forward(config, params, batch, features=leaf)
        root = ad.reduce_sum(ad.mul(out.h, ad.constant(mask)))
    jac = ad.backpropagate(root, tape)[leaf].reshape(d_state, n, config.model_d_in)
    if not np.isfinite(jac).all():
        raise FloatingPointError("non-finite entries in node Jacobian")
    return jac


def node_jacobian(config, params, graph_or_prepared, target_node: int, source_node: int) -> np.ndarray:
    """d_h x d_in Jacobian of node target's final state w.r.t. node source's input."""
    prepared = graph_or_prepared
    if not isinstance(prepared, md.PreparedGraph):
        prepared = md.prepare_graph(prepared, config)
    jac = node_state_jacobians(config, params, prepared, target_node)
    if not 0 <= source_node < prepared.graph.n:
        raise ValueError(f"source node {source_node} outside graph")
    return jac[:, source_node, :]


def jacobian_l1(jac_rows: np.ndarray) -> float:
    return float(np.abs(jac_rows).sum())


# -- selected vs background ratios on recall instances ----------------------


@dataclass
class JacobianReport:
    n_instances: int
    neighbor_norms: list  # per instance: (N,) array of L1 norms
    selected: np.ndarray  # per instance: norm of the queried neighbor
    background: np.ndarray  # per instance: mean norm of the others
    ratio: np.ndarray

    @property
    def pooled_ratio(self) -> float:
        # mean-of-norms ratio; unbiased under neighbor exchangeability, unlike
        # the mean of per-instance ratios (noisy denominator, Jensen skew)
        return float(self.selected.mean() / self.background.mean())

    @property
    def summary(self) -> dict:
        return {
            "selected_mean": float(self.selected.mean()),
            "selected_std": float(self.selected.std()),
            "background_mean": float(self.background.mean()),
            "background_std": float(self.background.std()),
            "ratio_mean": float(self.ratio.mean()),
            "ratio_std": float(self.ratio.std()),
            "pooled_ratio": self.pooled_ratio,
            "n": self.n_instances,
        }


def jacobian_report(config, params, instances) -> JacobianReport:
    """Jacobian-norm split for recall instances: the neighbor whose key
    matches the query is "selected", all other neighbors are "background"."""
    norms_per, sel, back = [], [], []
    for inst in instances:
        n_nb = inst.meta["n_neighbors"]
        if n_nb < 2:
            raise ValueError("ratio probe needs at least 2 neighbors")
        prepared = md.prepare_instance(config, inst)
        jac = node_state_jacobians(config, params, prepared, inst.target_node)
        norms = np.abs(jac[:, :n_nb, :]).sum(axis=(0, 2))
        m = inst.meta["selected"]
        background = float(np.delete(norms, m).mean())
        if background <= 0.0:
            raise FloatingPointError("background Jacobian norms vanished")
        norms_per.append(norms)
        sel.append(float(norms[m]))
        back.append(background)
    sel = np.array(sel)
    back = np.array(back)
    return JacobianReport(
        n_instances=len(norms_per),
        neighbor_norms=norms_per,
        selected=sel,
        background=back,
        ratio=sel / back,
    )


# -- mixing: d2 h_c / (d x_query d x_neighbor) ------------------------------


@dataclass
class MixingReport:
    per_instance: np.ndarray  # max over neighbors of the per-neighbor mixing
    per_neighbor: list  # per instance: (N,) array

    @property
    def summary(self) -> dict:
        return {
            "mean": float(self.per_instance.mean()),
            "std": float(self.per_instance.std()),
            "n": int(self.per_instance.size),
        }


def mixing_values(config, params, inst, fd_step: float = 1e-4) -> np.ndarray:
    """Per-neighbor max-abs mixed second derivative on one recall instance.

    For each query-key coordinate b the analytic Jacobian of the central
    node's state is evaluated at x_q[b] +/- h and differenced centrally;
    the result is maxed over output coordinates a, key coordinates b and
    the neighbor's value coordinates.  Value coordinates are the second
    embedding block [d_emb, 2 d_emb) of the assembled features.
    """
    if not config.embed_symbols:
        raise ValueError("mixing probe expects symbol-embedding instances")
    n_nb = inst.meta["n_neighbors"]
    d_emb = config.d_emb
    prepared = md.prepare_instance(config, inst)
    base = _materialize_features(config, params, prepared)
    q = inst.graph.n - 1
    central = inst.target_node

    best = np.zeros(n_nb)
    for b in range(d_emb):
        x0 = base[q, b]
        h = fd_step * (1.0 + abs(x0))
        bumped = base.copy()
        bumped[q, b] = x0 + h
        jac_plus = node_state_jacobians(config, params, prepared, central, feature_array=bumped)
        bumped[q, b] = x0 - h
        jac_minus = node_state_jacobians(config, params, prepared, central, feature_array=bumped)
        mixed = (jac_plus - jac_minus) / (2.0 * h)
        if not np.isfinite(mixed).all():
            raise FloatingPointError("non-finite second differences in mixing probe")
        vals = np.abs(mixed[:, :n_nb, d_emb : 2 * d_emb]).max(axis=(0, 2))
        np.maximum(best, vals, out=best)
    return best


def hessian_mixing(config, params, inst, neighbor: int, fd_step: float = 1e-4) -> float:
    vals = mixing_values(config, params, inst, fd_step)
    if not 0 <= neighbor < vals.size:
        raise ValueError(f"neighbor {neighbor} outside range")
    return float(vals[neighbor])


def mixing_report(config, params, instances, fd_step: float = 1e-4) -> MixingReport:
    per_neighbor = [mixing_values(config, params, inst, fd_step) for inst in instances]
    return MixingReport(
        per_instance=np.array([v.max() for v in per_neighbor]),
        per_neighbor=per_neighbor,
    )


# -- depth decay on matched tree / star pairs -------------------------------


@dataclass
class FlatDeepRecord:
    depth: int
    family: str  # tree | star
    seed: int
    log10_norms: np.ndarray  # one entry per leaf


def _probe_gcn_config(depth: int, d_h: int, activation: str) -> md.ModelConfig:
    return md.ModelConfig(
        architecture="gcn",
        layers=depth,
        d_h=d_h,
        k_hop=False,
        activation=activation,
        readout="per_node",
        d_in=tk.TREE_FEATURE_DIM,
        d_out=1,
    )


def flat_vs_deep_probe(
    depths, seeds, d_h: int = 8, activation: str = "relu"
) -> list[FlatDeepRecord]:
    """Root-to-leaf Jacobian decay of a depth-matched random GCN on a binary
    tree vs a star with the same leaves.  The same parameter draw is applied
    to both family members of a pair."""
    records = []
    for depth in depths:
        config = _probe_gcn_config(depth, d_h, activation)
        for seed in seeds:
            params = md.init_params(config, seed)
            (pair,) = tk.generate_flat_vs_deep_trees([depth], seed=seed)
            for family, graph, leaves in (
                ("tree", pair.tree, pair.tree_leaves),
                ("star", pair.star, pair.star_leaves),
            ):
                prepared = md.prepare_graph(graph, config)
                jac = node_state_jacobians(config, params, prepared, target_node=0)
                norms = np.abs(jac[:, leaves, :]).sum(axis=(0, 2))
                records.append(
                    FlatDeepRecord(
                        depth=depth,
                        family=family,
                        seed=seed,
                        log10_norms=np.log10(np.maximum(norms, NORM_FLOOR)),
                    )
                )
    return records


def pooled_depth_means(records) -> dict:
    """family -> {depth: (mean, std, count)} pooling all seeds and leaves."""
    buckets: dict = {}
    for rec in records:
        buckets.setdefault(rec.family, {}).setdefault(rec.depth, []).append(rec.log10_norms)
    out: dict = {}
    for family, by_depth in buckets.items():
        out[family] = {}
        for depth, chunks in sorted(by_depth.items()):
            pooled = np.concatenate(chunks)
            out[family][depth] = (float(pooled.mean()), float(pooled.std()), pooled.size)
    return out


def depth_slopes(records) -> dict:
    """Least-squares slope of pooled mean log10 norms against depth."""
    means = pooled_depth_means(records)
    slopes = {}
    for family, by_depth in means.items():
        depths = np.array(sorted(by_depth), dtype=np.float64)
        if depths.size < 2:
            raise ValueError("need at least two depths for a slope")
        ys = np.array([by_depth[int(d)][0] for d in depths])
        slopes[family] = float(np.polyfit(depths, ys, 1)[0])
    return slopes
