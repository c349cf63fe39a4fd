"""gLSTM and GCN models over batched graphs.

The gLSTM keeps a per-node matrix associative memory: at layer l node u
updates

    C_u = f_u * C_u_prev + sum_{v in N_u(l) + {u}} i_{u<-v} v_v k_v^T
    n_u = f_u * n_u_prev + sum i_{u<-v} k_v
    m_u = max(f~_u + m_u_prev, max_{v in N_u(l) + {u}} i~_v)

with exponential gates stabilized per aggregating node: the edge input
gate is i_{u<-v} = exp(i~_v - m_u) and the forget gate
f_u = exp(f~_u + m_u_prev - m_u), both <= 1 because m_u dominates every
exponent by construction.  Ties in the m maximum go to the forget
branch.  The read is h~_u = C_u q_u / max(|n_u^T q_u|, 1) with
q_u = W_q [h_u ; sum_{v in N_u(l)} h_v] (neighbor sum excludes u) and
keys scaled by 1/sqrt(d_k).  Per-head memories are d_k x d_k; heads are
concatenated, group-normalized, output-gated, and projected back to d_h
with a residual connection.  States (C, n, m) thread across layers;
layer l aggregates the exact-distance-l neighborhood when k_hop is on,
the 1-hop neighborhood otherwise.

Gate ablations fix the ablated gate to exactly 1 and drop its branch
from the stabilizer max, so the remaining exponentials stay <= 1.

The GCN baseline is h <- act(O h W) per layer with the symmetric
normalized operator O; no residual, no bias.

Parameters are a flat name -> Tensor dict; the binary checkpoint is a
magic + JSON header (config and tensor manifest) + little-endian
float64 blobs, exact on round-trip.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .graphs import (
    EdgeStructure,
    Graph,
    build_structure,
    concat_structures,
    gcn_message_matrix,
    hop_structure,
    khop_gcn_message_matrix,
    shortest_walk_distances,
    structure_from_dense,
)

_ACTIVATIONS = {"relu": ad.relu, "gelu": ad.gelu, "tanh": ad.tanh}

CHECKPOINT_MAGIC = b"GLSTMCKPT\x00"


@dataclass
class ModelConfig:
    architecture: str = "glstm"  # glstm | gcn
    layers: int = 2
    d_h: int = 32
    d_k: int = 8
    heads: int = 1
    k_hop: bool = True
    input_norm: str = "none"  # layer | none
    hidden_norm: str = "group"  # group | none
    activation: str = "none"  # relu | gelu | tanh | none
    dropout: float = 0.0
    readout: str = "target_node"  # target_node | mean_pool | per_node
    d_in: int = 1
    d_out: int = 1
    embed_symbols: int = 0  # vocabulary size per table; 0 = raw dense features
    d_emb: int = 16
    ablate_input_gate: bool = False
    ablate_forget_gate: bool = False
    ablate_output_gate: bool = False

    def validate(self) -> None:
        if self.architecture not in ("glstm", "gcn"):
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if self.input_norm not in ("layer", "none"):
            raise ValueError(f"unknown input_norm {self.input_norm!r}")
        if self.hidden_norm not in ("group", "none"):
            raise ValueError(f"unknown hidden_norm {self.hidden_norm!r}")
        if self.activation not in ("none",) + tuple(_ACTIVATIONS):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.readout not in ("target_node", "mean_pool", "per_node"):
            raise ValueError(f"unknown readout {self.readout!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        for name in ("layers", "d_h", "d_k", "heads", "d_out"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.embed_symbols == 0 and self.d_in < 1:
            raise ValueError("d_in must be >= 1 for raw features")

    @property
    def model_d_in(self) -> int:
        return 2 * self.d_emb if self.embed_symbols else self.d_in


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _linear_init(rng, d_in, d_out) -> np.ndarray:
    # stored (in, out) so forward is x @ W + b
    return _glorot(rng, d_in, d_out, (d_in, d_out))


def init_params(config: ModelConfig, seed: int) -> dict[str, ad.Tensor]:
    """Glorot-uniform weights, zero biases, forget biases spread in [3, 6]."""
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    p: dict[str, np.ndarray] = {}
    d_h, d_k, heads = config.d_h, config.d_k, config.heads
    d_mem = heads * d_k

    if config.embed_symbols:
        v = config.embed_symbols
        p["embed.keys"] = _glorot(rng, v, config.d_emb, (v, config.d_emb))
        p["embed.values"] = _glorot(rng, v, config.d_emb, (v, config.d_emb))
    p["input_proj.weight"] = _linear_init(rng, config.model_d_in, d_h)
    p["input_proj.bias"] = np.zeros(d_h)

    for i in range(config.layers):
        pre = f"layer{i}."
        if config.architecture == "gcn":
            p[pre + "weight"] = _linear_init(rng, d_h, d_h)
            continue
        if config.input_norm == "layer":
            p[pre + "norm_in.gamma"] = np.ones(d_h)
            p[pre + "norm_in.beta"] = np.zeros(d_h)
        p[pre + "w_q"] = _linear_init(rng, 2 * d_h, d_mem)
        p[pre + "b_q"] = np.zeros(d_mem)
        p[pre + "w_k"] = _linear_init(rng, d_h, d_mem)
        p[pre + "b_k"] = np.zeros(d_mem)
        p[pre + "w_v"] = _linear_init(rng, d_h, d_mem)
        p[pre + "b_v"] = np.zeros(d_mem)
        if not config.ablate_input_gate:
            p[pre + "w_i"] = _linear_init(rng, d_h, heads)
            p[pre + "b_i"] = np.zeros(heads)
        if not config.ablate_forget_gate:
            p[pre + "w_f"] = _linear_init(rng, d_h, heads)
            p[pre + "b_f"] = np.linspace(3.0, 6.0, heads)
        if not config.ablate_output_gate:
            p[pre + "w_o"] = _linear_init(rng, d_h, d_mem)
            p[pre + "b_o"] = np.zeros(d_mem)
        if config.hidden_norm == "group":
            p[pre + "norm_hidden.gamma"] = np.ones(d_mem)
            p[pre + "norm_hidden.beta"] = np.zeros(d_mem)
        p[pre + "down.weight"] = _linear_init(rng, d_mem, d_h)
        p[pre + "down.bias"] = np.zeros(d_h)

    p["readout.weight"] = _linear_init(rng, d_h, config.d_out)
    p["readout.bias"] = np.zeros(config.d_out)
    return {name: ad.parameter(arr) for name, arr in p.items()}


def parameter_count(params: dict[str, ad.Tensor]) -> int:
    return int(sum(t.size for t in params.values()))


@dataclass
class PreparedGraph:
    """One instance with its per-layer aggregation structures prebuilt."""

    graph: Graph
    layer_structs: list[dict]
    readout_node: int | None = None
    key_ids: np.ndarray | None = None
    value_ids: np.ndarray | None = None


def prepare_graph(
    graph: Graph,
    config: ModelConfig,
    readout_node: int | None = None,
    key_ids=None,
    value_ids=None,
) -> PreparedGraph:
    """Build the aggregation structures every layer of this model needs.

    BFS distances are computed once here; training reuses the prepared
    instance across epochs.
    """
    distances = shortest_walk_distances(graph)
    structs: list[dict] = []
    cache: dict[int, dict] = {}
    for layer in range(config.layers):
        hop = layer + 1 if config.k_hop else 1
        if hop not in cache:
            if config.architecture == "gcn":
                op = (
                    khop_gcn_message_matrix(graph, hop, distances)
                    if config.k_hop
                    else gcn_message_matrix(graph)
                )
                cache[hop] = {"op": structure_from_dense(op)}
            else:
                cache[hop] = {
                    "excl": hop_structure(graph, hop, include_self=False, distances=distances),
                    "incl": hop_structure(graph, hop, include_self=True, distances=distances),
                }
        structs.append(cache[hop])
    return PreparedGraph(
        graph=graph,
        layer_structs=structs,
        readout_node=readout_node,
        key_ids=None if key_ids is None else np.asarray(key_ids, dtype=np.int64),
        value_ids=None if value_ids is None else np.asarray(value_ids, dtype=np.int64),
    )


def prepare_instance(config: ModelConfig, inst) -> PreparedGraph:
    """Adapter from a task instance (graph, target_node, meta) to a
    PreparedGraph; symbol ids are picked up from meta when the model embeds."""
    key_ids = value_ids = None
    if config.embed_symbols:
        key_ids = inst.meta.get("key_ids")
        value_ids = inst.meta.get("value_ids")
        if key_ids is None:
            raise ValueError("embedding model needs key_ids in instance meta")
        if value_ids is None:
            value_ids = [-1] * inst.graph.n
    return prepare_graph(
        inst.graph,
        config,
        readout_node=inst.target_node,
        key_ids=key_ids,
        value_ids=value_ids,
    )


@dataclass
class GraphBatch:
    n: int
    n_graphs: int
    features: np.ndarray | None
    key_ids: np.ndarray | None
    value_ids: np.ndarray | None
    layer_structs: list[dict]
    readout_nodes: np.ndarray | None
    graph_of_node: np.ndarray
    pool: EdgeStructure
    edge_dst: list[dict] = field(default_factory=list)  # segment ids per structure


def build_batch(prepared: list[PreparedGraph], config: ModelConfig) -> GraphBatch:
    """Disjoint-union collation: block-diagonal structures, stacked features."""
    sizes = np.array([p.graph.n for p in prepared], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    n = int(sizes.sum())

    # layers that share structure objects (k_hop off) share the merged result
    layer_structs: list[dict] = []
    seen: dict[tuple[int, ...], dict] = {}
    for layer in range(config.layers):
        ident = tuple(id(p.layer_structs[layer]) for p in prepared)
        merged = seen.get(ident)
        if merged is None:
            merged = {
                key: concat_structures([p.layer_structs[layer][key] for p in prepared])
                for key in prepared[0].layer_structs[layer]
            }
            seen[ident] = merged
        layer_structs.append(merged)

    if config.embed_symbols:
        features = None
        key_ids = np.concatenate([p.key_ids for p in prepared])
        value_ids = np.concatenate([p.value_ids for p in prepared])
    else:
        features = np.concatenate([p.graph.features for p in prepared])
        key_ids = value_ids = None

    if prepared[0].readout_node is None:
        readout_nodes = None
    else:
        readout_nodes = np.array(
            [p.readout_node + off for p, off in zip(prepared, offsets)], dtype=np.int64
        )

    graph_of_node = np.repeat(np.arange(len(prepared), dtype=np.int64), sizes)
    pool = build_structure(
        n_src=n,
        n_dst=len(prepared),
        src=np.arange(n, dtype=np.int64),
        dst=graph_of_node,
        weights=1.0 / sizes[graph_of_node],
    )
    return GraphBatch(
        n=n,
        n_graphs=len(prepared),
        features=features,
        key_ids=key_ids,
        value_ids=value_ids,
        layer_structs=layer_structs,
        readout_nodes=readout_nodes,
        graph_of_node=graph_of_node,
        pool=pool,
    )


def assemble_features(
    params: dict[str, ad.Tensor], batch: GraphBatch, config: ModelConfig
) -> ad.Tensor:
    """Input feature matrix as a Tensor; embedding lookups stay differentiable.

    Symbol id -1 means no symbol at that node; its embedding block is
    zero and no gradient reaches the tables for it.
    """
    if not config.embed_symbols:
        return ad.constant(batch.features)
    parts = []
    for ids, table in ((batch.key_ids, "embed.keys"), (batch.value_ids, "embed.values")):
        mask = (ids >= 0).astype(np.float64)[:, None]
        looked = ad.rows(params[table], np.maximum(ids, 0))
        parts.append(ad.mul(looked, ad.constant(mask)))
    return ad.concat(parts, axis=1)


@dataclass
class ModelOutput:
    h: ad.Tensor  # (n, d_h) final node embeddings
    readout: ad.Tensor  # (B, d_out) or (n, d_out) for per_node


def _linear(params, name, x):
    return ad.add(ad.matmul(x, params[name + ".weight"]), params[name + ".bias"])


def _segments(st: EdgeStructure) -> np.ndarray:
    # destination id per edge, cached on the structure
    seg = getattr(st, "_seg_ids", None)
    if seg is None:
        seg = np.repeat(np.arange(st.n_dst, dtype=np.int64), np.diff(st.indptr))
        st._seg_ids = seg
    return seg


def _glstm_layer(params, pre, config, x, h_prev, state, structs, training, rng):
    """One gLSTM block; returns (h_out, new_state).

    x is the block input after optional input norm; h_prev carries the
    residual.  state is (C, n, m) shaped ((n, H*dk*dk), (n, H*dk), (n, H)).
    """
    d_k, heads = config.d_k, config.heads
    n_nodes = x.shape[0]
    c_prev, nrm_prev, m_prev = state
    incl, excl = structs["incl"], structs["excl"]

    neigh = ad.neighbor_sum(x, excl)
    z = ad.concat([x, neigh], axis=1)
    q_all = ad.add(ad.matmul(z, params[pre + "w_q"]), params[pre + "b_q"])
    k_all = ad.mul(
        ad.add(ad.matmul(x, params[pre + "w_k"]), params[pre + "b_k"]),
        1.0 / np.sqrt(d_k),
    )
    v_all = ad.add(ad.matmul(x, params[pre + "w_v"]), params[pre + "b_v"])

    if config.ablate_input_gate:
        itil = None
    else:
        itil = ad.add(ad.matmul(x, params[pre + "w_i"]), params[pre + "b_i"])
    if config.ablate_forget_gate:
        ftil = None
    else:
        ftil = ad.add(ad.matmul(x, params[pre + "w_f"]), params[pre + "b_f"])

    # stabilizer: max over the surviving exponential branches
    if ftil is not None:
        f_branch = ad.add(ftil, m_prev)
        m = (
            ad.max_const(f_branch, 0.0)
            if itil is None
            else ad.maximum(f_branch, ad.neighbor_max(itil, incl))
        )
        f_gate = ad.exp(ad.sub(f_branch, m))
    else:
        m = (
            ad.constant(np.zeros((n_nodes, heads)))
            if itil is None
            else ad.maximum(m_prev, ad.neighbor_max(itil, incl))
        )
        f_gate = None

    src = incl.idx
    dst = _segments(incl)

    c_parts, n_parts, h_parts = [], [], []
    for h in range(heads):
        k_h = ad.narrow(k_all, 1, h * d_k, d_k)
        v_h = ad.narrow(v_all, 1, h * d_k, d_k)
        q_h = ad.narrow(q_all, 1, h * d_k, d_k)
        pair = ad.reshape(
            ad.mul(
                ad.reshape(v_h, (n_nodes, d_k, 1)), ad.reshape(k_h, (n_nodes, 1, d_k))
            ),
            (n_nodes, d_k * d_k),
        )
        if itil is None:
            gate = None
        else:
            # per-edge input gate exp(i~[src] - m[dst]), exponent <= 0
            i_h = ad.narrow(itil, 1, h, 1)
            m_h = ad.narrow(m, 1, h, 1)
            gate = ad.reshape(
                ad.exp(ad.sub(ad.rows(i_h, src), ad.rows(m_h, dst))), (incl.n_edges,)
            )
        write_c = ad.neighbor_sum(pair, incl, scale=gate)
        write_n = ad.neighbor_sum(k_h, incl, scale=gate)

        c_old = ad.narrow(c_prev, 1, h * d_k * d_k, d_k * d_k)
        n_old = ad.narrow(nrm_prev, 1, h * d_k, d_k)
        if f_gate is None:
            c_new = ad.add(c_old, write_c)
            n_new = ad.add(n_old, write_n)
        else:
            f_h = ad.narrow(f_gate, 1, h, 1)
            c_new = ad.add(ad.mul(c_old, f_h), write_c)
            n_new = ad.add(ad.mul(n_old, f_h), write_n)

        cq = ad.reduce_sum(
            ad.mul(
                ad.reshape(c_new, (n_nodes, d_k, d_k)),
                ad.reshape(q_h, (n_nodes, 1, d_k)),
            ),
            axis=2,
        )
        denom = ad.max_const(
            ad.abs_(ad.reduce_sum(ad.mul(n_new, q_h), axis=1, keepdims=True)), 1.0
        )
        h_parts.append(ad.div(cq, denom))
        c_parts.append(c_new)
        n_parts.append(n_new)

    htil = h_parts[0] if heads == 1 else ad.concat(h_parts, axis=1)
    c_state = c_parts[0] if heads == 1 else ad.concat(c_parts, axis=1)
    n_state = n_parts[0] if heads == 1 else ad.concat(n_parts, axis=1)

    if config.hidden_norm == "group":
        htil = ad.group_norm(
            htil, heads, params[pre + "norm_hidden.gamma"], params[pre + "norm_hidden.beta"]
        )
    if not config.ablate_output_gate:
        o = ad.sigmoid(ad.add(ad.matmul(x, params[pre + "w_o"]), params[pre + "b_o"]))
        htil = ad.mul(o, htil)
    htil = ad.dropout(htil, config.dropout, rng, training)
    h_out = ad.add(h_prev, _linear(params, pre + "down", htil))
    return h_out, (c_state, n_state, m)


def model_forward(
    config: ModelConfig,
    params: dict[str, ad.Tensor],
    batch: GraphBatch,
    features: ad.Tensor | None = None,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> ModelOutput:
    """Run the configured model over a batch; returns embeddings and readout."""
    if training and config.dropout > 0.0 and rng is None:
        raise ValueError("dropout in training mode needs an rng")
    if features is None:
        features = assemble_features(params, batch, config)
    h = _linear(params, "input_proj", features)

    if config.architecture == "gcn":
        act = _ACTIVATIONS.get(config.activation)
        for layer in range(config.layers):
            agg = ad.neighbor_sum(h, batch.layer_structs[layer]["op"])
            h = ad.matmul(agg, params[f"layer{layer}.weight"])
            if act is not None:
                h = act(h)
            h = ad.dropout(h, config.dropout, rng, training)
    else:
        d_mem = config.heads * config.d_k
        state = (
            ad.constant(np.zeros((batch.n, d_mem * config.d_k))),
            ad.constant(np.zeros((batch.n, d_mem))),
            ad.constant(np.zeros((batch.n, config.heads))),
        )
        act = _ACTIVATIONS.get(config.activation)
        for layer in range(config.layers):
            pre = f"layer{layer}."
            x = h
            if config.input_norm == "layer":
                x = ad.layer_norm(
                    h, params[pre + "norm_in.gamma"], params[pre + "norm_in.beta"]
                )
            h, state = _glstm_layer(
                params, pre, config, x, h, state, batch.layer_structs[layer], training, rng
            )
            if act is not None and layer + 1 < config.layers:
                h = act(h)

    if config.readout == "per_node":
        out = _linear(params, "readout", h)
    elif config.readout == "mean_pool":
        out = _linear(params, "readout", ad.neighbor_sum(h, batch.pool))
    else:
        if batch.readout_nodes is None:
            raise ValueError("target_node readout needs readout_nodes in the batch")
        out = _linear(params, "readout", ad.rows(h, batch.readout_nodes))
    return ModelOutput(h=h, readout=out)


# Checkpoint serialization.

def save_checkpoint(path, config: ModelConfig, params: dict[str, ad.Tensor]) -> None:
    names = sorted(params)
    header = json.dumps(
        {
            "config": asdict(config),
            "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
        },
        sort_keys=True,
    ).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", 1))
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for n in names:
            fh.write(np.ascontiguousarray(params[n].data, dtype="<f8").tobytes())


def load_checkpoint(path) -> tuple[ModelConfig, dict[str, ad.Tensor]]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != 1:
            raise ValueError(f"unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode())
        config = ModelConfig(**header["config"])
        params: dict[str, ad.Tensor] = {}
        for spec in header["tensors"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError("checkpoint truncated")
            arr = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
            params[spec["name"]] = ad.parameter(arr)
        trailing = fh.read(1)
        if trailing:
            raise ValueError("checkpoint has trailing bytes")
    return config, params
