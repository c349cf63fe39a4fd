"""Seeded training loops: Adam, early stopping, and task-aware losses.

One run is a pure function of (model config, split, train config): batch
order, dropout masks, and initialization all come from the run seed, and
the segment kernels are deterministic, so repeating a run reproduces its
metrics bitwise.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import models as md

LOG10_MSE_FLOOR = -12.0  # keeps exact fits finite in reports


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    batch_size: int = 64
    epochs: int = 200
    patience: int = 20
    clip_norm: float = 1.0  # 0 disables clipping
    seed: int = 0

    def validate(self) -> None:
        if self.lr <= 0:
            raise ValueError("lr must be > 0")
        if not 0 <= self.beta1 < 1 or not 0 <= self.beta2 < 1:
            raise ValueError("betas must be in [0, 1)")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.clip_norm < 0 or self.weight_decay < 0:
            raise ValueError("clip_norm and weight_decay must be >= 0")


# -- optimizer --------------------------------------------------------------


@dataclass
class AdamState:
    t: int
    m: dict
    v: dict


def adam_init(params: dict) -> AdamState:
    zeros = {k: np.zeros_like(p.data) for k, p in params.items()}
    return AdamState(t=0, m=zeros, v={k: z.copy() for k, z in zeros.items()})


def clip_global_norm(grads: dict, max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is <= max_norm."""
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


def adam_step(params: dict, grads: dict, state: AdamState, config: TrainConfig) -> None:
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for {name}")
    if config.clip_norm:
        clip_global_norm(grads, config.clip_norm)
    state.t += 1
    t = state.t
    bias1 = 1.0 - config.beta1**t
    bias2 = 1.0 - config.beta2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:  # parameter not touched by this loss
            g = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * g * g
        step = config.lr * (m / bias1) / (np.sqrt(v / bias2) + config.eps)
        if config.weight_decay:
            step = step + config.lr * config.weight_decay * p.data
        p.data -= step


# -- task plumbing ----------------------------------------------------------

# task name -> (loss kind, validation metric, test metric)
TASK_OBJECTIVES = {
    "nar": ("cross_entropy", "accuracy", "accuracy"),
    "ring_transfer": ("cross_entropy", "accuracy", "accuracy"),
    "narr": ("mse", "mse", "mse"),
    "gpp_diameter": ("mse", "mse", "log10_mse"),
    "gpp_eccentricity": ("mse", "mse", "log10_mse"),
    "gpp_sssp": ("mse", "mse", "log10_mse"),
}

HIGHER_IS_BETTER = {"accuracy": True, "mse": False, "log10_mse": False}


def resolve_model_config(base: md.ModelConfig, split) -> md.ModelConfig:
    """Fill the task-determined fields of a model config from a split.

    Widths, vocabulary sizes, readout style, and (for the ring task) the
    required depth all follow from the task; everything else is kept.
    """
    if split.task not in TASK_OBJECTIVES:
        raise ValueError(f"no objective known for task {split.task!r}")
    meta = split.train[0].meta
    kw = asdict(base)
    if split.task == "nar":
        n_nb = meta["n_neighbors"]
        kw.update(
            d_in=0, d_out=n_nb, embed_symbols=n_nb, d_emb=meta["d_emb"],
            readout="target_node",
        )
    elif split.task == "narr":
        n_nb = meta["n_neighbors"]
        v = meta["value_dim"]
        kw.update(
            d_in=v + 2 * n_nb, d_out=v, embed_symbols=0, readout="target_node"
        )
    elif split.task == "ring_transfer":
        kw.update(
            d_in=meta["num_classes"], d_out=meta["num_classes"], embed_symbols=0,
            readout="target_node", layers=meta["depth"],
        )
    elif split.task == "gpp_diameter":
        kw.update(d_in=1, d_out=1, embed_symbols=0, readout="mean_pool")
    elif split.task == "gpp_eccentricity":
        kw.update(d_in=1, d_out=1, embed_symbols=0, readout="per_node")
    elif split.task == "gpp_sssp":
        kw.update(d_in=2, d_out=1, embed_symbols=0, readout="per_node")
    config = md.ModelConfig(**kw)
    config.validate()
    return config


def _batch_targets(instances, task: str):
    """Dense target block matching the model readout shape for a batch."""
    if task in ("nar", "ring_transfer"):
        return np.array([inst.target for inst in instances], dtype=np.int64)
    if task == "narr" or task == "gpp_diameter":
        return np.stack([np.asarray(inst.target, dtype=np.float64) for inst in instances])
    # per-node regression: concatenate along the union's node axis
    return np.concatenate([np.asarray(inst.target, dtype=np.float64) for inst in instances])[:, None]


def batch_loss(config, params, batch, targets, loss_kind, training=False, rng=None):
    out = md.model_forward(config, params, batch, training=training, rng=rng)
    if loss_kind == "cross_entropy":
        return out.readout, ad.cross_entropy(out.readout, targets)
    if loss_kind == "mse":
        return out.readout, ad.mse(out.readout, targets)
    raise ValueError(f"unknown loss {loss_kind!r}")


def task_fingerprint(split) -> dict:
    """Stable identity of a generated dataset, for hashing and reports."""
    meta = split.train[0].meta
    keep = {
        "nar": ("n_neighbors", "d_emb"),
        "narr": ("n_neighbors", "value_dim"),
        "ring_transfer": ("ring_size", "num_classes", "depth"),
    }.get(split.task, ())
    fp = {
        "task": split.task,
        "seed": split.seed,
        "counts": [len(split.train), len(split.validation), len(split.test)],
    }
    for key in keep:
        fp[key] = meta[key]
    return fp


def config_hash(model_config: md.ModelConfig, train_config: TrainConfig, fingerprint: dict) -> str:
    blob = json.dumps(
        {"model": asdict(model_config), "train": asdict(train_config), "task": fingerprint},
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()


# -- evaluation -------------------------------------------------------------


def _chunks(seq, size):
    for i in range(0, len(seq), size):
        yield seq[i : i + size]


def prepare_instances(config, instances):
    return [md.prepare_instance(config, i) for i in instances]


def evaluate(config, params, prepared, instances, metric: str, batch_size: int = 64):
    """Metric over a list of instances plus a per-instance record.

    accuracy: fraction of argmax-correct targets.  mse: squared error
    averaged over every predicted scalar.  log10_mse: log10 of that mean,
    floored so exact fits stay finite.
    """
    if not instances:
        raise ValueError("cannot evaluate an empty split")
    task = instances[0].meta["task"]
    loss_kind = "cross_entropy" if metric == "accuracy" else "mse"
    records = []
    sq_sum = 0.0
    sq_count = 0
    correct = 0
    for idx_chunk in _chunks(list(range(len(instances))), batch_size):
        insts = [instances[i] for i in idx_chunk]
        batch = md.build_batch([prepared[i] for i in idx_chunk], config)
        targets = _batch_targets(insts, task)
        out = md.model_forward(config, params, batch)
        pred = out.readout.data
        if loss_kind == "cross_entropy":
            hit = np.argmax(pred, axis=1) == targets
            correct += int(hit.sum())
            records.extend(bool(b) for b in hit)
        else:
            err = (pred - targets) ** 2
            sq_sum += float(err.sum())
            sq_count += err.size
            if config.readout == "per_node":
                # per-instance record: mean over that graph's own nodes
                sizes = [inst.graph.n for inst in insts]
                stops = np.cumsum(sizes)
                starts = stops - sizes
                for a, b in zip(starts, stops):
                    records.append(float(err[a:b].mean()))
            else:
                records.extend(float(row.mean()) for row in err)
    if metric == "accuracy":
        return correct / len(instances), records
    mse_value = sq_sum / sq_count
    if metric == "mse":
        return mse_value, records
    return max(float(np.log10(max(mse_value, 10.0**LOG10_MSE_FLOOR))), LOG10_MSE_FLOOR), records


# -- the run ----------------------------------------------------------------


@dataclass
class RunReport:
    config_hash: str
    seed: int
    task: dict
    parameter_count: int
    epochs: list = field(default_factory=list)  # dicts: epoch, train_loss, val_metric
    best_epoch: int = -1
    best_val: float = float("nan")
    test_metric: float | None = None
    metric_names: dict = field(default_factory=dict)
    aborted: str | None = None
    wall_clock: float = 0.0  # informational; excluded from comparisons

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _improved(candidate: float, best: float, higher_better: bool) -> bool:
    if np.isnan(best):
        return True
    return candidate > best if higher_better else candidate < best


def train(
    model_config: md.ModelConfig,
    split,
    train_config: TrainConfig,
    checkpoint_path=None,
    metrics_csv_path=None,
):
    """Full training run; returns (RunReport, trained params).

    The returned params are the best-validation snapshot, which is also
    what the test metric is computed from, exactly once.
    """
    t0 = time.perf_counter()
    train_config.validate()
    model_config.validate()
    loss_kind, val_metric, test_metric = TASK_OBJECTIVES[split.task]
    fingerprint = task_fingerprint(split)
    digest = config_hash(model_config, train_config, fingerprint)

    prep_train = [md.prepare_instance(model_config, i) for i in split.train]
    prep_val = [md.prepare_instance(model_config, i) for i in split.validation]
    prep_test = [md.prepare_instance(model_config, i) for i in split.test]

    params = md.init_params(model_config, seed=train_config.seed)
    report = RunReport(
        config_hash=digest,
        seed=train_config.seed,
        task=fingerprint,
        parameter_count=md.parameter_count(params),
        metric_names={"val": val_metric, "test": test_metric, "loss": loss_kind},
    )

    opt = adam_init(params)
    rng = np.random.default_rng(np.random.SeedSequence(train_config.seed).spawn(1)[0])
    higher = HIGHER_IS_BETTER[val_metric]
    best_params = {k: p.data.copy() for k, p in params.items()}
    stale = 0

    csv_fh = None
    writer = None
    if metrics_csv_path is not None:
        csv_fh = open(metrics_csv_path, "w", newline="", encoding="utf-8")
        writer = csv.writer(csv_fh)
        writer.writerow(["epoch", "train_loss", "val_metric", "seconds"])

    try:
        for epoch in range(train_config.epochs):
            order = rng.permutation(len(prep_train))
            loss_sum = 0.0
            aborted = None
            for idx_chunk in _chunks(order.tolist(), train_config.batch_size):
                batch = md.build_batch([prep_train[i] for i in idx_chunk], model_config)
                targets = _batch_targets([split.train[i] for i in idx_chunk], split.task)
                with ad.Tape() as tape:
                    _, loss = batch_loss(
                        model_config, params, batch, targets, loss_kind,
                        training=True, rng=rng,
                    )
                loss_value = float(loss.data)
                if not np.isfinite(loss_value):
                    aborted = f"non-finite loss in epoch {epoch}"
                    break
                grads = ad.backpropagate(loss, tape)
                try:
                    adam_step(
                        params,
                        {k: grads[p] for k, p in params.items() if p in grads},
                        opt,
                        train_config,
                    )
                except FloatingPointError as err:
                    aborted = f"epoch {epoch}: {err}"
                    break
                loss_sum += loss_value * len(idx_chunk)

            if aborted is not None:
                report.aborted = aborted
                break

            train_loss = loss_sum / len(prep_train)
            if split.validation:
                val_value, _ = evaluate(
                    model_config, params, prep_val, split.validation, val_metric,
                    train_config.batch_size,
                )
            else:
                val_value = train_loss if not higher else -train_loss
            elapsed = time.perf_counter() - t0
            report.epochs.append(
                {"epoch": epoch, "train_loss": train_loss, "val_metric": val_value}
            )
            if writer is not None:
                writer.writerow([epoch, repr(train_loss), repr(val_value), f"{elapsed:.3f}"])
                csv_fh.flush()

            if _improved(val_value, report.best_val, higher):
                report.best_val = val_value
                report.best_epoch = epoch
                for k, p in params.items():
                    best_params[k][...] = p.data
                stale = 0
            else:
                stale += 1
                if stale >= train_config.patience:
                    break
    finally:
        if csv_fh is not None:
            csv_fh.close()

    # hand back the best snapshot; test metric computed exactly once on it
    for k, p in params.items():
        p.data[...] = best_params[k]
    if split.test:
        report.test_metric, _ = evaluate(
            model_config, params, prep_test, split.test, test_metric,
            train_config.batch_size,
        )
    report.wall_clock = time.perf_counter() - t0
    if checkpoint_path is not None:
        md.save_checkpoint(checkpoint_path, model_config, params)
    return report, params
