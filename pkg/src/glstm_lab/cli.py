"""Command-line entry point: generate, train, sweep, probe, report, ablate.

Exit codes: 0 success, 1 config error, 2 run failure, 3 partial aggregate.
Every artifact filename embeds a 12-hex config hash, so re-invoking with an
unchanged config finds its previous outputs and performs zero training
steps, while any config edit lands in fresh files.

Seed precedence: the GLSTM_LAB_SEED environment variable beats
--seed-override, which beats the config file.  Both collapse the run to a
single seed and reseed the dataset, for smoke tests.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path

from . import config as cf
from . import models as md
from . import probes as pb
from . import reporting as rp
from . import tasks as tk
from . import training as tr
from .config import ConfigError


class RunFailure(RuntimeError):
    pass


FLAT_DEEP_DEPTHS = (2, 3, 4, 5, 6)
FLAT_DEEP_SEEDS = 24
FLAT_DEEP_WIDTH = 8
PROBE_INSTANCES = 200  # test instances consumed per sensitivity probe

ABLATION_VARIANTS = (
    ("baseline", {}),
    ("no_output_gate", {"ablate_output_gate": True}),
    ("no_input_gate", {"ablate_input_gate": True}),
    ("no_forget_gate", {"ablate_forget_gate": True}),
    ("no_all_gates", {"ablate_output_gate": True, "ablate_input_gate": True, "ablate_forget_gate": True}),
    ("no_k_hop", {"k_hop": False}),
)


# -- hashing and naming -----------------------------------------------------


def _hash12(blob: str) -> str:
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def run_hash(run: cf.RunSpec) -> str:
    blob = json.dumps(
        {"task": run.task, "model": asdict(run.model), "train": asdict(run.train)},
        sort_keys=True,
    )
    return _hash12(blob)


def experiment_hash(exp: cf.ExperimentConfig) -> str:
    return _hash12(cf.write_string(cf.emit_resolved(exp)))


def _slug(value) -> str:
    return re.sub(r"[^A-Za-z0-9.+-]+", "-", str(value))


def run_base(exp_name: str, run: cf.RunSpec) -> str:
    parts = [_slug(exp_name)]
    for axis in sorted(k for k in run.point if k != "seed"):
        parts.append(f"{_slug(axis.split('.')[1])}{_slug(run.point[axis])}")
    parts.append(f"seed{run.seed}")
    parts.append(run_hash(run))
    return "_".join(parts)


# -- run execution ----------------------------------------------------------


def _run_paths(out_dir: str, base: str) -> dict:
    runs = Path(out_dir) / "runs"
    return {
        "report": runs / f"{base}.report.json",
        "metrics": runs / f"{base}.metrics.csv",
        "checkpoint": runs / f"{base}.ckpt",
    }


def execute_run(payload) -> tuple:
    """Train one sweep point; always leaves a report file behind.

    Module-level so a process pool can pickle it.  Returns
    (base, aborted_reason_or_None, test_metric_or_None).
    """
    task, model, train_cfg, point, out_dir, base = payload
    paths = _run_paths(out_dir, base)
    paths["report"].parent.mkdir(parents=True, exist_ok=True)
    try:
        split = cf.generate_split(task)
        resolved = tr.resolve_model_config(model, split)
        report, _ = tr.train(
            resolved,
            split,
            train_cfg,
            checkpoint_path=paths["checkpoint"],
            metrics_csv_path=paths["metrics"],
        )
        payload_json = {"point": point, **json.loads(report.to_json())}
    except Exception as exc:  # a crashed run is recorded, not lost
        payload_json = {"point": point, "aborted": f"{type(exc).__name__}: {exc}", "test_metric": None}
    with open(paths["report"], "w", encoding="utf-8") as fh:
        json.dump(payload_json, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return base, payload_json.get("aborted"), payload_json.get("test_metric")


def _load_cached(out_dir: str, base: str):
    path = _run_paths(out_dir, base)["report"]
    if not path.exists():
        return None
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError):
        return None


def run_all(exp: cf.ExperimentConfig, runs: list, out_dir: str, workers: int) -> dict:
    """Execute (or skip) every run; returns base -> report dict."""
    results = {}
    pending = []
    for run in runs:
        base = run_base(exp.name, run)
        cached = _load_cached(out_dir, base)
        if cached is not None:
            results[base] = cached
        else:
            pending.append((run.task, run.model, run.train, run.point, out_dir, base))
    if pending:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                list(pool.map(execute_run, pending))
        else:
            for payload in pending:
                execute_run(payload)
        for payload in pending:
            base = payload[-1]
            results[base] = _load_cached(out_dir, base) or {"aborted": "report file missing"}
    return results


def _x_axis(exp: cf.ExperimentConfig) -> str:
    axes = sorted(exp.sweep)
    for axis in axes:
        if axis.startswith("task."):
            return axis
    return axes[0]


def _series_label(exp_name: str, point: dict, x_axis: str) -> str:
    extras = [
        f"{axis.split('.')[1]}={point[axis]}"
        for axis in sorted(point)
        if axis not in ("seed", x_axis)
    ]
    return " ".join([exp_name] + extras)


def _write_aggregate(exp, runs, results, out_dir: str, x_axis, x_of, csv_suffix: str) -> int:
    """Aggregate test metrics across seeds; returns the exit code."""
    points = []
    aborted = []
    for run in runs:
        base = run_base(exp.name, run)
        report = results[base]
        if report.get("aborted"):
            aborted.append((base, report["aborted"]))
        elif report.get("test_metric") is None:
            aborted.append((base, "no test metric"))
        else:
            points.append((x_of(run), _series_label(exp.name, run.point, x_axis), report["test_metric"]))
    tag = f"{_slug(exp.name)}_{experiment_hash(exp)}"
    partial_path = Path(out_dir) / f"{tag}.partial.txt"
    if points:
        rp.write_aggregate_csv(Path(out_dir) / f"{tag}{csv_suffix}", rp.aggregate_points(points))
    if aborted:
        with open(partial_path, "w", encoding="utf-8") as fh:
            for base, reason in aborted:
                fh.write(f"{base}\t{reason}\n")
        return 3 if points else 2
    if partial_path.exists():
        partial_path.unlink()
    return 0


def _write_resolved(exp: cf.ExperimentConfig, out_dir: str) -> None:
    tag = f"{_slug(exp.name)}_{experiment_hash(exp)}"
    path = Path(out_dir) / f"{tag}.resolved.cfg"
    text = cf.write_string(cf.emit_resolved(exp))
    if path.exists() and path.read_text(encoding="utf-8") == text:
        return  # leave mtimes alone so re-invocations touch nothing
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


# -- subcommands ------------------------------------------------------------


def _load_experiment(args) -> cf.ExperimentConfig:
    try:
        raw = cf.parse_file(args.config)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    exp = cf.resolve_experiment(raw)
    override = os.environ.get("GLSTM_LAB_SEED")
    if override is not None:
        try:
            seed = int(override)
        except ValueError:
            raise ConfigError(f"GLSTM_LAB_SEED must be an int, got {override!r}") from None
    elif args.seed_override is not None:
        seed = args.seed_override
    else:
        return exp
    exp.seeds = [seed]
    exp.task = {**exp.task, "seed": seed}
    return exp


def cmd_gen(args) -> int:
    exp = _load_experiment(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    split = cf.generate_split(exp.task)
    tag = f"{_slug(exp.task['name'])}_{_hash12(json.dumps(exp.task, sort_keys=True))}"
    graphs = out / f"{tag}.graphs.txt"
    tk.save_split(split, graphs, out / f"{tag}.jsonl")
    print(graphs)
    return 0


def cmd_train(args) -> int:
    exp = _load_experiment(args)
    if exp.sweep:
        raise ConfigError("train takes a config without sweep axes; use the sweep subcommand")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_resolved(exp, args.out)
    runs = cf.expand_runs(exp)
    results = run_all(exp, runs, args.out, workers=1)
    code = 0
    for run in runs:
        base = run_base(exp.name, run)
        report = results[base]
        if report.get("aborted"):
            print(f"{base}: aborted: {report['aborted']}")
            code = 2
        else:
            print(f"{base}: test_metric={report['test_metric']}")
    return code


def cmd_sweep(args) -> int:
    exp = _load_experiment(args)
    if not exp.sweep:
        raise ConfigError("sweep needs at least one [sweep] axis")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_resolved(exp, args.out)
    runs = cf.expand_runs(exp)
    results = run_all(exp, runs, args.out, workers=args.workers)
    x_axis = _x_axis(exp)
    code = _write_aggregate(
        exp, runs, results, args.out, x_axis, lambda run: run.point[x_axis], ".aggregate.csv"
    )
    done = sum(1 for r in results.values() if not r.get("aborted"))
    print(f"{done}/{len(runs)} runs complete")
    return code


def cmd_ablate(args) -> int:
    exp = _load_experiment(args)
    if exp.sweep:
        raise ConfigError("ablate takes a config without sweep axes")
    if exp.model.architecture != "glstm":
        raise ConfigError("ablate toggles gates of the memory architecture; set architecture = \"glstm\"")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_resolved(exp, args.out)
    runs = []
    for variant, toggles in ABLATION_VARIANTS:
        model = replace(exp.model, **toggles)
        for seed in exp.seeds:
            runs.append(
                cf.RunSpec(
                    task=exp.task,
                    model=model,
                    train=replace(exp.train, seed=seed),
                    seed=seed,
                    point={"model.variant": variant, "seed": seed},
                )
            )
    results = run_all(exp, runs, args.out, workers=args.workers)
    code = _write_aggregate(
        exp, runs, results, args.out, "model.variant",
        lambda run: run.point["model.variant"], ".ablation.csv",
    )
    print(f"{sum(1 for r in results.values() if not r.get('aborted'))}/{len(runs)} runs complete")
    return code


def _checkpoint_for(exp: cf.ExperimentConfig, run: cf.RunSpec, out_dir: str):
    paths = _run_paths(out_dir, run_base(exp.name, run))
    if not paths["checkpoint"].exists():
        raise RunFailure(f"missing checkpoint {paths['checkpoint']}; train or sweep first")
    return md.load_checkpoint(paths["checkpoint"])


def _probe_runs(args, kind: str) -> int:
    exp = _load_experiment(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    runs = cf.expand_runs(exp)
    x_axis = _x_axis(exp) if exp.sweep else None
    probe_rows = []
    agg_points = []
    for run in runs:
        config, params = _checkpoint_for(exp, run, args.out)
        split = cf.generate_split(run.task)
        instances = split.test[:PROBE_INSTANCES]
        x = run.point[x_axis] if x_axis else 0
        series = _series_label(exp.name, run.point, x_axis) if x_axis else exp.name
        if kind == "jacobian":
            report = pb.jacobian_report(config, params, instances)
            summary = report.summary
            probe_rows.append(
                {"task": split.task, "model": config.architecture, "x": x, "seed": run.seed,
                 "metric": "jacobian_ratio", "mean": summary["pooled_ratio"], "std": summary["ratio_std"]}
            )
            probe_rows.append(
                {"task": split.task, "model": config.architecture, "x": x, "seed": run.seed,
                 "metric": "neighbor_norm", "mean": summary["background_mean"], "std": summary["background_std"]}
            )
            agg_points.append((x, series, summary["pooled_ratio"]))
        else:
            report = pb.mixing_report(config, params, instances)
            summary = report.summary
            probe_rows.append(
                {"task": split.task, "model": config.architecture, "x": x, "seed": run.seed,
                 "metric": "mixing", "mean": summary["mean"], "std": summary["std"]}
            )
            agg_points.append((x, series, summary["mean"]))
    tag = f"{_slug(exp.name)}_{experiment_hash(exp)}.{kind}"
    rp.write_probe_csv(out / f"{tag}.probe.csv", probe_rows)
    rp.write_aggregate_csv(out / f"{tag}.aggregate.csv", rp.aggregate_points(agg_points))
    print(out / f"{tag}.probe.csv")
    return 0


def cmd_probe(args) -> int:
    if args.kind == "flat_deep":
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        seed0 = 0
        override = os.environ.get("GLSTM_LAB_SEED")
        if override is not None:
            seed0 = int(override)
        elif args.seed_override is not None:
            seed0 = args.seed_override
        seeds = range(seed0, seed0 + FLAT_DEEP_SEEDS)
        records = pb.flat_vs_deep_probe(FLAT_DEEP_DEPTHS, seeds, d_h=FLAT_DEEP_WIDTH)
        probe_rows = [
            {"task": f"flat_deep_{r.family}", "model": "gcn", "x": r.depth, "seed": r.seed,
             "metric": "log10_norm", "mean": float(r.log10_norms.mean()),
             "std": float(r.log10_norms.std())}
            for r in records
        ]
        agg_points = [
            (r.depth, r.family, float(r.log10_norms.mean())) for r in records
        ]
        tag = f"flat_deep_{_hash12(f'{FLAT_DEEP_DEPTHS}_{FLAT_DEEP_SEEDS}_{FLAT_DEEP_WIDTH}_{seed0}')}"
        rp.write_probe_csv(out / f"{tag}.probe.csv", probe_rows)
        rp.write_aggregate_csv(out / f"{tag}.aggregate.csv", rp.aggregate_points(agg_points))
        print(out / f"{tag}.probe.csv")
        return 0
    if args.config is None:
        raise ConfigError(f"probe {args.kind} needs --config")
    return _probe_runs(args, args.kind)


def cmd_report(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    digest = hashlib.sha256()
    for path in args.csvs:
        try:
            blob = Path(path).read_bytes()
        except OSError as exc:
            raise ConfigError(f"cannot read csv: {exc}") from None
        digest.update(blob)
        rows.extend(rp.read_aggregate_csv(path))
    try:
        svg = rp.render_figure(args.figure, rows)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    path = out / f"{args.figure}_{digest.hexdigest()[:12]}.svg"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(svg)
    print(path)
    return 0


# -- argument parsing -------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 for usage errors, not argparse's 2
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="glstm-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="experiment config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--workers", type=int, default=1, help="worker pool size for sweeps")
        p.add_argument("--seed-override", type=int, default=None,
                       help="collapse to this single seed (GLSTM_LAB_SEED wins over it)")

    p = sub.add_parser("gen", help="generate and save a task dataset")
    common(p)
    p.set_defaults(func=cmd_gen)
    p = sub.add_parser("train", help="train every seed of a non-sweep config")
    common(p)
    p.set_defaults(func=cmd_train)
    p = sub.add_parser("sweep", help="run a sweep grid and aggregate test metrics")
    common(p)
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("probe", help="sensitivity probes on trained checkpoints")
    p.add_argument("kind", choices=("jacobian", "mixing", "flat_deep"))
    common(p, config_required=False)
    p.set_defaults(func=cmd_probe)
    p = sub.add_parser("report", help="render an aggregate CSV to a cataloged SVG figure")
    p.add_argument("figure", choices=sorted(rp.FIGURES))
    p.add_argument("csvs", nargs="+", help="aggregate CSV inputs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    p = sub.add_parser("ablate", help="gate and aggregation ablations of the memory model")
    common(p)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except RunFailure as exc:
        print(f"run failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
