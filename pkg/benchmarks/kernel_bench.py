"""Compare the compiled aggregation kernels against the numpy fallback.

Backend selection happens at import time, so each backend runs in its
own subprocess (driver re-executes this file with GLSTM_LAB_KERNELS
set) and reports timings as JSON on stdout.  The driver prints a table
of best-of-N wall times and the compiled/fallback speedup, for the five
segment kernels on two graph sizes and for one full optimizer step of
the recurrent model on a batch of recall instances.

Usage: python benchmarks/kernel_bench.py [--repeats 7] [--json]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np


def _random_structure(rng, n, avg_degree, weighted):
    # Directed pairs with replacement; duplicates are fine for timing,
    # the kernels only need a valid CSR grouping.
    m = n * avg_degree
    src = rng.integers(0, n, size=m)
    dst = rng.integers(0, n, size=m)
    weights = rng.uniform(0.1, 1.0, size=m) if weighted else None
    from glstm_lab import graphs as gr

    return gr.build_structure(n, n, src, dst, weights)


def _kernel_cases(rng):
    from glstm_lab import kernels as kn

    cases = []
    for n, deg, d in ((256, 8, 32), (4096, 8, 64)):
        st = _random_structure(rng, n, deg, weighted=True)
        payload = rng.standard_normal((n, d))
        seg_grad = rng.standard_normal((n, d))
        edge_rows = rng.standard_normal((st.n_edges, d))
        _, arg = kn.seg_max(payload, st.idx, st.indptr)
        tag = f"n={n} deg={deg} d={d}"
        cases.append((
            f"seg_sum {tag}",
            lambda st=st, p=payload: kn.seg_sum(p, st.idx, st.indptr, st.weights),
        ))
        cases.append((
            f"seg_dot {tag}",
            lambda st=st, p=payload, g=seg_grad: kn.seg_dot(
                p, g, st.idx, st.indptr, st.weights
            ),
        ))
        cases.append((
            f"seg_max {tag}",
            lambda st=st, p=payload: kn.seg_max(p, st.idx, st.indptr),
        ))
        cases.append((
            f"seg_max_backward {tag}",
            lambda st=st, g=seg_grad, a=arg, n=n: kn.seg_max_backward(
                g[: a.shape[0]], a, n
            ),
        ))
        cases.append((
            f"scatter_rows {tag}",
            lambda st=st, r=edge_rows, n=n: kn.scatter_rows(r, st.idx, n),
        ))
    return cases


def _train_step_case():
    """One Adam step of the recurrent model on a 64-instance recall batch."""
    from glstm_lab import autodiff as ad
    from glstm_lab import models as md
    from glstm_lab import tasks as tk
    from glstm_lab import training as tr

    split = tk.generate_nar(8, 16, (64, 8, 8), seed=123)
    base = md.ModelConfig(architecture="glstm", d_h=32, d_k=8)
    config = tr.resolve_model_config(base, split)
    params = md.init_params(config, seed=0)
    train_config = tr.TrainConfig(epochs=1, batch_size=64, lr=1e-3, seed=0)
    opt = tr.adam_init(params)
    prepared = tr.prepare_instances(config, split.train)
    batch = md.build_batch(prepared, config)
    targets = tr._batch_targets(split.train, split.task)
    rng = np.random.default_rng(0)

    def step():
        with ad.Tape() as tape:
            _, loss = tr.batch_loss(
                config, params, batch, targets, "cross_entropy",
                training=True, rng=rng,
            )
        grads = ad.backpropagate(loss, tape)
        tr.adam_step(
            params,
            {k: grads[p] for k, p in params.items() if p in grads},
            opt,
            train_config,
        )
        return float(loss.data)

    return "train_step glstm N=8 batch=64", step


def run_worker(repeats: int) -> dict:
    from glstm_lab import kernels as kn

    rng = np.random.default_rng(20240817)
    results = {"backend": kn.backend_name(), "timings_us": {}}
    for name, fn in _kernel_cases(rng):
        fn()  # warm
        loops = max(1, int(0.02 / max(timeit.timeit(fn, number=3) / 3, 1e-7)))
        best = min(timeit.repeat(fn, number=loops, repeat=repeats)) / loops
        results["timings_us"][name] = best * 1e6
    name, step = _train_step_case()
    step()  # warm (first call pays allocator growth)
    best = min(timeit.repeat(step, number=1, repeat=max(3, repeats // 2)))
    results["timings_us"][name] = best * 1e6
    return results


def run_driver(repeats: int, as_json: bool) -> int:
    by_backend = {}
    for backend in ("compiled", "fallback"):
        env = dict(os.environ, GLSTM_LAB_KERNELS=backend)
        proc = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--worker",
             "--repeats", str(repeats)],
            env=env, capture_output=True, text=True,
        )
        if proc.returncode != 0:
            sys.stderr.write(proc.stderr)
            print(f"{backend} worker failed (is the extension built?)")
            return 1
        payload = json.loads(proc.stdout.splitlines()[-1])
        if payload["backend"] != backend:
            print(f"asked for {backend}, got {payload['backend']}")
            return 1
        by_backend[backend] = payload["timings_us"]

    if as_json:
        print(json.dumps(by_backend, indent=2, sort_keys=True))
        return 0
    names = list(by_backend["compiled"])
    width = max(len(n) for n in names)
    print(f"{'case':<{width}}  {'compiled':>12}  {'fallback':>12}  {'speedup':>8}")
    for n in names:
        c = by_backend["compiled"][n]
        f = by_backend["fallback"][n]
        print(f"{n:<{width}}  {c:>10.1f}us  {f:>10.1f}us  {f / c:>7.2f}x")
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=7)
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    ap.add_argument("--json", action="store_true", help="machine-readable output")
    args = ap.parse_args(argv)
    if args.worker:
        print(json.dumps(run_worker(args.repeats)))
        return 0
    return run_driver(args.repeats, args.json)


if __name__ == "__main__":
    raise SystemExit(main())
