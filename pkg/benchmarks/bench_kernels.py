#!/usr/bin/env python3
"""Compare the numba and numpy sparse-transfer backends.

Measures the four hot kernels (single and batched push, forward and
backward) plus the max-aggregation pair kernel on random graphs of a few
sizes, then optionally a whole training step (--train-step).  Both
backends must agree bit for bit; the script asserts that while timing.

Run from the repository root:

    python3 benchmarks/bench_kernels.py
    HOPTRACE_KERNELS=numpy python3 benchmarks/bench_kernels.py --train-step
"""

import argparse
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from hoptrace import kernels

SIZES = [(500, 4_000), (2_000, 20_000), (8_000, 120_000)]


def random_edges(rng, n, num_edges):
    heads = rng.integers(0, n, size=num_edges)
    tails = rng.integers(0, n, size=num_edges)
    return heads.astype(np.int64), tails.astype(np.int64)


def group_pairs(heads, tails):
    """Sort edges by (head, tail) and mark group boundaries, the layout
    push_max_forward expects."""
    order = np.lexsort((tails, heads))
    h, t = heads[order], tails[order]
    new = np.ones(len(h), dtype=bool)
    new[1:] = (h[1:] != h[:-1]) | (t[1:] != t[:-1])
    starts = np.flatnonzero(new)
    ptr = np.append(starts, len(h)).astype(np.int64)
    return h[starts], t[starts], ptr, order


def timeit(fn, repeats, inner):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        best = min(best, (time.perf_counter() - t0) / inner)
    return best * 1e3  # ms


def bench_kernels(args):
    rng = np.random.default_rng(args.seed)
    rows = []
    for n, num_edges in SIZES:
        heads, tails = random_edges(rng, n, num_edges)
        w = rng.random(num_edges)
        a = rng.random(n)
        g = rng.random(n)
        wb = rng.random((args.batch, num_edges))
        ab = rng.random((args.batch, n))
        gb = rng.random((args.batch, n))
        preds = rng.integers(0, 24, size=num_edges)
        ph, pt, ptr, order = group_pairs(heads, tails)
        wp = w[order]

        cases = {
            "push_forward": lambda: kernels.push_forward(heads, tails, w, a, n),
            "push_backward": lambda: kernels.push_backward(heads, tails, w, a, g),
            "push_batch_forward": lambda: kernels.push_batch_forward(heads, tails, wb, ab, n),
            "push_batch_backward": lambda: kernels.push_batch_backward(heads, tails, wb, ab, gb),
            "push_max_forward": lambda: kernels.push_max_forward(ph, pt, ptr, wp, a, n),
            "col_scatter_add": lambda: kernels.col_scatter_add(preds, wb, 24),
        }
        inner = max(1, 200_000 // num_edges)
        for name, fn in cases.items():
            times = {}
            reference = None
            for backend in ("numpy", "numba"):
                if backend == "numba" and not kernels.HAS_NUMBA:
                    continue
                kernels.select_backend(backend)
                fn()  # warm up (JIT compile on first numba call)
                got = fn()
                got = got if isinstance(got, tuple) else (got,)
                if reference is None:
                    reference = got
                else:
                    for x, y in zip(reference, got):
                        assert np.array_equal(x, y), (name, n)
                batch_inner = max(1, inner // args.batch) if "batch" in name else inner
                times[backend] = timeit(fn, args.repeats, batch_inner)
            rows.append((name, n, num_edges, times))
    kernels.select_backend("auto")
    return rows


def bench_train_step(args):
    """One optimizer step (forward_batch + loss + backward) per backend on a
    generated dataset, the quantity that actually bounds training time."""
    from hoptrace.config import TrainConfig
    from hoptrace.data import SyntheticSpec, generate_synthetic, resolve_examples
    from hoptrace.graph import add_reverse_relations, build_from_triples
    from hoptrace.model import ModelParams, forward_batch
    from hoptrace.training import build_target, build_vocabulary, compute_loss, prepare_examples

    data = generate_synthetic(SyntheticSpec(questions_per_hop=400, seed=args.seed))
    g = add_reverse_relations(build_from_triples(data.triples))
    examples = resolve_examples(data.splits["train"], g)
    cfg = TrainConfig(form="label", seed=args.seed)
    vocab = build_vocabulary(examples, g)
    params = ModelParams(len(vocab), g.n, g.num_predicates, cfg)
    prep = prepare_examples(examples, vocab)[: cfg.effective_batch_size]

    def step():
        for p in params.named().values():
            p.grad = None
        results = forward_batch(g, [e.tokens for e in prep], [e.topic for e in prep], params, cfg)
        total = None
        inv = 1.0 / len(prep)
        for ex, res in zip(prep, results):
            y = build_target(ex.answers, g.n)
            lb = compute_loss(res.final, y, res.c, ex.gold_hop)
            total = lb.total if total is None else total + lb.total
        total.backward(seed=np.asarray(inv))
        return float(total.data)

    out = {}
    for backend in ("numpy", "numba"):
        if backend == "numba" and not kernels.HAS_NUMBA:
            continue
        kernels.select_backend(backend)
        step()  # warm up
        out[backend] = (timeit(step, args.repeats, 1), len(prep))
    kernels.select_backend("auto")
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--train-step", action="store_true", help="also time a full training step")
    args = ap.parse_args(argv)

    if not kernels.HAS_NUMBA:
        print("numba not importable: numpy column only")
    print(f"{'kernel':<22} {'n':>6} {'edges':>8} {'numpy ms':>10} {'numba ms':>10} {'speedup':>8}")
    for name, n, num_edges, times in bench_kernels(args):
        np_ms = times.get("numpy")
        nb_ms = times.get("numba")
        speedup = f"{np_ms / nb_ms:7.1f}x" if nb_ms else "       -"
        nb_txt = f"{nb_ms:10.4f}" if nb_ms else "         -"
        print(f"{name:<22} {n:>6} {num_edges:>8} {np_ms:>10.4f} {nb_txt} {speedup}")

    if args.train_step:
        print()
        for backend, (ms, bs) in bench_train_step(args).items():
            print(f"train step ({backend:>5}): {ms:8.1f} ms / batch of {bs}  "
                  f"= {ms / bs:6.3f} ms per example")
    return 0


if __name__ == "__main__":
    sys.exit(main())
