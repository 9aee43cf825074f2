#!/usr/bin/env python3
"""Benchmark the compiled kernel lane against the numpy fallback.

Times each hot kernel at desk-profile shapes and at full-scale shapes,
then a whole training step (forward + backward + Adam) on synthetic data.
Run after `pip install -e . --no-build-isolation`:

    python3 benchmarks/bench_kernels.py [--repeats 30]
"""

import argparse
import dataclasses
import time

import numpy as np

from debiasrec.kernels import get_lane


def timeit(fn, repeats):
    fn()  # warm up
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(n, l, d, f, a, seed=0):
    rng = np.random.default_rng(seed)
    x = np.ascontiguousarray(rng.normal(size=(n, l, d)))
    w = np.ascontiguousarray(rng.normal(size=(f, 3 * d)))
    b = np.ascontiguousarray(rng.normal(size=f))
    h = np.ascontiguousarray(rng.normal(size=(n, l, f)))
    proj = np.ascontiguousarray(rng.normal(size=(a, f)))
    pb = np.ascontiguousarray(rng.normal(size=a))
    q = np.ascontiguousarray(rng.normal(size=a))
    mask = np.ascontiguousarray((rng.random((n, l)) > 0.2).astype(float))
    d_out = np.ascontiguousarray(rng.normal(size=(n, l, f)))
    d_scores = np.ascontiguousarray(rng.normal(size=(n, l)))
    params = np.ascontiguousarray(rng.normal(size=200_000))
    grads = np.ascontiguousarray(rng.normal(size=200_000))
    moments = np.zeros(200_000), np.zeros(200_000)

    def cases(lane):
        scores, z = lane.att_fwd(h, proj, pb, q)
        probs = lane.masked_softmax(scores, mask)
        return {
            "conv1d_fwd": lambda: lane.conv1d_fwd(x, w, b),
            "conv1d_bwd": lambda: lane.conv1d_bwd(x, w, d_out),
            "att_fwd": lambda: lane.att_fwd(h, proj, pb, q),
            "att_bwd": lambda: lane.att_bwd(h, proj, q, z, d_scores),
            "masked_softmax": lambda: lane.masked_softmax(scores, mask),
            "weighted_pool": lambda: lane.weighted_pool(probs, h),
            "adam_update": lambda: lane.adam_update(
                params, grads, moments[0], moments[1],
                1e-3, 0.9, 0.999, 1e-8, 5),
        }

    return cases


def bench_kernels(repeats):
    shapes = {
        "desk  (N=640 L=10 D=20 F=24 A=20)": (640, 10, 20, 24, 20),
        "large (N=160 L=30 D=300 F=400 A=200)": (160, 30, 300, 400, 200),
    }
    for label, shape in shapes.items():
        cases = kernel_cases(*shape)
        lanes = {name: get_lane(name) for name in ("python", "c")}
        print(f"\n== {label} ==")
        print(f"{'kernel':16s} {'numpy':>10s} {'compiled':>10s} {'speedup':>8s}")
        py_cases = cases(lanes["python"])
        c_cases = cases(lanes["c"]) if lanes["c"] else None
        for name, fn in py_cases.items():
            t_py = timeit(fn, repeats)
            if c_cases:
                t_c = timeit(c_cases[name], repeats)
                print(f"{name:16s} {t_py * 1e3:9.3f}ms {t_c * 1e3:9.3f}ms "
                      f"{t_py / t_c:7.2f}x")
            else:
                print(f"{name:16s} {t_py * 1e3:9.3f}ms {'n/a':>10s}")


def bench_train_step(repeats):
    """One optimizer step on a packed batch, per lane."""
    import os
    from debiasrec.config import desk_profile
    from debiasrec.model import DebiasModel
    from debiasrec.optim import AdamHyper, adam_step
    from debiasrec.sim import SimConfig, generate_catalog, generate_logs
    from debiasrec.text import TokenizedCatalog, build_vocab
    from debiasrec.train import build_instances, pack_batch
    from debiasrec.core import make_rng
    import debiasrec.kernels as K

    sim = SimConfig(n_users=40, n_news=400, impressions_per_user=20, seed=3)
    articles, truth = generate_catalog(sim)
    biased, _ = generate_logs(sim, truth)
    cfg = desk_profile()
    vocab = build_vocab((a.title for a in articles), 1)
    catalog = TokenizedCatalog.build(((a.news_id, a.title) for a in articles),
                                     vocab, cfg.l_max)
    instances, _ = build_instances(biased, catalog, cfg.k_negatives, cfg.m_max, 0)
    batch = pack_batch(instances[:cfg.batch], catalog)
    print(f"\n== full train step (batch {cfg.batch}, desk profile) ==")
    for lane_name in ("python", "c"):
        lane = get_lane(lane_name)
        if lane is None:
            print(f"{lane_name:8s} not built")
            continue
        saved = {k: getattr(K, k) for k in (
            "conv1d_fwd", "conv1d_bwd", "att_fwd", "att_bwd", "masked_softmax",
            "masked_softmax_bwd", "weighted_pool", "weighted_pool_bwd",
            "scatter_add_rows", "adam_update")}
        for k in saved:
            setattr(K, k, getattr(lane, k))
        try:
            model = DebiasModel(cfg, vocab_size=len(vocab))
            hyper = AdamHyper(lr=cfg.lr)
            step = [0]

            def one_step():
                loss, cache = model.forward_batch(batch, training=True,
                                                  rng=make_rng(0, step[0]))
                model.backward_batch(cache)
                step[0] += 1
                adam_step(model.store, step[0], hyper)

            t = timeit(one_step, repeats)
            print(f"{lane_name:8s} {t * 1e3:9.3f} ms/step")
        finally:
            for k, v in saved.items():
                setattr(K, k, v)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=20)
    args = ap.parse_args()
    if get_lane("c") is None:
        print("compiled lane not available; numpy lane only")
    bench_kernels(args.repeats)
    bench_train_step(args.repeats)


if __name__ == "__main__":
    main()
