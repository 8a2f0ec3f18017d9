"""Time the compiled kernels against the numpy fallback on representative workloads.

    python benchmarks/bench_kernels.py --repeat 5
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from linksig import kernels
from linksig.chansynth import default_layout, sample_scatterers
from linksig.geometry import indoor_default


def _workloads(rng):
    cfg = indoor_default()
    fields, per_field = 4096, 32
    sx = rng.uniform(-10, 10, fields * per_field)
    sy = rng.uniform(-10, 10, fields * per_field)
    sx[np.hypot(sx, sy) < 1] += 3.0
    psi = rng.uniform(0, 2 * np.pi, sx.size)
    amp = np.ones(sx.size)
    ens_args = (sx, sy, psi, amp, per_field, cfg.transmitter(), cfg.legitimate_receiver(0.25),
                cfg.attack_node(0.25), cfg.pair_center(), cfg.wavenumber, cfg.big_distance_D,
                cfg.path_loss_exponent, False)

    layout = default_layout()
    field = sample_scatterers(cfg, 200, 1, center=layout.mean(axis=0), keep_out=layout)
    n = len(layout)
    links = [(a, b) for a in range(n) for b in range(n) if a != b]
    phases = np.stack([field.phases + 0.01 * m for m in range(5)])
    cir_args = (layout[:, 0].copy(), layout[:, 1].copy(), np.array([a for a, _ in links]),
                np.array([b for _, b in links]), field.positions[:, 0].copy(), field.positions[:, 1].copy(),
                field.amplitudes, phases, cfg.wavenumber, cfg.big_distance_D, 2.0, 2.9e-9, 2.998e8, 50)

    trials = 20000
    counts = rng.poisson(3.0, trials)
    px = rng.uniform(0, 10, counts.sum())
    py = rng.uniform(0, 10, counts.sum())
    offsets = np.concatenate([[0], np.cumsum(counts)])
    nodes = np.array([[2.0, 2.0], [7.0, 7.0], [2.0, 8.0]])
    cov_args = (px, py, offsets, nodes[:, 0], nodes[:, 1], 1.0)
    return {"ensemble_sums": ens_args, "cir_bank": cir_args, "coverage_hits": cov_args}


def _best_time(fn, args, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def _same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return bool(np.allclose(a, b, rtol=1e-9, atol=1e-12))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    if kernels.compiled_backend is None:
        print("compiled kernels not built; only the numpy backend is available")
    work = _workloads(np.random.default_rng(args.seed))
    print(f"{'kernel':<15} {'python s':>10} {'cython s':>10} {'speedup':>8}  agree")
    for name, fargs in work.items():
        t_py, r_py = _best_time(getattr(kernels.python_backend, name), fargs, args.repeat)
        if kernels.compiled_backend is None:
            print(f"{name:<15} {t_py:>10.4f} {'-':>10} {'-':>8}  -")
            continue
        t_c, r_c = _best_time(getattr(kernels.compiled_backend, name), fargs, args.repeat)
        print(f"{name:<15} {t_py:>10.4f} {t_c:>10.4f} {t_py / t_c:>7.1f}x  {_same(r_py, r_c)}")


if __name__ == "__main__":
    main()
