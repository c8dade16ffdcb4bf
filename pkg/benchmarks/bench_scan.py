#!/usr/bin/env python3
"""Benchmark the compiled scan kernel against the pure-torch fallback.

Forward and forward+backward timings over shapes that occur in practice
(batch x channels x flattened spatial sequence). Run after building the
extension:

    python benchmarks/bench_scan.py
"""

import time

import torch

from changekit.scan import COMPILED_AVAILABLE, bidirectional_scan

SHAPES = [
    (1, 16, 4096),   # finest stage, single image
    (8, 16, 4096),   # finest stage, training batch
    (8, 32, 1024),   # second stage
    (8, 64, 256),    # third stage
]


def time_call(fn, repeats: int) -> float:
    fn()  # warm-up
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats * 1000.0


def bench(backend: str, shape, repeats=5):
    n, c, length = shape
    torch.manual_seed(0)
    x = torch.randn(n, c, length)
    decay = torch.sigmoid(torch.randn(c))

    fwd = time_call(lambda: bidirectional_scan(x, decay, backend=backend), repeats)

    def train_step():
        xg = x.clone().requires_grad_(True)
        bidirectional_scan(xg, decay, backend=backend).sum().backward()

    fwd_bwd = time_call(train_step, repeats)
    return fwd, fwd_bwd


def main():
    backends = ["torch"] + (["compiled"] if COMPILED_AVAILABLE else [])
    if not COMPILED_AVAILABLE:
        print("compiled extension not built; benchmarking the fallback only")

    print(f"{'shape':>16} {'backend':>9} {'fwd ms':>9} {'fwd+bwd ms':>11} {'speedup':>8}")
    for shape in SHAPES:
        base = None
        for backend in backends:
            fwd, fwd_bwd = bench(backend, shape)
            if backend == "torch":
                base = fwd_bwd
            speed = f"{base / fwd_bwd:6.1f}x" if backend == "compiled" else "      -"
            print(f"{str(shape):>16} {backend:>9} {fwd:9.2f} {fwd_bwd:11.2f} {speed:>8}")


if __name__ == "__main__":
    main()
