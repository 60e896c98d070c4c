"""Compare the compiled attention kernel with the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--train-steps N]

Prints forward and backward timings per backend for a few shapes, then the
wall time of a short copy-task training run under each backend.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from mhelab import kernels
from mhelab.model import ModelConfig, build_model
from mhelab.train import CopyTask, TrainConfig, train

SHAPES = [(128, 32, 8), (64, 128, 16), (16, 512, 64)]


def best_of(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def bench_kernels(repeat: int) -> None:
    rng = np.random.default_rng(0)
    print(f"{'shape (N,L,d)':<16} {'dtype':<8} {'causal':<7} {'backend':<9} {'fwd ms':>8} {'bwd ms':>8}")
    for shape in SHAPES:
        for dtype in (np.float32, np.float64):
            q, k, v, g = (rng.normal(size=shape).astype(dtype) for _ in range(4))
            for causal in (False, True):
                for name in sorted(kernels.BACKENDS):
                    kernels.use_backend(name)
                    out, probs = kernels.attention_forward(q, k, v, causal)
                    fwd = best_of(lambda: kernels.attention_forward(q, k, v, causal), repeat)
                    bwd = best_of(lambda: kernels.attention_backward(q, k, v, probs, g, causal), repeat)
                    print(f"{str(shape):<16} {np.dtype(dtype).name:<8} {str(causal):<7} {name:<9} "
                          f"{fwd * 1e3:8.3f} {bwd * 1e3:8.3f}")


def bench_training(steps: int) -> None:
    print(f"\ncopy-task training, {steps} steps, mha, fp32")
    for name in sorted(kernels.BACKENDS):
        kernels.use_backend(name)
        model = build_model(ModelConfig(variant="mha"))
        report = train(model, CopyTask(), TrainConfig(steps=steps, warmup_steps=0))
        print(f"  {name:<9} {report.wall_time:7.2f} s   final loss {report.final_loss:.4f}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--train-steps", type=int, default=100)
    args = ap.parse_args()
    print("backends available:", ", ".join(sorted(kernels.BACKENDS)))
    bench_kernels(args.repeat)
    if args.train_steps:
        bench_training(args.train_steps)


if __name__ == "__main__":
    main()
