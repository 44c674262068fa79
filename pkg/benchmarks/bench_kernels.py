"""Compare the compiled and numpy gradient kernels.

    python3 benchmarks/bench_kernels.py [--repeats N]

Times `clipped_grad_sum` (the per-step hot path of DPSGD) and
`example_grads` for both backends on logistic and MLP models, checks that
the two agree, and prints one table row per case.
"""

import argparse
import timeit

import numpy as np

from aca_dp import kernels
from aca_dp.models import ModelSpec, init_model

CASES = [
    ("logistic d=20 B=64", ModelSpec("logistic", 20, 2), 64),
    ("logistic d=784 B=256", ModelSpec("logistic", 784, 10), 256),
    ("mlp d=20 H=64 B=64", ModelSpec("mlp", 20, 2, 64), 64),
    ("mlp d=784 H=128 B=256", ModelSpec("mlp", 784, 10, 128), 256),
]


def bench(fn, repeats):
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat=repeats, number=number)) / number


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the numpy backend is available")
    rng = np.random.default_rng(0)
    print(f"{'case':24s} {'kernel':18s} " + " ".join(f"{b:>12s}" for b in backends) + "   speedup  max|diff|")
    for name, spec, B in CASES:
        theta = init_model(spec, 0, 0.1)
        X = rng.standard_normal((B, spec.d_in))
        y = rng.integers(0, spec.num_classes, B)
        for kname, call in (
            ("clipped_grad_sum", lambda m: m.clipped_grad_sum(theta, X, y, spec.d_in, spec.hidden, spec.num_classes, 1.0)),
            ("example_grads", lambda m: m.example_grads(theta, X, y, spec.d_in, spec.hidden, spec.num_classes)),
        ):
            times, outs = [], []
            for b in backends:
                mod = kernels.get_backend(b)
                outs.append(call(mod)[0])
                times.append(bench(lambda: call(mod), args.repeats))
            diff = float(np.max(np.abs(outs[0] - outs[-1])))
            speed = times[backends.index("python")] / times[0] if len(backends) > 1 else 1.0
            cells = " ".join(f"{t * 1e6:10.1f}us" for t in times)
            print(f"{name:24s} {kname:18s} {cells}   {speed:6.2f}x  {diff:.1e}")


if __name__ == "__main__":
    main()
