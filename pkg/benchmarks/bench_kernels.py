"""Time the compiled kernels against the numpy fallback on training-sized inputs.

Usage: python3 benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from normcraft._kernels import get_backend


def cases(rng):
    # shapes seen in a batch-16 step of the desk network (128-point patches, 32 neighbors)
    pts = rng.standard_normal((16, 128, 3))
    feats = rng.standard_normal((16, 85, 32))
    grad = rng.standard_normal((16, 128, 32, 32))
    idx = rng.integers(0, 128, size=(16, 128, 32))
    pooled = rng.standard_normal((16 * 128, 32, 64))
    pooled_grad = rng.standard_normal((16 * 128, 64))
    arg = rng.integers(0, 32, size=(16 * 128, 64))
    return {
        "knn xyz (16x128, k=32)": lambda b: b.knn(pts, pts, 32),
        "knn features (16x85x32, k=16)": lambda b: b.knn(feats, feats, 16),
        "scatter_add (16x128x32x32)": lambda b: b.scatter_add(grad, idx, 128),
        "max_reduce (2048x32x64)": lambda b: b.max_reduce(pooled),
        "max_reduce_backward (2048x64)": lambda b: b.max_reduce_backward(pooled_grad, arg, 32),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    backends = [get_backend("python")]
    try:
        backends.append(get_backend("native"))
    except ImportError as exc:
        print(f"native backend unavailable: {exc}")
    rng = np.random.default_rng(0)
    print(f"{'kernel':34s}" + "".join(f"{b.name + ' ms':>12s}" for b in backends) + f"{'speedup':>10s}")
    for label, fn in cases(rng).items():
        times = [min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)) * 1e3 for b in backends]
        speed = f"{times[0] / times[-1]:9.1f}x" if len(times) > 1 else ""
        print(f"{label:34s}" + "".join(f"{t:12.3f}" for t in times) + speed)


if __name__ == "__main__":
    main()
