#!/usr/bin/env python3
"""Time the numba kernels against the pure-numpy fallback.

Shapes follow the default training profile: batch 32, 48 input bands,
64x64 stacks, conv widths 32/64/128.

    python benchmarks/bench_kernels.py [--repeat 5]
"""
import argparse
import time

import numpy as np

from wavemorph import _kernels, wavelet


def best_of(fn, repeat):
    fn()  # warm-up, includes JIT compilation for numba
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    x1 = rng.standard_normal((32, 48, 64, 64)).astype(np.float32)
    w1 = (rng.standard_normal((32, 48, 3, 3)) * 0.07).astype(np.float32)
    b1 = np.zeros(32, np.float32)
    d1 = rng.standard_normal((32, 32, 64, 64)).astype(np.float32)
    x2 = rng.standard_normal((32, 32, 32, 32)).astype(np.float32)
    w2 = (rng.standard_normal((64, 32, 3, 3)) * 0.08).astype(np.float32)
    b2 = np.zeros(64, np.float32)
    d2 = rng.standard_normal((32, 64, 32, 32)).astype(np.float32)
    img = rng.random((64, 64))
    spec = wavelet.build_filters("haar")
    return {
        "conv1 forward": lambda be: be.conv2d_forward(x1, w1, b1),
        "conv1 backward (no dx)": lambda be: be.conv2d_backward(d1, x1, w1, False),
        "conv2 forward": lambda be: be.conv2d_forward(x2, w2, b2),
        "conv2 backward": lambda be: be.conv2d_backward(d2, x2, w2, True),
        "maxpool forward": lambda be: be.maxpool2_forward(d1),
        "filter 64x64 x 48": lambda be: [be.circular_filter(img, spec.hi, 4, axis) for axis in (-1, -2)
                                         for _ in range(24)],
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if not _kernels.HAS_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    rng = np.random.default_rng(0)
    backends = [_kernels.get_backend("numpy"), _kernels.get_backend("numba")]
    print(f"{'kernel':<26}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, fn in cases(rng).items():
        t_np, t_nb = (best_of(lambda: fn(be), args.repeat) for be in backends)
        print(f"{name:<26}{t_np * 1e3:>12.2f}{t_nb * 1e3:>12.2f}{t_np / t_nb:>9.2f}x")


if __name__ == "__main__":
    main()
