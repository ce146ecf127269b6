"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints the median wall time per kernel for both backends and the speedup.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from ecgc import kernels
from ecgc.attributes import qrs_energy


def _median_time(fn, repeat: int) -> float:
    fn()  # warm-up
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def cases(rng: np.random.Generator):
    x = rng.normal(size=(64, 12, 5000)).astype(np.float32)
    h = rng.normal(size=(64, 16, 625)).astype(np.float32)
    w = rng.normal(size=(16, 12, 15)).astype(np.float32)
    scale = np.ones(16, np.float32)
    shift = np.zeros(16, np.float32)
    _, cols = kernels.conv1d_forward(x, w, 8, 7, backend=kernels.get_backend("python"))
    dcols = rng.normal(size=cols.shape).astype(np.float32)
    _, xhat, inv = kernels.layer_norm_forward(h, scale, shift, 1e-5)
    g = rng.normal(size=h.shape).astype(np.float32)
    t = np.arange(30 * 500) / 500.0
    ecg = np.sin(2 * np.pi * 1.2 * t) ** 63
    _, mwi = qrs_energy(ecg, 500)
    return {
        "im2col": lambda be: be.im2col(x, 15, 8, 7),
        "col2im": lambda be: be.col2im(dcols, 64, 12, 5000, 15, 8, 7),
        "layer_norm_forward": lambda be: be.layer_norm_forward(h, scale, shift, 1e-5),
        "layer_norm_backward": lambda be: be.layer_norm_backward(g, xhat, inv, scale),
        "threshold_peaks": lambda be: be.threshold_peaks(mwi, 100, 0.25 * mwi[:1000].max(), 0.5 * mwi[:1000].mean()),
    }


def main(argv=None) -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args(argv)
    py = kernels.get_backend("python")
    if not kernels.compiled_available():
        print("compiled extension not built; only the numpy fallback is available")
    compiled = kernels.get_backend("compiled") if kernels.compiled_available() else None
    print(f"{'kernel':<22}{'python (ms)':>14}{'compiled (ms)':>16}{'speedup':>10}")
    for name, fn in cases(np.random.default_rng(0)).items():
        t_py = _median_time(lambda: fn(py), args.repeat)
        if compiled is None:
            print(f"{name:<22}{1e3 * t_py:>14.2f}{'-':>16}{'-':>10}")
            continue
        t_c = _median_time(lambda: fn(compiled), args.repeat)
        print(f"{name:<22}{1e3 * t_py:>14.2f}{1e3 * t_c:>16.2f}{t_py / t_c:>9.1f}x")


if __name__ == "__main__":
    main()
