"""Compare the compiled LSTM kernels against the pure-numpy fallback.

Runs matched forward/backward workloads through both backends, checks they
agree, and prints a timing table. Usage:

    python3 benchmarks/bench_lstm.py [--repeats 5]
"""
import argparse
import time

import numpy as np

from respsound.nn import _lstm_py

try:
    from respsound.nn import _lstm_cy
except ImportError:
    _lstm_cy = None

WORKLOADS = [
    # (hidden, input_dim, steps)
    (4, 13, 25),
    (16, 13, 98),
    (16, 100, 98),
    (64, 13, 98),
    (64, 100, 400),
]


def run_backend(backend, W, b, xs, dys, repeats):
    fwd = bwd = float("inf")
    outputs = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        gates, cs, ys = backend.lstm_forward(W, b, xs)
        t1 = time.perf_counter()
        grads = backend.lstm_backward(W, xs, np.asarray(gates),
                                      np.asarray(cs), np.asarray(ys), dys)
        t2 = time.perf_counter()
        fwd, bwd = min(fwd, t1 - t0), min(bwd, t2 - t1)
        outputs = [np.asarray(a) for a in (gates, cs, ys, *grads)]
    return fwd, bwd, outputs


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=5,
                        help="timing repeats per workload; best is kept")
    args = parser.parse_args()

    if _lstm_cy is None:
        print("compiled backend unavailable; timing the fallback only")

    header = (f"{'H':>4} {'D':>4} {'T':>5}  {'numpy fwd':>10} {'numpy bwd':>10}"
              f"  {'cython fwd':>10} {'cython bwd':>10}  {'speedup':>7}")
    print(header)
    print("-" * len(header))
    rng = np.random.default_rng(0)
    for hidden, dim, steps in WORKLOADS:
        W = rng.standard_normal((4 * hidden, dim + hidden)) * 0.1
        b = rng.standard_normal(4 * hidden) * 0.1
        xs = rng.standard_normal((steps, dim))
        dys = rng.standard_normal((steps, hidden))
        pf, pb, py_out = run_backend(_lstm_py, W, b, xs, dys, args.repeats)
        row = f"{hidden:>4} {dim:>4} {steps:>5}  {pf * 1e3:>8.2f}ms {pb * 1e3:>8.2f}ms"
        if _lstm_cy is not None:
            cf, cb, cy_out = run_backend(_lstm_cy, W, b, xs, dys, args.repeats)
            worst = max(float(np.max(np.abs(a - c)))
                        for a, c in zip(py_out, cy_out))
            assert worst <= 1e-10, f"backends disagree by {worst:.1e}"
            speedup = (pf + pb) / (cf + cb)
            row += (f"  {cf * 1e3:>8.2f}ms {cb * 1e3:>8.2f}ms"
                    f"  {speedup:>6.1f}x")
        print(row)
    if _lstm_cy is not None:
        print("\nbackends agree on all workloads (max abs diff <= 1e-10)")


if __name__ == "__main__":
    main()
