"""Compare the compiled and NumPy kernel backends.

Times forward and backward passes of both cos-square forms and of soft-DTW
on every available backend and prints one CSV row per (kernel, size, backend).

    python benchmarks/bench_backends.py [--sizes 256,1024,4096] [--repeats 5]
"""

import argparse
import csv
import statistics
import sys
import time

import numpy as np

from cossqformer import kernels
from cossqformer import numkit as nk
from cossqformer.attention import AttentionConfig, cos_square_attention_linear, reweighted_attention_direct
from cossqformer.losses import soft_dtw


def median_ms(fn, repeats):
    fn()
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        samples.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(samples)


def attention_step(fn, q, k, v, causal):
    def run():
        ts = [nk.Tensor(a, requires_grad=True) for a in (q, k, v)]
        with nk.ComputationTape() as tape:
            loss = nk.sum(fn(*ts, AttentionConfig(causal=causal)).output)
        nk.backward(loss, tape)

    return run


def sdtw_step(y, yh):
    def run():
        a, b = nk.Tensor(y, requires_grad=True), nk.Tensor(yh, requires_grad=True)
        with nk.ComputationTape() as tape:
            loss = soft_dtw(a, b, 1.0)
        nk.backward(loss, tape)

    return run


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="256,1024,4096")
    ap.add_argument("--d", type=int, default=32)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--causal", action="store_true")
    ap.add_argument("--max-dtw", type=int, default=1024, help="largest n timed for soft-DTW")
    args = ap.parse_args(argv)
    sizes = [int(s) for s in args.sizes.split(",")]
    rng = np.random.default_rng(0)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["kernel", "n", "backend", "median_ms", "speedup_vs_python"])
    for n in sizes:
        q, k, v = (rng.uniform(-1, 1, (n, args.d)) for _ in range(3))
        jobs = {
            "direct": attention_step(reweighted_attention_direct, q, k, v, args.causal),
            "linear": attention_step(cos_square_attention_linear, q, k, v, args.causal),
        }
        if n <= args.max_dtw:  # quadratic, and slow on the pure-Python fallback
            jobs["soft_dtw"] = sdtw_step(rng.normal(size=n), rng.normal(size=n))
        for name, job in jobs.items():
            times = {}
            for backend in (b for b in kernels.available_backends() if b != "auto"):
                previous = kernels.use_backend(backend)
                try:
                    times[backend] = median_ms(job, args.repeats)
                finally:
                    kernels.use_backend(previous)
            for backend, ms in times.items():
                writer.writerow([name, n, backend, f"{ms:.3f}", f"{times['python'] / ms:.2f}"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
