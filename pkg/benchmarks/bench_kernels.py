"""Compare the compiled and numpy contrastive kernels.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--M 256]

Prints one row per (kernel, b, D) with the best-of-``repeat`` wall time of each
backend, the speed-up, and the largest absolute difference between their outputs.
"""

import argparse
import timeit

import numpy as np
from threadpoolctl import threadpool_limits

from igcl import kernels

SIZES = [(64, 16), (256, 16), (256, 64), (1024, 32), (2048, 64)]


def _icl_inputs(rng, b, D):
    return (
        rng.standard_normal((b, D)),
        rng.standard_normal((b, D)),
        rng.uniform(0.01, 1.0, (b, D)),
        0.5,
    )


def _mc_inputs(rng, b, D, M):
    Z = rng.standard_normal((b, D))
    return Z, Z + 0.3 * rng.standard_normal((M, b, D)), 0.5


def _time(fn, args, repeat):
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def _max_diff(a, b):
    return max(float(np.max(np.abs(np.asarray(x) - np.asarray(y)))) for x, y in zip(a, b))


def run(repeat: int, M: int) -> list[dict]:
    found = kernels.backends()
    if "cython" not in found:
        print("compiled extension not built; only the numpy backend is available")
    py = found["python"]
    cy = found.get("cython")
    rng = np.random.default_rng(0)
    rows = []
    for name in ("icl_upper", "contrast_samples"):
        for b, D in SIZES:
            if name == "icl_upper":
                args = _icl_inputs(rng, b, D)
            else:
                if b > 256:
                    continue  # the numpy path materialises M * b^2 logits
                args = _mc_inputs(rng, b, D, M)
            t_py = _time(getattr(py, name), args, repeat)
            row = {"kernel": name, "b": b, "D": D, "python_s": t_py}
            if cy is not None:
                row["cython_s"] = _time(getattr(cy, name), args, repeat)
                row["speedup"] = t_py / row["cython_s"]
                row["max_abs_diff"] = _max_diff(getattr(py, name)(*args), getattr(cy, name)(*args))
            rows.append(row)
    return rows


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--M", type=int, default=256, help="samples per contrast_samples call")
    ap.add_argument("--threads", type=int, default=1, help="BLAS threads for the numpy backend")
    args = ap.parse_args(argv)
    with threadpool_limits(args.threads):
        rows = run(args.repeat, args.M)
    print(f"{'kernel':<17}{'b':>6}{'D':>5}{'numpy s':>12}{'cython s':>12}{'speedup':>9}{'max|diff|':>11}")
    for r in rows:
        print(
            f"{r['kernel']:<17}{r['b']:>6}{r['D']:>5}{r['python_s']:>12.5f}"
            f"{r.get('cython_s', float('nan')):>12.5f}{r.get('speedup', float('nan')):>9.2f}"
            f"{r.get('max_abs_diff', float('nan')):>11.1e}"
        )


if __name__ == "__main__":
    main()
