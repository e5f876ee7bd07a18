"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat N]

Small layers dominate this package's workloads, so call overhead matters as
much as arithmetic. The "routed" column is what ``plasticnn.kernels`` runs,
picking a backend by problem size.
"""
import argparse
import timeit

import numpy as np

from plasticnn import _pykernels, kernels

try:
    from plasticnn import _kernels
except ImportError:
    _kernels = None

SHAPES = [(4, 2, 1), (16, 8, 8), (64, 32, 32), (256, 128, 128)]  # batch, in, out
ACTS = {"relu": kernels.RELU, "tanh": kernels.TANH, "softmax": kernels.SOFTMAX}


def cases(impl, W, b, X, act):
    Z, H = _pykernels.dense_forward(W, b, X, act)
    dH = np.ones_like(H)
    D = _pykernels.activation_backward(Z, H, dH, act)
    return {
        "forward": lambda: impl.dense_forward(W, b, X, act),
        "act_backward": lambda: impl.activation_backward(Z, H, dH, act),
        "linear_backward": lambda: impl.linear_backward(W, X, D),
    }


def best_us(fn, repeat):
    number = 200
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number * 1e6


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled kernels not built; only the fallback is available")
    gen = np.random.default_rng(0)
    print(f"{'shape':>14} {'act':>8} {'op':>16} {'python us':>10} {'cython us':>10} "
          f"{'speedup':>8} {'routed us':>10}")
    for n, i, o in SHAPES:
        W = gen.normal(size=(o, i))
        b = gen.normal(size=o)
        X = gen.normal(size=(n, i))
        for name, act in ACTS.items():
            py = cases(_pykernels, W, b, X, act)
            cy = cases(_kernels, W, b, X, act) if _kernels is not None else {}
            routed = cases(kernels, W, b, X, act)
            for op, fn in py.items():
                t_py = best_us(fn, args.repeat)
                t_rt = best_us(routed[op], args.repeat)
                cols = f"{'-':>10} {'-':>8}"
                if op in cy:
                    t_cy = best_us(cy[op], args.repeat)
                    cols = f"{t_cy:10.2f} {t_py / t_cy:7.2f}x"
                print(f"{f'{n}x{i}->{o}':>14} {name:>8} {op:>16} {t_py:10.2f} {cols} {t_rt:10.2f}")


if __name__ == "__main__":
    main()
