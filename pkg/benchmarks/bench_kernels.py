"""Compare the compiled and numpy multi-graph GRU kernels.

Times forward+backward of one cell step at training-sized shapes and checks
that both backends agree. Run with ``python benchmarks/bench_kernels.py``.
"""
import argparse
import timeit

import numpy as np

from mfgcrn import kernels
from mfgcrn.kernels import _cell_py


def make_inputs(N, B, D, K, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(N, B, D))
    h = rng.normal(size=(N, B, D))
    graphs = rng.random((K, N, N))
    graphs /= graphs.sum(-1, keepdims=True)
    graphs[0] = np.eye(N)
    weights = [rng.normal(size=(K, 2 * D, D)) * 0.3 for _ in range(3)]
    biases = [rng.normal(size=D) for _ in range(3)]
    grad = rng.normal(size=(N, B, D))
    return (x, h, graphs, *weights, *biases), grad


def time_backend(mod, args, grad, fixed, repeat):
    def step():
        _, cache = mod.cell_forward(*args)
        mod.cell_backward(grad, cache, fixed)

    step()
    return min(timeit.repeat(step, number=repeat, repeat=5)) / repeat


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=100)
    ap.add_argument("--shapes", default="20,32,16,5;20,32,64,5;102,32,16,5;4,2,8,4")
    a = ap.parse_args()
    compiled = kernels.compiled_backend
    print(f"compiled backend available: {compiled is not None}")
    print(f"{'N':>5}{'B':>5}{'D':>5}{'K':>4}{'numpy ms':>12}{'compiled ms':>14}{'speedup':>9}{'max diff':>11}")
    for spec in a.shapes.split(";"):
        N, B, D, K = map(int, spec.split(","))
        args, grad = make_inputs(N, B, D, K)
        t_py = time_backend(_cell_py, args, grad, 2, a.repeat) * 1e3
        if compiled is None:
            print(f"{N:>5}{B:>5}{D:>5}{K:>4}{t_py:>12.3f}{'-':>14}{'-':>9}{'-':>11}")
            continue
        t_c = time_backend(compiled, args, grad, 2, a.repeat) * 1e3
        out_py = _cell_py.cell_backward(grad, _cell_py.cell_forward(*args)[1], 2)
        out_c = compiled.cell_backward(grad, compiled.cell_forward(*args)[1], 2)
        diff = max(float(np.abs(p - c).max()) for p, c in zip(out_py, out_c))
        print(f"{N:>5}{B:>5}{D:>5}{K:>4}{t_py:>12.3f}{t_c:>14.3f}{t_py / t_c:>9.2f}{diff:>11.1e}")


if __name__ == "__main__":
    main()
