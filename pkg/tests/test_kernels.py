import os
import subprocess
import sys

import numpy as np
import pytest

from mfgcrn import kernels
from mfgcrn.kernels import _cell_py


def _inputs(rng, N, B, D, K, identity_first=True):
    graphs = rng.dirichlet(np.ones(N), (K, N))
    if identity_first:
        graphs[0] = np.eye(N)
    args = [rng.normal(size=(N, B, D)), rng.uniform(-1, 1, (N, B, D)), graphs]
    args += [rng.normal(0, 0.4, (K, 2 * D, D)) for _ in range(3)]
    args += [rng.normal(size=D) for _ in range(3)]
    return args, rng.normal(size=(N, B, D))


needs_compiled = pytest.mark.skipif(kernels.compiled_backend is None, reason="extension not built")


@needs_compiled
@pytest.mark.parametrize("shape", [(1, 1, 1, 1), (3, 2, 4, 2), (7, 5, 3, 4), (20, 8, 16, 5)])
@pytest.mark.parametrize("fixed", [0, 1, 2])
def test_compiled_matches_numpy(rng, shape, fixed):
    N, B, D, K = shape
    fixed = min(fixed, K)
    args, g = _inputs(rng, N, B, D, K)
    outs, grads = [], []
    for mod in (kernels.compiled_backend, _cell_py):
        out, cache = mod.cell_forward(*args)
        outs.append(out)
        grads.append(mod.cell_backward(g, cache, fixed))
    assert np.abs(outs[0] - outs[1]).max() <= 1e-12
    for a, b in zip(*grads):
        assert a.shape == b.shape
        assert np.abs(a - b).max() <= 1e-12


def test_fixed_graph_slots_report_zero_gradient(rng):
    N, K = 4, 3
    args, g = _inputs(rng, N, 2, 3, K)
    _, cache = kernels.cell_forward(*args)
    full = kernels.cell_backward(g, cache, 0)[2]
    _, cache = kernels.cell_forward(*args)
    part = kernels.cell_backward(g, cache, 2)[2]
    assert np.all(part[:2] == 0)
    assert np.abs(part[2:] - full[2:]).max() <= 1e-12


def test_float32_runs_on_numpy_kernel(rng):
    args, _ = _inputs(rng, 3, 2, 2, 2)
    args = [a.astype(np.float32) for a in args]
    out, (impl, _) = kernels.cell_forward(*args)
    assert impl is _cell_py and out.dtype == np.float32


def test_environment_forces_python_backend():
    env = dict(os.environ, MFGCRN_KERNELS="python")
    code = "from mfgcrn import kernels; print(kernels.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
