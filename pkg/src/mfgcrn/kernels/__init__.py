"""Hot kernels for the multi-graph GRU step.

The compiled extension ``_cell`` is used when it was built; otherwise the
numpy implementation in ``_cell_py`` is selected. ``BACKEND`` names the choice.
Set ``MFGCRN_KERNELS=python`` to force the fallback. The compiled kernel is
float64 only, so other dtypes always run on the numpy kernel.
"""
import os

import numpy as np

from . import _cell_py

python_backend = _cell_py
compiled_backend = None

try:
    from . import _cell as compiled_backend  # type: ignore[attr-defined]
except ImportError:
    compiled_backend = None

if compiled_backend is not None and os.environ.get("MFGCRN_KERNELS", "").lower() != "python":
    backend = compiled_backend
    BACKEND = "compiled"
else:
    backend = _cell_py
    BACKEND = "python"


def cell_forward(x, h, graphs, w_r, w_u, w_c, b_r, b_u, b_c):
    """Returns (h_new, cache); ``cache`` is opaque and feeds :func:`cell_backward`."""
    impl = backend if h.dtype == np.float64 else _cell_py
    out, cache = impl.cell_forward(x, h, graphs, w_r, w_u, w_c, b_r, b_u, b_c)
    return out, (impl, cache)


def cell_backward(g, cache, fixed_graphs=0):
    impl, inner = cache
    return impl.cell_backward(g, inner, fixed_graphs)
