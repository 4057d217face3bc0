"""Finite-difference verification of the full model's reverse-mode gradients."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .data import TE_DIM, Batch
from .graphs import distance_matrix, gaussian_proximity
from .model import ModelConfig, STMFGCRN


@dataclass
class SlotCheck:
    path: str
    size: int
    max_rel_error: float
    passed: bool


def random_batch(rng, B, N, C, lengths, scale=1.0) -> Batch:
    def te(L):
        out = np.zeros((B, L, TE_DIM))
        for b in range(B):
            for l in range(L):
                out[b, l, rng.integers(0, 7)] = 1
                out[b, l, 7 + rng.integers(0, 24)] = 1
                out[b, l, 31 + rng.integers(0, 4)] = 1
                out[b, l, 35] = rng.integers(0, 2)
        return out

    Lc, Lp, Lq = lengths
    return Batch(
        xc=rng.uniform(0, scale, (B, Lc, N, C)), xp=rng.uniform(0, scale, (B, Lp, N, C)),
        xq=rng.uniform(0, scale, (B, Lq, N, C)), tec=te(Lc), tep=te(Lp), teq=te(Lq),
        target=rng.uniform(0, scale, (B, N, C)), times=np.arange(B),
    )


def tiny_instance(seed=0, N=4, C=2, D=8, K_N=2, L=2, B=2, param_scale=0.5, output_scale=0.01,
                  fused=True):
    """Random small model and batch for gradient checking.

    Parameters are drawn from U(-param_scale, param_scale) so every gate path
    carries signal. The output layer is shrunk by ``output_scale``: central
    differences lose about one ulp of the loss per evaluation, so keeping the
    loss near 1e-2 keeps that round-off (~1e-13) under the 1e-8 absolute floor
    of the relative-error metric. Targets sit a fixed margin away from the
    predictions so no finite-difference step crosses the kink of |.|.
    """
    rng = np.random.default_rng(seed)
    widths = [3, 2, 4, 5][:K_N] + [3] * max(0, K_N - 4)
    names = [f"f{k}" for k in range(K_N)]
    cfg = ModelConfig(n_areas=N, n_channels=C, D=D, feature_names=names, feature_widths=widths,
                      L_c=L, L_p=L, L_q=L, fused=fused)
    feats = {n: rng.uniform(0, 1, (N, w)) for n, w in zip(names, widths)}
    prox = gaussian_proximity(distance_matrix(rng.uniform(0, 3000, (N, 2)))).matrix
    model = STMFGCRN(cfg, features=feats, proximity=prox, seed=seed)
    for path, v in model.store.items():
        model.store.set_value(path, rng.uniform(-param_scale, param_scale, v.shape))
    for path in ("f_fusion.w2", "f_fusion.b2"):
        model.store.set_value(path, model.store.value(path) * output_scale)
    batch = random_batch(rng, B, N, C, (L, L, L))
    pred = model.predict(batch)
    margin = rng.uniform(0.2, 1.0, pred.shape) * output_scale
    batch.target = pred + np.where(rng.random(pred.shape) < 0.5, -margin, margin)
    return model, batch


def check_gradients(model: STMFGCRN, batch: Batch, h=1e-5, tol=1e-4, paths=None):
    """Compare reverse accumulation with central differences slot by slot."""
    store = model.store
    analytic = {k: v.copy() for k, v in nx.reverse_accumulate(model.loss(batch), store).items()}
    numeric = nx.finite_diff_gradient(lambda s: float(model.loss(batch, track=False).value),
                                      store, h=h, paths=paths)
    out = []
    for path in numeric:
        err = nx.max_relative_error(analytic[path], numeric[path])
        out.append(SlotCheck(path, analytic[path].size, err, err <= tol))
    return out


def run(seed=0, h=1e-5, tol=1e-4, **kw):
    t0 = time.perf_counter()
    model, batch = tiny_instance(seed, **kw)
    results = check_gradients(model, batch, h, tol)
    return results, time.perf_counter() - t0
