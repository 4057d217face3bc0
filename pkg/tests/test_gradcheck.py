import numpy as np

from mfgcrn import gradcheck
from mfgcrn import numerics as nx


def test_every_slot_matches_finite_differences():
    results, seconds = gradcheck.run(seed=0, h=1e-5, tol=1e-4, N=4, D=8, K_N=2, L=2)
    assert len(results) > 20
    bad = [(r.path, r.max_rel_error) for r in results if not r.passed]
    assert not bad, bad
    assert seconds < 60


def test_reference_path_also_matches():
    model, batch = gradcheck.tiny_instance(seed=1, N=3, D=3, K_N=1, L=2, fused=False)
    results = gradcheck.check_gradients(model, batch, paths=["enc.c.w_u", "attn.f0.w1", "sent.f0.w2"])
    assert all(r.passed for r in results)


def test_check_detects_a_broken_gradient():
    model, batch = gradcheck.tiny_instance(seed=2, N=3, D=3, K_N=1, L=1)
    analytic = nx.reverse_accumulate(model.loss(batch), model.store)
    wrong = analytic["f_fusion.b2"] * 1.01
    numeric = nx.finite_diff_gradient(lambda s: model.loss(batch, track=False).value, model.store, 1e-5)
    assert nx.max_relative_error(wrong, numeric["f_fusion.b2"]) > 1e-4
    assert np.isfinite(numeric["se"]).all()
