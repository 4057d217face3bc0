import math

import numpy as np
import pytest

from mfgcrn.data import CPTConfig, encode_timestamps, gather_batch
from mfgcrn.errors import ConfigError, ContractError, DivergenceError
from mfgcrn.experiment import Variant, build_model, model_config, run_ablation, run_once
from mfgcrn.numerics import ParameterStore
from mfgcrn.train import (Adam, EarlyStopping, EvalReport, Split, TrainConfig, error_metrics,
                          evaluate, evaluate_baselines, heuristic_baseline, mean_loss, train)

FAST = TrainConfig(max_epochs=2, patience=2, batch_size=64)


# ----------------------------------------------------------------------------
# optimiser


def test_adam_zero_gradient_is_fixed_point():
    s = ParameterStore()
    s.add("w", [1.0, -2.0])
    opt = Adam(s)
    for _ in range(3):
        opt.step({"w": np.zeros(2)})
    assert np.array_equal(s.value("w"), [1.0, -2.0])


def test_adam_first_step_is_minus_lr():
    s = ParameterStore()
    s.add("w", [0.0])
    Adam(s, lr=0.01).step({"w": np.ones(1)})
    assert abs(s.value("w")[0] + 0.01 / (1 + 1e-8)) <= 1e-15


def test_adam_converges_on_quadratic():
    s = ParameterStore()
    s.add("w", [5.0])
    opt = Adam(s, lr=0.1)
    for _ in range(500):
        opt.step({"w": 2 * (s.value("w") - 1.5)})
    assert abs(s.value("w")[0] - 1.5) < 1e-3


def test_train_config_validation():
    with pytest.raises(ConfigError) as err:
        TrainConfig(patience=0, batch_size=0)
    assert len(err.value.problems) == 2


# ----------------------------------------------------------------------------
# early stopping


def test_early_stopping_counter():
    es = EarlyStopping(3)
    stops = [es.update(e, v) for e, v in enumerate([5.0, 4.0, 4.0, 4.5, 4.2], 1)]
    assert stops == [False, False, False, False, True] and es.best_epoch == 2



@pytest.mark.parametrize("patience", [1, 2, 4])
def test_worsening_validation_stops_and_restores(small_prep, patience):
    model = build_model(small_prep, model_config(small_prep, Variant("p", []), D=4), 0)
    snaps = {}

    def val_fn(m, epoch):
        snaps[epoch] = m.store.snapshot()
        return 1.0 + epoch

    cfg = TrainConfig(max_epochs=50, patience=patience, batch_size=128)
    res = train(model, small_prep.splits["train"], small_prep.splits["val"], cfg, 0, val_fn=val_fn)
    assert res.best_epoch == 1 and res.stopped_epoch == 1 + patience
    assert len(res.curve) == 2 + patience
    assert all(np.array_equal(v, snaps[1][p]) for p, v in model.store.items())
    assert not all(np.array_equal(v, snaps[res.stopped_epoch][p]) for p, v in model.store.items())


def test_divergence_names_epoch(small_prep):
    model = build_model(small_prep, model_config(small_prep, Variant("p", []), D=4), 0)
    model.store.set_value("f_fusion.b2", np.full(2, np.nan))
    with pytest.raises(DivergenceError, match="epoch 1, batch 0"):
        train(model, small_prep.splits["train"], small_prep.splits["val"], FAST)


def test_empty_split_rejected(small_prep):
    model = build_model(small_prep, model_config(small_prep, Variant("p", []), D=4), 0)
    empty = Split(small_prep.values, small_prep.te, np.array([], dtype=np.int64), small_prep.cpt)
    with pytest.raises(ContractError):
        train(model, empty, small_prep.splits["val"], FAST)
    with pytest.raises(ContractError):
        evaluate(model, empty, small_prep.stats.demand)


def test_training_is_bitwise_deterministic(small_prep):
    a = run_once(small_prep, Variant("x", ["landuse"]), FAST, 3, D=4)
    b = run_once(small_prep, Variant("x", ["landuse"]), FAST, 3, D=4)
    assert a.curve == b.curve and a.rmse == b.rmse and a.mae == b.mae


def test_small_run_reduces_validation_loss(small_prep):
    model = build_model(small_prep, model_config(small_prep, Variant("x", ["landuse"]), D=8), 0)
    res = train(model, small_prep.splits["train"], small_prep.splits["val"],
                TrainConfig(max_epochs=6, patience=6), 0)
    assert res.best_val <= 0.7 * res.curve[0][2]


# ----------------------------------------------------------------------------
# evaluation


def test_error_metric_examples():
    t = np.arange(8.0)
    assert error_metrics(t, t) == (0.0, 0.0)
    assert error_metrics(t + 2, t) == (2.0, 2.0)
    rmse, mae = error_metrics([0.0, 4.0], [0.0, 0.0])
    assert mae == 2.0 and abs(rmse - math.sqrt(8)) <= 1e-15
    with pytest.raises(ContractError):
        error_metrics([], [])


def test_evaluation_ignores_batch_partition(small_prep):
    model = build_model(small_prep, model_config(small_prep, Variant("x", ["noise"]), D=4), 1)
    split, stats = small_prep.splits["test"], small_prep.stats.demand
    reps = [evaluate(model, split, stats, bs) for bs in (1, 7, 64, 10_000)]
    for r in reps[1:]:
        assert abs(r.rmse - reps[0].rmse) <= 1e-9 and abs(r.mae - reps[0].mae) <= 1e-9
    pred = stats.invert(model.predict(split.batch()))
    assert abs(error_metrics(pred, stats.invert(split.batch().target))[0] - reps[0].rmse) <= 1e-9


def test_multi_seed_mean_is_arithmetic():
    runs = [(0, 1.0, 0.5), (1, 2.0, 0.25), (2, 4.5, 0.75)]
    rep = EvalReport.aggregate(runs)
    assert rep.rmse == 7.5 / 3 and rep.mae == 0.5 and rep.per_seed == runs


def test_mean_loss_matches_direct_l1(small_prep):
    model = build_model(small_prep, model_config(small_prep, Variant("x", []), D=4), 0)
    b = small_prep.splits["val"].batch()
    direct = float(np.mean(np.abs(model.predict(b) - b.target)))
    assert abs(mean_loss(model, small_prep.splits["val"], 50) - direct) <= 1e-12


# ----------------------------------------------------------------------------
# baselines


def _series_setup(values, cpt):
    ts = np.datetime64("2019-01-07T00:00") + np.arange(len(values)) * np.timedelta64(cpt.interval_minutes, "m")
    return encode_timestamps(ts)


def test_constant_series_baselines_exact():
    cpt = CPTConfig(3, 2, 1, 60)
    values = np.full((cpt.T_q * 2, 2, 2), 7.0)
    te = _series_setup(values, cpt)
    times = np.arange(cpt.min_history, len(values))
    for rep in evaluate_baselines(values, te, times, cpt).values():
        assert rep.rmse == 0.0 and rep.mae == 0.0


def test_closeness_window_example():
    cpt = CPTConfig(6, 1, 1, 60)
    values = np.zeros((cpt.T_q + 10, 1, 1))
    t = cpt.T_q + 6
    values[t - 6:t, 0, 0] = [1, 2, 3, 4, 5, 6]
    values[t] = 100.0
    b = gather_batch(values, _series_setup(values, cpt), [t], cpt)
    assert heuristic_baseline("closeness_mean", b)[0, 0, 0] == 3.5
    assert heuristic_baseline("last_repeat", b)[0, 0, 0] == 6.0
    with pytest.raises(ContractError):
        heuristic_baseline("median", b)


def test_weekly_periodic_series(rng):
    cpt = CPTConfig(3, 2, 2, 60)
    week = rng.uniform(0, 10, (cpt.T_q, 3, 2))
    values = np.concatenate([week] * 4)
    te = _series_setup(values, cpt)
    times = np.arange(cpt.min_history, len(values))
    reps = evaluate_baselines(values, te, times, cpt)
    assert reps["trend_mean"].rmse <= 1e-12
    assert reps["closeness_mean"].rmse > 0.1


def test_baselines_never_read_the_target(rng):
    cpt = CPTConfig(2, 1, 1, 60)
    values = rng.uniform(0, 1, (cpt.T_q + 5, 2, 1))
    te = _series_setup(values, cpt)
    t = cpt.T_q + 3
    before = {k: heuristic_baseline(k, gather_batch(values, te, [t], cpt)) for k in
              ("trend_mean", "period_mean", "closeness_mean", "last_repeat")}
    values[t] += 1000.0
    for k, v in before.items():
        assert np.array_equal(heuristic_baseline(k, gather_batch(values, te, [t], cpt)), v)
    assert np.array_equal(before["last_repeat"][0], values[t - 1])


# ----------------------------------------------------------------------------
# ablation runner


def test_ablation_single_and_duplicate(small_prep):
    table, outcomes = run_ablation(small_prep, [Variant("only", ["landuse"])], FAST, [0], D=4)
    assert len(table) == 1 and len(outcomes) == 1
    dup = [Variant("a", ["noise"]), Variant("b", ["noise"])]
    table, _ = run_ablation(small_prep, dup, FAST, [0, 1], D=4)
    assert table[0][1].rmse == table[1][1].rmse
    assert [r[1:] for r in table[0][1].per_seed] == [r[1:] for r in table[1][1].per_seed]


def test_ablation_parallel_matches_serial(small_prep):
    vs = [Variant("KN=0", []), Variant("+landuse", ["landuse"])]
    serial, _ = run_ablation(small_prep, vs, FAST, [0, 1], D=4)
    parallel, _ = run_ablation(small_prep, vs, FAST, [0, 1], D=4, jobs=2)
    assert [(v.name, r.rmse) for v, r in serial] == [(v.name, r.rmse) for v, r in parallel]


def test_unknown_variant_feature(small_prep):
    with pytest.raises(ConfigError):
        model_config(small_prep, Variant("bad", ["elevation"]))



@pytest.mark.slow
def test_default_scenario_validation_loss_drops():
    from mfgcrn.config import DESK_MODEL
    from mfgcrn.experiment import Dataset, prepare
    from mfgcrn.synthetic import Scenario, default_splits, generate_synthetic

    syn = generate_synthetic(Scenario(), 0)
    ds = Dataset(syn.series, syn.features, syn.holidays, syn.coords)
    prep = prepare(ds, CPTConfig(6, 7, 3, 15), default_splits(syn.scenario), (8, 21))
    model = build_model(prep, model_config(prep, Variant("all", ["landuse", "poi", "noise"]),
                                           DESK_MODEL["D"]), 0)
    res = train(model, prep.splits["train"], prep.splits["val"], TrainConfig(max_epochs=20, patience=20), 0)
    assert min(v for _, _, v in res.curve[1:21]) <= 0.7 * res.curve[0][2]
