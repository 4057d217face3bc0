"""Glue between datasets, models and the training loop."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import (ArealFeature, CPTConfig, DemandSeries, NormalizationStats, encode_timestamps,
                   fit_minmax, sample_times)
from .errors import ConfigError
from .graphs import distance_matrix, gaussian_proximity
from .model import ModelConfig, STMFGCRN
from .train import EvalReport, Split, TrainConfig, evaluate, evaluate_baselines, train

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    series: DemandSeries
    features: list  # ArealFeature
    holidays: set
    coords: np.ndarray
    coord_kind: str = "xy"

    def feature(self, name) -> ArealFeature:
        for f in self.features:
            if f.name == name:
                return f
        raise ConfigError(f"unknown areal feature {name!r}; have {[f.name for f in self.features]}")


@dataclass
class Prepared:
    dataset: Dataset
    cpt: CPTConfig
    stats: NormalizationStats
    values: np.ndarray  # normalised demand
    te: np.ndarray
    splits: dict  # name -> Split
    raw_times: dict  # name -> target indices (evaluation filter)
    features: dict  # name -> normalised matrix
    proximity: np.ndarray


def prepare(ds: Dataset, cpt: CPTConfig, spans: dict, target_hours=(0, 23),
            filter_training=True, include_diagonal_in_sigma=True) -> Prepared:
    """Fit normalisation on the training span and index every split."""
    if cpt.interval_minutes != ds.series.interval_minutes:
        raise ConfigError(f"config interval {cpt.interval_minutes} != data interval "
                          f"{ds.series.interval_minutes}")
    stats = fit_minmax(ds.series, ds.features, spans["train"])
    values = stats.demand.apply(ds.series.values)
    te = encode_timestamps(ds.series.timestamps, ds.holidays)
    splits, times = {}, {}
    for name in ("train", "val", "test"):
        hours = target_hours if (name != "train" or filter_training) else (0, 23)
        t = sample_times(ds.series, cpt, hours, spans[name])
        splits[name] = Split(values, te, t, cpt)
        times[name] = t
    feats = {f.name: stats.features[f.name].apply(f.matrix) for f in ds.features}
    prox = gaussian_proximity(distance_matrix(ds.coords, ds.coord_kind), include_diagonal_in_sigma).matrix
    return Prepared(ds, cpt, stats, values, te, splits, times, feats, prox)


@dataclass
class Variant:
    """A model configuration label used by ablations."""
    name: str
    features: list = field(default_factory=list)
    use_proximity: bool = True
    use_identity: bool = True


def model_config(prep: Prepared, variant: Variant, D=64, **extra) -> ModelConfig:
    widths = [prep.features[n].shape[1] if n in prep.features else -1 for n in variant.features]
    unknown = [n for n, w in zip(variant.features, widths) if w < 0]
    if unknown:
        raise ConfigError([f"variant {variant.name}: unknown feature {n!r}" for n in unknown])
    return ModelConfig(
        n_areas=prep.values.shape[1], n_channels=prep.values.shape[2], D=D,
        feature_names=list(variant.features), feature_widths=widths,
        L_c=prep.cpt.L_c, L_p=prep.cpt.L_p, L_q=prep.cpt.L_q,
        use_proximity=variant.use_proximity, use_identity=variant.use_identity, **extra,
    )


def build_model(prep: Prepared, cfg: ModelConfig, seed: int, dtype=np.float64) -> STMFGCRN:
    from .model import init_parameters

    store = init_parameters(cfg, seed, dtype)
    return STMFGCRN(cfg, store, {n: prep.features[n] for n in cfg.feature_names},
                    prep.proximity if cfg.use_proximity else None)


@dataclass
class RunOutcome:
    variant: str
    seed: int
    rmse: float
    mae: float
    best_epoch: int
    stopped_epoch: int
    curve: list
    seconds: float
    model: STMFGCRN | None = None


def run_once(prep: Prepared, variant: Variant, train_cfg: TrainConfig, seed: int, D=64,
             dtype=np.float64, keep_model=False, model_extra=None) -> RunOutcome:
    t0 = time.perf_counter()
    cfg = model_config(prep, variant, D, **(model_extra or {}))
    model = build_model(prep, cfg, seed, dtype)
    res = train(model, prep.splits["train"], prep.splits["val"], train_cfg, seed)
    rep = evaluate(model, prep.splits["test"], prep.stats.demand)
    out = RunOutcome(variant.name, seed, rep.rmse, rep.mae, res.best_epoch, res.stopped_epoch,
                     res.curve, time.perf_counter() - t0, model if keep_model else None)
    log.info("%s seed=%d rmse=%.4f mae=%.4f epochs=%d (%.1fs)", variant.name, seed, rep.rmse, rep.mae,
             res.stopped_epoch, out.seconds)
    return out


def _run_job(args):
    return run_once(*args)


def run_ablation(prep: Prepared, variants, train_cfg: TrainConfig, seeds, D=64, jobs=1,
                 dtype=np.float64, model_extra=None):
    """Train and evaluate every (variant, seed); rows sorted by mean RMSE."""
    tasks = [(prep, v, train_cfg, s, D, dtype, False, model_extra) for v in variants for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_job, tasks))
    else:
        outcomes = [_run_job(t) for t in tasks]
    table = []
    for v in variants:
        runs = [(o.seed, o.rmse, o.mae) for o in outcomes if o.variant == v.name]
        table.append((v, EvalReport.aggregate(runs)))
    order = sorted(range(len(table)), key=lambda i: (table[i][1].rmse, i))
    return [table[i] for i in order], outcomes


def baseline_table(prep: Prepared, split="test"):
    raw = prep.dataset.series.values
    return evaluate_baselines(raw, prep.te, prep.raw_times[split], prep.cpt)


def standard_variants(feature_names, informative=None, noise=None):
    """Proximity-only floor, each single feature, and all features."""
    out = [Variant("KN=0", [], True)]
    out += [Variant(f"+{n}", [n], True) for n in feature_names]
    if len(feature_names) > 1:
        out.append(Variant("all", list(feature_names), True))
        out += [Variant(f"all-{n}", [m for m in feature_names if m != n], True) for n in feature_names]
    return out
