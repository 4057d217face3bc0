"""Seeded synthetic demand scenarios.

Each area carries a latent mixture over three land-use classes. Demand is the
mixture-weighted class profile, each class modulated by its own slowly varying
AR(1) activity factor, plus a spatially smooth AR(1) field and independent
noise. Areas with similar mixtures therefore share short-term fluctuations,
which their own noisy histories only reveal after pooling. Informative areal
features are noisy views of the class mixtures, so feature-similar areas share
demand patterns; a ``noise`` feature is drawn independently of everything else.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import ArealFeature, DemandSeries, _calendar_parts

CLASSES = ("office", "residential", "commercial")
CHANNELS = ("in", "out")

# (centre hour, width in hours, height) bumps per class / day type / channel
PROFILE_BUMPS = {
    "office": {
        "workday": {"in": [(8, 1.0, 1.0), (13, 1.0, 0.2)], "out": [(18, 1.2, 1.0), (12, 1.0, 0.2)]},
        "restday": {"in": [(11, 2.5, 0.12)], "out": [(16, 2.5, 0.12)]},
    },
    "residential": {
        "workday": {"in": [(19, 1.5, 0.8), (11, 2.0, 0.15)], "out": [(7.5, 1.0, 0.9), (10, 2.0, 0.15)]},
        "restday": {"in": [(18, 2.5, 0.4)], "out": [(10, 2.5, 0.4)]},
    },
    "commercial": {
        "workday": {"in": [(12, 1.5, 0.5), (19, 1.5, 0.4)], "out": [(14, 1.5, 0.4), (21, 1.2, 0.5)]},
        "restday": {"in": [(13, 2.5, 0.7)], "out": [(17, 2.5, 0.7)]},
    },
}


@dataclass
class FeatureSpec:
    name: str
    kind: str = "informative"  # informative | noise
    width: int = 3


@dataclass
class Scenario:
    n_areas: int = 20
    weeks: int = 8
    interval_minutes: int = 15
    start: str = "2019-03-04"  # a Monday
    scale: float = 40.0
    base_level: float = 0.05
    noise: float = 0.15
    class_variation: float = 0.6
    class_rho: float = 0.95
    spatial_fraction: float = 0.2
    ar_rho: float = 0.9
    length_scale_m: float = 1500.0
    extent_m: float = 6000.0
    class_concentration: float = 0.25
    feature_noise: float = 0.05
    holidays: list = field(default_factory=lambda: ["2019-03-27", "2019-04-24"])
    features: list = field(default_factory=lambda: [
        FeatureSpec("landuse", "informative", 3),
        FeatureSpec("poi", "informative", 6),
        FeatureSpec("noise", "noise", 4),
    ])

    def __post_init__(self):
        self.features = [f if isinstance(f, FeatureSpec) else FeatureSpec(**f) for f in self.features]


@dataclass
class SyntheticDataset:
    series: DemandSeries
    coords: np.ndarray  # N x 2 metres
    features: list
    holidays: set
    mixtures: np.ndarray  # N x 3
    scenario: Scenario


def _bumps(hours, bumps):
    out = np.zeros_like(hours, dtype=np.float64)
    for centre, width, height in bumps:
        d = np.minimum(np.abs(hours - centre), 24 - np.abs(hours - centre))
        out += height * np.exp(-0.5 * (d / width) ** 2)
    return out


def class_profile(cls: str, daytype: str, channel: str, hours) -> np.ndarray:
    return _bumps(np.asarray(hours, dtype=np.float64), PROFILE_BUMPS[cls][daytype][channel])


def profile_table(resolution: int = 1) -> dict:
    """Hourly (or finer) profile readback: table[cls][daytype][channel] -> array."""
    hours = np.arange(0, 24, 1.0 / resolution)
    return {c: {d: {ch: class_profile(c, d, ch, hours) for ch in CHANNELS}
                for d in ("workday", "restday")} for c in CLASSES}


def generate_synthetic(scenario: Scenario | None = None, seed: int = 0) -> SyntheticDataset:
    sc = scenario or Scenario()
    rng = np.random.default_rng(seed)
    N = sc.n_areas
    steps_per_day = 1440 // sc.interval_minutes
    T = sc.weeks * 7 * steps_per_day

    mixtures = rng.dirichlet(np.full(len(CLASSES), sc.class_concentration), size=N)
    coords = rng.uniform(0.0, sc.extent_m, size=(N, 2))

    start = np.datetime64(sc.start, "m")
    timestamps = start + np.arange(T) * np.timedelta64(sc.interval_minutes, "m")
    holidays = {np.datetime64(h, "D") for h in sc.holidays}
    dates, weekday, _, _ = _calendar_parts(timestamps)
    minute_of_day = (timestamps - timestamps.astype("datetime64[D]")).astype(np.int64)
    hours = minute_of_day / 60.0
    rest = (weekday >= 5) | np.isin(dates, np.asarray(sorted(holidays), dtype="datetime64[D]"))

    # class curves: T x classes x channels
    curves = np.zeros((T, len(CLASSES), len(CHANNELS)))
    for ci, c in enumerate(CLASSES):
        for hi, ch in enumerate(CHANNELS):
            curves[:, ci, hi] = np.where(rest, class_profile(c, "restday", ch, hours),
                                         class_profile(c, "workday", ch, hours))
    # class activity factors: unit-variance AR(1) per class and channel
    n_cls = len(CLASSES)
    act = np.empty((T, n_cls, len(CHANNELS)))
    act[0] = rng.standard_normal((n_cls, len(CHANNELS)))
    act_innov = rng.standard_normal((T, n_cls, len(CHANNELS))) * np.sqrt(1 - sc.class_rho ** 2)
    for t in range(1, T):
        act[t] = sc.class_rho * act[t - 1] + act_innov[t]
    curves = curves * np.maximum(1.0 + sc.class_variation * act, 0.0)
    signal = sc.scale * (sc.base_level + np.einsum("nc,tch->tnh", mixtures, curves))

    # spatially smooth AR(1) field + independent noise, both proportional to noise level
    d2 = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(-1)
    kern = np.exp(-0.5 * d2 / sc.length_scale_m ** 2) + 1e-9 * np.eye(N)
    chol = np.linalg.cholesky(kern)
    shocks = rng.standard_normal((T, N, len(CHANNELS)))
    innov = np.einsum("ij,tjh->tih", chol, shocks) * np.sqrt(1 - sc.ar_rho ** 2)
    field_ = np.empty_like(innov)
    field_[0] = np.einsum("ij,jh->ih", chol, rng.standard_normal((N, len(CHANNELS))))
    for t in range(1, T):
        field_[t] = sc.ar_rho * field_[t - 1] + innov[t]
    iid = rng.standard_normal((T, N, len(CHANNELS)))
    amp = sc.noise * sc.scale
    values = signal + amp * (sc.spatial_fraction * field_ + (1 - sc.spatial_fraction) * iid)
    values = np.maximum(values, 0.0)

    area_ids = [f"A{i:03d}" for i in range(N)]
    series = DemandSeries(area_ids, timestamps, values, sc.interval_minutes, list(CHANNELS))

    features = []
    for spec in sc.features:
        if spec.kind == "informative":
            if spec.width == len(CLASSES):
                loading = np.eye(len(CLASSES))
            else:
                loading = rng.gamma(0.5, 1.0, size=(len(CLASSES), spec.width))
            mat = mixtures @ loading + sc.feature_noise * np.abs(rng.standard_normal((N, spec.width)))
        elif spec.kind == "noise":
            mat = rng.uniform(0.0, 1.0, size=(N, spec.width))
        else:
            raise ValueError(f"unknown feature kind {spec.kind!r}")
        features.append(ArealFeature(spec.name, mat, [f"{spec.name}_{j}" for j in range(spec.width)]))
    return SyntheticDataset(series, coords, features, holidays, mixtures, sc)


def default_splits(scenario: Scenario):
    """Train/val/test date spans: last week test, the one before val, the rest train."""
    start = np.datetime64(scenario.start, "D")
    end = start + np.timedelta64(scenario.weeks * 7 - 1, "D")
    test_start = end - np.timedelta64(6, "D")
    val_start = test_start - np.timedelta64(7, "D")
    one = np.timedelta64(1, "D")
    return {
        "train": (str(start), str(val_start - one)),
        "val": (str(val_start), str(test_start - one)),
        "test": (str(test_start), str(end)),
    }
