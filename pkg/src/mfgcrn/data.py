"""Demand series ingestion, calendar encodings, CPT windows and normalisation."""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, GapError, HistoryError, SchemaError

log = logging.getLogger(__name__)

TE_DIM = 7 + 24 + 4 + 1
MINUTES_PER_DAY = 1440


@dataclass
class DemandSeries:
    area_ids: list[str]
    timestamps: np.ndarray  # datetime64[m], strictly increasing, uniform step
    values: np.ndarray  # T x N x C
    interval_minutes: int
    channels: list[str] = field(default_factory=lambda: ["in", "out"])

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[m]")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise DimensionError(f"demand values must be T x N x C, got {self.values.shape}")
        T, N, C = self.values.shape
        if len(self.timestamps) != T or len(self.area_ids) != N or len(self.channels) != C:
            raise DimensionError(
                f"demand tensor {self.values.shape} disagrees with {len(self.timestamps)} timestamps, "
                f"{len(self.area_ids)} areas, {len(self.channels)} channels"
            )
        if C < 1:
            raise DimensionError("at least one demand channel is required")
        if T > 1:
            steps = np.diff(self.timestamps).astype(np.int64)
            if np.any(steps != self.interval_minutes):
                raise GapError("timestamps are not on a uniform grid")

    @property
    def n_areas(self):
        return self.values.shape[1]

    @property
    def n_channels(self):
        return self.values.shape[2]

    def __len__(self):
        return self.values.shape[0]


@dataclass
class ArealFeature:
    name: str
    matrix: np.ndarray  # N x V
    component_names: list[str]

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2 or self.matrix.shape[1] < 1:
            raise DimensionError(f"feature {self.name}: matrix must be N x V with V >= 1")
        if len(self.component_names) != self.matrix.shape[1]:
            raise DimensionError(f"feature {self.name}: {len(self.component_names)} names for "
                                 f"{self.matrix.shape[1]} columns")
        if np.any(self.matrix < 0):
            raise SchemaError(f"feature {self.name}: negative entries")

    @property
    def width(self):
        return self.matrix.shape[1]


# ----------------------------------------------------------------------------
# temporal encoding


def _calendar_parts(timestamps):
    ts = np.asarray(timestamps, dtype="datetime64[m]")
    minutes = ts.astype(np.int64)
    days = np.floor_divide(minutes, MINUTES_PER_DAY)
    weekday = (days + 3) % 7  # 1970-01-01 was a Thursday; Monday -> 0
    minute_of_day = minutes - days * MINUTES_PER_DAY
    return ts.astype("datetime64[D]"), weekday, minute_of_day // 60, (minute_of_day % 60) // 15


def encode_timestamps(timestamps, holidays=()) -> np.ndarray:
    """One-hot calendar encoding for each timestamp: weekday | hour | quarter | holiday."""
    dates, weekday, hour, quarter = _calendar_parts(timestamps)
    out = np.zeros((len(dates), TE_DIM))
    rows = np.arange(len(dates))
    out[rows, weekday] = 1.0
    out[rows, 7 + hour] = 1.0
    out[rows, 31 + quarter] = 1.0
    if len(holidays):
        hol = np.asarray(sorted(holidays), dtype="datetime64[D]")
        out[:, 35] = np.isin(dates, hol)
    return out


def build_temporal_encoding(timestamp, holidays=()) -> np.ndarray:
    return encode_timestamps(np.asarray([timestamp], dtype="datetime64[m]"), holidays)[0]


# ----------------------------------------------------------------------------
# closeness / period / trend windows


@dataclass(frozen=True)
class CPTConfig:
    L_c: int = 6
    L_p: int = 7
    L_q: int = 3
    interval_minutes: int = 15

    @property
    def T_p(self) -> int:
        if MINUTES_PER_DAY % self.interval_minutes:
            raise SchemaError(f"interval {self.interval_minutes} min does not divide a day")
        return MINUTES_PER_DAY // self.interval_minutes

    @property
    def T_q(self) -> int:
        return 7 * self.T_p

    @property
    def min_history(self) -> int:
        return max(self.L_c, self.T_p * self.L_p, self.T_q * self.L_q)


def window_indices(t: int, cfg: CPTConfig):
    """Closeness, period and trend indices for target ``t``, most recent first."""
    c = t - np.arange(1, cfg.L_c + 1)
    p = t - cfg.T_p * np.arange(1, cfg.L_p + 1)
    q = t - cfg.T_q * np.arange(1, cfg.L_q + 1)
    return c, p, q


@dataclass
class CPTSample:
    XC: np.ndarray  # N x L_c x C, most recent first
    XP: np.ndarray
    XQ: np.ndarray
    te_c: np.ndarray  # L_c x 36
    te_p: np.ndarray
    te_q: np.ndarray
    target: np.ndarray  # N x C
    target_timestamp: np.datetime64
    t: int


def slice_cpt(series: DemandSeries, t: int, cfg: CPTConfig, holidays=(), te=None) -> CPTSample:
    if t < cfg.min_history:
        raise HistoryError(f"target index {t} lacks history; need t >= {cfg.min_history}")
    if t >= len(series):
        raise HistoryError(f"target index {t} beyond series length {len(series)}")
    if te is None:
        te = encode_timestamps(series.timestamps, holidays)
    c, p, q = window_indices(t, cfg)
    v = series.values
    return CPTSample(
        XC=v[c].transpose(1, 0, 2), XP=v[p].transpose(1, 0, 2), XQ=v[q].transpose(1, 0, 2),
        te_c=te[c], te_p=te[p], te_q=te[q],
        target=v[t], target_timestamp=series.timestamps[t], t=t,
    )


def sample_times(series: DemandSeries, cfg: CPTConfig, target_hours=(0, 23), span=None) -> np.ndarray:
    """Eligible target indices: enough history, hour in ``target_hours`` (inclusive),
    and (optionally) target date inside ``span = (first_date, last_date)``."""
    lo, hi = target_hours
    ts = np.arange(cfg.min_history, len(series))
    if ts.size == 0:
        return ts
    dates, _, hour, _ = _calendar_parts(series.timestamps[ts])
    keep = (hour >= lo) & (hour <= hi)
    if span is not None:
        first, last = (np.datetime64(d, "D") for d in span)
        keep &= (dates >= first) & (dates <= last)
    return ts[keep]


def enumerate_samples(series, cfg: CPTConfig, target_hours=(0, 23), holidays=(), span=None):
    ts = sample_times(series, cfg, target_hours, span)
    if ts.size == 0:
        warnings.warn(f"no eligible samples for target hours {target_hours}", RuntimeWarning, stacklevel=2)
        return []
    te = encode_timestamps(series.timestamps, holidays)
    return [slice_cpt(series, int(t), cfg, te=te) for t in ts]


@dataclass
class Batch:
    """Stacked CPT windows; x arrays are B x L x N x C, most recent first."""
    xc: np.ndarray
    xp: np.ndarray
    xq: np.ndarray
    tec: np.ndarray  # B x L x 36
    tep: np.ndarray
    teq: np.ndarray
    target: np.ndarray  # B x N x C
    times: np.ndarray

    def __len__(self):
        return len(self.times)


def gather_batch(values: np.ndarray, te: np.ndarray, times, cfg: CPTConfig) -> Batch:
    times = np.asarray(times, dtype=np.int64)
    if times.size and times.min() < cfg.min_history:
        raise HistoryError(f"target index {times.min()} lacks history; need t >= {cfg.min_history}")
    c = times[:, None] - np.arange(1, cfg.L_c + 1)[None, :]
    p = times[:, None] - cfg.T_p * np.arange(1, cfg.L_p + 1)[None, :]
    q = times[:, None] - cfg.T_q * np.arange(1, cfg.L_q + 1)[None, :]
    return Batch(values[c], values[p], values[q], te[c], te[p], te[q], values[times], times)


def stack_samples(samples) -> Batch:
    return Batch(
        xc=np.stack([s.XC.transpose(1, 0, 2) for s in samples]),
        xp=np.stack([s.XP.transpose(1, 0, 2) for s in samples]),
        xq=np.stack([s.XQ.transpose(1, 0, 2) for s in samples]),
        tec=np.stack([s.te_c for s in samples]),
        tep=np.stack([s.te_p for s in samples]),
        teq=np.stack([s.te_q for s in samples]),
        target=np.stack([s.target for s in samples]),
        times=np.array([s.t for s in samples]),
    )


# ----------------------------------------------------------------------------
# min-max normalisation


@dataclass
class MinMax:
    """Per-column affine map onto [0, 1]; the last axis indexes columns."""
    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, x) -> "MinMax":
        x = np.asarray(x, dtype=np.float64)
        flat = x.reshape(-1, x.shape[-1])
        return cls(flat.min(axis=0), flat.max(axis=0))

    @property
    def width(self):
        return self.lo.shape[0]

    def _check(self, x):
        if x.shape[-1] != self.width:
            raise SchemaError(f"normalisation stats cover {self.width} channels, data has {x.shape[-1]}")

    def apply(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        self._check(x)
        span = self.hi - self.lo
        safe = np.where(span > 0, span, 1.0)
        return np.where(span > 0, (x - self.lo) / safe, 0.0)

    def invert(self, y) -> np.ndarray:
        y = np.asarray(y)
        self._check(y)
        span = self.hi - self.lo
        return np.where(span > 0, y * span + self.lo, self.lo)

    def to_dict(self):
        return {"min": self.lo.tolist(), "max": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["min"], dtype=np.float64), np.asarray(d["max"], dtype=np.float64))


@dataclass
class NormalizationStats:
    demand: MinMax
    features: dict[str, MinMax]

    def to_dict(self):
        return {"demand": self.demand.to_dict(),
                "features": {k: v.to_dict() for k, v in self.features.items()}}

    @classmethod
    def from_dict(cls, d):
        return cls(MinMax.from_dict(d["demand"]),
                   {k: MinMax.from_dict(v) for k, v in d["features"].items()})


def fit_minmax(series: DemandSeries, features=(), train_span=None) -> NormalizationStats:
    """Fit demand stats on the training timespan only, feature stats per column."""
    values = series.values
    if train_span is not None:
        dates = series.timestamps.astype("datetime64[D]")
        first, last = (np.datetime64(d, "D") for d in train_span)
        values = values[(dates >= first) & (dates <= last)]
        if len(values) == 0:
            raise SchemaError(f"training span {train_span} selects no timestamps")
    return NormalizationStats(MinMax.fit(values), {f.name: MinMax.fit(f.matrix) for f in features})


def apply_minmax(stats: NormalizationStats, values):
    return stats.demand.apply(values)


def invert_minmax(stats: NormalizationStats, values):
    return stats.demand.invert(values)


# ----------------------------------------------------------------------------
# file formats


def load_registry(path, coords: str | None = None):
    """Read ``area_id,lat,lon`` or ``area_id,x,y``. Returns (ids, N x 2 array, kind)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise SchemaError(f"{path}: empty area registry")
    header = [h.strip().lower() for h in rows[0]]
    if header[:3] == ["area_id", "lat", "lon"]:
        kind = "latlon"
    elif header[:3] == ["area_id", "x", "y"]:
        kind = "xy"
    else:
        raise SchemaError(f"{path}: registry header must be area_id,lat,lon or area_id,x,y; got {rows[0]}")
    if coords is not None and coords != kind:
        raise SchemaError(f"{path}: config declares {coords} coordinates but file has {kind}")
    ids, xy = [], []
    seen = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) < 3 or not row[1].strip() or not row[2].strip():
            raise SchemaError(f"{path}:{lineno}: missing coordinate for area {row[0] if row else '?'}")
        if row[0] in seen:
            raise SchemaError(f"{path}:{lineno}: duplicate area id {row[0]}")
        seen.add(row[0])
        ids.append(row[0])
        xy.append((float(row[1]), float(row[2])))
    return ids, np.asarray(xy, dtype=np.float64).reshape(-1, 2), kind


def load_demand(path, registry_path, interval_minutes: int | None = None, coords=None) -> DemandSeries:
    area_ids, _, _ = load_registry(registry_path, coords)
    index = {a: i for i, a in enumerate(area_ids)}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["timestamp", "area_id"] or len(header) < 3:
            raise SchemaError(f"{path}: header must be timestamp,area_id,<channel...>; got {header}")
        channels = [h.strip() for h in header[2:]]
        stamps, areas, vals = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            if row[1] not in index:
                raise SchemaError(f"{path}:{lineno}: unknown area id {row[1]!r}")
            stamps.append(row[0])
            areas.append(index[row[1]])
            vals.append(row[2:])
    if not stamps:
        raise SchemaError(f"{path}: no demand rows")
    ts = np.array(stamps, dtype="datetime64[m]")
    values = np.asarray(vals, dtype=np.float64)
    if np.any(values < 0):
        raise SchemaError(f"{path}: negative demand values")
    uniq = np.unique(ts)
    if interval_minutes is None:
        interval_minutes = int(np.diff(uniq).astype(np.int64).min()) if len(uniq) > 1 else 15
    span = (uniq[-1] - uniq[0]).astype(np.int64)
    if span % interval_minutes:
        raise GapError(f"{path}: timestamps not aligned to a {interval_minutes}-minute grid")
    grid = uniq[0] + np.arange(span // interval_minutes + 1) * np.timedelta64(interval_minutes, "m")
    pos = ((ts - uniq[0]).astype(np.int64))
    if np.any(pos % interval_minutes):
        raise GapError(f"{path}: timestamps not aligned to a {interval_minutes}-minute grid")
    pos //= interval_minutes
    T, N, C = len(grid), len(area_ids), len(channels)
    dense = np.full((T, N, C), np.nan)
    filled = np.zeros((T, N), dtype=bool)
    areas = np.asarray(areas)
    dense[pos, areas] = values
    filled[pos, areas] = True
    if not filled.all():
        t, n = np.argwhere(~filled)[0]
        raise GapError(f"{path}: missing demand for area {area_ids[n]} at {grid[t]}")
    return DemandSeries(area_ids, grid, dense, interval_minutes, channels)


def load_feature(path, area_ids, name: str | None = None) -> ArealFeature:
    name = name or Path(path).stem
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or rows[0][0].strip() != "area_id" or len(rows[0]) < 2:
        raise SchemaError(f"{path}: header must be area_id,<component...>")
    comps = [c.strip() for c in rows[0][1:]]
    table = {}
    for r in rows[1:]:
        if len(r) != len(rows[0]):
            raise SchemaError(f"{path}: row for {r[0]} has {len(r)} fields, expected {len(rows[0])}")
        table[r[0]] = [float(v) for v in r[1:]]
    missing = [a for a in area_ids if a not in table]
    extra = [a for a in table if a not in set(area_ids)]
    if missing or extra:
        raise SchemaError(f"{path}: areas missing {missing[:5]} / unknown {extra[:5]}")
    return ArealFeature(name, np.array([table[a] for a in area_ids]), comps)


def load_holidays(path) -> set:
    out = set()
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                out.add(np.datetime64(line, "D"))
    return out


def write_demand(path, series: DemandSeries, fmt="%.4f"):
    T, N, C = series.values.shape
    stamps = np.datetime_as_string(series.timestamps, unit="m")
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["timestamp", "area_id", *series.channels]) + "\n")
        for t in range(T):
            s = stamps[t]
            for n in range(N):
                vals = ",".join(fmt % v for v in series.values[t, n])
                fh.write(f"{s},{series.area_ids[n]},{vals}\n")


def write_registry(path, area_ids, coords, kind="xy"):
    cols = ("x", "y") if kind == "xy" else ("lat", "lon")
    with open(path, "w", newline="") as fh:
        fh.write(f"area_id,{cols[0]},{cols[1]}\n")
        for a, (u, v) in zip(area_ids, coords):
            fh.write(f"{a},{u:.3f},{v:.3f}\n" if kind == "xy" else f"{a},{u:.7f},{v:.7f}\n")


def write_feature(path, area_ids, feature: ArealFeature, fmt="%.6f"):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["area_id", *feature.component_names]) + "\n")
        for a, row in zip(area_ids, feature.matrix):
            fh.write(a + "," + ",".join(fmt % v for v in row) + "\n")


def write_holidays(path, holidays):
    with open(path, "w") as fh:
        for d in sorted(holidays):
            fh.write(f"{d}\n")
