"""Run configuration: YAML file + defaults + dotted-path overrides + validation."""
from __future__ import annotations

import copy
import dataclasses
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .synthetic import Scenario
from .train import TrainConfig

# Smaller model and epoch budget used for the synthetic desk-scale scenario.
DESK_MODEL = {"D": 16}
DESK_TRAIN = {"max_epochs": 12, "patience": 4}


def _scenario_defaults():
    sc = dataclasses.asdict(Scenario())
    return sc


DEFAULTS = {
    "run_id": None,
    "seeds": [0, 1, 2, 3, 4],
    "precision": 64,
    "paths": {"demand": None, "registry": None, "features": {}, "holidays": None, "output": "runs"},
    "data": {
        "interval_minutes": 15,
        "coords": None,
        "splits": None,
        "target_hours": [8, 21],
        "filter_training": True,
        "L_c": 6, "L_p": 7, "L_q": 3,
        "include_diagonal_in_sigma": True,
    },
    "model": {"D": 64, "features": None, "use_proximity": True, "use_identity": True,
              "zero_sentinel": False},
    "train": {f.name: f.default for f in dataclasses.fields(TrainConfig)},
    "ablation": {"variants": None},
    "gradcheck": {"N": 4, "D": 8, "K_N": 2, "L": 2, "B": 2, "h": 1e-5, "tol": 1e-4},
    "synth": _scenario_defaults(),
}

# Sections whose keys are open-ended (user-named features, free-form scenario lists).
_OPEN = {("paths", "features"), ("ablation", "variants"), ("synth", "features"), ("synth", "holidays")}


def _merge(base: dict, over: dict, prefix=(), problems=None):
    for key, value in over.items():
        path = prefix + (key,)
        if key not in base:
            problems.append(f"unknown key {'.'.join(path)}")
            continue
        if isinstance(base[key], dict) and path not in _OPEN:
            if not isinstance(value, dict):
                problems.append(f"{'.'.join(path)} must be a mapping")
                continue
            _merge(base[key], value, path, problems)
        else:
            base[key] = value


def parse_override(text: str):
    """``a.b.c=value`` -> (("a", "b", "c"), parsed YAML value)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like key.path=value")
    key, raw = text.split("=", 1)
    return tuple(k for k in key.strip().split(".") if k), yaml.safe_load(raw) if raw.strip() else None


def apply_override(cfg: dict, path, value, problems):
    node = cfg
    for k in path[:-1]:
        if not isinstance(node, dict) or k not in node:
            problems.append(f"unknown key {'.'.join(path)}")
            return
        node = node[k]
    if not isinstance(node, dict) or (path[-1] not in node and tuple(path[:-1]) not in _OPEN):
        problems.append(f"unknown key {'.'.join(path)}")
        return
    node[path[-1]] = value


def load_config(path=None, overrides=()) -> dict:
    """Defaults, then the YAML file, then overrides. Relative paths become
    absolute, resolved against the config file's directory (or the working
    directory without a file). Unknown keys are reported together."""
    cfg = copy.deepcopy(DEFAULTS)
    problems = []
    base_dir = Path(".")
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML ({str(exc).splitlines()[0]})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        _merge(cfg, data, (), problems)
        base_dir = path.parent
    base_dir = base_dir.resolve()
    for item in overrides:
        keys, value = parse_override(item)
        apply_override(cfg, keys, value, problems)
    if problems:
        raise ConfigError(problems)
    _resolve_paths(cfg, base_dir)
    return cfg


def _resolve_paths(cfg, base_dir: Path):
    p = cfg["paths"]

    def fix(v):
        return str(base_dir / v) if v is not None and not Path(v).is_absolute() else v

    for key in ("demand", "registry", "holidays", "output"):
        p[key] = fix(p[key])
    p["features"] = {k: fix(v) for k, v in (p["features"] or {}).items()}


def _date(value, label, problems):
    try:
        return np.datetime64(str(value), "D")
    except ValueError:
        problems.append(f"{label}: {value!r} is not a date")
        return None


def validate(cfg: dict, needs_data: bool = True) -> None:
    """Raise one ConfigError listing every violated field."""
    problems = []
    d, m, p = cfg["data"], cfg["model"], cfg["paths"]
    if cfg["precision"] not in (32, 64):
        problems.append("precision must be 32 or 64")
    seeds = cfg["seeds"]
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) for s in seeds):
        problems.append("seeds must be a non-empty list of integers")
    try:
        TrainConfig(**cfg["train"])
    except ConfigError as exc:
        problems.extend(f"train.{q}" for q in exc.problems)
    except TypeError as exc:
        problems.append(f"train: {exc}")
    if not isinstance(m["D"], int) or m["D"] < 1:
        problems.append("model.D must be a positive integer")
    for key in ("L_c", "L_p", "L_q"):
        if not isinstance(d[key], int) or d[key] < 1:
            problems.append(f"data.{key} must be a positive integer")
    iv = d["interval_minutes"]
    if not isinstance(iv, int) or iv < 1 or 1440 % iv:
        problems.append("data.interval_minutes must be a positive divisor of 1440")
    th = d["target_hours"]
    if not (isinstance(th, list) and len(th) == 2 and 0 <= th[0] <= th[1] <= 23):
        problems.append("data.target_hours must be [first, last] with 0 <= first <= last <= 23")
    if d["coords"] not in (None, "xy", "latlon"):
        problems.append("data.coords must be xy or latlon")
    if needs_data:
        for key in ("demand", "registry"):
            if not p[key]:
                problems.append(f"paths.{key} is required")
            elif not Path(p[key]).is_file():
                problems.append(f"paths.{key}: file not found: {p[key]}")
        if p["holidays"] and not Path(p["holidays"]).is_file():
            problems.append(f"paths.holidays: file not found: {p['holidays']}")
        for name, fp in p["features"].items():
            if not Path(fp).is_file():
                problems.append(f"paths.features.{name}: file not found: {fp}")
        for name in m["features"] or []:
            if name not in p["features"]:
                problems.append(f"model.features: {name!r} has no entry in paths.features")
        _check_splits(d["splits"], problems)
    if problems:
        raise ConfigError(problems)


def _check_splits(splits, problems):
    if not isinstance(splits, dict) or set(splits) != {"train", "val", "test"}:
        problems.append("data.splits must map train, val and test to [first_day, last_day]")
        return
    spans = []
    for name in ("train", "val", "test"):
        span = splits[name]
        if not (isinstance(span, (list, tuple)) and len(span) == 2):
            problems.append(f"data.splits.{name} must be [first_day, last_day]")
            return
        a, b = (_date(v, f"data.splits.{name}", problems) for v in span)
        if a is None or b is None:
            return
        if a > b:
            problems.append(f"data.splits.{name}: first day after last day")
        spans.append((name, a, b))
    for (n1, _, end), (n2, start, _) in zip(spans, spans[1:]):
        if not end < start:
            problems.append(f"data.splits: {n1} must end before {n2} starts")


def dump_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=None)
