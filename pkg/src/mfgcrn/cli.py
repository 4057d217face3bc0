"""``mfgcrn`` command line: synth, train, eval, baseline, gradcheck, ablate, graph dump.

Every command reads one YAML config (``--config``) and accepts dotted-path
overrides (``--set model.D=32``). Outputs land in ``<paths.output>/run_<id>/``
with the effective config, checkpoint, curve, metrics and log. The run id is a
hash of the command and effective config unless ``run_id`` is set, so reruns
overwrite the same directory. Failures print one ``error[<category>]: ...``
line on stderr and exit with status 2.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (CPTConfig, load_demand, load_feature, load_holidays, load_registry,
                   write_demand, write_feature, write_holidays, write_registry)
from .errors import ConfigError, MfgcrnError, SchemaError
from .experiment import Dataset, Variant, baseline_table, model_config, prepare, run_ablation
from .graphs import dump_matrix
from .model import STMFGCRN
from .synthetic import Scenario, default_splits, generate_synthetic
from .train import Split, TrainConfig, evaluate, train

log = logging.getLogger("mfgcrn")

METRIC_FIELDS = ["run_id", "subset", "seed", "rmse", "mae"]


# ----------------------------------------------------------------------------
# helpers


def _dtype(cfg):
    return np.float32 if cfg["precision"] == 32 else np.float64


def _run_dir(cfg, command: str) -> tuple[str, Path]:
    run_id = cfg["run_id"]
    if not run_id:
        blob = json.dumps({"command": command, "config": cfg}, sort_keys=True, default=str)
        run_id = hashlib.sha256(blob.encode()).hexdigest()[:12]
    out = Path(cfg["paths"]["output"]) / f"run_{run_id}"
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(cfgmod.dump_config(cfg))
    handler = logging.FileHandler(out / "logs.txt", mode="w")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger().addHandler(handler)
    return run_id, out


def _write_metrics(path: Path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_FIELDS)
        for r in rows:
            w.writerow([r[0], r[1], "" if r[2] is None else r[2], repr(float(r[3])), repr(float(r[4]))])


def _print_table(rows, header=("subset", "seed", "rmse", "mae")):
    print(f"{header[0]:<24}{header[1]:>6}{header[2]:>14}{header[3]:>14}")
    for subset, seed, rmse, mae in rows:
        print(f"{subset:<24}{'' if seed is None else seed:>6}{rmse:>14.6f}{mae:>14.6f}")


def load_dataset(cfg) -> Dataset:
    p, d = cfg["paths"], cfg["data"]
    ids, coords, kind = load_registry(p["registry"], d["coords"])
    series = load_demand(p["demand"], p["registry"], d["interval_minutes"], d["coords"])
    features = [load_feature(fp, ids, name) for name, fp in sorted(p["features"].items())]
    holidays = load_holidays(p["holidays"]) if p["holidays"] else set()
    return Dataset(series, features, holidays, coords, kind)


def _cpt(cfg) -> CPTConfig:
    d = cfg["data"]
    return CPTConfig(d["L_c"], d["L_p"], d["L_q"], d["interval_minutes"])


def _prepare(cfg):
    d = cfg["data"]
    ds = load_dataset(cfg)
    spans = {k: tuple(str(x) for x in v) for k, v in d["splits"].items()}
    return prepare(ds, _cpt(cfg), spans, tuple(d["target_hours"]), d["filter_training"],
                   d["include_diagonal_in_sigma"])


def _variant(cfg) -> Variant:
    m = cfg["model"]
    feats = m["features"] if m["features"] is not None else sorted(cfg["paths"]["features"])
    name = "+".join(feats) if feats else "KN=0"
    return Variant(name, list(feats), m["use_proximity"], m["use_identity"])


def _model_extra(cfg):
    return {"zero_sentinel": cfg["model"]["zero_sentinel"]}


# ----------------------------------------------------------------------------
# commands


def cmd_synth(cfg, args):
    sc_dict = dict(cfg["synth"])
    sc_dict["features"] = [f if isinstance(f, dict) else vars(f) for f in sc_dict["features"]]
    try:
        scenario = Scenario(**sc_dict)
    except TypeError as exc:
        raise ConfigError(f"synth: {exc}") from exc
    seed = cfg["seeds"][0]
    syn = generate_synthetic(scenario, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ids = syn.series.area_ids
    write_demand(out / "demand.csv", syn.series)
    write_registry(out / "registry.csv", ids, syn.coords, "xy")
    for f in syn.features:
        write_feature(out / f"feature_{f.name}.csv", ids, f)
    write_holidays(out / "holidays.csv", syn.holidays)
    data_cfg = {
        # --seed picks the data seed here, not the training seeds
        "seeds": list(cfgmod.DEFAULTS["seeds"]) if args.seed is not None else cfg["seeds"],
        "paths": {"demand": "demand.csv", "registry": "registry.csv", "holidays": "holidays.csv",
                  "features": {f.name: f"feature_{f.name}.csv" for f in syn.features}, "output": "runs"},
        "data": {"interval_minutes": scenario.interval_minutes, "coords": "xy",
                 "splits": {k: list(v) for k, v in default_splits(scenario).items()},
                 "target_hours": cfg["data"]["target_hours"]},
        "model": dict(cfgmod.DESK_MODEL),
        "train": dict(cfgmod.DESK_TRAIN),
    }
    (out / "config.yaml").write_text(cfgmod.dump_config(data_cfg))
    print(f"wrote {len(syn.series) * len(ids)} demand rows for {len(ids)} areas to {out}")
    return 0


def _train_one(cfg, prep, seed, run_id, out):
    variant = _variant(cfg)
    mcfg = model_config(prep, variant, cfg["model"]["D"], **_model_extra(cfg))
    model = STMFGCRN(mcfg, None, {n: prep.features[n] for n in mcfg.feature_names},
                     prep.proximity if mcfg.use_proximity else None, seed)
    model.store = model.store.astype(_dtype(cfg))
    tcfg = TrainConfig(**cfg["train"])
    res = train(model, prep.splits["train"], prep.splits["val"], tcfg, seed, log_every=1)
    rep = evaluate(model, prep.splits["test"], prep.stats.demand)
    store64 = model.store.astype(np.float64)
    save_checkpoint(out / "checkpoint.npz", store64, mcfg, prep.stats,
                    {"seed": seed, "run_id": run_id, "best_epoch": res.best_epoch})
    with open(out / "curve.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for e, tl, vl in res.curve:
            w.writerow([e, "" if np.isnan(tl) else repr(float(tl)), repr(float(vl))])
    return variant, rep, res


def cmd_train(cfg, args):
    cfgmod.validate(cfg)
    seed = cfg["seeds"][0]
    run_id, out = _run_dir(cfg, f"train:{seed}")
    prep = _prepare(cfg)
    variant, rep, res = _train_one(cfg, prep, seed, run_id, out)
    log.info("best epoch %s, stopped at %s", res.best_epoch, res.stopped_epoch)
    _write_metrics(out / "metrics.csv", [(run_id, variant.name, seed, rep.rmse, rep.mae)])
    _print_table([(variant.name, seed, rep.rmse, rep.mae)])
    print(f"run directory: {out}")
    return 0


def cmd_eval(cfg, args):
    cfgmod.validate(cfg)
    store, mcfg, stats, extra = load_checkpoint(args.checkpoint)
    prep = _prepare(cfg)
    n, c = prep.values.shape[1:]
    if (mcfg.n_areas, mcfg.n_channels) != (n, c):
        raise SchemaError(f"checkpoint expects {mcfg.n_areas} areas x {mcfg.n_channels} channels, "
                          f"dataset has {n} x {c}")
    missing = [f for f in mcfg.feature_names if f not in prep.features]
    if missing:
        raise SchemaError(f"checkpoint uses features {missing} absent from the dataset")
    if stats is None:
        stats = prep.stats
    feats = {f: stats.features[f].apply(prep.dataset.feature(f).matrix) for f in mcfg.feature_names}
    model = STMFGCRN(mcfg, store, feats, prep.proximity if mcfg.use_proximity else None)
    values = stats.demand.apply(prep.dataset.series.values)
    split = Split(values, prep.te, prep.raw_times[args.split], prep.cpt)
    rep = evaluate(model, split, stats.demand)
    run_id, out = _run_dir(cfg, f"eval:{Path(args.checkpoint).resolve()}:{args.split}")
    name = "+".join(mcfg.feature_names) or "KN=0"
    seed = extra.get("seed")
    _write_metrics(out / "metrics.csv", [(run_id, name, seed, rep.rmse, rep.mae)])
    _print_table([(name, seed, rep.rmse, rep.mae)])
    return 0


def cmd_baseline(cfg, args):
    cfgmod.validate(cfg)
    run_id, out = _run_dir(cfg, f"baseline:{args.split}")
    prep = _prepare(cfg)
    table = baseline_table(prep, args.split)
    rows = [(k, None, r.rmse, r.mae) for k, r in table.items()]
    _write_metrics(out / "metrics.csv", [(run_id, *r) for r in rows])
    _print_table(rows)
    return 0


def cmd_gradcheck(cfg, args):
    from . import gradcheck

    g = cfg["gradcheck"]
    seed = cfg["seeds"][0]
    results, seconds = gradcheck.run(seed, h=g["h"], tol=g["tol"], N=g["N"], D=g["D"], K_N=g["K_N"],
                                     L=g["L"], B=g["B"])
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.path} size={r.size} max_rel_err={r.max_rel_error:.3e}")
    failed = [r.path for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} slots passed in {seconds:.1f}s")
    if failed:
        print(f"error[gradient]: {len(failed)} slot(s) exceed tolerance: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def _ablation_variants(cfg):
    spec = cfg["ablation"]["variants"]
    m = cfg["model"]
    if spec is None:
        from .experiment import standard_variants

        names = m["features"] if m["features"] is not None else sorted(cfg["paths"]["features"])
        return standard_variants(names)
    problems, out = [], []
    for i, v in enumerate(spec):
        if not isinstance(v, dict) or "name" not in v:
            problems.append(f"ablation.variants[{i}] needs a name")
            continue
        unknown = set(v) - {"name", "features", "use_proximity", "use_identity"}
        if unknown:
            problems.append(f"ablation.variants[{i}]: unknown keys {sorted(unknown)}")
            continue
        out.append(Variant(v["name"], list(v.get("features") or []), v.get("use_proximity", True),
                           v.get("use_identity", True)))
    if problems:
        raise ConfigError(problems)
    return out


def cmd_ablate(cfg, args):
    cfgmod.validate(cfg)
    run_id, out = _run_dir(cfg, "ablate")
    prep = _prepare(cfg)
    variants = _ablation_variants(cfg)
    seeds = cfg["seeds"]
    table, outcomes = run_ablation(prep, variants, TrainConfig(**cfg["train"]), seeds, cfg["model"]["D"],
                                   args.jobs, _dtype(cfg), _model_extra(cfg))
    _write_metrics(out / "metrics.csv", [(run_id, o.variant, o.seed, o.rmse, o.mae) for o in outcomes])
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", "subset", "rmse", "mae", "n_seeds"])
        for i, (v, rep) in enumerate(table, 1):
            w.writerow([i, v.name, repr(rep.rmse), repr(rep.mae), len(rep.per_seed)])
    _print_table([(v.name, None, rep.rmse, rep.mae) for v, rep in table],
                 ("subset (mean)", "", "rmse", "mae"))
    return 0


def cmd_graph_dump(cfg, args):
    cfgmod.validate(cfg)
    run_id, out = _run_dir(cfg, f"graph:{args.checkpoint}")
    prep = _prepare(cfg)
    ids = prep.dataset.series.area_ids
    gdir = out / "graphs"
    gdir.mkdir(exist_ok=True)
    dump_matrix(gdir / "identity.csv", np.eye(len(ids)), ids)
    dump_matrix(gdir / "proximity.csv", prep.proximity, ids)
    if args.checkpoint:
        store, mcfg, stats, _ = load_checkpoint(args.checkpoint)
        if mcfg.n_areas != len(ids):
            raise SchemaError(f"checkpoint expects {mcfg.n_areas} areas, dataset has {len(ids)}")
        stats = stats or prep.stats
        feats = {f: stats.features[f].apply(prep.dataset.feature(f).matrix) for f in mcfg.feature_names}
        model = STMFGCRN(mcfg, store, feats, prep.proximity if mcfg.use_proximity else None)
        for name, (a, s) in zip(mcfg.feature_names, model.learned_graphs()):
            dump_matrix(gdir / f"learned_{name}.csv", a.value, ids)
            np.savetxt(gdir / f"sentinel_{name}.csv", s.value.ravel(), delimiter=",")
    print(f"graphs written to {gdir}")
    return 0


# ----------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="run with this single seed (replaces seeds)")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers for ablate")
    common.add_argument("--precision", type=int, choices=(32, 64), help="training float width")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config leaf by dotted path (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="mfgcrn", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("synth", parents=[common], help="write a synthetic dataset and its config")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_synth)
    sub.add_parser("train", parents=[common], help="train one model").set_defaults(func=cmd_train)
    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.set_defaults(func=cmd_eval)
    b = sub.add_parser("baseline", parents=[common], help="score the heuristic baselines")
    b.add_argument("--split", default="test", choices=("train", "val", "test"))
    b.set_defaults(func=cmd_baseline)
    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check").set_defaults(
        func=cmd_gradcheck)
    sub.add_parser("ablate", parents=[common], help="feature ablation table").set_defaults(func=cmd_ablate)
    g = sub.add_parser("graph", help="graph inspection")
    gsub = g.add_subparsers(dest="graph_command", required=True)
    gd = gsub.add_parser("dump", parents=[common], help="write adjacency matrices")
    gd.add_argument("--checkpoint", help="include learned graphs from this checkpoint")
    gd.set_defaults(func=cmd_graph_dump)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    logging.getLogger().setLevel(logging.INFO)
    for h in logging.getLogger().handlers:
        if isinstance(h, logging.StreamHandler) and not isinstance(h, logging.FileHandler):
            h.setLevel(logging.INFO if args.verbose else logging.WARNING)
    try:
        overrides = list(args.set)
        if args.precision is not None:
            overrides.append(f"precision={args.precision}")
        if args.seed is not None:
            overrides.append(f"seeds=[{args.seed}]")
        cfg = cfgmod.load_config(args.config, overrides)
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        return args.func(cfg, args)
    except MfgcrnError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 2
    finally:
        for h in list(logging.getLogger().handlers):
            if isinstance(h, logging.FileHandler):
                logging.getLogger().removeHandler(h)
                h.close()


if __name__ == "__main__":
    sys.exit(main())
