"""``ffsm`` command-line front end.

Every command reads one JSON config (flags override keys), writes the fully
resolved config beside its outputs, and keeps wall-clock data in a separate
manifest so the remaining outputs are byte-identical across reruns.
"""
import argparse
import copy
import csv
import json
import logging
import os
import platform
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from . import __version__
from . import backbones, data, factors, mapping, metrics, plotting, sensitivity, train
from .errors import ConfigError, FfsmError, UsageError

log = logging.getLogger("ffsm")

DEFAULT_CONFIG = {
    "stack": "stack.ffstack",
    "inventory": "inventory.csv",
    "out": "out",
    "seed": 0,
    "model": {"kind": "resnet18", "placement": "none", "patch": 32, "base_width": 0,
              "depth_scale": 0.0, "classifier": [64], "reduction": 16},
    "train": {"batch_size": 4, "initial_lr": 0.001, "plateau_factor": 10.0,
              "plateau_patience": 10, "max_epochs": 200, "early_stop_patience": None,
              "min_lr": 1e-8, "optimizer": "adam"},
    "split": {"ratios": [0.7, 0.15, 0.15], "stratified": True},
    "factors": {"corr_threshold": 0.7, "vif_threshold": 5.0},
    "jackknife": {"mode": "retrain", "jobs": 1},
    "map": {"tile_size": 1024, "classes": 5, "jenks_samples": mapping.JENKS_MAX_SAMPLES},
    "bench": {"kinds": list(backbones.KINDS), "placements": ["none", "in", "head", "tail"],
              "jobs": 1},
}
PATH_KEYS = ("stack", "inventory", "out")

PLACEMENT_LABEL = {"none": "Base", "in": "+CBAM-In", "head": "+CBAM-Head", "tail": "+CBAM-Tail"}
KIND_LABEL = {"resnet18": "ResNet18", "densenet121": "DenseNet121", "xception": "Xception"}


# -- config -------------------------------------------------------------------

def _merge(base, override, where=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{where}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be an object")
            out[key] = _merge(base[key], value, path + ".")
        else:
            out[key] = value
    return out


def _set_override(cfg, assignment):
    key, sep, raw = assignment.partition("=")
    if not sep:
        raise UsageError(f"--set expects key=value, got {assignment!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = {}
    top = node
    parts = key.split(".")
    for part in parts[:-1]:
        node[part] = {}
        node = node[part]
    node[parts[-1]] = value
    return _merge(cfg, top)


def load_config(path=None, seed=None, out=None, sets=()):
    """Defaults <- config file <- --set <- --seed/--out; relative paths resolved."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    base_dir = os.getcwd()
    if path is not None:
        try:
            with open(path) as fh:
                user = json.load(fh)
        except FileNotFoundError:
            raise UsageError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: top level must be an object")
        cfg = _merge(cfg, user)
        base_dir = os.path.dirname(os.path.abspath(path))
    for s in sets:
        cfg = _set_override(cfg, s)
    if seed is not None:
        cfg["seed"] = seed
    for key in PATH_KEYS:
        if cfg[key] is not None and not os.path.isabs(cfg[key]):
            cfg[key] = os.path.normpath(os.path.join(base_dir, cfg[key]))
    if out is not None:
        cfg["out"] = os.path.abspath(out)
    return cfg


def model_spec(cfg, n_factors):
    m = dict(cfg["model"])
    try:
        return backbones.BackboneSpec(factors=n_factors, **m)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model: {exc}") from None


def train_config(cfg):
    try:
        return train.TrainConfig(seed=cfg["seed"], **cfg["train"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from None


# -- output helpers -------------------------------------------------------------

def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, arrays dropped."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items() if not isinstance(v, np.ndarray)}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _start(command, cfg):
    os.makedirs(cfg["out"], exist_ok=True)
    _write_json(os.path.join(cfg["out"], f"{command}.config.json"), cfg)
    return time.time()


def _finish(command, cfg, started, outputs):
    manifest = {
        "command": command, "config": cfg, "seed": cfg.get("seed"),
        "outputs": sorted(outputs),
        "versions": {"ffsm": __version__, "numpy": np.__version__,
                     "python": platform.python_version()},
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "wall_time_s": round(time.time() - started, 3),
    }
    _write_json(os.path.join(cfg["out"], f"{command}.manifest.json"), manifest)


def _load_inputs(cfg):
    stack = data.load_stack(cfg["stack"])
    points = data.load_inventory(cfg["inventory"], stack)
    return stack, points


def _dataset(cfg, stack, points, mean=None, std=None):
    """Patch dataset with the configured split; reuses ``mean``/``std`` when given."""
    patch = cfg["model"]["patch"]
    ratios, strat = cfg["split"]["ratios"], cfg["split"]["stratified"]
    try:
        if mean is None:
            return data.prepare_dataset(stack, points, patch, ratios, cfg["seed"], strat)
        ds = data.split(data.extract_patches(stack, points, patch), ratios, cfg["seed"], strat)
    except ValueError as exc:
        raise ConfigError(f"split: {exc}") from None
    return replace(ds, X=data.apply_standardization(ds.X, mean, std),
                   mean=np.asarray(mean), std=np.asarray(std))


def _metrics_doc(results):
    return {name: _clean({k: v for k, v in r.items() if k != "scores"})
            for name, r in results.items()}


def _load_model(path):
    if not os.path.exists(path):
        raise UsageError(f"model file {path} not found")
    model, meta = backbones.load(path)
    for key in ("factors", "mean", "std"):
        if key not in meta:
            raise ConfigError(f"model file {path} lacks {key!r} metadata")
    return model, meta


# -- commands -------------------------------------------------------------------

def cmd_synth(args):
    if args.width < 1 or args.height < 1 or args.n_flood < 1:
        raise UsageError("width, height and n-flood must be positive")
    out = os.path.abspath(args.out)
    if os.path.isdir(out) and os.listdir(out) and not args.force:
        raise UsageError(f"{out} exists and is not empty (use --force)")
    os.makedirs(out, exist_ok=True)
    started = time.time()
    try:
        stack, points = data.synth_generate(args.seed, args.width, args.height, args.n_flood,
                                            patch=args.patch)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data.save_stack(stack, os.path.join(out, "stack.ffstack"))
    data.save_inventory(points, os.path.join(out, "inventory.csv"))
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    cfg["stack"], cfg["inventory"], cfg["out"], cfg["seed"] = (
        "stack.ffstack", "inventory.csv", "run", args.seed)
    cfg["model"]["patch"] = args.patch
    _write_json(os.path.join(out, "config.json"), cfg)
    manifest = {
        "command": "synth", "seed": args.seed,
        "parameters": {"width": args.width, "height": args.height, "n_flood": args.n_flood,
                       "patch": args.patch, "planted": data.DEFAULT_PROFILE},
        "factors": list(stack.factors),
        "outputs": ["config.json", "inventory.csv", "stack.ffstack"],
        "versions": {"ffsm": __version__, "numpy": np.__version__},
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "wall_time_s": round(time.time() - started, 3),
    }
    _write_json(os.path.join(out, "synth.manifest.json"), manifest)
    print(f"wrote {stack.n_factors}-factor {stack.height}x{stack.width} stack and "
          f"{len(points)} inventory points to {out}")


def cmd_factors(args, cfg):
    started = _start("factors", cfg)
    stack, points = _load_inputs(cfg)
    table = factors.FactorTable(data.sample_table(stack, points), stack.factors)
    report = factors.optimize(table, cfg["factors"]["corr_threshold"],
                              cfg["factors"]["vif_threshold"])
    out = cfg["out"]
    report.write(os.path.join(out, "pearson.csv"), os.path.join(out, "factors.json"))
    plotting.correlation_heatmap(report, os.path.join(out, "correlation.png"))
    _finish("factors", cfg, started, ["pearson.csv", "factors.json", "correlation.png"])
    print(f"retained {len(report.retained())} of {len(table.names)} factors")


def _write_eval(out, model, ds, prefix=""):
    results = train.evaluate(model, ds)
    _write_json(os.path.join(out, f"{prefix}metrics.json"), _metrics_doc(results))
    curves, files = {}, [f"{prefix}metrics.json"]
    for name, r in results.items():
        idx = ds.indices(name)
        if r["auc"] is None:
            continue
        curves[name] = metrics.roc_auc(r["scores"], ds.y[idx])
        curves[name].to_csv(os.path.join(out, f"{prefix}roc_{name}.csv"))
        files.append(f"{prefix}roc_{name}.csv")
    if curves:
        plotting.roc_curves(curves, os.path.join(out, f"{prefix}roc.png"))
        files.append(f"{prefix}roc.png")
    return results, files


def cmd_train(args, cfg):
    started = _start("train", cfg)
    stack, points = _load_inputs(cfg)
    ds = _dataset(cfg, stack, points)
    spec = model_spec(cfg, stack.n_factors)
    model = backbones.build(spec, cfg["seed"])

    def progress(epoch, rep):
        log.info("epoch %d train %.4f val %.4f acc %.3f lr %g", epoch, rep.train_loss[-1],
                 rep.val_loss[-1], rep.val_accuracy[-1], rep.lr[-1])

    report = train.train(model, ds, train_config(cfg), progress)
    out = cfg["out"]
    meta = {"factors": list(ds.factors), "mean": ds.mean.tolist(), "std": ds.std.tolist(),
            "seed": cfg["seed"], "best_epoch": report.best_epoch}
    backbones.save(model, os.path.join(out, "model.ffsm"), meta)
    report.to_json(os.path.join(out, "train_report.json"))
    plotting.training_curves(report, os.path.join(out, "training_curves.png"))
    results, files = _write_eval(out, model, ds)
    _finish("train", cfg, started,
            ["model.ffsm", "train_report.json", "training_curves.png", *files])
    test = results.get("test", {})
    print(f"best epoch {report.best_epoch}, test AUC {test.get('auc')}")


def cmd_eval(args, cfg):
    started = _start("eval", cfg)
    model, meta = _load_model(args.model)
    stack, points = _load_inputs(cfg)
    if tuple(meta["factors"]) != stack.factors:
        raise ConfigError("stack factor order differs from the model's training factors")
    cfg = copy.deepcopy(cfg)
    cfg["model"]["patch"] = model.spec.patch
    ds = _dataset(cfg, stack, points, meta["mean"], meta["std"])
    results, files = _write_eval(cfg["out"], model, ds, prefix="eval_")
    _finish("eval", cfg, started, files)
    for name, r in results.items():
        print(f"{name}: accuracy {r['accuracy']} AUC {r['auc']}")


def cmd_map(args, cfg):
    started = _start("map", cfg)
    model, meta = _load_model(args.model)
    stack, points = _load_inputs(cfg)
    mc = cfg["map"]
    pmap = mapping.predict_map(model, stack, np.asarray(meta["mean"]), np.asarray(meta["std"]),
                               meta["factors"], mc["tile_size"])
    smap = mapping.build_map(pmap, points, mc["classes"], mc["jenks_samples"], cfg["seed"])
    out = cfg["out"]
    mapping.write_probability(pmap, os.path.join(out, "probability.ffstack"),
                              os.path.join(out, "probability.pgm"), stack.cell_size)
    mapping.write_classes(smap, os.path.join(out, "classes.csv"), os.path.join(out, "classes.pgm"))
    mapping.write_stats(smap, os.path.join(out, "map_stats.json"))
    plotting.susceptibility_map(smap, os.path.join(out, "map.png"), points)
    plotting.class_stats(smap, os.path.join(out, "class_stats.png"))
    _finish("map", cfg, started, ["probability.ffstack", "probability.pgm", "classes.csv",
                                  "classes.pgm", "map_stats.json", "map.png", "class_stats.png"])
    for row in smap.table():
        print(f"{row['class']:>9}: area {row['area_pct']:.2f}%  events {row['event_pct']:.2f}%")


def cmd_jackknife(args, cfg):
    started = _start("jackknife", cfg)
    stack, points = _load_inputs(cfg)
    ds = _dataset(cfg, stack, points)
    jc = cfg["jackknife"]
    jobs = args.jobs if args.jobs is not None else jc["jobs"]
    report = sensitivity.jackknife(ds, model_spec(cfg, stack.n_factors), train_config(cfg),
                                   cfg["seed"], jc["mode"], jobs)
    out = cfg["out"]
    report.write(os.path.join(out, "jackknife.csv"), os.path.join(out, "jackknife.json"))
    plotting.jackknife_bars(report, os.path.join(out, "jackknife.png"))
    _finish("jackknife", cfg, started, ["jackknife.csv", "jackknife.json", "jackknife.png"])
    print("ranking: " + ", ".join(report.ranking()[:5]))


BENCH_ROWS = (("Training set", "train"), ("Testing set", "test"))
BENCH_METRICS = (("Accuracy", "accuracy"), ("Precision", "precision"), ("Recall", "recall"),
                 ("F1-score", "f1"), ("AUC", "auc"))


def _bench_one(cfg, ds, kind, placement):
    # width / depth_scale of 0 fall back to each backbone's own default
    m = {**cfg["model"], "kind": kind, "placement": placement}
    try:
        spec = backbones.BackboneSpec(factors=len(ds.factors), **m)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"model: {exc}") from None
    model = backbones.build(spec, cfg["seed"])
    train.train(model, ds, train_config(cfg))
    res = train.evaluate(model, ds, ("train", "test"))
    row = {"kind": kind, "placement": placement, "parameters": backbones.param_count(model)}
    for subset, r in res.items():
        for _, key in BENCH_METRICS:
            row[f"{subset}_{key}"] = r[key]
    row["auc"] = res["test"]["auc"]
    return row


def cmd_bench(args, cfg):
    started = _start("bench-placements", cfg)
    stack, points = _load_inputs(cfg)
    ds = _dataset(cfg, stack, points)
    bc = cfg["bench"]
    for k in bc["kinds"]:
        if k not in backbones.KINDS:
            raise ConfigError(f"bench: unknown kind {k!r}")
    for p in bc["placements"]:
        if p not in backbones.PLACEMENTS:
            raise ConfigError(f"bench: unknown placement {p!r}")
    combos = [(k, p) for k in bc["kinds"] for p in bc["placements"]]
    jobs = args.jobs if args.jobs is not None else bc["jobs"]
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        rows = list(pool.map(lambda kp: _bench_one(cfg, ds, *kp), combos))
    out = cfg["out"]
    write_bench_csv(rows, os.path.join(out, "bench.csv"))
    _write_json(os.path.join(out, "bench.json"), _clean(rows))
    plotting.bench_chart(rows, os.path.join(out, "bench.png"))
    _finish("bench-placements", cfg, started, ["bench.csv", "bench.json", "bench.png"])
    print(f"trained {len(rows)} configurations")


def _fmt(v):
    return "" if v is None else f"{v:.4f}"


def write_bench_csv(rows, path):
    """Metric rows by model columns, ending in a parameter-count row."""
    header = ["Subset", "Performance metric"] + [
        f"{KIND_LABEL[r['kind']]} {PLACEMENT_LABEL[r['placement']]}" for r in rows]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for title, subset in BENCH_ROWS:
            for label, key in BENCH_METRICS:
                w.writerow([title, label] + [_fmt(r.get(f"{subset}_{key}")) for r in rows])
        w.writerow(["", "Number of parameters"] + [r["parameters"] for r in rows])


# -- entry point -----------------------------------------------------------------

def _common(p, model=False, jobs=False):
    p.add_argument("--config", "-c", help="JSON run config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. model.placement=in or train.max_epochs=20")
    if model:
        p.add_argument("--model", "-m", required=True, help="trained model file")
    if jobs:
        p.add_argument("--jobs", type=int, help="parallel training jobs")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="ffsm", description="Flash-flood susceptibility modelling toolkit")
    parser.add_argument("--version", action="version", version=f"ffsm {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic watershed and inventory")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--width", type=int, default=64)
    s.add_argument("--height", type=int, default=64)
    s.add_argument("--n-flood", type=int, default=261)
    s.add_argument("--patch", type=int, default=32)
    s.add_argument("--force", action="store_true", help="write into a non-empty directory")

    _common(sub.add_parser("factors", help="correlation and VIF screening"))
    _common(sub.add_parser("train", help="train one model"))
    _common(sub.add_parser("eval", help="evaluate a trained model"), model=True)
    _common(sub.add_parser("map", help="susceptibility map and class statistics"), model=True)
    _common(sub.add_parser("jackknife", help="leave-one-factor-out sensitivity"), jobs=True)
    _common(sub.add_parser("bench-placements", help="train every backbone x placement"),
            jobs=True)
    return parser


COMMANDS = {"factors": cmd_factors, "train": cmd_train, "eval": cmd_eval, "map": cmd_map,
            "jackknife": cmd_jackknife, "bench-placements": cmd_bench}


def run(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "synth":
        return cmd_synth(args)
    cfg = load_config(args.config, args.seed, args.out, args.set)
    return COMMANDS[args.command](args, cfg)


def main(argv=None):
    try:
        run(argv)
    except FfsmError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except (ArithmeticError, FloatingPointError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
