"""Command-line front end: ``ttfs-vlsi {fetch-data,train,eval,sweep,export-traces}``.

Configuration is an INI file; ``--seed``, ``--out-dir`` and ``--workers``
override the corresponding keys.  Every output file carries the resolved
configuration, so re-running it reproduces the same bytes.

Exit status: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import itertools
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .circuitmap import SWEEP_COLUMNS, InfeasibleError, sweep_and_select
from .core import CircuitParams, ConfigError, ConstraintConfig, init_network, validate_config
from .dataio import (
    ArchiveError,
    DatasetError,
    IdxError,
    digits_dataset,
    export_traces,
    fetch_dataset,
    load_model,
    save_model,
    toy_dataset,
    write_csv,
    write_json,
)
from .simulator import potential_stats, run_network
from .trainer import TrainConfig, TrainingDiverged, evaluate, train

log = logging.getLogger("ttfs_vlsi")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

EVAL_COLUMNS = (
    "cell",
    "t_clock_model",
    "discretize",
    "levels",
    "w_min",
    "v_min",
    "clamp",
    "sigma_vth",
    "accuracy",
    "mean_earliest_output_time",
    "mean_earliest_output_tick",
    "no_spike_rate",
    "tie_rate",
    "n_samples",
)
HISTORY_COLUMNS = ("epoch", "train_loss", "train_accuracy", "val_accuracy")
STATS_COLUMNS = ("sample", "v_min_overall", "v_min_pre_earliest")


class UsageError(Exception):
    pass


def _read_config(path):
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if path:
        if not Path(path).exists():
            raise UsageError(f"config file not found: {path}")
        cp.read(path)
    return cp


def _section(cp, name) -> dict:
    return dict(cp[name]) if cp.has_section(name) else {}


def _opt_float(text):
    text = str(text).strip().lower()
    return None if text in ("", "none", "off") else float(text)


def _floats(text):
    return [_opt_float(tok) for tok in str(text).replace(",", " ").split()]


def _resolved(cp) -> dict:
    return {name: dict(cp[name]) for name in cp.sections()}


def _resolve_seed(args, cp):
    if args.seed is not None:
        return int(args.seed)
    return int(cp.get("run", "seed", fallback="0"))


def _out_dir(args, cp) -> Path:
    path = Path(args.out_dir or cp.get("run", "out_dir", fallback="out"))
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_data(cp, args):
    data = _section(cp, "data")
    name = data.get("dataset", "mnist")
    limit_train = int(data["limit_train"]) if "limit_train" in data else None
    limit_test = int(data["limit_test"]) if "limit_test" in data else None
    if name == "toy":
        train_set = test_set = toy_dataset()
    elif name == "digits":
        train_set, test_set = digits_dataset(seed=int(data.get("split_seed", "0")))
    else:
        train_set, test_set = fetch_dataset(name, data.get("mirror") or None, getattr(args, "cache_dir", None))
    if limit_train is not None:
        train_set = train_set.subset(limit_train)
    if limit_test is not None:
        test_set = test_set.subset(limit_test)
    return name, train_set, test_set


def _train_config(cp, seed) -> TrainConfig:
    sec = _section(cp, "train")
    kwargs = {}
    for field, value in sec.items():
        if field not in TrainConfig.__dataclass_fields__:
            raise UsageError(f"unknown [train] key {field!r}")
        default = TrainConfig.__dataclass_fields__[field].default
        kwargs[field] = type(default)(value) if not isinstance(default, str) else value
    kwargs["seed"] = seed
    return TrainConfig(**kwargs)


def _constraint_base(cp, seed) -> ConstraintConfig:
    sec = _section(cp, "constraints")
    return ConstraintConfig(
        t_clock_model=_opt_float(sec.get("t_clock_model", "none")),
        w_min=_opt_float(sec.get("w_min", "none")),
        v_min=_opt_float(sec.get("v_min", "none")),
        sigma_vth=float(sec.get("sigma_vth", "0")),
        horizon=float(sec.get("horizon", "15")),
        seed=seed,
    )


def _circuit(cp) -> CircuitParams:
    sec = _section(cp, "circuit")
    defaults = asdict(CircuitParams())
    return CircuitParams(**{k: float(sec.get(k, v)) for k, v in defaults.items()})


def cmd_fetch(args, cp):
    name = args.dataset or cp.get("data", "dataset", fallback="mnist")
    mirror = args.mirror or cp.get("data", "mirror", fallback=None)
    train_set, test_set = fetch_dataset(name, mirror, args.cache_dir)
    print(f"{name}: {len(train_set)} train / {len(test_set)} test samples")
    return EXIT_OK


def cmd_train(args, cp):
    seed = _resolve_seed(args, cp)
    out = _out_dir(args, cp)
    tcfg = _train_config(cp, seed)
    name, train_set, test_set = _load_data(cp, args)
    msec = _section(cp, "model")
    hidden = [int(h) for h in msec.get("hidden", "800").replace(",", " ").split()]
    n_classes = int(msec.get("classes", "10"))
    sizes = [train_set.images.shape[1]] + hidden + [n_classes]
    model = init_network(sizes, float(msec.get("tau", "5")), float(msec.get("v_th", "1")), seed)
    result = train(model, train_set, tcfg, validation=test_set)
    meta = {"command": "train", "config": _resolved(cp), "dataset": name, "layer_sizes": sizes, "train_config": asdict(tcfg), "seed": seed}
    final = evaluate(result.model, test_set)
    save_model(result.model, out / "model.json", {**meta, "test_accuracy": final.accuracy})
    write_csv(result.history, out / "train_history.csv", HISTORY_COLUMNS, meta)
    print(f"test accuracy {final.accuracy:.4f}; wrote {out / 'model.json'}")
    return EXIT_OK


def _grid_cells(cp, model):
    grid = _section(cp, "grid")
    mode = grid.get("mode", "cartesian")
    n_layers = model.n_layers
    flag_sets = {
        "all": (True,) * n_layers,
        "input": (True,) + (False,) * (n_layers - 1),
        "output": (False,) * (n_layers - 1) + (True,),
        "hidden": (False,) + (True,) * (n_layers - 2) + (False,),
        "none": (False,) * n_layers,
    }
    clamp_sets = {
        "all": (True,) * (n_layers - 1),
        "hidden": (True,) * (n_layers - 2) + (False,),
        "output": (False,) * (n_layers - 2) + (True,),
    }
    axes = {
        "t_clock_model": _floats(grid.get("t_clock_model", "none")),
        "discretize": grid.get("discretize", "all").replace(",", " ").split(),
        "levels": _floats(grid.get("levels", "none")),
        "v_min": _floats(grid.get("v_min", "none")),
        "clamp": grid.get("clamp", "all").replace(",", " ").split(),
        "sigma_vth": _floats(grid.get("sigma_vth", "0")),
    }
    for key in ("discretize",):
        for v in axes[key]:
            if v not in flag_sets:
                raise UsageError(f"unknown discretize set {v!r}")
    for v in axes["clamp"]:
        if v not in clamp_sets:
            raise UsageError(f"unknown clamp set {v!r}")
    names = list(axes)
    if mode == "cartesian":
        combos = [dict(zip(names, vals)) for vals in itertools.product(*(axes[n] for n in names))]
    elif mode == "axis":
        base = {n: axes[n][0] for n in names}
        combos = [base]
        for n in names:
            for v in axes[n][1:]:
                combos.append({**base, n: v})
    else:
        raise UsageError(f"unknown grid mode {mode!r}")
    max_w = max(float(np.abs(w).max()) for w in model.weights)
    cells = []
    for c in combos:
        w_min = None if c["levels"] is None else max_w / c["levels"]
        if c["t_clock_model"] is None:
            c = {**c, "discretize": "none"}
        if c["v_min"] is None:
            c = {**c, "clamp": "none"}
        disc = flag_sets[c["discretize"]]
        clamp = clamp_sets.get(c["clamp"], (False,) * (n_layers - 1))
        cells.append((c, disc, clamp, w_min))
    return cells


def cmd_eval(args, cp):
    seed = _resolve_seed(args, cp)
    out = _out_dir(args, cp)
    archive = load_model(args.model)
    model = archive.model
    name, _, test_set = _load_data(cp, args)
    base = _constraint_base(cp, seed)
    rows = []
    for k, (c, disc, clamp, w_min) in enumerate(_grid_cells(cp, model)):
        cfg = ConstraintConfig(
            t_clock_model=c["t_clock_model"],
            discretize=disc,
            w_min=w_min,
            v_min=c["v_min"],
            clamp=clamp,
            sigma_vth=c["sigma_vth"] or 0.0,
            horizon=base.horizon,
            seed=seed,
        )
        validate_config(model, cfg)
        rep = evaluate(model, test_set, cfg, workers=args.workers)
        rows.append({"cell": k, **c, "w_min": w_min, **rep.as_row()})
        log.info("cell %d %s -> %.4f", k, c, rep.accuracy)
    meta = {"command": "eval", "config": _resolved(cp), "model": str(args.model), "dataset": name, "grid": _section(cp, "grid"), "seed": seed, "horizon": base.horizon}
    write_csv(rows, out / "eval.csv", EVAL_COLUMNS, meta)
    print(f"wrote {len(rows)} cells to {out / 'eval.csv'}")
    return EXIT_OK


def cmd_sweep(args, cp):
    seed = _resolve_seed(args, cp)
    out = _out_dir(args, cp)
    model = load_model(args.model).model
    name, _, test_set = _load_data(cp, args)
    circuit = _circuit(cp)
    sec = _section(cp, "sweep")
    grid = [g for g in _floats(sec.get("grid", "")) if g is not None]
    if not grid:
        raise UsageError("[sweep] grid is empty")
    floor = float(sec.get("floor", "0.98"))
    variant = sec.get("variant", "i")
    template = _constraint_base(cp, seed)
    template = ConstraintConfig(v_min=template.v_min, sigma_vth=template.sigma_vth, horizon=template.horizon, seed=seed)
    meta = {
        "command": "sweep",
        "config": _resolved(cp),
        "model": str(args.model),
        "dataset": name,
        "circuit": asdict(circuit),
        "grid": grid,
        "floor": floor,
        "variant": variant,
        "seed": seed,
    }
    print("circuit parameters: " + json.dumps(asdict(circuit), sort_keys=True))
    try:
        rows, op = sweep_and_select(model, test_set, circuit, grid, floor, template, variant, args.workers)
    except InfeasibleError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_RUNTIME
    write_csv([r.as_dict() for r in rows], out / "sweep.csv", SWEEP_COLUMNS, meta)
    write_json({**op.as_dict(), "config": meta}, out / "operating_point.json")
    print(f"operating point: t_model={op.t_model_ms} ms, accuracy={op.accuracy:.4f}")
    return EXIT_OK


def cmd_export_traces(args, cp):
    seed = _resolve_seed(args, cp)
    out = _out_dir(args, cp)
    model = load_model(args.model).model
    name, _, test_set = _load_data(cp, args)
    cfg = _constraint_base(cp, seed)
    meta = {"command": "export-traces", "config": _resolved(cp), "model": str(args.model), "dataset": name, "constraints": asdict(cfg), "index": args.index}
    x = test_set.images[args.index] / 255.0
    result = run_network(model, x, cfg, mode="constrained", record_traces=True, sample_index=args.index)
    export_traces(result, out / "traces.csv", out / "spikes.csv", meta)
    if args.stats_samples:
        stats_cfg = ConstraintConfig(t_clock_model=cfg.t_clock_model, horizon=cfg.horizon, seed=seed)
        results = [
            run_network(model, test_set.images[i] / 255.0, stats_cfg, mode="constrained", record_traces=True, sample_index=i)
            for i in range(min(args.stats_samples, len(test_set)))
        ]
        stats = potential_stats(results)
        rows = [
            {"sample": i, "v_min_overall": a, "v_min_pre_earliest": b}
            for i, (a, b) in enumerate(zip(stats.v_min_overall, stats.v_min_pre_earliest))
        ]
        write_csv(rows, out / "potential_stats.csv", STATS_COLUMNS, {**meta, "stats_constraints": asdict(stats_cfg)})
    print(f"wrote traces for sample {args.index} to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--seed", type=int, help="overrides [run] seed")
    common.add_argument("--out-dir", help="overrides [run] out_dir")
    common.add_argument("--workers", type=int, default=1, help="worker threads for evaluation")
    common.add_argument("--cache-dir", help="dataset cache (default: $TTFS_VLSI_CACHE or ~/.cache/ttfs_vlsi)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ttfs-vlsi", description="TTFS spiking networks under circuit constraints.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("fetch-data", parents=[common], help="download and cache a dataset")
    p.add_argument("--dataset", choices=["mnist", "fashion-mnist"])
    p.add_argument("--mirror")
    p.set_defaults(func=cmd_fetch)
    p = sub.add_parser("train", parents=[common], help="train an ideal network")
    p.set_defaults(func=cmd_train)
    p = sub.add_parser("eval", parents=[common], help="evaluate over a constraint grid")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_eval)
    p = sub.add_parser("sweep", parents=[common], help="clock-period sweep and operating point")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_sweep)
    p = sub.add_parser("export-traces", parents=[common], help="membrane traces of one sample")
    p.add_argument("--model", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--stats-samples", type=int, default=0, help="also dump potential minima for N samples")
    p.set_defaults(func=cmd_export_traces)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cp = _read_config(args.config)
        return args.func(args, cp)
    except (DatasetError, IdxError, TrainingDiverged, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (UsageError, ConfigError, ArchiveError, configparser.Error, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

if __name__ == "__main__":
    sys.exit(main())
