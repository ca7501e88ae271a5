"""Command-line front end.

Subcommands wire the library into reproducible pipelines::

    finn generate --preset synthetic-train --out data/train
    finn train --data data/train --out runs/base --epochs 200 --seed 0
    finn predict --ckpt runs/base/best.bin --preset synthetic-test --out pred/
    finn evaluate --ckpt runs/base/best.bin --train data/train --test data/test
    finn extract-retardation --ckpt runs/base/best.bin --out retardation.csv
    finn experiment --preset synthetic --seeds 10 --out runs/exp

Every run writes a ``manifest`` echoing its resolved configuration, so any
output can be regenerated from the manifest alone. Figures are rendered next
to the delimited output unless ``--no-figures`` is given. The environment
variable ``FINN_LOG`` (quiet, info, debug) controls verbosity.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dataio, model, report, train
from .errors import (ConfigError, DataFormatError, DomainError, FinnError,
                     NumericalError, ShapeError)
from .fvm import retardation_freundlich

log = logging.getLogger("finn.cli")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


def _setup_logging() -> None:
    level = {"quiet": logging.WARNING, "info": logging.INFO,
             "debug": logging.DEBUG}.get(os.environ.get("FINN_LOG", "info"))
    if level is None:
        level = logging.INFO
    handler = logging.StreamHandler(sys.stdout)
    handler.setFormatter(logging.Formatter("%(message)s"))
    root = logging.getLogger("finn")
    root.handlers.clear()
    root.addHandler(handler)
    root.setLevel(level)


def _write_manifest(directory: Path, command: str, args: dict) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    entries = {"command": command}
    entries.update({k: v for k, v in args.items() if v is not None})
    dataio.write_config(directory / "manifest", entries)


def _load_model_bundle(ckpt: str, model_cfg: str | None):
    ckpt_path = Path(ckpt)
    params = dataio.load_checkpoint(ckpt_path)
    cfg_path = Path(model_cfg) if model_cfg else ckpt_path.parent / "model.cfg"
    if not cfg_path.exists():
        raise DataFormatError(f"model config not found at {cfg_path}; "
                              "pass --model-config explicitly")
    config = model.model_config_from_entries(dataio.read_config(cfg_path))
    return params, config


# -- subcommand implementations -------------------------------------------------

def _cmd_generate(args) -> int:
    scenario = dataio.preset(args.preset)
    data = dataio.generate_scenario_dataset(scenario)
    if args.noise > 0:
        data = train.add_noise(data, args.noise, args.seed)
    out = Path(args.out)
    dataio.write_dataset(out, data)
    _write_manifest(out, "generate", {"preset": args.preset, "out": args.out,
                                      "noise": args.noise, "seed": args.seed})
    log.info("wrote %d rows x %d volumes to %s", data.t_grid.size,
             data.n_volumes, out)
    if args.figures:
        report.plot_dataset_overview(data, out / "overview.svg",
                                     title=args.preset)
    return EXIT_OK


def _cmd_train(args) -> int:
    data = dataio.read_dataset(args.data)
    hi_default = min(500, data.t_grid.size - 1)
    lo, hi = args.window if args.window else (0, hi_default)
    config = model.model_config_from_meta(data.meta, known_d_e=args.known_d_e,
                                          d_init=args.d_init)
    if args.known_d_e is not None:
        config.d_ct_kind = "fixed"
    tc = train.TrainConfig(epochs=args.epochs, lr=args.lr, seed=args.seed,
                           noise_sigma=args.noise, train_window=(lo, hi),
                           mask=train.mask_from_name(args.mask),
                           clip_norm=args.clip_norm)
    result = train.train_finn(config, tc, data)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataio.save_checkpoint(out / "checkpoint.bin", result.params)
    dataio.save_checkpoint(out / "best.bin", result.best_params)
    dataio.write_config(out / "model.cfg", model.model_config_entries(config))
    history_lines = ["epoch,loss"] + [f"{i},{v:.17g}" for i, v in
                                      enumerate(result.history)]
    (out / "history.csv").write_text("\n".join(history_lines) + "\n")
    _write_manifest(out, "train", {
        "data": args.data, "out": args.out, "epochs": args.epochs,
        "seed": args.seed, "mask": args.mask, "lr": args.lr,
        "noise": args.noise, "window.lo": lo, "window.hi": hi,
        "d_init": config.d_init, "known_d_e": args.known_d_e,
        "clip_norm": args.clip_norm,
    })
    if result.history:
        log.info("final loss %.6e, best %.6e", result.history[-1],
                 result.best_loss)
    if args.figures and result.history:
        report.plot_history(result.history, out / "history.svg")
    return EXIT_OK


def _cmd_predict(args) -> int:
    params, config = _load_model_bundle(args.ckpt, args.model_config)
    scenario = dataio.preset(args.preset)
    from dataclasses import replace
    config = replace(config, grid=scenario.grid, bc_left=scenario.bc_left,
                     bc_right=scenario.bc_right)
    t_grid = scenario.t_grid()
    if args.t_end is not None:
        n_steps = max(2, int(round(args.t_end / scenario.dt)))
        t_grid = np.arange(n_steps) * scenario.dt
    from .fvm import FieldPair
    data = model.rollout(params, config, FieldPair.zeros(config.grid.n_volumes),
                         t_grid)
    data.meta["scenario"] = scenario.name
    data.meta["dt"] = dataio.fmt(scenario.dt)
    data.meta["c_s"] = dataio.fmt(scenario.c_s)
    out = Path(args.out)
    dataio.write_dataset(out, data)
    _write_manifest(out, "predict", {"ckpt": args.ckpt, "preset": args.preset,
                                     "out": args.out, "t_end": args.t_end})
    if args.figures:
        report.plot_dataset_overview(data, out / "overview.svg",
                                     title=f"prediction ({scenario.name})")
    log.info("wrote prediction (%d rows) to %s", t_grid.size, out)
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    params, config = _load_model_bundle(args.ckpt, args.model_config)
    train_data = dataio.read_dataset(args.train)
    test_data = dataio.read_dataset(args.test)
    rep = train.evaluate(params, config, train_data, test_data, split=args.split)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["window,mse"] + [f"{k},{v:.17g}" for k, v in rep.as_dict().items()]
    (out / "report.csv").write_text("\n".join(lines) + "\n")
    _write_manifest(out, "evaluate", {"ckpt": args.ckpt, "train": args.train,
                                      "test": args.test, "out": args.out,
                                      "split": args.split})
    if args.figures:
        report.plot_mse_bars(rep.as_dict(), out / "report.svg")
    print(f"{'window':<14}{'MSE':>14}")
    for k, v in rep.as_dict().items():
        print(f"{k:<14}{v:>14.6e}")
    return EXIT_OK


def _cmd_extract_retardation(args) -> int:
    params, config = _load_model_bundle(args.ckpt, args.model_config)
    c = np.linspace(args.c_min, args.c_max, args.points)
    r = model.extract_retardation(params, config, c)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = ["c,retardation"] + [f"{ci:.17g},{ri:.17g}" for ci, ri in zip(c, r)]
    out.write_text("\n".join(lines) + "\n")
    dataio.write_config(out.with_suffix(out.suffix + ".manifest"), {
        "command": "extract-retardation", "ckpt": args.ckpt, "out": args.out,
        "c_min": args.c_min, "c_max": args.c_max, "points": args.points,
    })
    if args.figures:
        curves = {"learned": r}
        if args.reference is not None:
            soil = dataio.parse_soil(dataio.read_config(args.reference))
            curves["reference"] = retardation_freundlich(c, soil)
        report.plot_retardation(c, curves, out.with_suffix(".svg"))
    log.info("wrote %d retardation samples to %s", args.points, out)
    return EXIT_OK


def _cmd_experiment(args) -> int:
    name = args.preset
    if name == "synthetic":
        train_scn, test_scn = dataio.preset("synthetic-train"), dataio.preset("synthetic-test")
    else:
        raise ConfigError(f"experiment supports the 'synthetic' preset, got {name!r}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    log.info("generating ground-truth datasets")
    train_data = dataio.generate_scenario_dataset(train_scn)
    test_data = dataio.generate_scenario_dataset(test_scn)
    dataio.write_dataset(out / "data" / "train", train_data)
    dataio.write_dataset(out / "data" / "test", test_data)

    config = model.model_config_from_meta(train_data.meta)
    hi = min(500, train_data.t_grid.size - 1)
    tc = train.TrainConfig(epochs=args.epochs, lr=args.lr, seed=args.seed,
                           noise_sigma=args.noise, train_window=(0, hi))
    rep = train.run_experiment(config, tc, train_data, test_data,
                               n_seeds=args.seeds, out_dir=out)
    _write_manifest(out, "experiment", {
        "preset": name, "seeds": args.seeds, "out": args.out,
        "epochs": args.epochs, "lr": args.lr, "noise": args.noise,
        "seed": args.seed,
    })
    if args.figures:
        report.plot_seed_spread(rep.outcomes, out / "seed_spread.svg")
    print(f"{'window':<14}{'mean':>14}{'std':>14}")
    for k in ("training", "extrapolated", "unseen"):
        print(f"{k:<14}{rep.mean[k]:>14.6e}{rep.std[k]:>14.6e}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="finn",
        description="Finite-volume network pipelines for diffusion-sorption transport")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_figures_flag(p):
        p.add_argument("--no-figures", dest="figures", action="store_false",
                       help="skip rendering figures next to the output")

    p = sub.add_parser("generate", help="simulate a preset scenario to a dataset directory")
    p.add_argument("--preset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--noise", type=float, default=0.0,
                   help="Gaussian noise sigma added to the stored fields")
    p.add_argument("--seed", type=int, default=0)
    add_figures_flag(p)
    p.set_defaults(fn=_cmd_generate)

    p = sub.add_parser("train", help="fit a model to a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mask", choices=("full", "breakthrough", "profile"),
                   default="full")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--noise", type=float, default=1e-5,
                   help="training-noise sigma (0 disables)")
    p.add_argument("--window", type=int, nargs=2, metavar=("LO", "HI"),
                   help="inclusive training row range (default 0..min(500, T-1))")
    p.add_argument("--d-init", dest="d_init", type=float, default=None,
                   help="initial diffusivity scale (default from stability bound)")
    p.add_argument("--known-d-e", dest="known_d_e", type=float, default=None,
                   help="fix the effective diffusion coefficient (experimental mode)")
    p.add_argument("--clip-norm", dest="clip_norm", type=float, default=None)
    add_figures_flag(p)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("predict", help="closed-loop rollout under a preset scenario")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--preset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--t-end", dest="t_end", type=float, default=None)
    p.add_argument("--model-config", dest="model_config", default=None)
    add_figures_flag(p)
    p.set_defaults(fn=_cmd_predict)

    p = sub.add_parser("evaluate", help="three-window MSE report for a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", default=".")
    p.add_argument("--split", type=int, default=500)
    p.add_argument("--model-config", dest="model_config", default=None)
    add_figures_flag(p)
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("extract-retardation",
                       help="write the learned retardation curve R(c) as CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--c-min", dest="c_min", type=float, default=0.01)
    p.add_argument("--c-max", dest="c_max", type=float, default=1.0)
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--model-config", dest="model_config", default=None)
    p.add_argument("--reference", default=None,
                   help="flat config with soil.* keys to overlay the true isotherm")
    add_figures_flag(p)
    p.set_defaults(fn=_cmd_extract_retardation)

    p = sub.add_parser("experiment", help="multi-seed training and aggregate report")
    p.add_argument("--preset", default="synthetic")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--noise", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    add_figures_flag(p)
    p.set_defaults(fn=_cmd_experiment)

    return parser


def run_cli(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help, 2 for usage problems
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.fn(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_USAGE
    except (DataFormatError, ShapeError, DomainError, FileNotFoundError) as exc:
        log.error("data error: %s", exc)
        return EXIT_DATA
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except FinnError as exc:  # anything else from this package
        log.error("error: %s", exc)
        return EXIT_DATA


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
