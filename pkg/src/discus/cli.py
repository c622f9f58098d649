"""Command-line front end: ``discus <subcommand> [--config cfg.json] [--seed N] [--out DIR]``.

Exit status is 0 on success, 1 for configuration or input errors and 2 when
a solver diverges.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from discus.data_model import (
    ContainerError,
    DivergenceError,
    ImageSeries,
    KSpaceDataset,
    MaskSeries,
    load_container,
    save_container,
)
from discus.experiments import (
    METHODS,
    ConfigError,
    ExperimentConfig,
    build_study,
    dump_json,
    grid_search,
    report_table,
    run_method,
    run_study,
    study_mask,
    study_sens,
    study_truth,
)
from discus.metrics import evaluate
from discus.operator import add_noise, simulate_kspace

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(args):
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = _parse_value(value)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = str(args.out)
    return cfg.with_overrides(overrides) if overrides else cfg


def _out_dir(cfg):
    out = Path(cfg.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(path, kind, label):
    obj = load_container(path)
    if not isinstance(obj, kind):
        raise ConfigError(f"{label} {path} holds the wrong container kind")
    return obj


def cmd_phantom(cfg, args):
    out = _out_dir(cfg) / "reference"
    save_container(study_truth(cfg), out)
    print(out)


def cmd_mask(cfg, args):
    out = _out_dir(cfg) / "mask"
    m = study_mask(cfg)
    save_container(m, out)
    print(f"{out}  lines/frame {int(m.mask[0].sum())}  coverage {m.mask.any(axis=0).mean():.3f}")


def cmd_simulate(cfg, args):
    truth = _load(args.truth, ImageSeries, "truth") if args.truth else study_truth(cfg)
    mask = _load(args.mask, MaskSeries, "mask") if args.mask else study_mask(cfg, truth.shape[1])
    data = simulate_kspace(truth, mask, study_sens(cfg, *truth.shape[1:]))
    if cfg.snr_db is not None:
        data = add_noise(data, cfg.snr_db, cfg.seed)
    out = _out_dir(cfg) / "kspace"
    save_container(data, out)
    print(out)


def cmd_recon(cfg, args):
    if args.data:
        data = _load(args.data, KSpaceDataset, "data")
    else:
        _, data = build_study(cfg)
    recon, extras = run_method(args.method, data, cfg)
    out = _out_dir(cfg) / f"recon_{args.method}"
    save_container(recon, out)
    print(json.dumps({"recon": str(out), **extras}, sort_keys=True))


def cmd_eval(cfg, args):
    est = _load(args.recon, ImageSeries, "recon")
    ref = _load(args.ref, ImageSeries, "reference")
    rep = evaluate(est, ref).as_dict()
    if cfg.output_dir:
        dump_json(rep, _out_dir(cfg) / "eval.json")
    print(json.dumps({"nmse_db": rep["nmse_db"], "ssim": rep["ssim"]}))


def cmd_report(cfg, args):
    rep = run_study(cfg)
    print(report_table(rep), end="")


def cmd_grid(cfg, args):
    best, board = grid_search(cfg, args.method, workers=args.workers)
    for row in board:
        print(f"{row['nmse_db'] if isinstance(row['nmse_db'], str) else round(row['nmse_db'], 3):>10}  {json.dumps(row['params'], sort_keys=True)}")
    print("best", json.dumps(best, sort_keys=True))


def _global_flags(suppress):
    # Flags work before or after the subcommand; the subcommand copy must not
    # overwrite values given earlier with its own defaults.
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    g = argparse.ArgumentParser(add_help=False)
    g.add_argument("--config", help="experiment config (JSON)", **kw)
    g.add_argument("--seed", type=int, help="override the config seed", **kw)
    g.add_argument("--out", help="output directory", **kw)
    g.add_argument("--set", action="append", metavar="KEY=VALUE", help="override e.g. fit.lam=2 (repeatable)", **kw)
    g.add_argument("-v", "--verbose", action="store_true", **kw)
    return g


def build_parser():
    common = _global_flags(suppress=True)
    p = argparse.ArgumentParser(prog="discus", description=__doc__.splitlines()[0], parents=[_global_flags(False)])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("phantom", parents=[common], help="write the ground-truth series")
    sub.add_parser("mask", parents=[common], help="write the sampling mask")
    s = sub.add_parser("simulate", parents=[common], help="ground truth -> k-space container")
    s.add_argument("--truth")
    s.add_argument("--mask")
    r = sub.add_parser("recon", parents=[common], help="reconstruct a k-space container")
    r.add_argument("--method", choices=METHODS, required=True)
    r.add_argument("--data", help="kspace container; default builds the study's data")
    e = sub.add_parser("eval", parents=[common], help="NMSE / SSIM of a recon against a reference")
    e.add_argument("--recon", required=True)
    e.add_argument("--ref", required=True)
    sub.add_parser("report", parents=[common], help="run the full study and write reports")
    g = sub.add_parser("grid", parents=[common], help="grid search over cfg.grid")
    g.add_argument("--method", choices=METHODS, required=True)
    g.add_argument("--workers", type=int, default=1)
    return p


COMMANDS = {
    "phantom": cmd_phantom,
    "mask": cmd_mask,
    "simulate": cmd_simulate,
    "recon": cmd_recon,
    "eval": cmd_eval,
    "report": cmd_report,
    "grid": cmd_grid,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
        COMMANDS[args.command](cfg, args)
    except DivergenceError as exc:
        print(f"error: numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ConfigError, ContainerError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
