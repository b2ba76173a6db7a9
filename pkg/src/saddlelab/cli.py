"""Command-line interface.

Subcommands: train, spectrum, cnc-check, sweep-rho, gen-data. Every failure
exits nonzero after printing a one-line machine-readable JSON error record to
stderr. The SADDLELAB_OUTPUT_DIR environment variable overrides any output
directory; everything else is config-file driven.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import __version__
from .cncverify import CncSettings, save_theorem1_report, theorem1_report
from .datagen import ClassGeometry, ImbalanceProfile, generate, save_dataset
from .errors import SaddleLabError
from .harness import (
    _build_data,
    config_from_dict,
    load_checkpoint,
    load_config,
    resolve_output_dir,
    run_experiment,
    sweep_rho,
)
from .linalg import SeededRng
from .model import ParamVector, param_layout
from .spectral import classwise_spectrum_report, save_spectrum


def _parse_float_list(text: str):
    try:
        return [float(x) for x in text.split(",") if x.strip() != ""]
    except ValueError as exc:
        raise SaddleLabError(f"could not parse float list {text!r}: {exc}") from exc


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    result = run_experiment(cfg, out_dir=args.out, resume_from=args.resume)
    final = result.metrics[-1] if result.metrics else None
    print(f"run complete: {result.out_dir}")
    if final is not None:
        tail = "" if final.tail_acc is None else f" tail_acc={final.tail_acc:.4f}"
        print(f"epoch {final.epoch}: overall_acc={final.overall_acc:.4f}{tail}")
    return 0


def _load_checkpoint_context(path):
    ckpt = load_checkpoint(path)
    cfg = config_from_dict(ckpt.config)
    layout, _ = param_layout(cfg.model)
    w = ParamVector(ckpt.params, layout)
    ds, test, groups = _build_data(cfg, SeededRng(cfg.seed))
    return ckpt, cfg, w, ds, test, groups


def cmd_spectrum(args) -> int:
    ckpt, cfg, w, ds, _, _ = _load_checkpoint_context(args.checkpoint)
    if args.class_id == "all":
        classes = list(range(ds.num_classes))
    else:
        classes = [int(args.class_id)]
    out = resolve_output_dir(str(Path(args.checkpoint).parent), args.out)
    out.mkdir(parents=True, exist_ok=True)
    loss = cfg.loss.bind(ds.class_counts)
    entries = classwise_spectrum_report(
        cfg.model, w, ds, loss, classes, cfg.spectral,
        SeededRng(cfg.seed).child("spectrum", ckpt.epoch),
    )
    meta = {"epoch": ckpt.epoch, "seed": cfg.seed, "config_hash": ckpt.config_hash,
            "code_version": __version__,
            "generalized_hessian": cfg.model.activation == "relu"}
    for entry in entries:
        tag = "all" if entry.class_id is None else str(entry.class_id)
        save_spectrum(entry, out / f"spectrum_{ckpt.epoch}_class{tag}.csv",
                      out / f"spectrum_{ckpt.epoch}_class{tag}.json", meta)
        lam = entry.extremes
        label = "full dataset" if entry.class_id is None else f"class {entry.class_id}"
        print(f"{label}: lambda_min={lam.lambda_min:.6g} lambda_max={lam.lambda_max:.6g} "
              f"ratio={entry.ratio:.6g}")
    print(f"wrote spectra to {out}")
    return 0


def cmd_cnc_check(args) -> int:
    ckpt, cfg, w, ds, _, _ = _load_checkpoint_context(args.checkpoint)
    rhos = _parse_float_list(args.rho)
    if not rhos:
        raise SaddleLabError("--rho list is empty")
    out = resolve_output_dir(str(Path(args.checkpoint).parent), args.out)
    out.mkdir(parents=True, exist_ok=True)
    settings = CncSettings(batch_size=cfg.cnc.batch_size,
                           num_batches=cfg.cnc.num_batches,
                           mode=args.mode or cfg.cnc.mode,
                           spectral=cfg.spectral)
    loss = cfg.loss.bind(ds.class_counts)
    rows = theorem1_report(cfg.model, w, ds, loss, rhos, settings,
                           SeededRng(cfg.seed).child("cnc", ckpt.epoch))
    save_theorem1_report(rows, out / f"cnc_{ckpt.epoch}.csv",
                         out / f"cnc_{ckpt.epoch}.json", settings,
                         meta={"epoch": ckpt.epoch, "seed": cfg.seed,
                               "config_hash": ckpt.config_hash,
                               "code_version": __version__})
    for r in rows:
        ratio = "n/a (CNC violation)" if r.measured_ratio is None else f"{r.measured_ratio:.6g}"
        print(f"rho={r.rho:g}: measured_ratio={ratio} "
              f"predicted={(r.predicted_factor):.6g} lambda_min={r.lambda_min:.6g}")
    print(f"wrote report to {out}")
    return 0


def cmd_sweep_rho(args) -> int:
    cfg = load_config(args.config)
    rhos = _parse_float_list(args.rhos)
    if not rhos:
        raise SaddleLabError("--rhos list is empty")
    rows = sweep_rho(cfg, rhos, out_dir=args.out)
    fmt = lambda v, spec: "n/a" if v is None else format(v, spec)
    for r in rows:
        if r.error is not None:
            print(f"rho={r.rho:g}: FAILED ({r.error})")
        else:
            print(f"rho={r.rho:g}: overall_acc={fmt(r.overall_acc, '.4f')} "
                  f"tail_acc={fmt(r.tail_acc, '.4f')} "
                  f"tail_lambda_min={fmt(r.tail_lambda_min, '.6g')}")
    return 0


def cmd_gen_data(args) -> int:
    profile = ImbalanceProfile(kind=args.profile, num_classes=args.classes,
                               n_max=args.n_max, beta=args.beta)
    geom = ClassGeometry(input_dim=args.dim, class_mean_radius=args.radius,
                         within_class_std=args.std, mean_placement=args.placement)
    ds = generate(profile, geom, SeededRng(args.seed).child("datagen"))
    save_dataset(ds, args.out)
    print(f"wrote {len(ds)} samples across {ds.num_classes} classes to {args.out}")
    print(f"class counts: {list(ds.class_counts)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="saddlelab",
        description="Saddle-point diagnostics for class-imbalanced training.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run one experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--out", default=None, help="override the output directory")
    p.add_argument("--resume", default=None, help="resume from a checkpoint file")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("spectrum", help="class-wise spectrum at a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--class", dest="class_id", default="all", help="class index or 'all'")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_spectrum)

    p = sub.add_parser("cnc-check", help="amplification-factor report at a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--rho", required=True, help="comma-separated rho values")
    p.add_argument("--mode", choices=["unnormalized", "normalized"], default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_cnc_check)

    p = sub.add_parser("sweep-rho", help="repeat a run across rho values")
    p.add_argument("--config", required=True)
    p.add_argument("--rhos", required=True, help="comma-separated rho values")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_sweep_rho)

    p = sub.add_parser("gen-data", help="generate and save a synthetic dataset")
    p.add_argument("--profile", choices=["longtail", "step"], required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--n-max", type=int, required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--radius", type=float, default=3.0)
    p.add_argument("--std", type=float, default=1.0)
    p.add_argument("--placement", choices=["circle", "simplex"], default="circle")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SaddleLabError as exc:
        record = {"error": type(exc).__name__, "message": str(exc),
                  "command": args.command}
        print(json.dumps(record), file=sys.stderr)
        return 1
    except OSError as exc:
        record = {"error": type(exc).__name__, "message": str(exc),
                  "command": args.command}
        print(json.dumps(record), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
