"""Command-line interface.

Subcommands: ``generate``, ``train``, ``eval``, ``predict``, ``gradcheck``,
``weight-trace``. Configuration resolves profile defaults, then the
``--config`` file, then flags; every config key has a flag of the same name.
Errors exit nonzero with a single ``error: <kind>: <reason>`` line on stderr.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import dataset as ds
from . import training
from .checks import run_and_report
from .errors import ContractError, FusionBankError
from .metrics import report_table


def _parse_mix(text: str) -> dict[str, float]:
    if not text.strip():
        raise ContractError("empty challenge mix")
    mix = {}
    for token in text.split(","):
        token = token.strip()
        if not token:
            continue
        if ":" in token:
            name, _, value = token.partition(":")
            mix[name.strip().upper()] = float(value)
        else:
            mix[token.upper()] = 1.0
    return mix


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--profile", choices=sorted(training.PROFILES), default="desk")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--no-afb", action="store_true", default=None,
                   help="replace the fusion bank with plain concatenation")
    p.add_argument("--no-aem", action="store_true", default=None,
                   help="drop the adaptive ensemble weighting")
    p.add_argument("--no-iigm", action="store_true", default=None,
                   help="feed bank outputs straight to the decoder")
    p.add_argument("--schemes", default=None,
                   help="comma-separated scheme subset (cb,sv,ic,li,td)")
    p.add_argument("--input-size", type=int, default=None)
    p.add_argument("--channels", default=None, help="channel widths of levels 2..5")
    p.add_argument("--decoder-width", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    for i in (2, 3, 4, 5):
        p.add_argument(f"--lambda{i}", type=float, default=None)
    p.add_argument("--use-smooth", default=None, help="true/false")
    p.add_argument("--use-dice", default=None, help="true/false")


def _config_from_args(args) -> training.RunConfig:
    overrides = {
        "train_data": getattr(args, "data", None),
        "val_data": getattr(args, "val", None),
        "seed": args.seed,
        "out_dir": args.out,
        "no_afb": args.no_afb,
        "no_aem": args.no_aem,
        "no_iigm": args.no_iigm,
        "schemes": training._parse_schemes(args.schemes) if args.schemes else None,
        "input_size": args.input_size,
        "channels": tuple(int(c) for c in args.channels.split(",")) if args.channels else None,
        "decoder_width": args.decoder_width,
        "lr": args.lr,
        "batch_size": args.batch_size,
        "epochs": args.epochs,
        "lambda2": args.lambda2,
        "lambda3": args.lambda3,
        "lambda4": args.lambda4,
        "lambda5": args.lambda5,
        "use_smooth": training._parse_bool(args.use_smooth) if args.use_smooth else None,
        "use_dice": training._parse_bool(args.use_dice) if args.use_dice else None,
    }
    return training.resolve_config(args.profile, args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fusionbank")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a synthetic challenge dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=7)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--mix", default="CB,SV,IC,LI,TD",
                   help="challenge mix, e.g. 'LI' or 'CB:1,SV:2'")
    g.add_argument("--height", type=int, default=64)
    g.add_argument("--width", type=int, default=64)
    g.add_argument("--split", choices=("train", "test"), default="train")

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--data", required=True, help="training dataset root")
    t.add_argument("--val", default=None, help="validation dataset root")
    _add_run_flags(t)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", default=None)
    e.add_argument("--method", default="fusionbank")
    e.add_argument("--batch-size", type=int, default=8)

    p = sub.add_parser("predict", help="write the saliency map for an image pair")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--rgb", required=True)
    p.add_argument("--aux", required=True)
    p.add_argument("--out", required=True)

    c = sub.add_parser("gradcheck", help="run the finite-difference gradient battery")
    c.add_argument("--quick", action="store_true", help="skip the end-to-end model check")

    w = sub.add_parser("weight-trace", help="summarize the ensemble weight trace")
    w.add_argument("--run", required=True, help="training output directory or trace CSV")
    w.add_argument("--challenge", default=None, help="label whose scheme should dominate")
    w.add_argument("--window", type=int, default=5)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "generate":
            index = ds.generate(args.out, seed=args.seed, count=args.count,
                                mix=_parse_mix(args.mix), height=args.height,
                                width=args.width, split=args.split)
            print(f"wrote {len(index.ids)} samples to {index.root}")
        elif args.command == "train":
            cfg = _config_from_args(args)
            if args.out is None and cfg.out_dir == "runs/out":
                cfg.out_dir = "runs/train"
            result = training.train(cfg)
            print(f"finished: checkpoint {result.final_checkpoint}")
        elif args.command == "eval":
            report = training.evaluate_checkpoint(args.ckpt, args.data, args.out,
                                                  method=args.method,
                                                  batch_size=args.batch_size)
            print(report_table(report, args.method, Path(args.data).name), end="")
        elif args.command == "predict":
            training.predict(args.ckpt, args.rgb, args.aux, args.out)
            print(f"wrote {args.out}")
        elif args.command == "gradcheck":
            ok, text = run_and_report(full=not args.quick)
            print(text, end="")
            if not ok:
                print("error: ContractError: gradient check failed", file=sys.stderr)
                return 1
        elif args.command == "weight-trace":
            run = Path(args.run)
            trace = run / "weight_trace.csv" if run.is_dir() else run
            challenge = args.challenge
            if challenge is None and run.is_dir():
                challenge = _single_challenge_of(run)
            rows = training.read_weight_trace(trace)
            summary = training.weight_trace_summary(rows, challenge, window=args.window)
            print(training.format_trace_summary(summary), end="")
    except FusionBankError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: IOError: {exc}", file=sys.stderr)
        return 2
    return 0


def _single_challenge_of(run_dir: Path) -> str | None:
    """Infer the matched challenge from the run's training-data meta, if single."""
    manifest = run_dir / "final.ckpt.manifest.txt"
    if not manifest.exists():
        return None
    for line in manifest.read_text().splitlines():
        if line.startswith("train_mix"):
            _, _, value = line.partition("=")
            parts = [p for p in value.strip().split(",") if p and float(p.split(":")[1]) > 0]
            if len(parts) == 1:
                return parts[0].split(":")[0]
    return None


if __name__ == "__main__":
    sys.exit(main())
