"""Command line: gen-data, train, extract, eval, ablate.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 non-finite loss.
"""
import argparse
import os
import sys

from .checkpoint import CheckpointMismatch, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .dataio import DataError, generate_synthetic, load_split, write_dataset
from .metrics import evaluate
from .pipeline import ablate, describe, format_table, parse_sweep, train_model
from .retrieval import load_descriptors, save_descriptors
from .tensor import TensorFormatError
from .trainer import NumericError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def _config(args, seed_key="seed"):
    overrides = {seed_key: args.seed} if getattr(args, "seed", None) is not None else {}
    if not args.config:
        return RunConfig.from_dict(overrides)
    if not os.path.isfile(args.config):
        raise UsageError(f"config file not found: {args.config}")
    return RunConfig.from_file(args.config, **overrides)


def cmd_gen_data(args):
    cfg = _config(args, seed_key="synth_seed")
    out = args.out or cfg["data_dir"]
    if os.path.isdir(out) and os.listdir(out):
        raise DataError(f"output directory {out} is not empty")
    samples = generate_synthetic(cfg.synth())
    write_dataset(samples, out)
    _log(f"wrote {len(samples)} images to {out}")


def cmd_train(args):
    cfg = _config(args)
    out = args.out or cfg["out_dir"]
    size = (cfg["input_height"], cfg["input_width"])
    train_samples = load_split(cfg["data_dir"], "train", size)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.txt"), "w") as f:
        f.write(cfg.to_text())
    with open(os.path.join(out, "train_log.txt"), "w") as log_file:
        def on_epoch(rec):
            line = rec.to_line()
            log_file.write(line + "\n")
            log_file.flush()
            _log(line)
        model, head, _ = train_model(cfg, train_samples, on_epoch)
    save_checkpoint(os.path.join(out, "model.ckpt"), model, head)
    _log(f"checkpoint written to {os.path.join(out, 'model.ckpt')}")


def cmd_extract(args):
    cfg = _config(args)
    if not args.checkpoint or not args.out:
        raise UsageError("extract needs --checkpoint and --out")
    model, head = load_checkpoint(args.checkpoint, cfg.backbone(), cfg.pyramid())
    samples = load_split(cfg["data_dir"], args.split, (cfg["input_height"], cfg["input_width"]))
    dset = describe(model, head, samples, cfg, args.split == "query")
    save_descriptors(args.out, dset)
    _log(f"{len(dset)} descriptors of dimension {dset.dim} written to {args.out}")


def cmd_eval(args):
    if not args.query or not args.gallery or not args.out:
        raise UsageError("eval needs --query, --gallery and --out")
    if args.topk is not None and args.topk < 1:
        raise UsageError("--topk must be at least 1")
    query = load_descriptors(args.query)
    gallery = load_descriptors(args.gallery)
    if query.dim != gallery.dim:
        raise DataError(f"descriptor dimensions differ: {query.dim} vs {gallery.dim}")
    try:
        report = evaluate(query, gallery, args.topk or 10)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    with open(args.out, "w") as f:
        f.write(report.to_text())
    with open(f"{args.out}.cmc.csv", "w") as f:
        f.write(report.cmc_csv())
    sys.stdout.write(report.to_text())


def cmd_ablate(args):
    cfg = _config(args)
    if not args.sweep:
        raise UsageError("ablate needs --sweep")
    with open(args.sweep) as f:
        spec = parse_sweep(f)
    rows = ablate(cfg, spec, on_row=lambda r: _log(f"done: {r['variant']} mAP={r['mAP']:.4f}"))
    table = format_table(rows)
    if args.out:
        with open(args.out, "w") as f:
            f.write(table)
    sys.stdout.write(table)


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "extract": cmd_extract,
            "eval": cmd_eval, "ablate": cmd_ablate}


def build_parser():
    parser = _Parser(prog="hpm", description="Horizontal pyramid matching for person re-identification")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config")
        p.add_argument("--out")
        p.add_argument("--seed", type=int)
        if name == "extract":
            p.add_argument("--checkpoint")
            p.add_argument("--split", default="query", choices=("train", "query", "gallery"))
        if name == "eval":
            p.add_argument("--query")
            p.add_argument("--gallery")
            p.add_argument("--topk", type=int)
        if name == "ablate":
            p.add_argument("--sweep")
    return parser


def _exit_code(exc):
    while exc is not None:
        if isinstance(exc, NumericError):
            return EXIT_NUMERIC
        if isinstance(exc, (UsageError, ConfigError)):
            return EXIT_USAGE
        if isinstance(exc, (DataError, TensorFormatError, CheckpointMismatch, OSError)):
            return EXIT_DATA
        exc = exc.__cause__
    return None


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError(f"choose a command: {', '.join(COMMANDS)}")
        COMMANDS[args.command](args)
    except Exception as exc:
        code = _exit_code(exc)
        if code is None:
            raise
        print(f"hpm: error: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
