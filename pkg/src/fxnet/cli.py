"""Command-line interface: datagen, train, eval, process, stream, inspect.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

from .audio import AudioBuffer, WavError, read_wav, write_wav
from .checkpoint import CheckpointError, load_checkpoint
from .corpus import SOURCES, DatasetManifest, SignalPlan, ingest_pairs, synthesize_corpus
from .effects import effect_params
from .evaluation import (compare, evaluate, process_chunked, process_offline, write_report,
                         write_summary)
from .losses import LossConfig
from .models import PRESETS, ModelSpec, SpecError, assemble, describe, preset
from .training import NumericalError, TrainConfig, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

SPEC_FLAGS = ("blocks", "layers", "kernel_size", "dilation_growth", "channels",
              "tfilm_block_size", "hidden_size", "tfilm_variant")
TRAIN_FLAGS = ("lr", "weight_decay", "lr_patience", "lr_factor", "early_stop_patience",
               "max_epochs", "segment_length", "batch_size")
EFFECT_FLAGS = ("threshold_db", "ratio", "attack_ms", "release_ms", "makeup_db", "knee_db",
                "gain", "bias_depth", "volume")

logger = logging.getLogger("fxnet")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def resolve_seed(value) -> int:
    """Explicit ``--seed`` wins, then the FX_SEED environment variable, then 0."""
    if value is not None:
        return value
    env = os.environ.get("FX_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"FX_SEED must be an integer, got {env!r}") from None


def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise DataError(f"config file not found: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{p}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"{p}: top level must be an object")
    return cfg


def _flag_values(args, names) -> dict:
    return {n: getattr(args, n) for n in names if getattr(args, n, None) is not None}


def build_spec(args, cfg: dict) -> ModelSpec:
    """Model spec from preset, then config-file fields, then command-line flags."""
    model_cfg = dict(cfg.get("model") or {})
    name = args.model or model_cfg.pop("preset", None)
    if name is None and "family" not in model_cfg:
        raise UsageError("a model is required: --model PRESET or a 'model' entry in --config")
    fields = {k: v for k, v in model_cfg.items() if k in SPEC_FLAGS or k == "family"}
    fields.update(_flag_values(args, SPEC_FLAGS))
    if name is not None:
        return preset(name, **fields)
    return ModelSpec.from_dict(fields)


def build_train_config(args, cfg: dict, seed: int) -> TrainConfig:
    d = dict(cfg.get("train") or {})
    d.update(_flag_values(args, TRAIN_FLAGS))
    d["seed"] = seed
    return TrainConfig.from_dict(d)


def build_loss_config(args, cfg: dict) -> LossConfig:
    d = dict(cfg.get("loss") or {})
    if args.alpha is not None:
        d["alpha"] = args.alpha
    return LossConfig.from_dict(d)


def _load_manifest(path) -> DatasetManifest:
    if path is None:
        raise UsageError("--dataset is required")
    p = Path(path)
    if not p.exists():
        raise DataError(f"dataset manifest not found: {p}")
    try:
        return DatasetManifest.load(p)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError(f"{p}: malformed manifest ({exc})") from None


def _load_model(path):
    p = Path(path)
    if not p.exists():
        raise DataError(f"checkpoint not found: {p}")
    return load_checkpoint(p).build_model()


def _read_input(path) -> AudioBuffer:
    p = Path(path)
    if not p.exists():
        raise DataError(f"input file not found: {p}")
    return read_wav(p)


# commands

def cmd_datagen(args) -> int:
    seed = resolve_seed(args.seed)
    out = Path(args.out)
    if args.ingest:
        m = ingest_pairs(args.ingest[0], args.ingest[1], out)
    else:
        try:
            params = effect_params(args.effect, **_flag_values(args, EFFECT_FLAGS))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        duration = args.seconds if args.seconds is not None else 60.0 * args.minutes
        plan = SignalPlan(duration, source=args.source, source_path=args.source_wav)
        m = synthesize_corpus(plan, params, seed, out)
    for e in m.entries:
        print(f"{e.split}: {e.duration_s:.2f} s")
    print(f"manifest: {out / 'manifest.json'}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    seed = resolve_seed(args.seed if args.seed is not None else cfg.get("seed"))
    spec = build_spec(args, cfg)
    tcfg = build_train_config(args, cfg, seed)
    lcfg = build_loss_config(args, cfg)
    try:
        tcfg.validate(spec)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    manifest = _load_manifest(args.dataset or cfg.get("dataset"))
    out = Path(args.out or cfg.get("out") or "runs/train")
    out.mkdir(parents=True, exist_ok=True)
    train_pairs, val_pairs = manifest.split("train"), manifest.split("val")
    model = assemble(spec, seed=seed)
    (out / "config.json").write_text(json.dumps({
        "model": spec.to_dict(), "train": tcfg.to_dict(), "loss": lcfg.to_dict(),
        "dataset": str(Path(args.dataset or cfg.get("dataset"))), "out": str(out), "seed": seed,
    }, indent=2) + "\n")
    try:
        result = train(model, train_pairs, val_pairs, tcfg, lcfg, out, resume=args.resume)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    last = result.history[-1] if result.history else None
    if last:
        print(f"epoch {last['epoch']}: val_loss {last['val_loss']:.6f}")
    print(f"checkpoint: {result.best_path}")
    return EXIT_OK


def _parse_named(item: str) -> tuple[str, str]:
    if "=" in item:
        name, path = item.split("=", 1)
        return name, path
    return Path(item).parent.name or Path(item).stem, item


def cmd_eval(args) -> int:
    manifest = _load_manifest(args.dataset)
    pairs = manifest.split(args.split)
    if not pairs:
        raise DataError(f"split {args.split!r} is empty")
    names = [f"{e.split}:{Path(e.input_path).name}" for e in manifest.entries if e.split == args.split]
    out = Path(args.out)
    reports = []
    for item in args.checkpoint:
        name, path = _parse_named(item)
        model = _load_model(path)
        rep = evaluate(model, pairs, name, checkpoint=str(path), chunk_size=args.chunk_size,
                       file_names=names)
        write_report(rep, out / name)
        reports.append(rep)
        print(f"{name}: l1 {rep.l1:.6f} mrstft {rep.mrstft:.6f}")
    out.mkdir(parents=True, exist_ok=True)
    write_summary(compare(reports), out / "summary.csv")
    print(f"summary: {out / 'summary.csv'}")
    return EXIT_OK


def cmd_process(args) -> int:
    model = _load_model(args.checkpoint)
    buf = _read_input(args.input)
    y = process_chunked(model, buf, args.chunked) if args.chunked else process_offline(model, buf)
    write_wav(y, args.output, fmt=args.format)
    return EXIT_OK


def cmd_stream(args) -> int:
    model = _load_model(args.checkpoint)
    buf = _read_input(args.input)
    t0 = time.perf_counter()
    y = process_chunked(model, buf, args.chunk_size)
    elapsed = time.perf_counter() - t0
    write_wav(y, args.output, fmt=args.format)
    rtf = buf.duration_s / elapsed if elapsed > 0 else float("inf")
    print(f"processed {buf.duration_s:.2f} s in {elapsed:.2f} s (real-time factor {rtf:.1f}x)")
    return EXIT_OK


def cmd_inspect(args) -> int:
    if args.checkpoint:
        spec = load_checkpoint(args.checkpoint).spec
    else:
        spec = build_spec(args, load_config(args.config))
    print(describe(spec))
    return EXIT_OK


# parser

def _add_spec_flags(p):
    p.add_argument("--model", help=f"preset name ({', '.join(PRESETS)})")
    p.add_argument("--config", help="JSON experiment config; flags override its values")
    p.add_argument("--blocks", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--kernel-size", type=int)
    p.add_argument("--dilation-growth", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--tfilm-block-size", type=int)
    p.add_argument("--tfilm-variant", choices=("hidden-cell", "projected"))
    p.add_argument("--hidden-size", type=int)


def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fxnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("datagen", help="synthesize a paired corpus through an effect oracle")
    p.add_argument("--effect", choices=("fuzz", "compressor"), default="fuzz")
    p.add_argument("--minutes", type=float, default=28.0)
    p.add_argument("--seconds", type=float, help="duration in seconds (overrides --minutes)")
    p.add_argument("--source", choices=SOURCES, default="pluck-synth")
    p.add_argument("--source-wav")
    p.add_argument("--ingest", nargs=2, metavar=("INPUT_WAV", "TARGET_WAV"),
                   help="split an external recording pair instead of synthesizing")
    for name in EFFECT_FLAGS:
        p.add_argument("--" + name.replace("_", "-"), type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default="data")
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("train", help="train a model on a dataset manifest")
    _add_spec_flags(p)
    p.add_argument("--dataset", help="manifest.json")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--alpha", type=float, help="MR-STFT weight in the loss")
    for name in TRAIN_FLAGS:
        kind = float if name in ("lr", "weight_decay", "lr_factor") else int
        p.add_argument("--" + name.replace("_", "-"), type=kind)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoints and write reports plus summary.csv")
    p.add_argument("--checkpoint", action="append", required=True, metavar="[NAME=]PATH")
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--chunk-size", type=_positive, help="evaluate through the streaming engine")
    p.add_argument("--out", default="eval")
    p.set_defaults(func=cmd_eval)

    for name, func, help_text in (("process", cmd_process, "render a WAV file through a model"),
                                  ("stream", cmd_stream, "chunked rendering with timing")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--input", required=True)
        p.add_argument("--output", required=True)
        p.add_argument("--format", choices=("float32", "pcm16"), default="float32")
        if name == "process":
            p.add_argument("--chunked", type=_positive, metavar="N")
        else:
            p.add_argument("--chunk-size", type=_positive, default=512)
        p.set_defaults(func=func)

    p = sub.add_parser("inspect", help="print parameter count and receptive field")
    _add_spec_flags(p)
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, SpecError) as exc:
        print(f"fxnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"fxnet: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, WavError, CheckpointError, FileNotFoundError, ValueError) as exc:
        print(f"fxnet: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
