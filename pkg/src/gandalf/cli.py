"""Command-line entry point: ``gandalf <command> ...``.

Exit codes: 0 ok, 2 usage, 3 I/O or missing data, 4 aborted run,
5 bad checkpoint or empty evaluation, 6 shape mismatch.
"""
from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from pathlib import Path

from . import config as cfgfile
from .core import Volume, read_volume, read_manifest, write_volume
from .errors import (
    AbortRun,
    CheckpointError,
    ConfigError,
    DatasetWriteError,
    EmptyEvaluation,
    FormatError,
    LabelError,
    ShapeError,
)

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_ABORT, EXIT_EVAL, EXIT_SHAPE = 0, 2, 3, 4, 5, 6

MODES = {"gandalf": "gandalf", "baseline": "pix2pix_then_cnn"}


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be in [0, 2**64)")
    return v


def _mix(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad stage mix {text!r}") from None
    if len(vals) != 4 or min(vals) < 0 or abs(sum(vals) - 1.0) > 1e-9:
        raise argparse.ArgumentTypeError("stage mix needs 4 nonnegative proportions summing to 1 (CN,EMCI,LMCI,AD)")
    return vals


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _err(msg: str, code: int) -> int:
    print(f"gandalf: error: {msg}", file=sys.stderr)
    return code


def _require_manifest(path: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"manifest not found: {p}")
    return p


# -- commands -----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    from .phantom import generate_dataset

    settings = cfgfile.load_config(args.config)
    pc = cfgfile.phantom_config(settings, scale=args.scale, n_subjects=args.subjects, seed=args.seed,
                                stage_mix=args.stage_mix, noise_sigma=args.noise_sigma,
                                deform_amplitude=args.deform_amplitude)
    try:
        path = generate_dataset(pc, args.out, workers=args.workers)
    except DatasetWriteError as exc:
        return _err(str(exc), EXIT_IO)
    counts = read_manifest(path).split_counts()
    print(path)
    print(" ".join(f"{k}={counts.get(k, 0)}" for k in ("train", "val", "test")))
    print(f"sha256 {_sha256(path)}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .train import train

    settings = cfgfile.load_config(args.config)
    extra = {"data": str(_require_manifest(args.data)), "out": args.out}
    if args.mode:
        extra["mode"] = MODES[args.mode]
    if args.epochs is not None:
        extra["epochs"] = args.epochs
    if args.seed is not None:
        extra["seed"] = args.seed
    run = cfgfile.run_config(settings, **extra)
    try:
        final = train(run, resume_from=args.resume, echo=not args.quiet)
    except AbortRun as exc:
        return _err(f"run aborted: {exc}", EXIT_ABORT)
    print(f"checkpoint {final}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import evaluate

    manifest = read_manifest(_require_manifest(args.data))
    try:
        report = evaluate(args.checkpoint, manifest, split=args.split, task=args.task)
    except (CheckpointError, EmptyEvaluation, LabelError) as exc:
        return _err(f"{type(exc).__name__}: {exc}", EXIT_EVAL)
    except ShapeError as exc:
        return _err(str(exc), EXIT_SHAPE)
    print(report.to_table())
    if args.json:
        print(report.to_line(Path(args.checkpoint).stem))
    return EXIT_OK


def cmd_synth(args) -> int:
    from .train import LoadedModel

    try:
        model = LoadedModel(args.checkpoint)
    except CheckpointError as exc:
        return _err(str(exc), EXIT_EVAL)
    mri = read_volume(args.mri)
    try:
        pet = model.synthesize(mri.values)[0].numpy()
    except ShapeError as exc:
        return _err(str(exc), EXIT_SHAPE)
    from .phantom import pet_voxel_size

    write_volume(Volume(pet, pet_voxel_size(model.g_spec.output_shape, mri)), args.out)
    print(args.out)
    return EXIT_OK


def cmd_compare(args) -> int:
    from .evaluation import comparison_table, evaluate, mri_probe_baseline, write_reports

    manifest = read_manifest(_require_manifest(args.data))
    reports = {}
    try:
        for name, ck in (("GANDALF", args.gandalf), ("pix2pix+CNN", args.baseline)):
            if ck:
                reports[name] = evaluate(ck, manifest, split=args.split, task=args.task)
        if args.probe:
            settings = cfgfile.load_config(args.config)
            run = cfgfile.run_config(settings, task=args.task or 4)
            reports["MRI-only probe"] = mri_probe_baseline(manifest, run.task, run)
    except (CheckpointError, EmptyEvaluation, LabelError) as exc:
        return _err(f"{type(exc).__name__}: {exc}", EXIT_EVAL)
    if not reports:
        return _err("nothing to compare; pass --gandalf, --baseline or --probe", EXIT_USAGE)
    print(comparison_table(reports))
    for name, r in reports.items():
        print()
        print(f"== {name}")
        print(r.to_table())
    if args.reports:
        write_reports(args.reports, reports)
    return EXIT_OK


def cmd_config(args) -> int:
    if args.check:
        cfgfile.load_config(args.check)
        print("ok")
        return EXIT_OK
    sys.stdout.write(cfgfile.dump_defaults())
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gandalf", description="MRI-to-PET conditional GAN with a classifying discriminator")
    p.add_argument("-v", "--verbose", action="store_true", help="log stabilizer events to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic phantom dataset and manifest")
    g.add_argument("--out", required=True)
    g.add_argument("--subjects", type=_positive_int, default=200)
    g.add_argument("--seed", type=_seed, default=0)
    g.add_argument("--scale", choices=("desk", "paper", "tiny"), default="desk")
    g.add_argument("--stage-mix", type=_mix, default=None, help="CN,EMCI,LMCI,AD proportions")
    g.add_argument("--noise-sigma", type=float, default=None)
    g.add_argument("--deform-amplitude", type=float, default=None)
    g.add_argument("--workers", type=_positive_int, default=1)
    g.add_argument("--config", default=None, help="config file for phantom.* defaults")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train GANDALF or the two-stage baseline")
    t.add_argument("--config", default=None)
    t.add_argument("--data", required=True, help="manifest.jsonl")
    t.add_argument("--out", required=True)
    t.add_argument("--mode", choices=tuple(MODES), default=None)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--seed", type=_seed, default=None)
    t.add_argument("--resume", default=None, help="continue from a checkpoint")
    t.add_argument("--quiet", action="store_true", help="do not echo epoch records")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--task", type=int, choices=(2, 3, 4), default=None)
    e.add_argument("--json", action="store_true", help="also print the report as one JSON line")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="generate PET for one MRI volume")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--mri", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("compare", help="side-by-side report for GANDALF, baseline and MRI-only probe")
    c.add_argument("--data", required=True)
    c.add_argument("--gandalf", default=None)
    c.add_argument("--baseline", default=None)
    c.add_argument("--probe", action="store_true", help="also train and score the MRI-only probe")
    c.add_argument("--config", default=None)
    c.add_argument("--split", choices=("train", "val", "test"), default="test")
    c.add_argument("--task", type=int, choices=(2, 3, 4), default=None)
    c.add_argument("--reports", default=None, help="write line-delimited reports here")
    c.set_defaults(func=cmd_compare)

    k = sub.add_parser("config", help="print default configuration or validate a file")
    grp = k.add_mutually_exclusive_group(required=True)
    grp.add_argument("--dump-defaults", action="store_true")
    grp.add_argument("--check", metavar="FILE")
    k.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        return _err(str(exc), EXIT_USAGE)
    except (FileNotFoundError, FormatError, OSError) as exc:
        return _err(str(exc), EXIT_IO)
    except ShapeError as exc:
        return _err(str(exc), EXIT_SHAPE)


if __name__ == "__main__":
    sys.exit(main())
