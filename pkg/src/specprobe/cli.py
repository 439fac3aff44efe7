"""Command-line entry point: ``specprobe {gen,import,train,eval,profile,compare}``.

Exit codes: 0 success, 2 usage error, 3 data or model error. Machine-readable
results go to stdout, diagnostics to stderr.
"""

import argparse
import hashlib
import json
import logging
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .analysis import average_profile, export_profile, extract_profile, overlap_matrix
from .dataset import TaskKind
from .errors import SpecprobeError
from .filters import BANDS, DEFAULT_FILTER_LENGTH, FilterBand, parse_band
from .fileio import import_jsonl, read_checkpoint, read_dataset, save_checkpoint, write_dataset
from .probe import ProbeModel, evaluate
from .synthetic import SyntheticSpec, gen_synthetic
from .training import DEFAULT_SEEDS, TrainConfig, load_config, run_multiseed

log = logging.getLogger("specprobe")

EXIT_USAGE = 2
EXIT_DATA = 3


class DataError(SpecprobeError):
    pass


def band_arg(text):
    try:
        lo, hi = text.split(":")
        return FilterBand(int(lo), int(hi))
    except (ValueError, SpecprobeError):
        raise argparse.ArgumentTypeError(f"expected lo:hi with 0 <= lo <= hi, got {text!r}") from None


def mode_arg(text):
    if text in ("orig", "auto"):
        return text, None
    if text.startswith("fixed:"):
        name = text[len("fixed:"):]
        if name in BANDS:
            return "fixed", BANDS[name]
        raise argparse.ArgumentTypeError(
            f"unknown band {name!r}; valid bands: {', '.join(BANDS)}"
        )
    raise argparse.ArgumentTypeError(
        f"mode must be orig, auto or fixed:<band> with band one of: {', '.join(BANDS)}"
    )


def seeds_arg(text):
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"seeds must be comma-separated integers, got {text!r}") from None
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def _digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _now():
    return datetime.now(timezone.utc).isoformat()


def _jsonable(value):
    if isinstance(value, (FilterBand, Path)):
        return str(value)
    if isinstance(value, tuple):
        return [_jsonable(v) for v in value]
    if isinstance(value, list):
        return [_jsonable(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return value


def write_manifest(path, args, argv, inputs=(), started=None, **extra):
    manifest = {
        "command": args.command,
        "argv": list(argv),
        "args": {k: _jsonable(v) for k, v in vars(args).items() if k != "func"},
        "inputs": {str(p): _digest(p) for p in inputs},
        "tool": "specprobe",
        "version": __version__,
        "started": started or _now(),
        "finished": _now(),
    }
    manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _emit(payload):
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")


def cmd_gen(args, argv):
    started = _now()
    spec = SyntheticSpec(
        length=args.n, width=args.e, num_classes=args.classes, count=args.count,
        signal_band=args.signal_band, noise_band=args.noise_band, snr=args.snr,
        task_kind=args.task_kind, jitter=args.jitter, task_seed=args.task_seed,
        min_length=args.min_length,
    )
    meta = {k: v for k, v in (("task", args.task), ("language", args.language)) if v}
    dataset = gen_synthetic(spec, args.seed, meta)
    write_dataset(dataset, args.out)
    write_manifest(f"{args.out}.manifest.json", args, argv, started=started,
                   outputs={str(args.out): _digest(args.out)})
    _emit({"out": str(args.out), "sequences": len(dataset), "positions": dataset.position_count})


def cmd_import(args, argv):
    started = _now()
    dataset = import_jsonl(args.jsonl, args.classes, args.task_kind,
                           {k: v for k, v in (("task", args.task), ("language", args.language)) if v})
    write_dataset(dataset, args.out)
    write_manifest(f"{args.out}.manifest.json", args, argv, inputs=[args.jsonl], started=started)
    _emit({"out": str(args.out), "sequences": len(dataset)})


def _resolve_config(args):
    cfg = load_config(args.config) if args.config else TrainConfig()
    overrides = {
        "learning_rate": args.lr, "batch_size": args.batch_size,
        "max_epochs": args.max_epochs, "plateau_decay": args.plateau_decay,
        "early_stop_patience": args.early_stop_patience,
    }
    d = cfg.to_dict()
    d.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**d)


def cmd_train(args, argv):
    started = _now()
    cfg = _resolve_config(args)
    mode, band = args.mode
    train_set, val_set = read_dataset(args.train), read_dataset(args.val)
    for name, ds in (("training", train_set), ("validation", val_set)):
        if len(ds) == 0:
            raise DataError(f"{name} dataset is empty")
    if train_set.width != val_set.width:
        raise DataError(
            f"embedding width differs: train {train_set.width}, val {val_set.width}"
        )
    num_classes = max(train_set.num_classes, val_set.num_classes, 2)
    seeds = [args.seed] if args.seed is not None else list(args.seeds or DEFAULT_SEEDS)
    meta = {
        "task": args.task or train_set.metadata.get("task", ""),
        "language": args.language or train_set.metadata.get("language", ""),
    }

    def make_model(rng):
        return ProbeModel.create(mode, train_set.width, num_classes, rng, band,
                                 args.filter_length, meta)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = run_multiseed(make_model, train_set, val_set, cfg, seeds)
    for run in result.runs:
        if not run.ok:
            continue
        run_dir = out / f"seed-{run.seed}"
        run_dir.mkdir(exist_ok=True)
        run.model.metadata["seed"] = run.seed
        save_checkpoint(run.model, run.report, run_dir / "checkpoint.sprc",
                        config=TrainConfig(**{**cfg.to_dict(), "seed": run.seed}))
        (run_dir / "report.jsonl").write_text(run.report.to_jsonl(), encoding="utf-8")
    summary = {"mode": mode if band is None else f"fixed:{band}", **result.summary()}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_manifest(
        out / "manifest.json", args, argv, inputs=[args.train, args.val], started=started,
        config=cfg.to_dict(), seeds=seeds,
        durations={str(r.seed): r.report.duration_s for r in result.runs if r.ok},
    )
    _emit(summary)
    if not all(r.ok for r in result.runs):
        raise DataError("one or more seeds failed; see summary.json")


def cmd_eval(args, argv):
    ckpt = read_checkpoint(args.checkpoint)
    dataset = read_dataset(args.data)
    if len(dataset) == 0:
        raise DataError("dataset is empty")
    if dataset.width != ckpt.model.width:
        raise DataError(
            f"checkpoint expects embedding width {ckpt.model.width}, dataset has {dataset.width}"
        )
    stats = evaluate(ckpt.model, dataset.sequences)
    _emit({
        "accuracy": stats["accuracy"],
        "loss": stats["loss"],
        "per_class_accuracy": {str(k): v for k, v in stats["per_class_accuracy"].items()},
        "positions": stats["positions"],
    })


def _profile_from(path):
    model = read_checkpoint(path).model
    if model.mode != "auto":
        raise DataError(f"{path}: {model.mode_label} checkpoint has no learned profile")
    return extract_profile(model)


def cmd_profile(args, argv):
    started = _now()
    profiles = [_profile_from(p) for p in args.checkpoints]
    if len({p.length for p in profiles}) != 1:
        raise DataError("checkpoints have different filter lengths")
    profile = profiles[0] if len(profiles) == 1 else average_profile(profiles)
    if args.label:
        profile.label = args.label
    export_profile(profile, args.out, "csv")
    if args.svg:
        export_profile([profile], args.svg, "svg")
    write_manifest(f"{args.out}.manifest.json", args, argv, inputs=args.checkpoints, started=started)
    _emit({"out": str(args.out), "length": profile.length, "checkpoints": len(profiles)})


def cmd_compare(args, argv):
    started = _now()
    groups = {}
    paths = []
    for item in args.checkpoints:
        label, sep, path = item.partition("=")
        if not sep:
            label, path = None, item
        paths.append(path)
        prof = _profile_from(path)
        if label is None:
            label = prof.language if args.label_by == "language" else prof.label
            label = label or Path(path).parent.name or path
        if args.per_seed:
            label = f"{label}#{len([k for k in groups if k.split('#')[0] == label])}"
        groups.setdefault(label, []).append(prof)
    if len({p.length for g in groups.values() for p in g}) != 1:
        raise DataError("profiles have different filter lengths and cannot be compared")
    labels = list(groups)
    if len(labels) < 2:
        raise DataError("need at least two distinct labelled profiles to compare")
    profiles = [g[0] if len(g) == 1 else average_profile(g) for g in groups.values()]
    matrix = overlap_matrix(profiles, labels)
    export_profile(matrix, args.out, "csv")
    if args.svg:
        export_profile(matrix, args.svg, "svg")
    write_manifest(f"{args.out}.manifest.json", args, argv, inputs=paths, started=started)
    _emit({"labels": labels, "overlap": matrix.rounded().tolist()})


def build_parser():
    parser = argparse.ArgumentParser(prog="specprobe", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--n", type=int, default=512, help="sequence length")
    p.add_argument("--min-length", type=int, default=None,
                   help="draw lengths uniformly from [min-length, n]")
    p.add_argument("--e", type=int, default=16, help="embedding width")
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--signal-band", type=band_arg, default=FilterBand(0, 1))
    p.add_argument("--noise-band", type=band_arg, default=FilterBand(130, 511))
    p.add_argument("--snr", type=float, default=1.0)
    p.add_argument("--jitter", type=float, default=0.1)
    p.add_argument("--task-kind", choices=["token", "sequence"], default="sequence")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--task-seed", type=int, default=0)
    p.add_argument("--task", default=None)
    p.add_argument("--language", default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("import", help="convert JSON-lines embeddings to the binary format")
    p.add_argument("--jsonl", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--classes", required=True, type=int)
    p.add_argument("--task-kind", choices=["token", "sequence"], default="token")
    p.add_argument("--task", default=None)
    p.add_argument("--language", default=None)
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("train", help="train probes for one or more seeds")
    p.add_argument("--mode", type=mode_arg, default=("auto", None),
                   help=f"orig | auto | fixed:<{'|'.join(BANDS)}>")
    p.add_argument("--train", required=True, type=Path)
    p.add_argument("--val", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--config", type=Path, help="YAML/JSON key-value TrainConfig file")
    seed_group = p.add_mutually_exclusive_group()
    seed_group.add_argument("--seed", type=int)
    seed_group.add_argument("--seeds", type=seeds_arg,
                            help="comma-separated; default " + ",".join(map(str, DEFAULT_SEEDS)))
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--plateau-decay", type=float)
    p.add_argument("--early-stop-patience", type=int)
    p.add_argument("--filter-length", type=int, default=DEFAULT_FILTER_LENGTH)
    p.add_argument("--task", default=None)
    p.add_argument("--language", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="sub-word accuracy of a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("profile", help="export the learned spectral profile")
    p.add_argument("checkpoints", nargs="+", type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--svg", type=Path)
    p.add_argument("--label", default=None)
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("compare", help="overlap matrix between spectral profiles")
    p.add_argument("checkpoints", nargs="+", help="PATH or LABEL=PATH")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--svg", type=Path)
    p.add_argument("--label-by", choices=["task", "language"], default="task")
    p.add_argument("--per-seed", action="store_true",
                   help="compare every checkpoint separately instead of seed-averaging")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        args.func(args, argv)
    except SpecprobeError as exc:
        print(f"specprobe {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0


if __name__ == "__main__":
    sys.exit(main())
