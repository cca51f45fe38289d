"""Command-line entry point: synth / prepare / train / eval / sweep / probe.

Exit codes: 0 success, 2 invalid arguments (nothing written), 1 runtime
failure.  Every randomized subcommand prints its seed to stderr so runs
can be reproduced.  A flat key=value config file can seed any long
option; explicit flags override it.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import audio, augment, features, synth
from . import train as train_mod
from .errors import EngineDiagError, SilentClip
from .labels import ASPIRATION, CONFIG, CYLINDERS, FUEL, STATUS, TASK_NAMES
from .train import TrainConfig

_FEATURES = list(features.FEATURE_KINDS)
_ARCHES = ["naive", "parallel", "cascade"]


def _log(message: str) -> None:
    print(message, file=sys.stderr)


def _read_config_file(path: str) -> dict[str, str]:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"config line without '=': {line!r}")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _expand_config(argv: list[str]) -> list[str]:
    """Splice config-file entries in as flags ahead of the explicit ones."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        return argv
    values = _read_config_file(argv[i + 1])
    head = argv[:i]
    tail = argv[i + 2:]
    injected = []
    for key, value in values.items():
        flag = "--" + key.replace("_", "-")
        if value.lower() in ("true", "yes", "on"):
            injected.append(flag)
        elif value.lower() in ("false", "no", "off"):
            continue
        else:
            injected += [flag, value]
    # Insert after the subcommand token so subparser options resolve.
    if head and not head[0].startswith("-"):
        return head[:1] + injected + head[1:] + tail
    if tail and not tail[0].startswith("-"):
        return tail[:1] + injected + tail[1:] + head
    return head + injected + tail


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="enginediag",
        description="Acoustic vehicle characterization: attributes + misfire.")
    parser.add_argument("--config", help="flat key=value config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic labeled corpus")
    p.add_argument("--count", type=int, required=True, help="number of recordings")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--duration", type=float, default=3.0, help="seconds per recording")
    p.add_argument("--base-rpm", type=float, default=1500.0)
    p.add_argument("--fuel", choices=list(FUEL))
    p.add_argument("--engine-config", choices=list(CONFIG))
    p.add_argument("--cylinders", type=int, choices=list(CYLINDERS))
    p.add_argument("--aspiration", choices=list(ASPIRATION))
    p.add_argument("--status", choices=list(STATUS))
    p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("prepare", help="assign 80/20 splits and build the "
                                       "augmented training set")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k-augment", type=int, default=8)
    p.add_argument("--no-augment", action="store_true",
                   help="ablation mode: train on the raw validation clips")
    p.add_argument("--threads", type=int, default=1)

    for name in ("train", "sweep"):
        p = sub.add_parser(name, help="train a model" if name == "train"
                           else "hyperparameter sweep (full train per point)")
        p.add_argument("--manifest", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--arch", choices=_ARCHES, default="parallel")
        p.add_argument("--feature", choices=_FEATURES, default="mfcc")
        p.add_argument("--epochs", type=int, default=100)
        p.add_argument("--batch-size", type=int, default=None)
        p.add_argument("--lr", type=float, default=0.001)
        p.add_argument("--dropout", type=float, default=0.5)
        p.add_argument("--k-augment", type=int, default=8)
        p.add_argument("--no-augment", action="store_true")
        p.add_argument("--cascade-mode", choices=list("soft detached oracle".split()),
                       default="soft")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--cache", help="feature cache directory")
        p.add_argument("--threads", type=int, default=1)
        if name == "sweep":
            p.add_argument("--epochs-grid", help="comma list, e.g. 10,50,100")
            p.add_argument("--lr-grid", help="comma list, e.g. 0.0001,0.001,0.1")
            p.add_argument("--dropout-grid", help="comma list, e.g. 0.0,0.5,0.75")
            p.add_argument("--json", action="store_true")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=["train", "validation", "test"],
                   default="validation")
    p.add_argument("--feature", choices=_FEATURES,
                   help="expected feature kind; must match the checkpoint")
    p.add_argument("--cascade-mode", choices=list("soft detached oracle".split()),
                   default="soft")
    p.add_argument("--cache")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--json", action="store_true")

    p = sub.add_parser("probe", help="report the effective bandwidth of a WAV")
    p.add_argument("wav", help="input WAV file")
    return parser


def _cmd_synth(args) -> int:
    filters = {"fuel": args.fuel, "config": args.engine_config,
               "cylinders": args.cylinders, "aspiration": args.aspiration,
               "status": args.status}
    combos = [c for c in synth.all_label_combos()
              if all(v is None or c[i] == v
                     for i, v in enumerate(filters.values()))]
    if not combos:
        _log("no valid label combination matches the given filters")
        return 2
    if args.count <= 0:
        _log("--count must be positive")
        return 2
    _log(f"seed: {args.seed}")
    order = np.random.default_rng(0).permutation(len(combos))
    counts: dict = {}
    for i in range(args.count):
        combo = combos[order[i % len(combos)]]
        counts[combo] = counts.get(combo, 0) + 1
    manifest = synth.synth_corpus(counts, seed=args.seed, out_dir=args.out,
                                  duration=args.duration, base_rpm=args.base_rpm)
    print(manifest)
    return 0


def _cmd_prepare(args) -> int:
    if not args.no_augment and args.k_augment <= 0:
        _log("--k-augment must be positive unless --no-augment is given")
        return 2
    _log(f"seed: {args.seed}")
    rows = train_mod.read_manifest(args.manifest)
    base_dir = Path(args.manifest).parent
    rows = train_mod.split_dataset(rows, seed=args.seed)
    # Rebase source paths so they stay reachable from the new manifest.
    rows = [
        replace(row, file=str((base_dir / row.file).resolve()))
        if not Path(row.file).is_absolute() else row
        for row in rows
    ]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_rows = []
    if args.no_augment:
        train_rows = [replace(row, split="train")
                      for row in rows if row.split == "validation"]
    else:
        clip_dir = out_dir / "train_clips"
        clip_dir.mkdir(exist_ok=True)
        label_of = {}
        val_clips = []
        for row in rows:
            if row.split != "validation":
                continue
            for clip in audio.load_clips(row.file, source_id=row.source_id):
                val_clips.append(clip)
                label_of[(clip.source_id, clip.chunk_index)] = row.labels
        pairs = augment.build_train_set(val_clips, k=args.k_augment, seed=args.seed)
        for clip, source_key in pairs:
            name = f"{clip.source_id.replace('#', '_')}_c{clip.chunk_index}.wav"
            audio.write_wav(clip_dir / name, audio.AudioBuffer(
                samples=clip.samples, sample_rate=audio.CANONICAL_RATE))
            train_rows.append(train_mod.ManifestRow(
                file=str(Path("train_clips") / name), source_id=clip.source_id,
                labels=label_of[source_key], split="train"))

    manifest_path = out_dir / "manifest.jsonl"
    train_mod.write_manifest(rows + train_rows, manifest_path)
    n_val = len({r.source_id for r in rows if r.split == "validation"})
    n_test = len({r.source_id for r in rows if r.split == "test"})
    kind = "raw validation rows" if args.no_augment else "augmented clips"
    print(f"{manifest_path} (validation sources: {n_val}, test sources: {n_test}, "
          f"train set: {len(train_rows)} {kind})")
    return 0


def _config_from_args(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
        dropout_p=args.dropout, augment=not args.no_augment,
        k_augment=args.k_augment, seed=args.seed, architecture=args.arch,
        feature_kind=args.feature, cascade_mode=args.cascade_mode)


def _cmd_train(args) -> int:
    if not args.no_augment and args.k_augment <= 0:
        _log("--k-augment must be positive unless --no-augment is given")
        return 2
    try:
        config = _config_from_args(args)
    except ValueError as exc:
        _log(str(exc))
        return 2
    rows = train_mod.read_manifest(args.manifest)
    if not any(r.split in ("validation", "test") for r in rows):
        _log("manifest has no split assignments; run `enginediag prepare` first")
        return 2
    _log(f"seed: {config.seed}")
    _log(f"effective batch size: {config.effective_batch_size()}")
    result = train_mod.train(
        config, rows, args.out, base_dir=Path(args.manifest).parent,
        cache_dir=args.cache, threads=args.threads,
        log_fn=lambda e: _log(
            f"epoch {e['epoch']:>3}  loss {e['train_loss']:.4f}  " +
            "  ".join(f"{k[4:]}={v:.3f}" for k, v in e.items()
                      if k.startswith("acc") and isinstance(v, float))))
    print(f"final: {result.final_checkpoint}")
    print(f"best:  {result.best_checkpoint}")
    print(f"log:   {result.log_path}")
    return 0


def _format_report(report: train_mod.MetricsReport) -> str:
    lines = [f"{'task':<12}{'accuracy':>10}{'precision':>11}{'recall':>9}"]
    for task in TASK_NAMES:
        if task not in report.tasks:
            continue
        m = report.tasks[task]
        lines.append(f"{task:<12}{m.accuracy:>10.4f}{m.precision:>11.4f}"
                     f"{m.recall:>9.4f}")
    for task in TASK_NAMES:
        if task not in report.tasks:
            continue
        m = report.tasks[task]
        lines.append(f"\nconfusion [{task}] (rows=actual, cols=predicted):")
        pct = m.row_percentages()
        for i, row in enumerate(m.confusion):
            cells = "  ".join(f"{c:>6d} ({p:5.1f}%)" for c, p in zip(row, pct[i]))
            lines.append(f"  {cells}")
    return "\n".join(lines)


def _cmd_eval(args) -> int:
    descriptor, _, _ = train_mod.nn.read_checkpoint(args.checkpoint)
    ckpt_kind = descriptor.get("feature_kind")
    if args.feature is not None and ckpt_kind is not None \
            and args.feature != ckpt_kind:
        _log(f"feature kind mismatch: requested {args.feature!r} but checkpoint "
             f"holds {ckpt_kind!r}")
        return 2
    rows = train_mod.read_manifest(args.manifest)
    report = train_mod.evaluate(
        args.checkpoint, rows, args.split, base_dir=Path(args.manifest).parent,
        cache_dir=args.cache, threads=args.threads,
        cascade_mode=args.cascade_mode)
    if args.json:
        print(json.dumps({"split": args.split, "tasks": report.to_json_dict()},
                         indent=2))
    else:
        print(_format_report(report))
    return 0


def _parse_grid(text: str | None, cast) -> list | None:
    if text is None:
        return None
    return [cast(v) for v in text.split(",") if v.strip()]


def _cmd_sweep(args) -> int:
    if not args.no_augment and args.k_augment <= 0:
        _log("--k-augment must be positive unless --no-augment is given")
        return 2
    grid = {}
    for key, text, cast in (("epochs", args.epochs_grid, int),
                            ("learning_rate", args.lr_grid, float),
                            ("dropout_p", args.dropout_grid, float)):
        values = _parse_grid(text, cast)
        if values:
            grid[key] = values
    if not grid:
        _log("sweep needs at least one of --epochs-grid/--lr-grid/--dropout-grid")
        return 2
    try:
        config = _config_from_args(args)
    except ValueError as exc:
        _log(str(exc))
        return 2
    rows = train_mod.read_manifest(args.manifest)
    _log(f"seed: {config.seed}")
    results = train_mod.sweep(config, grid, rows, args.out,
                              base_dir=Path(args.manifest).parent,
                              cache_dir=args.cache, threads=args.threads)
    if args.json:
        print(json.dumps(results, indent=2))
        return 0
    header = (f"{'run':>4} {'epochs':>7} {'lr':>9} {'dropout':>8} "
              + " ".join(f"{'acc_' + t:>12}" for t in TASK_NAMES))
    print(header)
    for row in results:
        accs = " ".join(
            f"{row['acc_' + t]:>12.4f}" if row["acc_" + t] is not None
            else f"{'-':>12}" for t in TASK_NAMES)
        print(f"{row['run']:>4} {row['epochs']:>7} {row['learning_rate']:>9.4g} "
              f"{row['dropout_p']:>8.2f} {accs}")
    return 0


def _cmd_probe(args) -> int:
    buffer = audio.to_canonical(audio.load_wav(args.wav))
    cutoff = features.bandwidth_probe(buffer.samples)
    if cutoff >= 23500:
        print(f"cutoff >= 23500 Hz (full bandwidth; measured {cutoff:.0f} Hz)")
    else:
        print(f"cutoff {cutoff:.0f} Hz")
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _expand_config(argv)
    except (OSError, ValueError) as exc:
        _log(f"config file error: {exc}")
        return 2
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {"synth": _cmd_synth, "prepare": _cmd_prepare, "train": _cmd_train,
                "eval": _cmd_eval, "sweep": _cmd_sweep, "probe": _cmd_probe}
    try:
        return handlers[args.command](args)
    except SilentClip as exc:
        _log(f"error: {exc}")
        return 1
    except EngineDiagError as exc:
        _log(f"error: {exc}")
        return 1
    except OSError as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
