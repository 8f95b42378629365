"""Command-line entry point.

Subcommands: ingest, stats, train, evaluate, predict, augment, gradcheck,
report. Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric-check
failure. The default seed is a fixed constant so bare invocations are
reproducible.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import augment as aug
from .audio_io import (SilentClipError, WavFormatError, WindowRangeError,
                       parse_wav, serialize_wav)
from .dataset import (Diagnosis, ExampleConfig, Manifest, ManifestEntry,
                      ManifestError, build_examples, class_distribution,
                      ingest_corpus, load_diagnosis_table, load_manifest_file,
                      save_manifest, split)
from .features import FeatureConfigError, FramingError, MfccConfig
from .nn.model import (CheckpointError, grad_check, init_model,
                       load_checkpoint, model_forward, save_checkpoint)
from .trainer import (TrainConfig, chance_baseline, curves_to_csv, evaluate,
                      majority_baseline, report_to_csv, train)

DEFAULT_SEED = 7
GRADCHECK_TOL = 1e-6

_DATA_ERRORS = (ManifestError, WavFormatError, SilentClipError,
                WindowRangeError, CheckpointError, FeatureConfigError,
                FramingError, OSError, ValueError)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _add_shared_flags(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=DEFAULT_SEED,
                   help="RNG seed shared by init, shuffling and splitting "
                        "(default %(default)s)")
    p.add_argument("--feature", choices=("mfcc", "zcr", "raw"), default="raw",
                   help="feature representation fed to the network "
                        "(default %(default)s)")
    p.add_argument("--window-seconds", type=float, default=1.0,
                   help="length of the window cut from each file "
                        "(default %(default)s)")
    p.add_argument("--rate", type=int, default=4000,
                   help="canonical sample rate files are resampled to "
                        "(default %(default)s Hz)")
    p.add_argument("--frame-len", type=int, default=100,
                   help="analysis frame length in samples (default %(default)s)")
    p.add_argument("--hop", type=int, default=40,
                   help="samples between frame starts (default %(default)s)")
    p.add_argument("--hidden", type=int, default=16,
                   help="LSTM hidden size (default %(default)s)")
    p.add_argument("--lr", type=float, default=0.01,
                   help="SGD learning rate (default %(default)s)")
    p.add_argument("--epochs", type=int, default=10,
                   help="training epochs (default %(default)s)")
    p.add_argument("--mode", choices=("uni", "bi"), default="uni",
                   help="unidirectional or bidirectional LSTM "
                        "(default %(default)s)")
    p.add_argument("--merge", choices=("concat", "sum"), default="concat",
                   help="bidirectional output merge (default %(default)s)")
    p.add_argument("--pooling", choices=("last", "mean"), default="last",
                   help="hidden-state readout for classification "
                        "(default %(default)s)")
    p.add_argument("--split", default="0.7,0.1,0.2",
                   help="train,validation,test fractions (default %(default)s)")
    p.add_argument("--group", choices=("sample", "patient"), default="sample",
                   help="split by individual samples or whole patients "
                        "(default %(default)s)")


def _fractions(arg: str) -> tuple[float, float, float]:
    parts = [float(p) for p in arg.split(",")]
    if len(parts) != 3:
        raise _UsageError(f"--split needs three fractions, got {arg!r}")
    return tuple(parts)  # type: ignore[return-value]


def _example_config(args, on_error="fail") -> ExampleConfig:
    return ExampleConfig(duration_s=args.window_seconds,
                         target_rate=args.rate, feature=args.feature,
                         frame_len=args.frame_len, hop=args.hop,
                         mfcc=MfccConfig(), seed=args.seed, on_error=on_error)


def _class_names():
    return [d.name.title() for d in Diagnosis]


def build_parser() -> _Parser:
    parser = _Parser(prog="respsound",
                     description="Respiratory sound classification toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build a manifest from a corpus directory")
    p.add_argument("corpus_dir", help="directory of audio files named "
                                      "<patient_id>_*.wav")
    p.add_argument("diagnosis_table",
                   help="patient_id,diagnosis table (one line per patient)")
    p.add_argument("--out", required=True, help="manifest CSV to write")

    p = sub.add_parser("stats", help="class distribution of a manifest")
    p.add_argument("--manifest", required=True)

    p = sub.add_parser("train", help="train a model and write checkpoint + curves")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    _add_shared_flags(p)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("predict", help="classify one audio file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("audio_file")

    p = sub.add_parser("augment", help="materialize augmented audio per a plan")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--plan", help="plan file: one 'transform=name key=value ...' "
                                  "per line, optional file=<path> target")
    p.add_argument("--make-balance-plan", action="store_true",
                   help="write a plan that oversamples minority classes "
                        "instead of applying one")
    p.add_argument("--window-seconds", type=float, default=1.0)

    p = sub.add_parser("gradcheck",
                       help="compare analytic BPTT gradients against central "
                            "finite differences")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--hidden", type=int, default=4)
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--input-dim", type=int, default=3)
    p.add_argument("--mode", choices=("uni", "bi"), default="uni")
    p.add_argument("--eps", type=float, default=1e-5)

    p = sub.add_parser("report", help="render curves/confusion as text tables")
    p.add_argument("--curves", help="curves CSV written by train")
    p.add_argument("--report", help="report CSV written by evaluate")

    return parser


def cmd_ingest(args) -> int:
    table = load_diagnosis_table(args.diagnosis_table)
    manifest, skipped = ingest_corpus(args.corpus_dir, table)
    for name in skipped:
        print(f"warning: skipped non-audio file {name}", file=sys.stderr)
    save_manifest(manifest, args.out)
    counts, _ = class_distribution(manifest)
    for dx in Diagnosis:
        print(f"{dx.name.title():<15}{counts[dx]}")
    print(f"wrote {len(manifest)} entries to {args.out}")
    return 0


def cmd_stats(args) -> int:
    manifest = load_manifest_file(args.manifest)
    counts, fractions = class_distribution(manifest)
    print(f"{'class':<15}{'count':>6}  fraction")
    for dx in Diagnosis:
        print(f"{dx.name.title():<15}{counts[dx]:>6}  {fractions[dx]:.4f}")
    labels = [e.diagnosis for e in manifest.entries]
    print(f"files:             {len(manifest)}")
    print(f"patients:          {len(manifest.patient_ids)}")
    print(f"majority baseline: {majority_baseline(labels):.4f}")
    print(f"chance baseline:   {chance_baseline(len(Diagnosis)):.4f}")
    return 0


def _checkpoint_extras(args, fractions) -> dict[str, str]:
    return {
        "feature": args.feature,
        "window_seconds": repr(args.window_seconds),
        "rate": str(args.rate),
        "frame_len": str(args.frame_len),
        "hop": str(args.hop),
        "split": ",".join(repr(f) for f in fractions),
        "group": args.group,
    }


def cmd_train(args) -> int:
    fractions = _fractions(args.split)
    manifest = load_manifest_file(args.manifest)
    root = Path(args.manifest).parent
    assignment = split(manifest, fractions, args.seed,
                       grouping=f"by_{args.group}")
    cfg = _example_config(args)
    train_set = build_examples(manifest, assignment.train, cfg, root)
    val_set = build_examples(manifest, assignment.validation, cfg, root)
    if not train_set:
        raise ManifestError("training subset produced no examples")
    input_dim = train_set[0][0].n_dims
    model = init_model(input_dim, args.hidden, mode=args.mode, seed=args.seed,
                       merge=args.merge, pooling=args.pooling)
    tc = TrainConfig(epochs=args.epochs, lr=args.lr, hidden_size=args.hidden,
                     mode=args.mode, feature=args.feature,
                     duration_s=args.window_seconds, seed=args.seed,
                     merge=args.merge, pooling=args.pooling)
    model, records = train(model, train_set, val_set, tc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "checkpoint.bin", args.seed,
                    extra=_checkpoint_extras(args, fractions))
    (out / "curves.csv").write_text(curves_to_csv(records))
    last = records[-1]
    print(f"final epoch {last.epoch}: train acc {last.train_acc:.3f}, "
          f"val acc {last.val_acc:.3f}")
    print(f"wrote {out / 'checkpoint.bin'} and {out / 'curves.csv'}")
    return 0


def _config_from_meta(meta: dict[str, str]) -> tuple[ExampleConfig, tuple]:
    cfg = ExampleConfig(duration_s=float(meta["window_seconds"]),
                        target_rate=int(meta["rate"]),
                        feature=meta["feature"],
                        frame_len=int(meta["frame_len"]),
                        hop=int(meta["hop"]),
                        seed=int(meta["seed"]))
    fractions = tuple(float(f) for f in meta["split"].split(","))
    return cfg, fractions


def cmd_evaluate(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    cfg, fractions = _config_from_meta(meta)
    manifest = load_manifest_file(args.manifest)
    root = Path(args.manifest).parent
    assignment = split(manifest, fractions, int(meta["seed"]),
                       grouping=f"by_{meta.get('group', 'sample')}")
    test_set = build_examples(manifest, assignment.test, cfg, root)
    if not test_set:
        raise ManifestError("test subset produced no examples")
    report = evaluate(model, test_set)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.csv").write_text(report_to_csv(report, _class_names()))
    print(f"test accuracy {report.accuracy:.4f} over {report.n_examples} examples")
    print(f"wrote {out / 'report.csv'}")
    return 0


def cmd_predict(args) -> int:
    model, meta = load_checkpoint(args.checkpoint)
    cfg, _ = _config_from_meta(meta)
    from .dataset import clip_to_features
    clip = parse_wav(Path(args.audio_file).read_bytes(),
                     source_id=args.audio_file)
    fm = clip_to_features(clip, cfg)
    probs, _ = model_forward(model, fm)
    for dx in Diagnosis:
        print(f"{dx.name.title():<15}{probs[dx]:.6f}")
    print(f"predicted: {Diagnosis(int(np.argmax(probs))).name.title()}")
    return 0


def cmd_augment(args) -> int:
    manifest = load_manifest_file(args.manifest)
    root = Path(args.manifest).parent
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.make_balance_plan:
        plan = aug.balance_plan(manifest, duration_s=args.window_seconds)
        plan_path = out / "balance_plan.txt"
        plan_path.write_text("".join(aug.format_spec(s, f) + "\n"
                                     for f, s in plan))
        print(f"wrote {len(plan)} plan lines to {plan_path}")
        return 0

    if not args.plan:
        raise _UsageError("augment needs --plan (or --make-balance-plan)")
    plan = aug.parse_plan(Path(args.plan).read_text())

    def load_clip(path):
        return parse_wav((root / path).read_bytes(), source_id=path)

    by_path = {e.file_path: e for e in manifest.entries}
    new_entries = list(manifest.entries)
    n_written = 0
    for target, spec in plan:
        targets = [target] if target else list(by_path)
        for t in targets:
            if t not in by_path:
                raise ManifestError(f"plan references {t!r}, not in manifest")
            entry = by_path[t]
            clips = aug.apply_spec(spec, load_clip(t), load_clip=load_clip)
            for j, clip in enumerate(clips):
                suffix = f".aug{n_written}" + (f".{j}" if len(clips) > 1 else "")
                name = Path(t).stem + suffix + ".wav"
                (out / name).write_bytes(serialize_wav(clip))
                meta = dict(entry.metadata)
                meta["augmented_from"] = t
                meta["augment_spec"] = aug.format_spec(spec)
                new_entries.append(ManifestEntry(name, entry.patient_id,
                                                 entry.diagnosis, meta))
                n_written += 1
    save_manifest(Manifest(tuple(new_entries)), out / "manifest.csv")
    print(f"wrote {n_written} augmented files and {out / 'manifest.csv'}")
    return 0


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    xs = rng.standard_normal((args.steps, args.input_dim))
    label = int(rng.integers(0, 8))
    model = init_model(args.input_dim, args.hidden, mode=args.mode,
                       seed=args.seed)
    err = grad_check(model, xs, label, eps=args.eps)
    print(f"max relative error: {err:.3e} (tolerance {GRADCHECK_TOL:.0e})")
    if err > GRADCHECK_TOL:
        print("GRADIENT CHECK FAILED", file=sys.stderr)
        return 3
    return 0


def _print_table(rows: list[list[str]]):
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    for r in rows:
        print("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())


def cmd_report(args) -> int:
    if not args.curves and not args.report:
        raise _UsageError("report needs --curves and/or --report")
    if args.curves:
        lines = Path(args.curves).read_text().splitlines()
        rows = [line.split(",") for line in lines if line]
        print("training curves")
        _print_table([[_round(c) for c in r] for r in rows])
    if args.report:
        if args.curves:
            print()
        lines = Path(args.report).read_text().splitlines()
        rows = [line.split(",") for line in lines if line]
        width = max(len(r) for r in rows)
        rows = [r + [""] * (width - len(r)) for r in rows]
        print("evaluation report")
        _print_table([[_round(c) for c in r] for r in rows])
    return 0


def _round(cell: str) -> str:
    try:
        value = float(cell)
    except ValueError:
        return cell
    return cell if value == int(value) else f"{value:.4f}"


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    handler = {
        "ingest": cmd_ingest,
        "stats": cmd_stats,
        "train": cmd_train,
        "evaluate": cmd_evaluate,
        "predict": cmd_predict,
        "augment": cmd_augment,
        "gradcheck": cmd_gradcheck,
        "report": cmd_report,
    }[args.command]
    try:
        return handler(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except _DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
