"""Command-line entry point: ``ingest``, ``parse``, ``train`` and ``report``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from . import data as D
from .evaluation import RunReport, compare_runs, emit_plots, render_table
from .parse import parse_stats

log = logging.getLogger("algebra_errors")


@dataclass
class ExperimentManifest:
    records: str
    model: str
    scheme: str = "new19"
    input_mode: str = "control"
    folds: int = 5
    fold_unit: str = "record"
    seed: int = 42
    out: str = "runs/run"
    train: dict = field(default_factory=dict)
    da: dict | None = None
    max_tokens: int = 128
    label: str | None = None

    def save(self, path: Path) -> None:
        path.write_text(json.dumps(asdict(self), indent=2) + "\n", "utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentManifest":
        return cls(**json.loads(Path(path).read_text("utf-8")))


# ---------------------------------------------------------------------------
# ingest


def cmd_ingest(args) -> int:
    descriptor = D.load_format_descriptor(args.descriptor) if args.descriptor else None
    parsed = D.parse_transactions(args.input, args.format, descriptor)
    ls = D.log_stats(parsed.interactions)
    print(
        f"parsed {ls.interactions} interactions ({len(parsed.rejects)} rejected); "
        f"{ls.responses} responses, {ls.students} students"
    )
    grouping = D.group_into_steps(parsed.interactions)
    bugs = D.select_bug_steps(grouping.steps)
    print(f"{len(grouping.steps)} steps ({len(grouping.rejects)} trailing actions rejected); {len(bugs)} BUG steps")
    labeling = D.apply_label_scheme(bugs, D.load_scheme(args.scheme), missing_prior="drop")
    stats = D.dataset_stats(labeling.records)
    print(f"{stats.total} records, {len(labeling.scheme.classes)} classes")
    if labeling.drops:
        print("dropped: " + ", ".join(f"{k}={v}" for k, v in sorted(labeling.drops.items())))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    D.write_records(labeling.records, out)
    summary = {
        "interactions": asdict(ls),
        "rejects": [asdict(r) for r in parsed.rejects + grouping.rejects],
        "steps": len(grouping.steps),
        "bug_steps": len(bugs),
        "records": stats.total,
        "classes": {c.name: c.occurrence_count for c in labeling.scheme.classes},
        "drops": dict(labeling.drops),
        "dropped_classes": labeling.dropped_classes,
        "per_student": stats.per_student,
        "n_students": stats.n_students,
        "n_responses": stats.n_responses,
    }
    stats_path = out.with_name(out.name + ".stats.json")
    stats_path.write_text(json.dumps(summary, indent=2) + "\n", "utf-8")
    print(f"wrote {out} and {stats_path}")
    return 0


def cmd_parse(args) -> int:
    stats = parse_stats(D.read_records(args.stats))
    print(json.dumps(stats, indent=2))
    return 0


# ---------------------------------------------------------------------------
# train


def manifest_from_args(args) -> ExperimentManifest:
    if args.manifest:
        return ExperimentManifest.load(args.manifest)
    if not args.records or not args.model:
        raise SystemExit("train needs --records and --model (or --manifest)")
    train = {
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "learning_rate": args.lr,
        "seed": args.seed,
        "deterministic": args.deterministic,
        "micro_batch_size": args.micro_batch_size,
    }
    da = None
    if args.da_epochs:
        if not args.da_corpus:
            raise SystemExit("--da-epochs needs --da-corpus")
        da = {"corpus": args.da_corpus, "epochs": args.da_epochs, "max_lines": args.da_max_lines, "seed": args.seed}
    return ExperimentManifest(
        records=args.records,
        model=args.model,
        scheme=args.scheme,
        input_mode="action_included" if args.mode == "action" else "control",
        folds=args.folds,
        fold_unit=args.fold_unit,
        seed=args.seed,
        out=args.out,
        train=train,
        da=da,
        max_tokens=args.max_tokens,
        label=args.label,
    )


def run_manifest(manifest: ExperimentManifest) -> RunReport:
    from .models import ClassifierConfig, Family, resolve_model
    from .training import DAConfig, TrainConfig, cross_validate, domain_adapt

    out = Path(manifest.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest.save(out / "manifest.json")
    records = D.read_records(manifest.records)
    classes = D.class_list(records)
    names = [c.name for c in classes]
    family = resolve_model(manifest.model)
    weights_from = None
    da_epochs = 0
    if manifest.da:
        if family.family is not Family.MLM_ENCODER:
            raise SystemExit("domain adaptation applies to masked-LM encoders only")
        da = DAConfig(**manifest.da)
        result = domain_adapt(family.registry_name, da, out / "da_checkpoint")
        weights_from = result.path
        da_epochs = da.epochs
        log.info("domain adaptation: %d lines, %d steps", result.lines, result.steps)
    clf_config = ClassifierConfig(
        family,
        num_classes=len(names),
        input_mode=manifest.input_mode,
        max_tokens=manifest.max_tokens,
        seed=manifest.seed,
        class_names=names,
    )
    train_config = TrainConfig(**manifest.train)
    folds = D.make_folds(records, manifest.folds, manifest.seed, manifest.fold_unit)

    trace_path = out / "trace.csv"
    with open(trace_path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh).writerow(["epoch", "fold", "loss", "accuracy"])

    def append_trace(fold, trace):
        with open(trace_path, "a", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerow([trace.epoch, fold, repr(trace.train_loss), repr(trace.test_accuracy)])

    report = cross_validate(
        records,
        clf_config,
        train_config,
        folds,
        scheme=manifest.scheme,
        weights_from=weights_from,
        run_info={
            "model": manifest.model,
            "label": manifest.label or manifest.model,
            "registry_name": family.registry_name,
            "family": family.family.value,
            "da_epochs": da_epochs,
            "records": manifest.records,
            "n_records": len(records),
            "class_counts": {c.name: c.occurrence_count for c in classes},
        },
        checkpoint_dir=out / "checkpoints",
        on_epoch=append_trace,
    )
    report.save(out)
    return report


def cmd_train(args) -> int:
    manifest = manifest_from_args(args)
    report = run_manifest(manifest)
    print(render_table(compare_runs([report])))
    failed = [f.fold for f in report.folds if not f.ok]
    if failed:
        print(f"failed folds: {failed}", file=sys.stderr)
    print(f"wrote {manifest.out}")
    return 1 if len(failed) == len(report.folds) else 0


# ---------------------------------------------------------------------------
# report


def cmd_report(args) -> int:
    reports = [RunReport.load(r) for r in args.runs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = compare_runs(reports, baseline=args.baseline)
    table = render_table(rows)
    (out / "comparison.md").write_text(table + "\n", "utf-8")
    (out / "comparison.json").write_text(json.dumps([asdict(r) for r in rows], indent=2) + "\n", "utf-8")
    print(table)
    if args.heatmap:
        for art in emit_plots(reports, "heatmap", out, fold=args.fold):
            print(f"heatmap: {art.image} ({art.data})")
    if args.curves:
        for art in emit_plots(reports, "accuracy_curves", out, max_epochs=args.max_epochs or None):
            print(f"curves: {art.image} ({art.data})")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="algebra-errors", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("ingest", help="tutoring log -> normalized labeled records")
    q.add_argument("--input", required=True)
    q.add_argument("--format", choices=D.FORMATS, default="cogtutorbugs_native")
    q.add_argument("--scheme", default="new19", help="packaged scheme name or scheme file")
    q.add_argument("--descriptor", help="DataShop column descriptor (YAML)")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_ingest)

    q = sub.add_parser("parse", help="equation parseability statistics")
    q.add_argument("--stats", required=True, metavar="RECORDS", help="normalized records file")
    q.set_defaults(func=cmd_parse)

    q = sub.add_parser("train", help="optional domain adaptation, then k-fold fine-tuning")
    q.add_argument("--records")
    q.add_argument("--model", help="bert, gpt2, mathbert, xlm-roberta, gru, a hub id or a local path")
    q.add_argument("--mode", choices=("control", "action"), default="control")
    q.add_argument("--folds", type=int, default=5)
    q.add_argument("--epochs", type=int, default=30)
    q.add_argument("--batch-size", type=int, default=300)
    q.add_argument("--lr", type=float, default=5e-5)
    q.add_argument("--seed", type=int, default=42)
    q.add_argument("--da-epochs", type=int, choices=(0, 3, 10), default=0)
    q.add_argument("--da-corpus", help="PEMDAS solution directory for domain adaptation")
    q.add_argument("--da-max-lines", type=int, help="cap on domain-adaptation corpus lines")
    q.add_argument("--scheme", default="new19", help="label scheme name recorded in the report")
    q.add_argument("--fold-unit", choices=("record", "student"), default="record")
    q.add_argument("--micro-batch-size", type=int, help="gradient accumulation micro-batch")
    q.add_argument("--max-tokens", type=int, default=128)
    q.add_argument("--deterministic", action="store_true")
    q.add_argument("--label", help="run name shown in comparison tables")
    q.add_argument("--manifest", help="re-run a saved manifest.json (other flags ignored)")
    q.add_argument("--out", default="runs/run")
    q.set_defaults(func=cmd_train)

    q = sub.add_parser("report", help="comparison tables, heatmaps and accuracy curves")
    q.add_argument("--runs", nargs="+", required=True)
    q.add_argument("--heatmap", action="store_true")
    q.add_argument("--curves", action="store_true")
    q.add_argument("--fold", type=int, help="heatmap from one fold instead of all folds pooled")
    q.add_argument("--baseline", type=int, default=0, help="index of the run deltas are measured against")
    q.add_argument("--max-epochs", type=int, default=15, help="epochs shown in curves (0 = all)")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (D.IngestError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
