"""Run the experiment grid and write the comparison tables and figures.

    python scripts/reproduce_tables.py --dataset LOG --root runs [--tables 1 2 3]
        [--override bert=distilbert-base-uncased] [--pemdas DIR] [--epochs N]

Finished runs under ``--root`` are reused, so an interrupted grid resumes
where it stopped.  Outputs go to ``<root>/tables/``.
"""

import argparse
import dataclasses
import json
import logging
from pathlib import Path

from algebra_errors.evaluation import RunReport, compare_runs, emit_plots, render_table
from algebra_errors.experiments import TABLES, find, ingest_dataset, run_experiment
from algebra_errors.models import UnknownCheckpoint


def parse_overrides(items):
    return dict(item.split("=", 1) for item in items)


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--dataset", required=True)
    p.add_argument("--format", default="cogtutorbugs_native")
    p.add_argument("--root", type=Path, default=Path("runs"))
    p.add_argument("--tables", type=int, nargs="+", default=[1, 2, 3], choices=sorted(TABLES))
    p.add_argument("--override", nargs="*", default=[], metavar="NAME=CHECKPOINT")
    p.add_argument("--pemdas", help="PEMDAS solution directory (needed for table 3)")
    p.add_argument("--epochs", type=int, help="fine-tuning epochs (default 30)")
    p.add_argument("--batch-size", type=int, help="fine-tuning batch size (default 300)")
    p.add_argument("--lr", type=float, help="learning rate (default 5e-5)")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    records = ingest_dataset(args.dataset, args.root, args.format)
    train = {k: v for k, v in {"epochs": args.epochs, "batch_size": args.batch_size, "learning_rate": args.lr}.items() if v}
    overrides = parse_overrides(args.override)
    out = args.root / "tables"
    out.mkdir(parents=True, exist_ok=True)

    for number in args.tables:
        reports = []
        for exp in TABLES[number]:
            if exp.da_epochs and not args.pemdas:
                logging.warning("skipping %s: no PEMDAS corpus", exp.name)
                continue
            try:
                reports.append(run_experiment(exp, records, args.root, overrides, args.pemdas, train))
            except (UnknownCheckpoint, ValueError) as exc:
                logging.warning("skipping %s: %s", exp.name, exc)
        if not reports:
            continue
        rows = compare_runs(reports)
        table = render_table(rows)
        print(f"\nTable {number}\n{table}")
        (out / f"table{number}.md").write_text(table + "\n", "utf-8")
        (out / f"table{number}.json").write_text(json.dumps([dataclasses.asdict(r) for r in rows], indent=2, default=float), "utf-8")
        if number == 3:
            emit_plots(reports, "accuracy_curves", out / "table3")

    action = args.root / find("bert_action").name / "report.json"
    if action.exists():
        emit_plots([RunReport.load(action.parent)], "heatmap", out / "bert_action")
    print(f"\noutputs in {out}")


if __name__ == "__main__":
    main()
