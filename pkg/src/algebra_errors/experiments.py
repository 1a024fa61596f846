"""The experiment grid behind the comparison tables, and helpers to run it.

Each :class:`Experiment` names one cross-validated run.  Runs live in
``<root>/<name>/`` and are reused when their ``report.json`` already exists,
so the grid can be filled in incrementally.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from . import data as D
from .cli import ExperimentManifest, run_manifest
from .evaluation import RunReport


@dataclass(frozen=True)
class Experiment:
    name: str
    model: str
    scheme: str = "new19"
    mode: str = "control"
    da_epochs: int = 0
    label: str = ""


def _label(model: str, mode: str = "control", da: int = 0) -> str:
    base = {"bert": "BERT", "gpt2": "GPT-2", "mathbert": "MathBERT", "xlm-roberta": "XLM-RoBERTa", "gru": "GRU+C"}[model]
    if mode == "action":
        base += " + action"
    return base + (f" + DA{da}" if da else "")


# baseline labels, equations only
TABLE1 = [Experiment(f"{m}_baseline24", m, "baseline24", label=_label(m)) for m in ("bert", "gpt2", "mathbert", "xlm-roberta", "gru")]
# 19-class labels, with and without the student's action
TABLE2 = [
    Experiment(f"{m}_{mode}", m, "new19", mode, label=_label(m, mode))
    for m in ("bert", "gpt2", "mathbert", "xlm-roberta")
    for mode in ("control", "action")
]
# masked-token pre-training on PEMDAS text before fine-tuning
TABLE3 = [
    Experiment("bert_control", "bert", label=_label("bert")),
    Experiment("bert_da3", "bert", da_epochs=3, label=_label("bert", da=3)),
    Experiment("bert_da10", "bert", da_epochs=10, label=_label("bert", da=10)),
]
TABLES = {1: TABLE1, 2: TABLE2, 3: TABLE3}


def ingest_dataset(path: str | Path, out_dir: str | Path, fmt: str = "cogtutorbugs_native") -> dict[str, Path]:
    """Write ``records_<scheme>.jsonl`` for both packaged schemes; return their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    parsed = D.parse_transactions(path, fmt)
    bugs = D.select_bug_steps(D.group_into_steps(parsed.interactions).steps)
    paths = {}
    for scheme in D.SCHEMES:
        labeling = D.apply_label_scheme(bugs, D.load_scheme(scheme), missing_prior="drop")
        paths[scheme] = out_dir / f"records_{scheme}.jsonl"
        D.write_records(labeling.records, paths[scheme])
    return paths


def run_experiment(
    exp: Experiment,
    records: dict[str, Path],
    root: str | Path,
    overrides: dict[str, str] | None = None,
    da_corpus: str | None = None,
    train: dict | None = None,
    force: bool = False,
) -> RunReport:
    """Run (or reload) one experiment under ``root/exp.name``.

    ``overrides`` maps short model names to substitute checkpoints, e.g. a
    distilled encoder in place of ``bert`` on CPU-only machines.
    """
    out = Path(root) / exp.name
    if (out / "report.json").exists() and not force:
        return RunReport.load(out)
    model = (overrides or {}).get(exp.model, exp.model)
    da = None
    if exp.da_epochs:
        if not da_corpus:
            raise ValueError(f"{exp.name} needs a PEMDAS corpus")
        da = {"corpus": str(da_corpus), "epochs": exp.da_epochs}
    manifest = ExperimentManifest(
        records=str(records[exp.scheme]),
        model=model,
        scheme=exp.scheme,
        input_mode="action_included" if exp.mode == "action" else "control",
        out=str(out),
        train=dict(train or {}),
        da=da,
        label=exp.label or exp.name,
    )
    return run_manifest(manifest)


def find(name: str) -> Experiment:
    for table in TABLES.values():
        for exp in table:
            if exp.name == name:
                return exp
    raise KeyError(name)
