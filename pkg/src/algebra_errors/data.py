"""Tutoring-system log ingestion.

Pipeline: raw transaction rows -> :class:`RawInteraction` -> grouped
:class:`Step` objects -> BUG steps -> labeled :class:`StepRecord` pairs ->
cross-validation folds.  Every stage that discards input reports what it
discarded and why.
"""

from __future__ import annotations

import csv
import io
import json
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np
import yaml


class IngestError(Exception):
    pass


class UnknownFormat(IngestError):
    pass


class EmptyFile(IngestError):
    pass


class MissingPriorStep(IngestError):
    pass


class TooFewRecords(IngestError):
    pass


class InteractionKind(str, Enum):
    ACTION = "action_selection"
    EQUATION = "equation_entry"
    OTHER = "other"


class Outcome(str, Enum):
    CORRECT = "correct"
    BUG = "bug"
    HINT = "hint"
    OTHER = "other"


@dataclass(frozen=True)
class RawInteraction:
    student_id: str
    response_id: str
    sequence_index: int
    kind: InteractionKind
    payload: str
    feedback_text: str | None = None
    outcome: Outcome = Outcome.OTHER
    problem: str | None = None  # the given equation of the response, if logged


@dataclass(frozen=True)
class Reject:
    line: int
    reason: str
    content: str = ""


@dataclass
class ParsedLog:
    interactions: list[RawInteraction]
    rejects: list[Reject]
    n_rows: int


# ---------------------------------------------------------------------------
# transaction parsing

NATIVE_COLUMNS = (
    "student_id",
    "response_id",
    "sequence_index",
    "kind",
    "payload",
    "feedback_text",
    "outcome",
)
NATIVE_OPTIONAL = ("problem",)

FORMATS = ("datashop_tsv", "cogtutorbugs_native")


def load_format_descriptor(path: str | Path | None = None) -> dict:
    """Load the DataShop column descriptor (the packaged default if no path)."""
    if path is None:
        text = resources.files("algebra_errors").joinpath("formats/datashop_tsv.yaml").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return yaml.safe_load(text)


def _read_bytes(raw_file: BinaryIO | bytes | str | Path) -> str:
    if isinstance(raw_file, (str, Path)):
        data = Path(raw_file).read_bytes()
    elif isinstance(raw_file, bytes):
        data = raw_file
    else:
        data = raw_file.read()
    text = data.decode("utf-8-sig")
    if not text.strip():
        raise EmptyFile("input file is empty")
    return text


def parse_transactions(
    raw_file: BinaryIO | bytes | str | Path,
    format: str = "cogtutorbugs_native",
    descriptor: dict | None = None,
) -> ParsedLog:
    """Parse a tab-separated transaction log into interactions.

    One interaction per data row, in file order.  Rows that cannot be turned
    into an interaction land in ``rejects`` with a reason; the invariant
    ``len(interactions) + len(rejects) == n_rows`` always holds.
    """
    if format not in FORMATS:
        raise UnknownFormat(f"unknown format {format!r}; expected one of {FORMATS}")
    text = _read_bytes(raw_file)
    rows = list(csv.reader(io.StringIO(text), delimiter="\t", quoting=csv.QUOTE_NONE))
    header, body = rows[0], rows[1:]
    # line numbers are 1-based file lines; the header is line 1
    numbered = [(i + 2, r) for i, r in enumerate(body) if any(cell.strip() for cell in r)]
    if format == "cogtutorbugs_native":
        interactions, rejects = _parse_native(header, numbered)
    else:
        interactions, rejects = _parse_datashop(header, numbered, descriptor or load_format_descriptor())
    return ParsedLog(interactions, rejects, len(numbered))


def _parse_native(header, rows):
    missing = [c for c in NATIVE_COLUMNS if c not in header]
    if missing:
        raise UnknownFormat(f"header lacks native columns {missing}")
    col = {name: header.index(name) for name in (*NATIVE_COLUMNS, *NATIVE_OPTIONAL) if name in header}
    out, rejects = [], []
    last_index: dict[str, int] = {}
    for line, row in rows:
        if len(row) != len(header):
            rejects.append(Reject(line, f"expected {len(header)} fields, got {len(row)}", "\t".join(row)))
            continue
        get = {name: row[i] for name, i in col.items()}
        try:
            seq = int(get["sequence_index"])
            kind = InteractionKind(get["kind"].strip())
            outcome = Outcome(get["outcome"].strip().lower() or "other")
        except ValueError as exc:
            rejects.append(Reject(line, f"bad field value: {exc}", "\t".join(row)))
            continue
        reason = _interaction_problem(kind, get["payload"], seq, last_index.get(get["response_id"]))
        if reason:
            rejects.append(Reject(line, reason, "\t".join(row)))
            continue
        last_index[get["response_id"]] = seq
        out.append(
            RawInteraction(
                student_id=get["student_id"],
                response_id=get["response_id"],
                sequence_index=seq,
                kind=kind,
                payload=get["payload"].strip(),
                feedback_text=get["feedback_text"].strip() or None,
                outcome=outcome,
                problem=(get.get("problem") or "").strip() or None,
            )
        )
    return out, rejects


def _interaction_problem(kind, payload, seq, previous) -> str | None:
    if seq < 0:
        return "negative sequence_index"
    if previous is not None and seq <= previous:
        return "sequence_index not increasing within response"
    if kind is not InteractionKind.OTHER and not payload.strip():
        return f"empty payload for {kind.value}"
    return None


def _parse_datashop(header, rows, desc):
    columns = desc["columns"]
    optional = set(desc.get("optional", []))
    required = [c for key, c in columns.items() if key not in optional]
    missing = [c for c in required if c not in header]
    if missing:
        raise UnknownFormat(f"header lacks DataShop columns {missing}")
    idx = {c: header.index(c) for c in header}
    key_cols = [c for c in desc.get("response_key", []) if c in idx]
    rules = [(r["column"], re.compile(r["pattern"]), InteractionKind(r["kind"])) for r in desc["kind_rules"]]
    payload_tpl = desc.get("payload", {})
    outcome_map = {k.upper(): Outcome(v) for k, v in desc.get("outcome_map", {}).items()}

    out, rejects = [], []
    counters: Counter[str] = Counter()
    for line, row in rows:
        if len(row) != len(header):
            rejects.append(Reject(line, f"expected {len(header)} fields, got {len(row)}", "\t".join(row)))
            continue
        cells = {c: row[i].strip() for c, i in idx.items()}
        kind = InteractionKind.OTHER
        for column, pattern, rule_kind in rules:
            if column in cells and pattern.search(cells[column]):
                kind = rule_kind
                break
        template = payload_tpl.get(kind.value, "{%s}" % columns["input"])
        try:
            payload = " ".join(template.format_map(cells).split())
        except KeyError as exc:
            rejects.append(Reject(line, f"payload template references missing column {exc}", "\t".join(row)))
            continue
        response_id = "|".join(cells[c] for c in key_cols) or cells[columns["student_id"]]
        seq = counters[response_id]
        reason = _interaction_problem(kind, payload, seq, None)
        if reason:
            rejects.append(Reject(line, reason, "\t".join(row)))
            continue
        counters[response_id] += 1
        outcome = outcome_map.get(cells[columns["outcome"]].upper(), Outcome.OTHER)
        out.append(
            RawInteraction(
                student_id=cells[columns["student_id"]],
                response_id=response_id,
                sequence_index=seq,
                kind=kind,
                payload=payload,
                feedback_text=cells.get(columns.get("feedback_text", ""), "") or None,
                outcome=outcome,
                problem=cells.get(columns.get("problem", ""), "") or None,
            )
        )
    return out, rejects


def write_native_log(interactions: Iterable[RawInteraction], path: str | Path) -> None:
    """Write interactions in the native tab-separated layout."""

    def clean(value) -> str:
        return "" if value is None else " ".join(str(value).split())

    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\t".join((*NATIVE_COLUMNS, "problem")) + "\n")
        for it in interactions:
            cells = [
                it.student_id,
                it.response_id,
                it.sequence_index,
                it.kind.value,
                it.payload,
                it.feedback_text,
                it.outcome.value,
                it.problem,
            ]
            fh.write("\t".join(clean(c) for c in cells) + "\n")


# ---------------------------------------------------------------------------
# steps


@dataclass(frozen=True)
class Step:
    equation: str
    action: str | None = None
    feedback_text: str | None = None
    outcome: Outcome = Outcome.CORRECT
    source_interactions: tuple[RawInteraction, ...] = field(default=(), repr=False, compare=False)
    student_id: str = ""
    response_id: str = ""
    position: int = 0  # 1-based within the response; 0 is the problem statement
    # last non-BUG step before this one (or the problem statement)
    prior: Step | None = field(default=None, repr=False, compare=False)


@dataclass
class Grouping:
    steps: list[Step]
    rejects: list[Reject]


ACTION_JOINER = "; "


def group_into_steps(interactions: Sequence[RawInteraction]) -> Grouping:
    """Group each equation entry with the action selections that preceded it.

    Responses keep their first-appearance order; interactions inside a
    response are ordered by ``sequence_index``.  Actions left over after a
    response's last equation are rejected.
    """
    by_response: dict[str, list[RawInteraction]] = {}
    for it in interactions:
        by_response.setdefault(it.response_id, []).append(it)

    steps: list[Step] = []
    rejects: list[Reject] = []
    for response_id, items in by_response.items():
        items = sorted(items, key=lambda it: it.sequence_index)
        problem = next((it.problem for it in items if it.problem), None)
        prior: Step | None = None
        if problem:
            prior = Step(
                equation=problem,
                outcome=Outcome.CORRECT,
                student_id=items[0].student_id,
                response_id=response_id,
                position=0,
            )
        pending: list[RawInteraction] = []
        position = 0
        for it in items:
            if it.kind is InteractionKind.ACTION:
                pending.append(it)
            elif it.kind is InteractionKind.EQUATION:
                position += 1
                step = _make_step(pending, it, position, prior)
                steps.append(step)
                if step.outcome is not Outcome.BUG:
                    prior = step
                pending = []
        for it in pending:
            rejects.append(Reject(it.sequence_index, f"trailing action with no equation in response {response_id}", it.payload))
    return Grouping(steps, rejects)


def _make_step(actions, equation, position, prior) -> Step:
    group = (*actions, equation)
    bug = next((it for it in group if it.outcome is Outcome.BUG), None)
    if bug is not None:
        outcome = Outcome.BUG
        feedback = bug.feedback_text or next((it.feedback_text for it in group if it.feedback_text), None)
    else:
        outcome = equation.outcome
        feedback = equation.feedback_text
    return Step(
        equation=equation.payload,
        action=ACTION_JOINER.join(a.payload for a in actions) if actions else None,
        feedback_text=feedback,
        outcome=outcome,
        source_interactions=group,
        student_id=equation.student_id,
        response_id=equation.response_id,
        position=position,
        prior=prior,
    )


def select_bug_steps(steps: Iterable[Step]) -> list[Step]:
    return [s for s in steps if s.outcome is Outcome.BUG]


# ---------------------------------------------------------------------------
# label schemes


@dataclass(frozen=True)
class ErrorClass:
    id: int
    name: str
    occurrence_count: int = 0


@dataclass
class LabelScheme:
    """Rules mapping ITS feedback messages to error class names.

    Rules are tried in order; the first regex that matches decides.  A rule
    whose class is ``None`` marks messages to drop as system errors.  With
    ``passthrough`` on, feedback that is already an upper-case class name
    (pre-labeled data) maps to itself.  ``classes`` is filled in by
    :func:`apply_label_scheme`.
    """

    name: str
    rules: list[tuple[re.Pattern, str | None]]
    min_count: int = 0
    passthrough: bool = True
    version: int = 1
    classes: list[ErrorClass] = field(default_factory=list)

    def map_feedback(self, text: str | None) -> tuple[str | None, str]:
        """Return ``(class_name, reason)``; the name is None when dropped."""
        if not text:
            return None, "no_feedback"
        for pattern, name in self.rules:
            if pattern.search(text):
                return (name, "mapped") if name else (None, "system_error")
        if self.passthrough and _CLASS_NAME.fullmatch(text.strip()):
            return text.strip(), "mapped"
        return None, "unmapped"

    @property
    def class_names(self) -> list[str]:
        return [c.name for c in self.classes]


_CLASS_NAME = re.compile(r"[A-Z][A-Z0-9_]*")
SCHEMES = ("baseline24", "new19")


def load_scheme(name_or_path: str | Path) -> LabelScheme:
    """Load a packaged scheme by name, or a scheme file by path."""
    if str(name_or_path) in SCHEMES:
        text = resources.files("algebra_errors").joinpath(f"schemes/{name_or_path}.yaml").read_text("utf-8")
    else:
        text = Path(name_or_path).read_text("utf-8")
    raw = yaml.safe_load(text)
    rules = [(re.compile(r["pattern"], re.IGNORECASE), r.get("class")) for r in raw.get("rules", [])]
    return LabelScheme(
        name=raw["name"],
        rules=rules,
        min_count=int(raw.get("min_count", 0)),
        passthrough=bool(raw.get("passthrough", True)),
        version=int(raw.get("version", 1)),
    )


@dataclass(frozen=True)
class StepRecord:
    prior_step: Step
    current_step: Step
    label: ErrorClass
    student_id: str
    response_id: str
    record_id: str = ""


@dataclass
class Labeling:
    records: list[StepRecord]
    scheme: LabelScheme
    drops: Counter = field(default_factory=Counter)  # reason -> count
    dropped_classes: dict[str, int] = field(default_factory=dict)  # rare class -> count


def apply_label_scheme(
    steps: Iterable[Step],
    scheme: LabelScheme,
    missing_prior: str = "raise",
) -> Labeling:
    """Label BUG steps and pair each with its prior step.

    Classes seen fewer than ``scheme.min_count`` times are dropped and the
    survivors get dense ids in name order.  A step without a prior step
    raises :class:`MissingPriorStep`, or is dropped and counted when
    ``missing_prior="drop"``.
    """
    drops: Counter = Counter()
    kept: list[tuple[Step, str]] = []
    for step in steps:
        name, reason = scheme.map_feedback(step.feedback_text)
        if name is None:
            drops[reason] += 1
            continue
        if step.prior is None:
            if missing_prior == "raise":
                raise MissingPriorStep(
                    f"step {step.position} of response {step.response_id} has no prior step or problem statement"
                )
            drops["missing_prior"] += 1
            continue
        kept.append((step, name))

    counts = Counter(name for _, name in kept)
    dropped_classes = {n: c for n, c in counts.items() if c < scheme.min_count}
    retained = sorted(n for n in counts if n not in dropped_classes)
    classes = {n: ErrorClass(i, n, counts[n]) for i, n in enumerate(retained)}
    if dropped_classes:
        drops["below_min_count"] = sum(dropped_classes.values())

    records = [
        StepRecord(
            prior_step=step.prior,
            current_step=step,
            label=classes[name],
            student_id=step.student_id,
            response_id=step.response_id,
            record_id=f"{step.response_id}/{step.position}",
        )
        for step, name in kept
        if name in classes
    ]
    fitted = replace(scheme, classes=list(classes.values()))
    return Labeling(records, fitted, drops, dropped_classes)


# ---------------------------------------------------------------------------
# normalized record files

RECORD_FIELDS = (
    "student_id",
    "response_id",
    "prior_equation",
    "prior_action",
    "current_equation",
    "current_action",
    "label_name",
)


def record_to_row(record: StepRecord) -> dict:
    return {
        "student_id": record.student_id,
        "response_id": record.response_id,
        "prior_equation": record.prior_step.equation,
        "prior_action": record.prior_step.action,
        "current_equation": record.current_step.equation,
        "current_action": record.current_step.action,
        "label_name": record.label.name,
    }


def write_records(records: Iterable[StepRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in records:
            fh.write(json.dumps(record_to_row(record), ensure_ascii=False) + "\n")


def read_records(path: str | Path, class_names: Sequence[str] | None = None) -> list[StepRecord]:
    """Read a normalized record file.

    Class ids follow ``class_names`` when given, otherwise sorted label
    names.  Record ids are the 0-based line numbers.
    """
    rows = [json.loads(line) for line in Path(path).read_text("utf-8").splitlines() if line.strip()]
    counts = Counter(r["label_name"] for r in rows)
    names = list(class_names) if class_names is not None else sorted(counts)
    unknown = set(counts) - set(names)
    if unknown:
        raise IngestError(f"labels not in class list: {sorted(unknown)}")
    classes = {n: ErrorClass(i, n, counts.get(n, 0)) for i, n in enumerate(names)}
    records = []
    for i, r in enumerate(rows):
        prior = Step(r["prior_equation"], r.get("prior_action"), student_id=r["student_id"], response_id=r["response_id"])
        current = Step(
            r["current_equation"],
            r.get("current_action"),
            outcome=Outcome.BUG,
            student_id=r["student_id"],
            response_id=r["response_id"],
            prior=prior,
        )
        records.append(StepRecord(prior, current, classes[r["label_name"]], r["student_id"], r["response_id"], str(i)))
    return records


def class_list(records: Iterable[StepRecord]) -> list[ErrorClass]:
    """Distinct classes of ``records`` ordered by id."""
    seen = {r.label.id: r.label for r in records}
    return [seen[i] for i in sorted(seen)]


# ---------------------------------------------------------------------------
# folds


@dataclass(frozen=True)
class FoldAssignment:
    seed: int
    k: int
    assignments: tuple[int, ...]  # record index -> fold
    unit: str = "record"

    def test_indices(self, fold: int) -> list[int]:
        return [i for i, f in enumerate(self.assignments) if f == fold]

    def train_indices(self, fold: int) -> list[int]:
        return [i for i, f in enumerate(self.assignments) if f != fold]

    def sizes(self) -> list[int]:
        counts = Counter(self.assignments)
        return [counts.get(f, 0) for f in range(self.k)]


def make_folds(records: Sequence[StepRecord], k: int = 5, seed: int = 42, unit: str = "record") -> FoldAssignment:
    """Random k-fold assignment.

    ``unit="record"`` permutes records and deals them round-robin, so fold
    sizes differ by at most one.  ``unit="student"`` keeps each student's
    records together (sizes then only approximately balanced).
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    n = len(records)
    if n < k:
        raise TooFewRecords(f"{n} records cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    folds = [0] * n
    if unit == "record":
        for rank, idx in enumerate(rng.permutation(n)):
            folds[idx] = rank % k
    elif unit == "student":
        members: dict[str, list[int]] = {}
        for i, r in enumerate(records):
            members.setdefault(r.student_id, []).append(i)
        students = list(members)
        if len(students) < k:
            raise TooFewRecords(f"{len(students)} students cannot fill {k} folds")
        sizes = [0] * k
        for s in (students[j] for j in rng.permutation(len(students))):
            target = min(range(k), key=lambda f: (sizes[f], f))
            for i in members[s]:
                folds[i] = target
            sizes[target] += len(members[s])
    else:
        raise ValueError(f"unknown fold unit {unit!r}")
    return FoldAssignment(seed, k, tuple(folds), unit)


# ---------------------------------------------------------------------------
# summaries


@dataclass
class DatasetStats:
    total: int = 0
    per_class: dict[str, int] = field(default_factory=dict)
    per_student: dict[str, int] = field(default_factory=dict)
    n_students: int = 0
    n_responses: int = 0


def dataset_stats(records: Iterable[StepRecord]) -> DatasetStats:
    records = list(records)
    per_class = Counter(r.label.name for r in records)
    per_student = Counter(r.student_id for r in records)
    return DatasetStats(
        total=len(records),
        per_class=dict(sorted(per_class.items())),
        per_student=dict(per_student),
        n_students=len(per_student),
        n_responses=len({r.response_id for r in records}),
    )


@dataclass
class LogStats:
    interactions: int
    responses: int
    students: int


def log_stats(interactions: Sequence[RawInteraction]) -> LogStats:
    return LogStats(
        interactions=len(interactions),
        responses=len({it.response_id for it in interactions}),
        students=len({it.student_id for it in interactions}),
    )
