"""Cross-entropy fine-tuning, masked-token domain adaptation and k-fold runs.

The protocol is fixed: AdamW, no schedule, no early stopping, and the
reported number is the test accuracy after the final epoch.
"""

from __future__ import annotations

import logging
import math
import random
import re
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .data import FoldAssignment, StepRecord
from .evaluation import EpochTrace, FoldReport, RunReport
from .models import ClassifierConfig, ErrorClassifier, Family, build_classifier

log = logging.getLogger(__name__)


class DivergedLoss(RuntimeError):
    def __init__(self, message: str, traces: list[EpochTrace]):
        super().__init__(message)
        self.traces = traces


class EmptyCorpus(ValueError):
    pass


class LeakageError(ValueError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 300
    learning_rate: float = 5e-5
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    micro_batch_size: int | None = None  # gradient accumulation below batch_size
    eval_batch_size: int = 256
    max_steps: int | None = None
    seed: int = 42
    deterministic: bool = False
    device: str | None = None

    def __post_init__(self):
        self.betas = tuple(self.betas)
        for name in ("epochs", "batch_size", "learning_rate", "eval_batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.micro_batch_size is not None and self.micro_batch_size <= 0:
            raise ValueError("micro_batch_size must be positive")

    def resolved_device(self) -> torch.device:
        if self.device:
            return torch.device(self.device)
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")


def seed_everything(seed: int, deterministic: bool = False) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(deterministic)
    if deterministic and torch.backends.cudnn.is_available():
        torch.backends.cudnn.benchmark = False


def check_disjoint(train: Sequence[StepRecord], test: Sequence[StepRecord]) -> None:
    overlap = {r.record_id for r in train} & {r.record_id for r in test}
    if overlap:
        raise LeakageError(f"{len(overlap)} records in both train and test, e.g. {sorted(overlap)[:3]}")


def finetune(
    clf: ErrorClassifier,
    train_records: Sequence[StepRecord],
    test_records: Sequence[StepRecord],
    config: TrainConfig,
    on_epoch: Callable[[EpochTrace], None] | None = None,
) -> tuple[ErrorClassifier, list[EpochTrace], list[int]]:
    """Train head and base model jointly; evaluate on ``test_records`` each epoch.

    Returns the classifier, one trace per epoch, and the final-epoch test
    predictions (class ids aligned with ``test_records``).
    """
    check_disjoint(train_records, test_records)
    m = clf.config.num_classes
    bad = [r.record_id for r in (*train_records, *test_records) if not 0 <= r.label.id < m]
    if bad:
        raise ValueError(f"labels outside the {m}-class scheme in records {bad[:3]}")
    if not train_records:
        raise ValueError("no training records")

    seed_everything(config.seed, config.deterministic)
    device = config.resolved_device()
    clf.to(device)
    train_text = [clf.serialize(r).text for r in train_records]
    labels = torch.tensor([r.label.id for r in train_records], dtype=torch.long)
    test_inputs = [clf.serialize(r) for r in test_records]
    test_labels = np.array([r.label.id for r in test_records])

    optimizer = torch.optim.AdamW(
        clf.parameters(),
        lr=config.learning_rate,
        betas=config.betas,
        eps=config.eps,
        weight_decay=config.weight_decay,
    )
    order_gen = torch.Generator().manual_seed(config.seed)
    micro = config.micro_batch_size or config.batch_size
    traces: list[EpochTrace] = []
    predicted: list[int] = []
    steps = 0
    n = len(train_text)
    for epoch in range(1, config.epochs + 1):
        clf.train()
        order = torch.randperm(n, generator=order_gen)
        loss_sum, seen = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            optimizer.zero_grad(set_to_none=True)
            batch_loss = 0.0
            for mstart in range(0, len(idx), micro):
                sub = idx[mstart : mstart + micro]
                batch = {k: v.to(device) for k, v in clf.encode([train_text[i] for i in sub]).items()}
                logits = clf(batch)
                # summed then scaled so accumulated micro-batches equal the full-batch mean
                loss = F.cross_entropy(logits, labels[sub].to(device), reduction="sum") / len(idx)
                if not torch.isfinite(loss):
                    raise DivergedLoss(f"non-finite loss at epoch {epoch}", traces)
                loss.backward()
                batch_loss += loss.item()
            optimizer.step()
            steps += 1
            loss_sum += batch_loss * len(idx)
            seen += len(idx)
            if config.max_steps is not None and steps >= config.max_steps:
                break
        if test_inputs:
            outputs = clf.classify(test_inputs, batch_size=config.eval_batch_size)
            predicted = [o.predicted for o in outputs]
            test_acc = float(np.mean(np.array(predicted) == test_labels))
        else:
            test_acc = math.nan
        trace = EpochTrace(epoch, loss_sum / seen, test_acc)
        traces.append(trace)
        log.info("epoch %d loss %.4f test acc %.4f", epoch, trace.train_loss, test_acc)
        if on_epoch:
            on_epoch(trace)
        if config.max_steps is not None and steps >= config.max_steps:
            break
    return clf, traces, predicted


# ---------------------------------------------------------------------------
# domain adaptation


@dataclass
class DAConfig:
    corpus: str | Path
    epochs: int = 3
    masking_rate: float = 0.15
    batch_size: int = 32
    learning_rate: float = 5e-5
    max_lines: int | None = None
    max_tokens: int = 128
    seed: int = 42

    def __post_init__(self):
        if not 0.0 <= self.masking_rate < 1.0:
            raise ValueError("masking_rate must be in [0, 1)")


_LATEX = [
    (r"\cdot", "*"),
    (r"\times", "*"),
    (r"\div", "/"),
    (r"\left", ""),
    (r"\right", ""),
    (r"\,", " "),
    (r"\!", ""),
]
_FRAC = re.compile(r"\\d?frac\{([^{}]*)\}\{([^{}]*)\}")
_COMMAND = re.compile(r"\\[A-Za-z]+")


def strip_markup(line: str) -> str:
    """Reduce a LaTeX-flavored solution line to plain math text."""
    line = line.replace("$", "")
    for pattern, repl in _LATEX:
        line = line.replace(pattern, repl)
    while True:
        new = _FRAC.sub(r"(\1)/(\2)", line)
        if new == line:
            break
        line = new
    line = _COMMAND.sub(" ", line).replace("{", "(").replace("}", ")")
    return " ".join(line.split())


def load_pemdas_corpus(path: str | Path, max_lines: int | None = None) -> list[str]:
    """Plain-text lines from a PEMDAS solution directory (``*.txt``, recursive) or file."""
    path = Path(path)
    files = sorted(path.rglob("*.txt")) if path.is_dir() else [path]
    lines: list[str] = []
    for f in files:
        for raw in f.read_text("utf-8", errors="replace").splitlines():
            text = strip_markup(raw)
            if text:
                lines.append(text)
                if max_lines is not None and len(lines) >= max_lines:
                    return lines
    return lines


def _assert_not_task_data(lines: Sequence[str]) -> None:
    for line in lines[:50]:
        if '"label_name"' in line or line.startswith("student_id\tresponse_id"):
            raise ValueError("domain-adaptation corpus looks like task records; refusing to pre-train on them")


@dataclass
class DAResult:
    path: Path
    epoch_losses: list[float]
    steps: int
    lines: int


def domain_adapt(source: str | Path, da: DAConfig, output_dir: str | Path, family: Family = Family.MLM_ENCODER) -> DAResult:
    """Continue masked-token pre-training of an encoder on the PEMDAS corpus.

    Loads ``source`` with its masked-LM head, trains on corpus lines and
    writes the adapted checkpoint to ``output_dir`` for
    :func:`build_classifier` to pick up; no classification head exists yet.
    Batches with no masked position are skipped entirely, so a masking rate
    of zero leaves the weights untouched.
    """
    if family is not Family.MLM_ENCODER:
        raise ValueError("domain adaptation applies to masked-LM encoders only")
    from transformers import AutoModelForMaskedLM, AutoTokenizer, DataCollatorForLanguageModeling

    from .models import _quiet_transformers

    _quiet_transformers()
    lines = load_pemdas_corpus(da.corpus, da.max_lines)
    if not lines:
        raise EmptyCorpus(f"no text lines under {da.corpus}")
    _assert_not_task_data(lines)

    seed_everything(da.seed)
    tokenizer = AutoTokenizer.from_pretrained(str(source))
    model = AutoModelForMaskedLM.from_pretrained(str(source))
    device = torch.device("cuda" if torch.cuda.is_available() else "cpu")
    model.to(device).train()
    collator = DataCollatorForLanguageModeling(tokenizer=tokenizer, mlm=True, mlm_probability=da.masking_rate)
    encoded = [tokenizer(t, truncation=True, max_length=da.max_tokens) for t in lines]
    optimizer = torch.optim.AdamW(model.parameters(), lr=da.learning_rate)
    gen = torch.Generator().manual_seed(da.seed)
    losses, steps = [], 0
    for epoch in range(da.epochs):
        total, batches = 0.0, 0
        order = torch.randperm(len(encoded), generator=gen).tolist()
        for start in range(0, len(encoded), da.batch_size):
            chunk = [encoded[i] for i in order[start : start + da.batch_size]]
            batch = collator([{"input_ids": e["input_ids"]} for e in chunk])
            if int((batch["labels"] != -100).sum()) == 0:
                continue
            batch = {k: v.to(device) for k, v in batch.items()}
            optimizer.zero_grad(set_to_none=True)
            loss = model(**batch).loss
            loss.backward()
            optimizer.step()
            total += loss.item()
            batches += 1
            steps += 1
        losses.append(total / batches if batches else math.nan)
        log.info("DA epoch %d loss %.4f", epoch + 1, losses[-1])
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    model.save_pretrained(out)
    tokenizer.save_pretrained(out)
    return DAResult(out, losses, steps, len(lines))


# ---------------------------------------------------------------------------
# cross-validation


def cross_validate(
    records: Sequence[StepRecord],
    classifier_config: ClassifierConfig,
    train_config: TrainConfig,
    folds: FoldAssignment,
    scheme: str | None = None,
    weights_from: str | Path | None = None,
    run_info: dict | None = None,
    checkpoint_dir: str | Path | None = None,
    on_epoch: Callable[[int, EpochTrace], None] | None = None,
) -> RunReport:
    """Train a fresh classifier per fold and collect final-epoch accuracies.

    A fold that fails is recorded with ``status="failed"`` (traces kept)
    and excluded from the aggregate; the remaining folds still run.
    """
    if len(folds.assignments) != len(records):
        raise ValueError("fold assignment does not cover the records")
    class_names = classifier_config.class_names or [str(i) for i in range(classifier_config.num_classes)]
    reports = []
    conventions = None
    for k in range(folds.k):
        train = [records[i] for i in folds.train_indices(k)]
        test = [records[i] for i in folds.test_indices(k)]
        traces: list[EpochTrace] = []
        try:
            clf = build_classifier(classifier_config, weights_from=weights_from)
            conventions = conventions or clf.conventions()
            clf, traces, predicted = finetune(
                clf, train, test, train_config, on_epoch=(lambda t, k=k: on_epoch(k, t)) if on_epoch else None
            )
            preds = [(r.record_id, r.label.id, p) for r, p in zip(test, predicted)]
            reports.append(FoldReport(k, traces[-1].test_accuracy, preds, traces))
            if checkpoint_dir is not None:
                clf.save(Path(checkpoint_dir) / f"fold{k}")
        except Exception as exc:  # a failed fold must not abort the run
            log.exception("fold %d failed", k)
            kept = getattr(exc, "traces", traces)
            reports.append(FoldReport(k, math.nan, [], list(kept), status="failed", error=f"{type(exc).__name__}: {exc}"))
    config = {
        **(run_info or {}),
        "scheme": scheme,
        "class_names": list(class_names),
        "input_mode": classifier_config.input_mode.value,
        "classifier": classifier_config.to_dict(),
        "train": asdict(train_config),
        "folds": {"k": folds.k, "seed": folds.seed, "unit": folds.unit},
        "conventions": conventions,
        "weights_from": str(weights_from) if weights_from else None,
    }
    return RunReport.from_folds(config, reports, class_names)
