"""Accuracy, fold aggregation, mis-classification heatmaps, run reports and plots."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class EmptyPredictions(ValueError):
    pass


class ClassOutOfRange(ValueError):
    pass


class TooFewFolds(ValueError):
    pass


class SchemeMismatch(ValueError):
    pass


class MissingTrace(ValueError):
    pass


def accuracy(predictions: Iterable[tuple[int, int]]) -> float:
    """Fraction of ``(true, predicted)`` pairs that agree."""
    pairs = list(predictions)
    if not pairs:
        raise EmptyPredictions("accuracy of an empty prediction list")
    return sum(t == p for t, p in pairs) / len(pairs)


@dataclass
class HeatmapMatrix:
    """Row-normalized confusion matrix: entry (i, j) is the share of true
    class ``i`` predicted as ``j``.  Rows without true instances stay zero
    and are listed in ``empty_rows``."""

    matrix: np.ndarray
    counts: np.ndarray  # true instances per class
    class_names: list[str] = field(default_factory=list)

    @property
    def empty_rows(self) -> list[int]:
        return [i for i, c in enumerate(self.counts) if c == 0]

    def weighted_trace(self) -> float:
        total = self.counts.sum()
        return float((np.diag(self.matrix) * self.counts).sum() / total) if total else 0.0

    def ratio(self, true_name: str, predicted_name: str) -> float:
        return float(self.matrix[self.class_names.index(true_name), self.class_names.index(predicted_name)])


def build_heatmap(
    predictions: Iterable[tuple[int, int]], m: int, class_names: Sequence[str] | None = None
) -> HeatmapMatrix:
    counts = np.zeros((m, m), dtype=np.int64)
    for t, p in predictions:
        if not (0 <= t < m and 0 <= p < m):
            raise ClassOutOfRange(f"class pair ({t}, {p}) outside 0..{m - 1}")
        counts[t, p] += 1
    totals = counts.sum(axis=1)
    matrix = np.divide(counts, totals[:, None], out=np.zeros((m, m)), where=totals[:, None] > 0)
    names = list(class_names) if class_names else [str(i) for i in range(m)]
    return HeatmapMatrix(matrix, totals, names)


def aggregate_folds(folds: Sequence["FoldReport | float"]) -> tuple[float, float]:
    """Mean and sample (n - 1) standard deviation of fold accuracies."""
    values = [f.accuracy if isinstance(f, FoldReport) else float(f) for f in folds]
    if len(values) < 2:
        raise TooFewFolds(f"need at least 2 folds, got {len(values)}")
    return float(np.mean(values)), float(np.std(values, ddof=1))


def format_pm(mean: float, std: float) -> str:
    """Render fractions as a percentage pair, e.g. ``80.68 ± 1.10``."""
    return f"{100 * mean:.2f} ± {100 * std:.2f}"


# ---------------------------------------------------------------------------
# reports


@dataclass
class EpochTrace:
    epoch: int
    train_loss: float
    test_accuracy: float


@dataclass
class FoldReport:
    fold: int
    accuracy: float
    predictions: list[tuple[str, int, int]] = field(default_factory=list)  # (record id, true, predicted)
    traces: list[EpochTrace] = field(default_factory=list)
    status: str = "ok"
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class RunReport:
    config: dict
    folds: list[FoldReport]
    mean: float = math.nan
    std: float = math.nan
    heatmap: HeatmapMatrix | None = None

    @classmethod
    def from_folds(cls, config: dict, folds: list[FoldReport], class_names: Sequence[str]) -> "RunReport":
        good = [f for f in folds if f.ok]
        mean, std = aggregate_folds(good) if len(good) >= 2 else (math.nan, math.nan)
        if len(good) == 1:
            mean = good[0].accuracy
        pairs = [(t, p) for f in good for _, t, p in f.predictions]
        heatmap = build_heatmap(pairs, len(class_names), class_names) if pairs else None
        return cls(config, folds, mean, std, heatmap)

    @property
    def class_names(self) -> list[str]:
        return list(self.config.get("class_names", []))

    @property
    def label(self) -> str:
        return self.config.get("label") or self.config.get("model", "?")

    def fold_heatmap(self, fold: int) -> HeatmapMatrix:
        rep = next(f for f in self.folds if f.fold == fold)
        names = self.class_names
        return build_heatmap([(t, p) for _, t, p in rep.predictions], len(names), names)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "mean_accuracy": float(self.mean),
            "std_accuracy": float(self.std),
            "std_flavor": "sample (n-1)",
            "folds": [
                {
                    "fold": f.fold,
                    "accuracy": float(f.accuracy),
                    "status": f.status,
                    "error": f.error,
                    "traces": [asdict(t) for t in f.traces],
                    "predictions": [[str(rid), int(t), int(p)] for rid, t, p in f.predictions],
                }
                for f in self.folds
            ],
            "heatmap": None if self.heatmap is None else self.heatmap.matrix.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        folds = [
            FoldReport(
                fold=f["fold"],
                accuracy=f["accuracy"],
                predictions=[tuple(p) for p in f["predictions"]],
                traces=[EpochTrace(**t) for t in f["traces"]],
                status=f["status"],
                error=f.get("error"),
            )
            for f in d["folds"]
        ]
        return cls.from_folds(d["config"], folds, d["config"].get("class_names", []))

    def save(self, directory: str | Path) -> Path:
        """Write ``report.json``, ``trace.csv`` and ``heatmap.csv``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "report.json").write_text(json.dumps(self.to_dict(), indent=2) + "\n", "utf-8")
        write_trace_csv(self, directory / "trace.csv")
        if self.heatmap is not None:
            write_heatmap_csv(self.heatmap, directory / "heatmap.csv")
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "RunReport":
        path = Path(directory)
        if path.is_dir():
            path = path / "report.json"
        return cls.from_dict(json.loads(path.read_text("utf-8")))


def write_trace_csv(report: RunReport, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "fold", "loss", "accuracy"])
        for f in report.folds:
            for t in f.traces:
                w.writerow([t.epoch, f.fold, repr(t.train_loss), repr(t.test_accuracy)])


def write_heatmap_csv(heatmap: HeatmapMatrix, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(heatmap.class_names)
        for row in heatmap.matrix:
            w.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# comparison tables


@dataclass
class ComparisonRow:
    label: str
    mode: str
    da_epochs: int
    mean: float
    std: float
    delta: float | None = None  # percentage points against the baseline run

    def cells(self) -> list[str]:
        delta = "" if self.delta is None else f"{self.delta:+.2f}"
        return [self.label, self.mode, str(self.da_epochs), format_pm(self.mean, self.std), delta]


def compare_runs(reports: Sequence[RunReport], baseline: int | None = 0) -> list[ComparisonRow]:
    """One row per run, best mean first, with deltas against ``reports[baseline]``.

    The delta column stays empty for the baseline itself and whenever only
    one run is given.
    """
    if not reports:
        return []
    schemes = {r.config.get("scheme") for r in reports}
    if len(schemes) > 1:
        raise SchemeMismatch(f"runs use different label schemes: {sorted(map(str, schemes))}")
    base = reports[baseline] if baseline is not None and len(reports) > 1 else None
    rows = []
    for r in reports:
        delta = None if base is None or r is base else 100 * (r.mean - base.mean)
        rows.append(
            ComparisonRow(
                label=r.label,
                mode=str(r.config.get("input_mode", "")),
                da_epochs=int(r.config.get("da_epochs", 0) or 0),
                mean=r.mean,
                std=r.std,
                delta=delta,
            )
        )
    return sorted(rows, key=lambda row: -row.mean if not math.isnan(row.mean) else math.inf)


def render_table(rows: Sequence[ComparisonRow]) -> str:
    header = ["Model", "Input", "DA epochs", "Accuracy", "Delta"]
    table = [header] + [row.cells() for row in rows]
    widths = [max(len(r[i]) for r in table) for i in range(len(header))]
    lines = ["| " + " | ".join(c.ljust(w) for c, w in zip(r, widths)) + " |" for r in table]
    lines.insert(1, "|" + "|".join("-" * (w + 2) for w in widths) + "|")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# plots


@dataclass
class PlotArtifacts:
    image: Path
    data: Path
    arrays: dict = field(default_factory=dict)
    figure: object = None


def curve_arrays(report: RunReport, max_epochs: int | None = 15) -> dict[str, np.ndarray]:
    """Per-epoch mean, min and max test accuracy across successful folds."""
    folds = [f for f in report.folds if f.ok and f.traces]
    if not folds:
        raise MissingTrace(f"run {report.label!r} has no epoch traces")
    n = min(len(f.traces) for f in folds)
    if max_epochs is not None:
        n = min(n, max_epochs)
    acc = np.array([[t.test_accuracy for t in f.traces[:n]] for f in folds])
    return {
        "epoch": np.array([t.epoch for t in folds[0].traces[:n]]),
        "mean": acc.mean(axis=0),
        "min": acc.min(axis=0),
        "max": acc.max(axis=0),
    }


def emit_plots(
    reports: Sequence[RunReport],
    kind: str,
    out_dir: str | Path,
    max_epochs: int | None = 15,
    fold: int | None = None,
    keep_figure: bool = False,
) -> list[PlotArtifacts]:
    """Render accuracy curves (all runs on one axes) or one heatmap per run.

    Every image is accompanied by a CSV holding exactly the plotted numbers.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if kind == "accuracy_curves":
        fig, ax = plt.subplots(figsize=(7, 4.5))
        arrays = {}
        with open(out_dir / "accuracy_curves.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["run", "epoch", "mean", "min", "max"])
            for report in reports:
                a = curve_arrays(report, max_epochs)
                arrays[report.label] = a
                ax.plot(a["epoch"], a["mean"], label=report.label)
                ax.fill_between(a["epoch"], a["min"], a["max"], alpha=0.25)
                for e, mu, lo, hi in zip(a["epoch"], a["mean"], a["min"], a["max"]):
                    w.writerow([report.label, int(e), repr(float(mu)), repr(float(lo)), repr(float(hi))])
        ax.set_xlabel("epoch")
        ax.set_ylabel("test accuracy")
        ax.legend()
        fig.tight_layout()
        fig.savefig(out_dir / "accuracy_curves.png", dpi=150)
        if not keep_figure:
            plt.close(fig)
        return [PlotArtifacts(out_dir / "accuracy_curves.png", out_dir / "accuracy_curves.csv", arrays, fig)]

    if kind != "heatmap":
        raise ValueError(f"unknown plot kind {kind!r}")
    artifacts = []
    for i, report in enumerate(reports):
        heatmap = report.fold_heatmap(fold) if fold is not None else report.heatmap
        if heatmap is None:
            raise MissingTrace(f"run {report.label!r} has no predictions")
        stem = "heatmap" if len(reports) == 1 else f"heatmap_{i}"
        write_heatmap_csv(heatmap, out_dir / f"{stem}.csv")
        m = len(heatmap.class_names)
        fig, ax = plt.subplots(figsize=(1 + 0.45 * m, 1 + 0.4 * m))
        im = ax.imshow(heatmap.matrix, vmin=0.0, vmax=1.0, cmap="viridis")
        ax.set_xticks(range(m), heatmap.class_names, rotation=90, fontsize=7)
        ax.set_yticks(range(m), heatmap.class_names, fontsize=7)
        ax.set_xlabel("predicted class")
        ax.set_ylabel("true class")
        for r in range(m):
            for c in range(m):
                if heatmap.matrix[r, c] > 0:
                    ax.text(c, r, f"{heatmap.matrix[r, c]:.2f}", ha="center", va="center", fontsize=5, color="w")
        fig.colorbar(im, ax=ax, fraction=0.046)
        fig.tight_layout()
        fig.savefig(out_dir / f"{stem}.png", dpi=150)
        if not keep_figure:
            plt.close(fig)
        artifacts.append(PlotArtifacts(out_dir / f"{stem}.png", out_dir / f"{stem}.csv", {"matrix": heatmap.matrix}, fig))
    return artifacts
