"""Confusion matrices, per-class and macro metrics, and side-by-side model
comparison over a labeled test set.

Per-class precision is undefined when a class is never predicted, recall when
it never occurs, f1 when either is undefined or both are zero. Undefined
values stay None rather than being coerced to 0; macro averages run over the
classes where the metric is defined (macro here is the unweighted mean, an
explicit choice recorded in the report output).
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .ensemble import EnsembleConfig, diagnose, single_model_config
from .errors import InvalidArgument

AVERAGING_NOTE = "macro (unweighted mean over classes where defined)"


@dataclass
class ConfusionMatrix:
    """counts[i][j] = samples of true class i predicted as class j."""

    labels: tuple[str, ...]
    counts: np.ndarray

    def __post_init__(self):
        self.labels = tuple(self.labels)
        c = np.asarray(self.counts, dtype=np.int64)
        n = len(self.labels)
        if c.shape != (n, n):
            raise InvalidArgument(f"counts shape {c.shape} does not match {n} labels")
        if c.min() < 0:
            raise InvalidArgument("negative count in confusion matrix")
        self.counts = c

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row(self, label: str) -> np.ndarray:
        return self.counts[self.labels.index(label)]


@dataclass
class MetricsReport:
    """Per-class precision/recall/f1 (None when undefined), their macro
    means over defined classes, and plain accuracy."""

    labels: tuple[str, ...]
    per_class: dict[str, dict[str, float | None]]
    macro_precision: float | None
    macro_recall: float | None
    macro_f1: float | None
    accuracy: float
    averaging: str = AVERAGING_NOTE

    def to_dict(self) -> dict:
        return {
            "labels": list(self.labels),
            "per_class": self.per_class,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "accuracy": self.accuracy,
            "averaging": self.averaging,
        }


def _macro(values: list[float | None]) -> float | None:
    defined = [v for v in values if v is not None]
    if not defined:
        return None
    return sum(defined) / len(defined)


def compute_metrics(preds: list[str], truths: list[str],
                    labels: tuple[str, ...] | None = None
                    ) -> tuple[ConfusionMatrix, MetricsReport]:
    """Confusion matrix and metrics for paired prediction/truth lists.

    The label set defaults to the sorted union of everything seen; an
    explicit set must cover all observed labels.
    """
    if len(preds) != len(truths):
        raise InvalidArgument(f"{len(preds)} predictions for {len(truths)} truths")
    if not preds:
        raise InvalidArgument("cannot score an empty sample")
    seen = set(preds) | set(truths)
    if labels is None:
        labels = tuple(sorted(seen))
    else:
        labels = tuple(labels)
        missing = seen - set(labels)
        if missing:
            raise InvalidArgument(f"labels {sorted(missing)} missing from label set")

    index = {lab: i for i, lab in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(truths, preds):
        counts[index[t], index[p]] += 1
    cm = ConfusionMatrix(labels, counts)

    per_class: dict[str, dict[str, float | None]] = {}
    for i, lab in enumerate(labels):
        tp = int(counts[i, i])
        pred_count = int(counts[:, i].sum())
        true_count = int(counts[i, :].sum())
        precision = tp / pred_count if pred_count > 0 else None
        recall = tp / true_count if true_count > 0 else None
        if precision is None or recall is None or (precision + recall) == 0.0:
            f1 = None
        else:
            f1 = 2.0 * precision * recall / (precision + recall)
        per_class[lab] = {"precision": precision, "recall": recall, "f1": f1}

    accuracy = float(np.trace(counts)) / cm.total
    report = MetricsReport(
        labels=labels,
        per_class=per_class,
        macro_precision=_macro([per_class[lab]["precision"] for lab in labels]),
        macro_recall=_macro([per_class[lab]["recall"] for lab in labels]),
        macro_f1=_macro([per_class[lab]["f1"] for lab in labels]),
        accuracy=accuracy,
    )
    return cm, report


@dataclass
class ComparisonRow:
    name: str
    model_type: str
    combination: str
    precision: float | None
    recall: float | None
    f1: float | None
    accuracy: float


@dataclass
class ComparisonReport:
    """Per-model and ensemble scores over one test set, in row order."""

    rows: list[ComparisonRow] = field(default_factory=list)
    averaging: str = AVERAGING_NOTE

    COLUMNS = ("model_type", "combination", "precision", "recall", "f1", "accuracy")

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# averaging: {self.averaging}\n")
        buf.write(",".join(self.COLUMNS) + "\n")
        for r in self.rows:
            cells = [r.model_type, r.combination]
            for v in (r.precision, r.recall, r.f1, r.accuracy):
                cells.append("" if v is None else repr(v))
            buf.write(",".join(cells) + "\n")
        return buf.getvalue()

    def write_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv())

    def to_dict(self) -> dict:
        return {
            "averaging": self.averaging,
            "rows": [vars(r).copy() for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def row(self, name: str) -> ComparisonRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise InvalidArgument(f"no comparison row named {name!r}")


@dataclass(frozen=True)
class ComparisonEntry:
    """One comparison row to score: a display name plus the config to run.

    Single models are just single-member configs; the full diagnose path
    (detection included) runs either way, so rows differ only in who votes.
    """

    name: str
    config: EnsembleConfig


def standard_entries(config: EnsembleConfig) -> list[ComparisonEntry]:
    """Each member alone, then the ensemble itself (when it has > 1 member)."""
    entries = [ComparisonEntry(mid, single_model_config(config, mid))
               for mid in config.members]
    if len(config.members) > 1:
        entries.append(ComparisonEntry(config.name, config))
    return entries


def predictions(samples, config: EnsembleConfig, registry) -> list[str]:
    """Final pipeline label for every sample image."""
    return [diagnose(s.image, config, registry).final_label for s in samples]


def compare_models(entries: list[ComparisonEntry], samples,
                   registry) -> ComparisonReport:
    """Score every entry's pipeline over one labeled test set.

    Rows come out in entry order against a shared label set (sorted union
    of truths and all predictions). Failures inside an entry keep their
    type but carry the entry name so a bad row is attributable.
    """
    if not entries:
        raise InvalidArgument("comparison needs at least one entry")
    if not samples:
        raise InvalidArgument("comparison needs at least one labeled sample")
    truths = [s.label for s in samples]

    entry_preds: list[list[str]] = []
    for entry in entries:
        try:
            entry_preds.append(predictions(samples, entry.config, registry))
        except Exception as exc:
            exc.args = (f"comparison entry {entry.name!r}: "
                        f"{exc.args[0] if exc.args else exc}",) + exc.args[1:]
            raise

    observed = set(truths)
    for preds in entry_preds:
        observed.update(preds)
    label_set = tuple(sorted(observed))

    report = ComparisonReport()
    for entry, preds in zip(entries, entry_preds):
        _, metrics = compute_metrics(preds, truths, label_set)
        members = entry.config.members
        report.rows.append(ComparisonRow(
            name=entry.name,
            model_type="ensemble" if len(members) > 1 else "single model",
            combination="+".join(members),
            precision=metrics.macro_precision, recall=metrics.macro_recall,
            f1=metrics.macro_f1, accuracy=metrics.accuracy))
    return report
