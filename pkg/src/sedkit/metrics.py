"""Per-task precision, recall and F1, their mean (F1-final) and report output.

Each clip carries one binary decision per task, so the per-task positive-class
F1 computed here is the same number a micro-averaged F1 over that task's
decisions would give. :attr:`EvalReport.micro_f1` additionally pools the
counts of every active task into a single F1.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .corpus import MARKER_OF, TASKS, FeatureSet
from .errors import ContractError, ShapeError


def predict_labels(logits, head_mode: str = "two_logit") -> np.ndarray:
    """Binary decisions from logits shaped (..., K, 2) or (..., K, 1)/(..., K).

    two_logit: positive iff logit[1] > logit[0], so ties are negative.
    one_logit: positive iff sigmoid(logit) > 0.5, i.e. logit > 0.
    """
    z = np.asarray(logits, dtype=np.float64)
    if head_mode == "two_logit":
        if z.shape[-1] != 2:
            raise ShapeError(f"two_logit decisions need a trailing axis of 2, got shape {z.shape}")
        return (z[..., 1] > z[..., 0]).astype(np.int64)
    if head_mode == "one_logit":
        if z.ndim >= 2 and z.shape[-1] == 1:
            z = z[..., 0]
        return (z > 0.0).astype(np.int64)
    raise ContractError(f"unknown head mode {head_mode!r}")


@dataclass
class ConfusionCounts:
    tasks: tuple[str, ...]
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    tn: np.ndarray

    @classmethod
    def zeros(cls, tasks: Sequence[str]) -> "ConfusionCounts":
        z = lambda: np.zeros(len(tasks), dtype=np.int64)  # noqa: E731
        return cls(tuple(tasks), z(), z(), z(), z())

    @property
    def total(self) -> np.ndarray:
        return self.tp + self.fp + self.fn + self.tn

    def precision(self) -> np.ndarray:
        return _safe_ratio(self.tp, self.tp + self.fp)

    def recall(self) -> np.ndarray:
        return _safe_ratio(self.tp, self.tp + self.fn)

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        if self.tasks != other.tasks:
            raise ContractError(f"cannot merge counts over {self.tasks} and {other.tasks}")
        return ConfusionCounts(self.tasks, self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    def swapped(self) -> "ConfusionCounts":
        """Counts with hypothesis and reference exchanged."""
        return ConfusionCounts(self.tasks, self.tp.copy(), self.fn.copy(), self.fp.copy(), self.tn.copy())


def _safe_ratio(num, den) -> np.ndarray:
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    out = np.zeros(np.broadcast(num, den).shape)
    np.divide(num, den, out=out, where=den != 0)
    return out


def accumulate_confusion(preds, refs, tasks: Sequence[str] | None = None) -> ConfusionCounts:
    """Count TP/FP/FN/TN per task for aligned (n, K) decision matrices."""
    p = np.asarray(preds)
    r = np.asarray(refs)
    if p.ndim == 1:
        p = p[:, None]
    if r.ndim == 1:
        r = r[:, None]
    if len(p) != len(r):
        raise ContractError(f"{len(p)} predictions but {len(r)} references")
    if p.shape != r.shape:
        raise ShapeError(f"prediction shape {p.shape} does not match reference shape {r.shape}")
    for name, m in (("predictions", p), ("references", r)):
        if m.size and not np.isin(m, (0, 1)).all():
            raise ContractError(f"{name} must be 0/1")
    if tasks is None:
        tasks = TASKS if p.shape[1] == 5 else tuple(f"t{k}" for k in range(p.shape[1]))
    if len(tasks) != p.shape[1]:
        raise ShapeError(f"{len(tasks)} task names for {p.shape[1]} columns")
    p = p.astype(bool)
    r = r.astype(bool)
    return ConfusionCounts(
        tuple(tasks),
        (p & r).sum(axis=0).astype(np.int64),
        (p & ~r).sum(axis=0).astype(np.int64),
        (~p & r).sum(axis=0).astype(np.int64),
        (~p & ~r).sum(axis=0).astype(np.int64),
    )


@dataclass(frozen=True)
class TaskScore:
    precision: float
    recall: float
    f1: float


def f1_from_pr(precision: float, recall: float) -> float:
    s = precision + recall
    return 0.0 if s == 0 else 2.0 * precision * recall / s


def f1_scores(c: ConfusionCounts) -> dict[str, TaskScore]:
    """Precision, recall and F1 per task; any zero denominator gives 0."""
    prec, rec = c.precision(), c.recall()
    return {t: TaskScore(float(prec[k]), float(rec[k]), f1_from_pr(float(prec[k]), float(rec[k]))) for k, t in enumerate(c.tasks)}


def f1_final(per_task: Sequence[float] | Mapping[str, float]) -> float:
    """Arithmetic mean of per-task F1 values."""
    values = list(per_task.values()) if isinstance(per_task, Mapping) else list(per_task)
    if not values:
        raise ContractError("F1-final of an empty task list")
    return float(sum(values) / len(values))


def micro_f1(c: ConfusionCounts) -> float:
    """F1 over counts pooled across all tasks."""
    tp, fp, fn = int(c.tp.sum()), int(c.fp.sum()), int(c.fn.sum())
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    return f1_from_pr(p, r)


def relative_improvement(new: float, base: float) -> float:
    """``new / base - 1``, the fractional gain of one mean F1 over another."""
    if base == 0:
        raise ContractError("improvement over a zero baseline is undefined")
    return new / base - 1.0


def config_fingerprint(obj) -> str:
    if hasattr(obj, "to_dict"):
        obj = obj.to_dict()
    text = json.dumps(obj, sort_keys=True, default=str)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


@dataclass
class EvalReport:
    tasks: tuple[str, ...]
    scores: dict[str, TaskScore]
    num_clips: int
    fingerprint: str = ""
    counts: ConfusionCounts | None = field(default=None, repr=False)

    @property
    def f1(self) -> dict[str, float]:
        return {t: self.scores[t].f1 for t in self.tasks}

    @property
    def f1_final(self) -> float:
        return f1_final(self.f1)

    @property
    def micro_f1(self) -> float:
        return micro_f1(self.counts) if self.counts is not None else float("nan")

    @classmethod
    def from_counts(cls, counts: ConfusionCounts, fingerprint: str = "") -> "EvalReport":
        n = int(counts.total[0]) if len(counts.tasks) else 0
        return cls(counts.tasks, f1_scores(counts), n, fingerprint, counts)

    def to_record(self, **extra) -> dict:
        rec = {
            "num_clips": self.num_clips,
            "fingerprint": self.fingerprint,
            "tasks": list(self.tasks),
            "precision": {t: round(100 * self.scores[t].precision, 2) for t in self.tasks},
            "recall": {t: round(100 * self.scores[t].recall, 2) for t in self.tasks},
            "f1": {t: round(100 * self.scores[t].f1, 2) for t in self.tasks},
            "f1_final": round(100 * self.f1_final, 2),
            "micro_f1": round(100 * self.micro_f1, 2),
        }
        rec.update(extra)
        return rec

    def to_json(self, **extra) -> str:
        return json.dumps(self.to_record(**extra), sort_keys=True)

    def format_table(self, name: str = "model") -> str:
        return format_table([(name, self.f1)])

    def format_detail(self) -> str:
        """One line per task with precision, recall and F1 as percentages."""
        rows = [("task", "precision", "recall", "F1")]
        for t in self.tasks:
            s = self.scores[t]
            rows.append((MARKER_OF.get(t, t), f"{100 * s.precision:.2f}", f"{100 * s.recall:.2f}", f"{100 * s.f1:.2f}"))
        rows.append(("F1-final", "", "", f"{100 * self.f1_final:.2f}"))
        rows.append(("micro-F1", "", "", f"{100 * self.micro_f1:.2f}"))
        return _align(rows)


def _align(rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(r[k]) for r in rows) for k in range(len(rows[0]))]
    lines = []
    for r in rows:
        cells = [r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines)


def format_table(rows: Sequence[tuple[str, Mapping[str, float]]]) -> str:
    """Aligned table with one column per canonical task plus F1-final.

    Tasks missing from a row's mapping print as ``---``; values are fractions
    and print as percentages with two decimals.
    """
    out = [("model",) + tuple(MARKER_OF[t] for t in TASKS) + ("F1-final",)]
    for name, f1 in rows:
        cells = [f"{100 * f1[t]:.2f}" if t in f1 else "---" for t in TASKS]
        mean = f"{100 * f1_final(f1):.2f}" if f1 else "---"
        out.append((name, *cells, mean))
    return _align(out)


def evaluate(model, dataset: FeatureSet, task_subset: Sequence[str] | None = None, batch_size: int = 32) -> EvalReport:
    """Score ``model`` on every clip of ``dataset`` in eval mode.

    ``model`` needs ``config`` (with ``task_subset`` and ``head_mode``) and
    ``predict_logits(features) -> (n, K, w)``.
    """
    if len(dataset) == 0:
        raise ContractError("cannot evaluate on an empty dataset")
    model_tasks = tuple(model.config.task_subset)
    tasks = tuple(task_subset) if task_subset is not None else model_tasks
    missing = [t for t in tasks if t not in model_tasks]
    if missing:
        raise ContractError(f"model has no head for tasks {missing}")
    try:
        logits = model.predict_logits(dataset.features, batch_size=batch_size)
    except (ShapeError, ValueError) as exc:
        bad = [i for i, f in zip(dataset.ids, dataset.features) if np.ndim(f) != 2 or np.shape(f)[-1] != model.config.num_mel_bins]
        where = f" (clip {bad[0]})" if bad else ""
        raise type(exc)(f"{exc}{where}") from exc
    preds = predict_labels(logits, model.config.head_mode)
    cols = [model_tasks.index(t) for t in tasks]
    refs = dataset.labels[:, [TASKS.index(t) for t in tasks]]
    counts = accumulate_confusion(preds[:, cols], refs, tasks)
    return EvalReport.from_counts(counts, config_fingerprint(model.config))
