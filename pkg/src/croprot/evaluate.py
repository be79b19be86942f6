"""Classification metrics at the fine and aggregated label levels.

Fine-level probabilities are summed into coarse groups. In the 10-class
setting the excluded groups keep their probability mass as a separate
"excluded" outcome: parcels labelled with an excluded crop are dropped, and
a prediction that lands in the excluded bucket is always counted wrong.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import EXCLUDED, LabelTaxonomy


@dataclass
class ClassRow:
    label: int
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class EvalReport:
    level: str
    n: int
    accuracy: float
    micro_f1: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    coverage: float = 1.0
    threshold: float | None = None
    per_class: list[ClassRow] = field(default_factory=list)
    confusion: np.ndarray | None = None

    def summary(self) -> dict:
        return {k: getattr(self, k) for k in
                ("level", "n", "accuracy", "micro_f1", "macro_precision", "macro_recall", "macro_f1",
                 "coverage", "threshold")}

    def to_tsv(self) -> str:
        lines = [f"level\t{self.level}", f"n\t{self.n}"]
        if self.threshold is not None:
            lines.append(f"threshold\t{self.threshold:g}")
        lines.append(f"coverage\t{self.coverage:.6f}")
        for key in ("accuracy", "micro_f1", "macro_precision", "macro_recall", "macro_f1"):
            lines.append(f"{key}\t{getattr(self, key):.6f}")
        lines.append("class\tprecision\trecall\tf1\tsupport")
        for row in self.per_class:
            lines.append(f"{row.label}\t{row.precision:.6f}\t{row.recall:.6f}\t{row.f1:.6f}\t{row.support}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        d = self.summary()
        d["per_class"] = [asdict(r) for r in self.per_class]
        if self.confusion is not None:
            d["confusion"] = self.confusion.tolist()
        return json.dumps(d, indent=2, sort_keys=True) + "\n"


def aggregate_probs(probs, taxonomy: LabelTaxonomy, level: str) -> np.ndarray:
    """Sum fine probabilities within each group of ``level``.

    For ``c10`` the excluded codes are dropped without renormalising, so rows
    sum to less than one when excluded crops carry mass.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if level == "fine":
        return probs.copy()
    groups = taxonomy.level_map(level)
    keep = groups != EXCLUDED
    out = np.zeros(probs.shape[:-1] + (taxonomy.n_classes(level),))
    for code in np.flatnonzero(keep):
        out[..., groups[code]] += probs[..., code]
    return out


def predicted_classes(agg: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Arg-max class and its probability; -1 when the excluded mass wins."""
    agg = np.asarray(agg, dtype=np.float64)
    best = np.argmax(agg, axis=1)
    best_p = agg[np.arange(len(agg)), best]
    excluded = 1.0 - agg.sum(axis=1)
    lost = excluded > best_p
    return np.where(lost, EXCLUDED, best), np.where(lost, excluded, best_p)


def metrics_from_labels(pred, true, n_classes: int, level: str = "fine") -> EvalReport:
    """Per-class and pooled metrics. ``pred`` may contain -1 (always wrong)."""
    pred = np.asarray(pred, dtype=np.int64)
    true = np.asarray(true, dtype=np.int64)
    if len(true) == 0:
        raise ValueError("empty evaluation set")
    if np.any(true < 0) or np.any(true >= n_classes):
        raise ValueError("labels must lie in [0, n_classes)")
    # column n_classes collects predictions in the excluded bucket
    cm = np.bincount(true * (n_classes + 1) + np.where(pred < 0, n_classes, pred),
                     minlength=n_classes * (n_classes + 1)).reshape(n_classes, n_classes + 1)
    tp = np.diag(cm[:, :n_classes])
    fp = cm[:, :n_classes].sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    support = cm.sum(axis=1)
    rows = []
    for k in range(n_classes):
        t, p, n_ = int(tp[k]), int(fp[k]), int(fn[k])
        prec = t / (t + p) if t + p else 0.0
        rec = t / (t + n_) if t + n_ else 0.0
        f1 = 2 * t / (2 * t + p + n_) if t else 0.0
        rows.append(ClassRow(k, prec, rec, f1, int(support[k])))
    present = [r for r in rows if r.support > 0]
    TP, FP, FN = int(tp.sum()), int(fp.sum()), int(fn.sum())
    micro = 2 * TP / (2 * TP + FP + FN) if TP else 0.0
    return EvalReport(
        level=level,
        n=len(true),
        accuracy=TP / len(true),
        micro_f1=micro,
        macro_precision=sum(r.precision for r in present) / len(present),
        macro_recall=sum(r.recall for r in present) / len(present),
        macro_f1=sum(r.f1 for r in present) / len(present),
        per_class=rows,
        confusion=cm,
    )


def evaluate(probs, labels, taxonomy: LabelTaxonomy, level: str = "fine") -> EvalReport:
    """Metrics of fine-level ``probs`` against fine ``labels`` at ``level``."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    true = taxonomy.level_map(level)[labels]
    keep = true != EXCLUDED
    agg = aggregate_probs(probs[keep], taxonomy, level)
    pred, _ = predicted_classes(agg)
    return metrics_from_labels(pred, true[keep], taxonomy.n_classes(level), level)


def threshold_filter(probs, taxonomy: LabelTaxonomy, level: str, tau: float = 0.9):
    """Mask of parcels whose predicted-class probability exceeds ``tau``, and coverage.

    Coverage is measured over the parcels that take part in ``level``.
    """
    agg = aggregate_probs(probs, taxonomy, level)
    _, p = predicted_classes(agg)
    keep = p > tau
    return keep, float(keep.mean()) if len(keep) else 0.0


def evaluate_thresholded(probs, labels, taxonomy: LabelTaxonomy, level: str, tau: float) -> EvalReport:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    included = taxonomy.level_map(level)[labels] != EXCLUDED
    probs, labels = probs[included], labels[included]
    keep, coverage = threshold_filter(probs, taxonomy, level, tau)
    if not keep.any():
        return EvalReport(level, 0, 0.0, 0.0, 0.0, 0.0, 0.0, coverage=coverage, threshold=tau)
    report = evaluate(probs[keep], labels[keep], taxonomy, level)
    report.coverage = coverage
    report.threshold = tau
    return report


SWEEP_CUTOFFS = tuple(range(165, 361, 15)) + (365,)


def parse_cutoffs(text: str) -> tuple[int, ...]:
    """``"start:stop:step"`` or a comma list; a range always includes ``stop``."""
    text = text.strip()
    if ":" in text:
        start, stop, step = (int(v) for v in text.split(":"))
        if step <= 0 or stop < start:
            raise ValueError(f"bad cutoff range {text!r}")
        values = list(range(start, stop + 1, step))
        if values[-1] != stop:
            values.append(stop)
        return tuple(values)
    return tuple(int(v) for v in text.split(",") if v.strip())


@dataclass
class SweepResult:
    cutoffs: tuple[int, ...]
    micro_f1: tuple[float, ...]

    def to_tsv(self) -> str:
        rows = ["cutoff_day\tmicro_f1"] + [f"{c}\t{f:.6f}" for c, f in zip(self.cutoffs, self.micro_f1)]
        return "\n".join(rows) + "\n"


def inseason_sweep(params, sequences, taxonomy: LabelTaxonomy, cutoffs=SWEEP_CUTOFFS,
                   level: str = "c10") -> SweepResult:
    """Micro-F1 at ``level`` when the target season is cut at each day in ``cutoffs``."""
    from .train import predict

    scores = []
    for cutoff in cutoffs:
        probs = predict(params, sequences, cutoff_day=cutoff)
        scores.append(evaluate(probs, sequences.targets, taxonomy, level).micro_f1)
    return SweepResult(tuple(int(c) for c in cutoffs), tuple(scores))
