"""Confusion-matrix accumulation and the four report metrics.

Changed is the positive class. The rates are:

    OA = (tp + tn) / total            overall accuracy
    FA = fp / (tp + fp)               false alarms among flagged pixels
    MD = fn / (tp + fn)               missed detections among true changes
    KC = (p_o - p_e) / (1 - p_e)      Cohen's kappa,
         p_e = [(tp+fp)(tp+fn) + (fn+tn)(fp+tn)] / total^2

OA, FA and MD are reported as percentages. KC is evaluated from the integer
counts as a single ratio, so hand-checkable cases come out exact (e.g. the
balanced 40/10/10/40 matrix gives exactly 0.6 rather than 0.6 + 1 ulp).
FA (resp. MD) is undefined when nothing was flagged (resp. no true changes
exist); it is then reported as 0 with the matching ``*_defined`` flag
cleared.
"""

from __future__ import annotations

import json
import operator
from dataclasses import dataclass

from .raster import BinaryMask
from .validation import ShapeMismatchError


@dataclass(frozen=True)
class ConfusionMatrix:
    """Pixel counts with changed as the positive class."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        for name in ("tp", "fp", "fn", "tn"):
            value = getattr(self, name)
            try:
                value = operator.index(value)  # exact integers only, any int type
            except TypeError:
                raise ValueError(f"{name} must be an integer, got {value!r}") from None
            if value < 0:
                raise ValueError(f"{name} must be non-negative, got {value}")
            object.__setattr__(self, name, value)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        # partial matrices from any partition of the pixels merge exactly
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return ConfusionMatrix(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn + other.fn,
            self.tn + other.tn,
        )


def confusion(pred: BinaryMask, truth: BinaryMask, ignore: BinaryMask | None = None) -> ConfusionMatrix:
    """Count agreement between a predicted and a reference mask.

    Pixels where ``ignore`` is 1 are excluded from all counts.
    """
    if pred.labels.shape != truth.labels.shape:
        raise ShapeMismatchError(
            f"prediction {pred.labels.shape} and truth {truth.labels.shape} differ"
        )
    p = pred.labels == 1
    t = truth.labels == 1
    if ignore is not None:
        if ignore.labels.shape != truth.labels.shape:
            raise ShapeMismatchError("ignore mask shape differs from inputs")
        keep = ignore.labels == 0
        p, t = p[keep], t[keep]
    return ConfusionMatrix(
        tp=int((p & t).sum()),
        fp=int((p & ~t).sum()),
        fn=int((~p & t).sum()),
        tn=int((~p & ~t).sum()),
    )


@dataclass(frozen=True)
class MetricsReport:
    """The four metrics plus the counts they were computed from."""

    oa: float
    fa: float
    md: float
    kc: float
    tp: int
    fp: int
    fn: int
    tn: int
    fa_defined: bool = True
    md_defined: bool = True

    def to_json(self) -> str:
        """UTF-8 JSON report; percentages at 2 decimals, kappa at 4."""
        return json.dumps(
            {
                "oa": round(self.oa, 2),
                "fa": round(self.fa, 2),
                "md": round(self.md, 2),
                "kc": round(self.kc, 4),
                "tp": self.tp,
                "fp": self.fp,
                "fn": self.fn,
                "tn": self.tn,
            }
        )


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """Compute (OA, FA, MD, KC) from a non-empty confusion matrix."""
    total = cm.total
    if total == 0:
        raise ValueError("empty confusion matrix: no pixels were scored")
    oa = 100.0 * (cm.tp + cm.tn) / total

    flagged = cm.tp + cm.fp
    fa = 100.0 * cm.fp / flagged if flagged else 0.0
    actual = cm.tp + cm.fn
    md = 100.0 * cm.fn / actual if actual else 0.0

    # KC as one integer ratio: numerator = total*(tp+tn) - chance_mass and
    # denominator = total^2 - chance_mass, where chance_mass/total^2 = p_e.
    chance_mass = (cm.tp + cm.fp) * (cm.tp + cm.fn) + (cm.fn + cm.tn) * (cm.fp + cm.tn)
    denominator = total * total - chance_mass
    if denominator == 0:
        # p_e = 1 only happens when a single diagonal cell holds every
        # pixel, i.e. prediction equals truth: perfect agreement.
        kc = 1.0
    else:
        kc = (total * (cm.tp + cm.tn) - chance_mass) / denominator

    return MetricsReport(
        oa=oa,
        fa=fa,
        md=md,
        kc=kc,
        tp=cm.tp,
        fp=cm.fp,
        fn=cm.fn,
        tn=cm.tn,
        fa_defined=flagged > 0,
        md_defined=actual > 0,
    )


def evaluate_masks(pred: BinaryMask, truth: BinaryMask, ignore: BinaryMask | None = None) -> MetricsReport:
    """confusion + metrics in one call."""
    return metrics(confusion(pred, truth, ignore))


def format_table(rows: list[tuple[str, MetricsReport]]) -> str:
    """Aligned plain-text table: method, OA(%), FAs(%), MDs(%), KC."""
    header = ("Method", "OA(%)", "FAs(%)", "MDs(%)", "KC")
    body = [
        (name, f"{r.oa:.2f}", f"{r.fa:.2f}", f"{r.md:.2f}", f"{r.kc:.3f}")
        for name, r in rows
    ]
    widths = [
        max(len(header[c]), *(len(row[c]) for row in body)) if body else len(header[c])
        for c in range(len(header))
    ]
    lines = []
    for row in [header, tuple("-" * w for w in widths), *body]:
        cells = [row[0].ljust(widths[0])] + [
            row[c].rjust(widths[c]) for c in range(1, len(header))
        ]
        lines.append("  ".join(cells).rstrip())
    return "\n".join(lines) + "\n"
