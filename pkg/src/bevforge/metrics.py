"""Confusion matrices and class-wise IoU."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .classes import DISPLAY_NAMES, IGNORE, NUM_CLASSES
from .errors import LatticeMismatch


@dataclass
class ConfusionMatrix:
    """Counts indexed ``[reference, predicted]``."""

    counts: np.ndarray = field(default_factory=lambda: np.zeros((NUM_CLASSES, NUM_CLASSES), np.int64))

    @classmethod
    def zeros(cls, n_classes=NUM_CLASSES):
        return cls(np.zeros((n_classes, n_classes), np.int64))

    @property
    def n_classes(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def __add__(self, other):
        return ConfusionMatrix(self.counts + other.counts)


def _labels(m):
    return np.asarray(getattr(m, "labels", m))


def accumulate_confusion(pred, ref, cm: ConfusionMatrix | None = None) -> ConfusionMatrix:
    """Add every cell where neither map is 255 to ``cm`` (a new matrix if None).

    Labels outside ``0..K-1`` other than 255 are treated as void too.
    """
    p, r = _labels(pred), _labels(ref)
    if p.shape != r.shape:
        raise LatticeMismatch(f"prediction {p.shape} vs reference {r.shape}")
    cm = cm if cm is not None else ConfusionMatrix.zeros()
    k = cm.n_classes
    ok = (p != IGNORE) & (r != IGNORE) & (p < k) & (r < k)
    idx = r[ok].astype(np.int64) * k + p[ok].astype(np.int64)
    cm.counts += np.bincount(idx, minlength=k * k).reshape(k, k)
    return cm


def iou(cm: ConfusionMatrix, exact=False):
    """Per-class IoU and their mean over classes with a non-empty union.

    Classes with an empty union get ``None``. With ``exact`` the values are
    :class:`fractions.Fraction`.
    """
    c = cm.counts
    tp = np.diag(c)
    union = c.sum(axis=0) + c.sum(axis=1) - tp
    per_class = []
    for t, u in zip(tp.tolist(), union.tolist()):
        if u == 0:
            per_class.append(None)
        else:
            per_class.append(Fraction(t, u) if exact else t / u)
    present = [v for v in per_class if v is not None]
    if not present:
        return per_class, None
    mean = sum(present, Fraction(0)) / len(present) if exact else float(np.mean(present))
    return per_class, mean


def _pct(v):
    return "-" if v is None else f"{100 * float(v):.2f}"


def format_table(per_class, mean, names=DISPLAY_NAMES):
    """Fixed-width text table, values in percent."""
    cols = list(names) + ["mIoU"]
    vals = [_pct(v) for v in per_class] + [_pct(mean)]
    width = [max(len(a), len(b), 6) for a, b in zip(cols, vals)]
    head = " | ".join(a.rjust(w) for a, w in zip(cols, width))
    body = " | ".join(b.rjust(w) for b, w in zip(vals, width))
    return f"{head}\n{'-' * len(head)}\n{body}"


def format_csv(per_class, mean, names=DISPLAY_NAMES):
    """Header line plus one data line; empty fields for classes without a union."""
    head = ",".join(n.lower() for n in names) + ",miou"
    row = ",".join("" if v is None else f"{100 * float(v):.2f}" for v in list(per_class) + [mean])
    return f"{head}\n{row}"
