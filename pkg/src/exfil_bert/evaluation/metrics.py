"""Low-FPR evaluation: ROC, normalized partial AUC, frozen thresholds, Brier."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from ..errors import DegenerateRocError, ThresholdTransferError
from ..schemas import (
    ConfusionCounts,
    MetricsBundle,
    OperatingPoint,
    ScoredSample,
    ThresholdOutcome,
    alpha_label,
)


@dataclass(frozen=True, eq=False)
class ScoreSet:
    """Column view of scored samples: 0/1 labels ``y`` and scores ``s``."""

    y: np.ndarray
    s: np.ndarray

    def __post_init__(self) -> None:
        y = np.asarray(self.y)
        s = np.asarray(self.s, dtype=np.float64)
        if y.shape != s.shape or y.ndim != 1:
            raise ValueError(f"labels {y.shape} and scores {s.shape} must be matching 1-d arrays")
        if y.size and not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        if not np.isfinite(s).all() or (s.size and (s.min() < 0.0 or s.max() > 1.0)):
            raise ValueError("scores must be finite and lie in [0, 1]")
        object.__setattr__(self, "y", y.astype(np.int64))
        object.__setattr__(self, "s", s)

    @classmethod
    def from_samples(cls, samples: Sequence[ScoredSample]) -> "ScoreSet":
        return cls(
            y=np.fromiter((sample.y for sample in samples), dtype=np.int64, count=len(samples)),
            s=np.fromiter((sample.s for sample in samples), dtype=np.float64, count=len(samples)),
        )

    def __len__(self) -> int:
        return int(self.y.size)

    @property
    def n_pos(self) -> int:
        return int(self.y.sum())

    @property
    def n_neg(self) -> int:
        return len(self) - self.n_pos


Samples = Union[ScoreSet, Sequence[ScoredSample]]


def as_score_set(samples: Samples) -> ScoreSet:
    return samples if isinstance(samples, ScoreSet) else ScoreSet.from_samples(samples)


@dataclass(frozen=True, eq=False)
class RocCurve:
    """Empirical ROC with one vertex per distinct score plus the origin.

    ``thresholds[i]`` is the cutpoint producing vertex ``i`` under the rule
    ``s >= tau``; ``thresholds[0]`` is ``+inf``.
    """

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    n_pos: int
    n_neg: int

    @property
    def points(self) -> List[Tuple[float, float]]:
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))


def roc_curve(samples: Samples) -> RocCurve:
    data = as_score_set(samples)
    n_pos, n_neg = data.n_pos, data.n_neg
    if n_pos == 0 or n_neg == 0:
        raise DegenerateRocError("degenerate ROC: both classes are required")
    order = np.argsort(-data.s, kind="mergesort")
    scores = data.s[order]
    labels = data.y[order]
    last_of_tie = np.r_[np.flatnonzero(np.diff(scores)), scores.size - 1]
    tp = np.r_[0, np.cumsum(labels)[last_of_tie]]
    fp = np.r_[0, last_of_tie + 1 - tp[1:]]
    return RocCurve(
        fpr=fp / n_neg,
        tpr=tp / n_pos,
        thresholds=np.r_[np.inf, scores[last_of_tie]],
        tp=tp.astype(np.int64),
        fp=fp.astype(np.int64),
        n_pos=n_pos,
        n_neg=n_neg,
    )


def pauc(roc: RocCurve, alpha: float) -> float:
    """Trapezoidal area under the interpolated ROC on [0, alpha], divided by alpha."""

    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    x0, x1 = roc.fpr[:-1], roc.fpr[1:]
    y0, y1 = roc.tpr[:-1], roc.tpr[1:]
    active = x0 < alpha
    x0, x1, y0, y1 = x0[active], x1[active], y0[active], y1[active]
    right = np.minimum(x1, alpha)
    width = x1 - x0
    slope = np.divide(y1 - y0, width, out=np.zeros_like(width), where=width > 0)
    y_right = y0 + slope * (right - x0)
    area = math.fsum(((right - x0) * (y0 + y_right) / 2.0).tolist())
    return float(min(1.0, max(0.0, area / alpha)))


def auc(roc: RocCurve) -> float:
    return pauc(roc, 1.0)


def select_threshold(val: Samples, alpha: float, split: str = "validation") -> OperatingPoint:
    """Freeze the threshold with the highest TPR subject to FPR <= alpha.

    Ties on TPR go to the larger threshold; when no finite cutpoint fits the
    budget the threshold is ``+inf`` and nothing is flagged.
    """

    if math.isnan(alpha) or not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    roc = roc_curve(val)
    feasible = int(np.count_nonzero(roc.fpr <= alpha))
    best_tp = roc.tp[feasible - 1]
    index = int(np.argmax(roc.tp[:feasible] == best_tp))
    return OperatingPoint(
        alpha=alpha,
        tau=float(roc.thresholds[index]),
        tpr_at_fit=float(roc.tpr[index]),
        fpr_at_fit=float(roc.fpr[index]),
        fit_split=split,
        tp_at_fit=int(roc.tp[index]),
        fp_at_fit=int(roc.fp[index]),
        n_pos=roc.n_pos,
        n_neg=roc.n_neg,
    )


def confusion_counts(samples: Samples, tau: float) -> ConfusionCounts:
    data = as_score_set(samples)
    flagged = data.s >= tau
    positive = data.y == 1
    return ConfusionCounts(
        tp=int(np.count_nonzero(flagged & positive)),
        fp=int(np.count_nonzero(flagged & ~positive)),
        tn=int(np.count_nonzero(~flagged & ~positive)),
        fn=int(np.count_nonzero(~flagged & positive)),
    )


def apply_threshold(
    test: Samples,
    op: OperatingPoint,
    split: str = "test",
    allow_same_split: bool = False,
) -> ThresholdOutcome:
    """Count outcomes at a frozen threshold; rates with a zero denominator are None."""

    if split == op.fit_split and not allow_same_split:
        raise ThresholdTransferError(
            f"operating point was fit on {op.fit_split!r}; refusing to apply it on the same split"
        )
    counts = confusion_counts(test, op.tau)
    flagged = counts.tp + counts.fp
    return ThresholdOutcome(
        alpha=op.alpha,
        tau=op.tau,
        split=split,
        counts=counts,
        realized_fpr=counts.fp / counts.negatives if counts.negatives else None,
        recall=counts.tp / counts.positives if counts.positives else None,
        precision=counts.tp / flagged if flagged else None,
    )


def brier(samples: Samples) -> float:
    data = as_score_set(samples)
    if not len(data):
        raise ValueError("Brier score of an empty sample set is undefined")
    return math.fsum(((data.s - data.y) ** 2).tolist()) / len(data)


class DeltaTable(BaseModel):
    """Differences ``a - b`` between two bundles evaluated at the same alphas."""

    model_config = ConfigDict(protected_namespaces=())

    model_a: str
    model_b: str
    alphas: List[float]
    reference_alpha: float
    pauc: Dict[str, float]
    fpr_at_tau: Dict[str, Optional[float]]
    tp_at_tau: Dict[str, int]
    fp_at_tau: Dict[str, int]
    brier: float

    def row(self) -> Dict[str, Optional[float]]:
        """Flat columns: pAUC per alpha (smallest first), then FPR/TP/FP at the reference tau, then Brier."""

        ref = alpha_label(self.reference_alpha)
        row: Dict[str, Optional[float]] = {}
        for alpha in sorted(self.alphas):
            row[f"delta_pauc@{alpha_label(alpha)}"] = self.pauc[alpha_label(alpha)]
        row[f"delta_fpr@tau_{ref}"] = self.fpr_at_tau[ref]
        row[f"delta_tp@tau_{ref}"] = self.tp_at_tau[ref]
        row[f"delta_fp@tau_{ref}"] = self.fp_at_tau[ref]
        row["delta_brier"] = self.brier
        return row


def compare_runs(a: MetricsBundle, b: MetricsBundle, reference_alpha: Optional[float] = None) -> DeltaTable:
    """Positive deltas mean ``a`` scored higher than ``b``."""

    if sorted(a.alphas) != sorted(b.alphas):
        raise ValueError(f"alpha sets differ: {sorted(a.alphas)} vs {sorted(b.alphas)}")
    alphas = sorted(a.alphas)
    reference = max(alphas) if reference_alpha is None else reference_alpha
    if reference not in alphas:
        raise ValueError(f"reference alpha {reference} is not among {alphas}")
    fpr: Dict[str, Optional[float]] = {}
    tp: Dict[str, int] = {}
    fp: Dict[str, int] = {}
    for alpha in alphas:
        key = alpha_label(alpha)
        out_a, out_b = a.outcome_at(alpha), b.outcome_at(alpha)
        if out_a.realized_fpr is None or out_b.realized_fpr is None:
            fpr[key] = None
        else:
            fpr[key] = out_a.realized_fpr - out_b.realized_fpr
        tp[key] = out_a.counts.tp - out_b.counts.tp
        fp[key] = out_a.counts.fp - out_b.counts.fp
    return DeltaTable(
        model_a=a.model_name,
        model_b=b.model_name,
        alphas=alphas,
        reference_alpha=reference,
        pauc={alpha_label(x): a.pauc_at(x) - b.pauc_at(x) for x in alphas},
        fpr_at_tau=fpr,
        tp_at_tau=tp,
        fp_at_tau=fp,
        brier=a.brier - b.brier,
    )


def evaluate_split_pair(
    val: Samples,
    test: Samples,
    alphas: Sequence[float],
    model_name: str,
    metadata: Optional[Dict[str, object]] = None,
) -> MetricsBundle:
    """Fit one threshold per alpha on validation and report it on test."""

    val_set, test_set = as_score_set(val), as_score_set(test)
    roc = roc_curve(test_set)
    operating_points = [select_threshold(val_set, alpha, split="validation") for alpha in alphas]
    return MetricsBundle(
        model_name=model_name,
        alphas=list(alphas),
        auc=auc(roc),
        pauc={alpha_label(alpha): pauc(roc, alpha) for alpha in alphas},
        operating_points=operating_points,
        outcomes=[apply_threshold(test_set, op, split="test") for op in operating_points],
        brier=brier(test_set),
        validation_brier=brier(val_set),
        n_test=len(test_set),
        metadata=dict(metadata or {}),
    )


def write_metrics(path: str | Path, bundle: MetricsBundle) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(bundle.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_metrics(path: str | Path) -> MetricsBundle:
    return MetricsBundle.model_validate(json.loads(Path(path).read_text(encoding="utf-8")))
