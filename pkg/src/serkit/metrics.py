"""Concordance correlation coefficient: metric, training loss, and gradient.

The CCC of two equal-length sequences is computed in covariance form with
population (1/N) moments:

    ccc(x, y) = 2 cov(x, y) / (var(x) + var(y) + (mean(x) - mean(y))^2)

It penalizes decorrelation as well as mean and scale mismatch, which is why
it doubles as both the evaluation metric and (as ``1 - ccc``) the training
loss for continuous emotion regression.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InvalidArgumentError, SchemaError


def _validate_pair(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1:
        raise InvalidArgumentError("ccc expects 1-d sequences")
    if len(x) != len(y):
        raise InvalidArgumentError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise InvalidArgumentError("ccc needs at least 2 samples")
    return x, y


def ccc(x: Sequence[float], y: Sequence[float]) -> float:
    """Concordance correlation coefficient of two sequences.

    The degenerate case where both inputs are constant with equal means
    (denominator exactly zero) is defined as 1.0, the limit of perfect
    agreement; a constant input against a varying one yields 0 through the
    zero covariance.
    """
    x, y = _validate_pair(x, y)
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    n = len(x)
    cov = float(dx @ dy) / n
    vx = float(dx @ dx) / n
    vy = float(dy @ dy) / n
    den = vx + vy + float(mx - my) ** 2
    if den == 0.0:
        return 1.0
    return 2.0 * cov / den


def ccc_loss(pred: Sequence[float], gold: Sequence[float]) -> float:
    """Training loss ``1 - ccc(pred, gold)``: 0 at perfect agreement."""
    return 1.0 - ccc(pred, gold)


def ccc_loss_grad(pred: Sequence[float], gold: Sequence[float]) -> np.ndarray:
    """Analytic gradient of ``ccc_loss`` with respect to each prediction.

    Derived from the covariance form with the gold sequence held constant:

        d loss / d pred_i
            = (2 / (N * den)) * (ccc * ((pred_i - mp) + (mp - mg))
                                 - (gold_i - mg))

    where ``den`` is the CCC denominator and mp/mg the two means. When the
    denominator is zero (both sequences constant with equal means) the
    gradient is defined as zero so optimizers never see NaNs.
    """
    x, y = _validate_pair(pred, gold)
    n = len(x)
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    cov = float(dx @ dy) / n
    vx = float(dx @ dx) / n
    vy = float(dy @ dy) / n
    den = vx + vy + (mx - my) ** 2
    if den == 0.0:
        return np.zeros(n)
    c = 2.0 * cov / den
    return (2.0 / (n * den)) * (c * (dx + (mx - my)) - dy)


@dataclass(frozen=True)
class ScoreReport:
    """Evaluation scores for one subset: concatenated CCC plus per-conversation
    CCCs. The concatenated score is the checkpoint-selection criterion."""

    dimension: str
    ccc_concat: float
    ccc_per_conv: tuple[tuple[str, float], ...]


def concat_ccc(
    preds: Sequence[np.ndarray], golds: Sequence[np.ndarray]
) -> float:
    """CCC over the concatenation of all conversations in a subset."""
    if len(preds) != len(golds) or len(preds) == 0:
        raise InvalidArgumentError("need matching non-empty prediction/gold lists")
    return ccc(np.concatenate(preds), np.concatenate(golds))


def write_score_report(report: ScoreReport, path: str | Path) -> None:
    """Serialize a report as ``scope,id,ccc`` rows.

    The ``concat`` row carries the dimension name as its id; ``conv`` rows
    carry conversation ids.
    """
    lines = ["scope,id,ccc"]
    lines.append(f"concat,{report.dimension},{float(report.ccc_concat)!r}")
    lines += [
        f"conv,{conv_id},{float(value)!r}" for conv_id, value in report.ccc_per_conv
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_score_report(path: str | Path) -> ScoreReport:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["scope", "id", "ccc"]:
            raise SchemaError(f"{path}: expected header 'scope,id,ccc'")
        concat = None
        dimension = ""
        per_conv = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise SchemaError(f"{path}: row {lineno}: expected 3 columns")
            scope, ident, value = row
            if scope == "concat":
                dimension = ident
                concat = float(value)
            elif scope == "conv":
                per_conv.append((ident, float(value)))
            else:
                raise SchemaError(f"{path}: row {lineno}: unknown scope {scope!r}")
    if concat is None:
        raise SchemaError(f"{path}: missing concat row")
    return ScoreReport(dimension, concat, tuple(per_conv))
