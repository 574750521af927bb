"""Decision-level fusion: weighted averaging of two modality prediction
tracks, with an exhaustive weight search on the development subset."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .core import GoldTrack, PredictionTrack
from .errors import InvalidArgumentError
from .metrics import ccc

# The searched weights: 0.10 to 0.90 inclusive, step 0.01 (81 points). The
# endpoints 0 and 1 are excluded on purpose: fusion always mixes both sides.
GRID_WEIGHTS = tuple(k / 100.0 for k in range(10, 91))


@dataclass(frozen=True)
class FusionWeights:
    w_a: float
    w_b: float
    dev_ccc: float

    def __post_init__(self):
        if abs(self.w_a + self.w_b - 1.0) > 1e-12:
            raise InvalidArgumentError("fusion weights must sum to 1")


def fuse(a: PredictionTrack, b: PredictionTrack, w_a: float) -> PredictionTrack:
    """Convex combination ``w_a * a + (1 - w_a) * b`` of two tracks."""
    if not 0.0 <= w_a <= 1.0:
        raise InvalidArgumentError(f"w_a must be in [0, 1], got {w_a}")
    if a.conversation_id != b.conversation_id:
        raise InvalidArgumentError(
            f"conversation mismatch: {a.conversation_id!r} vs {b.conversation_id!r}"
        )
    if len(a.values) != len(b.values):
        raise InvalidArgumentError(
            f"length mismatch: {len(a.values)} vs {len(b.values)}"
        )
    values = w_a * a.values + (1.0 - w_a) * b.values
    return PredictionTrack(
        a.conversation_id, values, f"{w_a:.2f}*{a.source}+{1.0 - w_a:.2f}*{b.source}"
    )


def _aligned(
    preds_a: Mapping[str, PredictionTrack],
    preds_b: Mapping[str, PredictionTrack],
    golds: Mapping[str, GoldTrack],
) -> list[str]:
    if len(golds) == 0:
        raise InvalidArgumentError("dev set is empty")
    ids = sorted(golds)
    missing_a = [i for i in ids if i not in preds_a]
    missing_b = [i for i in ids if i not in preds_b]
    if missing_a or missing_b:
        raise InvalidArgumentError(
            f"prediction coverage mismatch: missing from a={missing_a}, "
            f"b={missing_b}"
        )
    return ids


def grid_search_weights(
    preds_a: Mapping[str, PredictionTrack],
    preds_b: Mapping[str, PredictionTrack],
    golds: Mapping[str, GoldTrack],
    weights: Sequence[float] = GRID_WEIGHTS,
) -> tuple[FusionWeights, list[tuple[float, float]]]:
    """Exhaustively score fusion weights on dev and pick the best.

    The score per weight is the CCC of the concatenated fused dev tracks
    against the concatenated gold. Ties break toward the smallest ``w_a``.
    Returns the winner plus every (weight, score) pair for reporting.
    """
    ids = _aligned(preds_a, preds_b, golds)
    concat_a = np.concatenate([preds_a[i].values for i in ids])
    concat_b = np.concatenate([preds_b[i].values for i in ids])
    concat_gold = np.concatenate([golds[i].values for i in ids])
    for i in ids:
        if len(preds_a[i].values) != len(golds[i].values) or len(
            preds_b[i].values
        ) != len(golds[i].values):
            raise InvalidArgumentError(f"track length mismatch for {i!r}")

    grid: list[tuple[float, float]] = []
    best_w = None
    best_score = -np.inf
    delta = concat_a - concat_b
    for w in weights:
        # Delta form: identical inputs score bit-identically at every weight,
        # so degenerate ties resolve deterministically to the smallest w_a.
        score = ccc(concat_b + w * delta, concat_gold)
        grid.append((w, score))
        if score > best_score:
            best_score = score
            best_w = w
    assert best_w is not None
    return FusionWeights(best_w, 1.0 - best_w, best_score), grid


def write_fusion_report(
    selected: FusionWeights, grid: Sequence[tuple[float, float]], path: str | Path
) -> None:
    """All grid rows as ``w_a,w_b,dev_ccc``, then one summary row repeating
    the selected point (always the last row)."""
    lines = ["w_a,w_b,dev_ccc"]
    lines += [f"{w:.2f},{1.0 - w:.2f},{float(s)!r}" for w, s in grid]
    lines.append(
        f"{selected.w_a:.2f},{selected.w_b:.2f},{float(selected.dev_ccc)!r}"
    )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
