"""Prediction-versus-reference line charts as standalone SVG.

The emitter is dependency-free: one polyline per track over the segment
axis, a legend whose labels carry each prediction's CCC against the
reference, and 5% margins around the auto-scaled data range.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .core import GoldTrack, PredictionTrack
from .errors import InvalidArgumentError
from .metrics import ccc

# Reference track first (red), then one color per prediction track.
_PALETTE = ("#d62728", "#2ca02c", "#1f77b4", "#9467bd", "#ff7f0e", "#8c564b")

_WIDTH, _HEIGHT = 960, 420
_MARGIN_L, _MARGIN_R, _MARGIN_T, _MARGIN_B = 60, 24, 56, 40


def _polyline(xs, ys, color: str) -> str:
    points = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    return (
        f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
        f'points="{points}"/>'
    )


def render_tracks_svg(
    gold: GoldTrack, tracks: Sequence[PredictionTrack], title: str = ""
) -> str:
    """Render the reference and prediction tracks as one SVG document."""
    n = len(gold.values)
    for track in tracks:
        if len(track.values) != n:
            raise InvalidArgumentError(
                f"track {track.source!r} has {len(track.values)} segments, "
                f"reference has {n}"
            )

    labeled = [("reference", gold.values, _PALETTE[0])]
    scored = []
    for i, track in enumerate(tracks):
        score = ccc(track.values, gold.values) if n >= 2 else float("nan")
        scored.append((track.source, score))
        labeled.append(
            (
                f"{track.source} (ccc={score:.3f})",
                track.values,
                _PALETTE[(i + 1) % len(_PALETTE)],
            )
        )

    all_values = np.concatenate([vals for _, vals, _ in labeled])
    lo, hi = float(all_values.min()), float(all_values.max())
    if hi == lo:
        hi = lo + 1.0
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad

    plot_w = _WIDTH - _MARGIN_L - _MARGIN_R
    plot_h = _HEIGHT - _MARGIN_T - _MARGIN_B
    xs = _MARGIN_L + np.arange(n) / max(1, n - 1) * plot_w
    title_text = title or "prediction tracks"
    score_text = "  ".join(f"ccc({src})={val:.3f}" for src, val in scored)

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_WIDTH}" '
        f'height="{_HEIGHT}" viewBox="0 0 {_WIDTH} {_HEIGHT}">',
        f"<title>{escape(title_text)} {escape(score_text)}</title>",
        f'<rect x="0" y="0" width="{_WIDTH}" height="{_HEIGHT}" fill="white"/>',
        f'<text x="{_MARGIN_L}" y="20" font-family="sans-serif" font-size="14">'
        f"{escape(title_text)}</text>",
        f'<text x="{_MARGIN_L}" y="38" font-family="sans-serif" font-size="12" '
        f'fill="#444">{escape(score_text)}</text>',
        f'<rect x="{_MARGIN_L}" y="{_MARGIN_T}" width="{plot_w}" '
        f'height="{plot_h}" fill="none" stroke="#999"/>',
    ]
    for label, values, color in labeled:
        ys = _MARGIN_T + (hi - np.asarray(values)) / (hi - lo) * plot_h
        parts.append(_polyline(xs, ys, color))
    # Axis extremes and legend.
    parts.append(
        f'<text x="8" y="{_MARGIN_T + 10}" font-family="sans-serif" '
        f'font-size="11">{hi:.2f}</text>'
    )
    parts.append(
        f'<text x="8" y="{_MARGIN_T + plot_h}" font-family="sans-serif" '
        f'font-size="11">{lo:.2f}</text>'
    )
    parts.append(
        f'<text x="{_MARGIN_L}" y="{_HEIGHT - 12}" font-family="sans-serif" '
        f'font-size="11">segment 0 .. {n - 1}</text>'
    )
    ly = _MARGIN_T + 14
    for label, _, color in labeled:
        parts.append(
            f'<line x1="{_MARGIN_L + 8}" y1="{ly - 4}" x2="{_MARGIN_L + 36}" '
            f'y2="{ly - 4}" stroke="{color}" stroke-width="3"/>'
        )
        parts.append(
            f'<text x="{_MARGIN_L + 42}" y="{ly}" font-family="sans-serif" '
            f'font-size="12">{escape(label)}</text>'
        )
        ly += 16
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_tracks_svg(
    gold: GoldTrack,
    tracks: Sequence[PredictionTrack],
    path: str | Path,
    title: str = "",
) -> None:
    Path(path).write_text(render_tracks_svg(gold, tracks, title), encoding="utf-8")
