"""Probability-series plots as dependency-free SVG."""

from __future__ import annotations

import json
from typing import Sequence
from xml.sax.saxutils import escape

WIDTH, HEIGHT, PAD = 960, 360, 48
COLORS = {"benign": "blue", "malicious": "red"}


def series_svg(
    nlls: Sequence[float],
    labels: Sequence[bool],
    threshold: float | None = None,
    title: str = "trace negative log-likelihood",
    metadata: dict | None = None,
) -> str:
    """Trace index against nll; one polyline per class present (benign blue, malicious red).

    Higher points are less probable traces.
    """
    n = len(nlls)
    finite = [v for v in nlls if v != float("inf")]
    top = max(finite + ([threshold] if threshold is not None else []) + [1e-9])
    xs = lambda i: PAD + (WIDTH - 2 * PAD) * (i / max(n - 1, 1))
    ys = lambda v: HEIGHT - PAD - (HEIGHT - 2 * PAD) * (min(v, top) / top)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
    ]
    if metadata:
        out.append(f"<metadata>{escape(json.dumps(metadata, sort_keys=True))}</metadata>")
    out += [
        f"<title>{escape(title)}</title>",
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{PAD}" y1="{HEIGHT - PAD}" x2="{WIDTH - PAD}" y2="{HEIGHT - PAD}" stroke="black"/>',
        f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{HEIGHT - PAD}" stroke="black"/>',
        f'<text x="{WIDTH / 2:.0f}" y="{HEIGHT - 12}" text-anchor="middle" font-size="12">trace index</text>',
        f'<text x="14" y="{HEIGHT / 2:.0f}" font-size="12" transform="rotate(-90 14 {HEIGHT / 2:.0f})" '
        f'text-anchor="middle">nll</text>',
        f'<text x="{PAD - 4}" y="{PAD + 4}" text-anchor="end" font-size="10">{top:.3g}</text>',
    ]
    for name, flag in (("benign", False), ("malicious", True)):
        pts = [f"{xs(i):.2f},{ys(v):.2f}" for i, (v, m) in enumerate(zip(nlls, labels)) if bool(m) == flag]
        if pts:
            out.append(
                f'<polyline class="{name}" fill="none" stroke="{COLORS[name]}" stroke-width="1" '
                f'points="{" ".join(pts)}"/>'
            )
    if threshold is not None:
        y = ys(threshold)
        out.append(
            f'<line class="threshold" x1="{PAD}" y1="{y:.2f}" x2="{WIDTH - PAD}" y2="{y:.2f}" '
            f'stroke="gray" stroke-dasharray="4 3"/>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"
