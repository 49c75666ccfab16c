"""Tiny self-contained SVG writers for trajectories and ROA cross-sections.

No plotting framework: each function emits one standalone SVG file with
axes, tick labels, and a legend.  Good enough for the reproduction reports;
anything fancier belongs to the caller.
"""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np

__all__ = ["svg_line_chart", "svg_roa_plot"]

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
            "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"]

W, H = 640, 420
ML, MR, MT, MB = 62, 16, 34, 46  # margins


def _ticks(lo: float, hi: float, n: int = 6) -> np.ndarray:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10.0 ** np.floor(np.log10(raw))
    step = min(s * mag for s in (1, 2, 5, 10) if s * mag >= raw)
    start = np.ceil(lo / step) * step
    return np.arange(start, hi + 0.5 * step, step)


def _fmt(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1e4 or abs(v) < 1e-3:
        return f"{v:.1e}"
    return f"{v:.4g}"


class _Canvas:
    def __init__(self, xlim, ylim, title, xlabel, ylabel):
        self.xlim, self.ylim = xlim, ylim
        self.parts: List[str] = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
            f'viewBox="0 0 {W} {H}" font-family="Helvetica, Arial, sans-serif">',
            f'<rect width="{W}" height="{H}" fill="white"/>',
            f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
        ]
        self._axes(xlabel, ylabel)

    def px(self, x):
        lo, hi = self.xlim
        return ML + (np.asarray(x) - lo) / (hi - lo) * (W - ML - MR)

    def py(self, y):
        lo, hi = self.ylim
        return H - MB - (np.asarray(y) - lo) / (hi - lo) * (H - MT - MB)

    def _axes(self, xlabel, ylabel):
        p = self.parts
        p.append(
            f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" '
            'fill="none" stroke="#444" stroke-width="1"/>'
        )
        for t in _ticks(*self.xlim):
            x = float(self.px(t))
            p.append(f'<line x1="{x:.1f}" y1="{H - MB}" x2="{x:.1f}" y2="{H - MB + 4}" stroke="#444"/>')
            p.append(f'<text x="{x:.1f}" y="{H - MB + 16}" text-anchor="middle" font-size="10">{_fmt(t)}</text>')
        for t in _ticks(*self.ylim):
            y = float(self.py(t))
            p.append(f'<line x1="{ML - 4}" y1="{y:.1f}" x2="{ML}" y2="{y:.1f}" stroke="#444"/>')
            p.append(f'<text x="{ML - 7}" y="{y + 3:.1f}" text-anchor="end" font-size="10">{_fmt(t)}</text>')
        p.append(f'<text x="{(W + ML - MR) / 2}" y="{H - 10}" text-anchor="middle" font-size="12">{xlabel}</text>')
        p.append(
            f'<text x="16" y="{(H + MT - MB) / 2}" text-anchor="middle" font-size="12" '
            f'transform="rotate(-90 16 {(H + MT - MB) / 2})">{ylabel}</text>'
        )

    def polyline(self, xs, ys, color, width=1.4, dash=None):
        pts = " ".join(f"{float(a):.2f},{float(b):.2f}" for a, b in zip(self.px(xs), self.py(ys)))
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{dash_attr}/>'
        )

    def cell(self, x0, y0, x1, y1, color, opacity):
        xa, xb = sorted((float(self.px(x0)), float(self.px(x1))))
        ya, yb = sorted((float(self.py(y0)), float(self.py(y1))))
        self.parts.append(
            f'<rect x="{xa:.2f}" y="{ya:.2f}" width="{xb - xa:.2f}" height="{yb - ya:.2f}" '
            f'fill="{color}" fill-opacity="{opacity}" stroke="none"/>'
        )

    def legend(self, entries):
        y = MT + 14
        for label, color in entries:
            self.parts.append(
                f'<line x1="{W - MR - 130}" y1="{y - 4}" x2="{W - MR - 106}" y2="{y - 4}" '
                f'stroke="{color}" stroke-width="2"/>'
            )
            self.parts.append(f'<text x="{W - MR - 100}" y="{y}" font-size="11">{label}</text>')
            y += 16

    def write(self, path):
        self.parts.append("</svg>")
        with open(path, "w") as fh:
            fh.write("\n".join(self.parts))


def svg_line_chart(
    path,
    x: np.ndarray,
    series: Sequence[Tuple[str, np.ndarray]],
    title: str = "",
    xlabel: str = "t",
    ylabel: str = "",
) -> None:
    """Write a multi-series line chart; series is a list of (label, values)."""
    x = np.asarray(x, dtype=float)
    ys = [np.asarray(v, dtype=float) for _, v in series]
    lo = min(float(np.min(v)) for v in ys)
    hi = max(float(np.max(v)) for v in ys)
    pad = 0.05 * (hi - lo or 1.0)
    cv = _Canvas((float(x[0]), float(x[-1])), (lo - pad, hi + pad), title, xlabel, ylabel)
    entries = []
    for i, (label, v) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        cv.polyline(x, np.asarray(v), color)
        entries.append((label, color))
    if entries:
        cv.legend(entries)
    cv.write(path)


def svg_roa_plot(
    path,
    x_axis: np.ndarray,
    y_axis: np.ndarray,
    decrease_mask: np.ndarray,
    P_inv: Optional[np.ndarray] = None,
    gamma: Optional[float] = None,
    center=(0.0, 0.0),
    title: str = "",
    xlabel: str = "x1",
    ylabel: str = "x2",
) -> None:
    """Shade the sampled decrease region and overlay the certified level set.

    decrease_mask has shape (len(x_axis), len(y_axis)) with True where the
    Lyapunov derivative is negative; the level curve V = gamma is drawn from
    the 2x2 metric P_inv.
    """
    x_axis = np.asarray(x_axis, dtype=float)
    y_axis = np.asarray(y_axis, dtype=float)
    cv = _Canvas(
        (float(x_axis[0]), float(x_axis[-1])),
        (float(y_axis[0]), float(y_axis[-1])),
        title, xlabel, ylabel,
    )
    dx = x_axis[1] - x_axis[0] if len(x_axis) > 1 else 1.0
    dy = y_axis[1] - y_axis[0] if len(y_axis) > 1 else 1.0
    # run-length encode mask columns to keep the file size moderate
    for i, xv in enumerate(x_axis):
        j = 0
        col = decrease_mask[i]
        while j < len(col):
            if col[j]:
                j0 = j
                while j < len(col) and col[j]:
                    j += 1
                cv.cell(xv - dx / 2, y_axis[j0] - dy / 2, xv + dx / 2, y_axis[j - 1] + dy / 2,
                        "#b0b0b0", 0.55)
            else:
                j += 1
    if P_inv is not None and gamma is not None and gamma > 0:
        evals, evecs = np.linalg.eigh(np.asarray(P_inv, dtype=float))
        th = np.linspace(0.0, 2 * np.pi, 256)
        circ = np.stack([np.cos(th), np.sin(th)])
        pts = evecs @ (np.sqrt(gamma / evals)[:, None] * circ) + np.asarray(center)[:, None]
        cv.polyline(pts[0], pts[1], "#1f77b4", width=2.0)
        cv.legend([("decrease region", "#b0b0b0"), (f"V = {gamma:.3g}", "#1f77b4")])
    else:
        cv.legend([("decrease region", "#b0b0b0")])
    cv.write(path)
