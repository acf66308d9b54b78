"""
Dependency-free SVG charts for evaluation reports.

Two layouts: a curve chart per output dimension with a shaded band (for
one-dimensional inputs such as the spiral), and a per-point chart with capped
interval bars (for tabular test sets). Each chart comes with a CSV of the
plotted series.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .metrics import EvalReport

PANEL_W, PANEL_H = 520, 300
MARGIN = 50
COLORS = {"band": "#9ee7ef", "mean": "#1f5fbf", "truth": "#d62728", "train": "#2ca02c", "ref": "#444444"}


@dataclass
class _Axis:
    lo: float
    hi: float
    pixel_lo: float
    pixel_hi: float

    @classmethod
    def fit(cls, values, pixel_lo, pixel_hi):
        v = np.concatenate([np.ravel(a) for a in values if np.size(a)])
        lo, hi = float(np.min(v)), float(np.max(v))
        if hi - lo < 1e-12:
            lo, hi = lo - 1.0, hi + 1.0
        pad = 0.05 * (hi - lo)
        return cls(lo - pad, hi + pad, pixel_lo, pixel_hi)

    def __call__(self, v):
        return self.pixel_lo + (np.asarray(v, float) - self.lo) / (self.hi - self.lo) * (self.pixel_hi - self.pixel_lo)


def _points(xs, ys):
    return " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))


def _frame(ox, oy, title, xa, ya):
    parts = [
        f'<g transform="translate({ox},{oy})">',
        f'<rect x="{MARGIN}" y="{MARGIN / 2}" width="{PANEL_W - 1.5 * MARGIN}" '
        f'height="{PANEL_H - 1.5 * MARGIN}" fill="none" stroke="#999"/>',
        f'<text x="{PANEL_W / 2}" y="16" text-anchor="middle" font-size="13">{escape(title)}</text>',
    ]
    for v, anchor in ((xa.lo, "start"), (xa.hi, "end")):
        parts.append(f'<text x="{float(xa(v)):.1f}" y="{PANEL_H - MARGIN / 2 + 14}" '
                     f'text-anchor="{anchor}" font-size="10">{v:.3g}</text>')
    for v in (ya.lo, ya.hi):
        parts.append(f'<text x="{MARGIN - 4}" y="{float(ya(v)):.1f}" text-anchor="end" font-size="10">{v:.3g}</text>')
    return parts


def _svg(panels, n_panels):
    height = PANEL_H * n_panels
    head = (f'<?xml version="1.0" encoding="UTF-8"?>\n<svg xmlns="http://www.w3.org/2000/svg" '
            f'width="{PANEL_W}" height="{height}" viewBox="0 0 {PANEL_W} {height}">')
    return "\n".join([head, f'<rect width="{PANEL_W}" height="{height}" fill="white"/>', *panels, "</svg>"]) + "\n"


def _circles(xs, ys, color, r=2.5):
    return [f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{r}" fill="{color}"/>' for x, y in zip(xs, ys)]


def curve_chart(x, report: EvalReport, train=None, reference=None):
    """Per-output panels of mean +/- sigma against a 1-D input.

    ``train`` and ``reference`` are optional ``(x, Y)`` pairs drawn as markers
    and as a thin line respectively. Returns ``(svg_text, series_csv)``.
    """
    x = np.asarray(x, float).ravel()
    order = np.argsort(x, kind="stable")
    xs = x[order]
    mean, std, truth = report.mean[order], report.std[order], report.y_true[order]
    low, high = mean - std, mean + std
    panels = []
    for j in range(mean.shape[1]):
        series = [low[:, j], high[:, j], truth[:, j]]
        xvals = [xs]
        if train is not None:
            series.append(np.asarray(train[1])[:, j])
            xvals.append(np.asarray(train[0]).ravel())
        if reference is not None:
            series.append(np.asarray(reference[1])[:, j])
            xvals.append(np.asarray(reference[0]).ravel())
        xa = _Axis.fit(xvals, MARGIN, PANEL_W - MARGIN / 2)
        ya = _Axis.fit(series, PANEL_H - MARGIN, MARGIN / 2)
        g = _frame(0, j * PANEL_H, f"output y{j + 1}", xa, ya)
        band = _points(xa(xs), ya(high[:, j])) + " " + _points(xa(xs[::-1]), ya(low[::-1, j]))
        g.append(f'<polygon points="{band}" fill="{COLORS["band"]}" stroke="{COLORS["band"]}" '
                 f'stroke-width="0.5" fill-opacity="0.7"/>')
        if reference is not None:
            rx = np.asarray(reference[0]).ravel()
            ro = np.argsort(rx, kind="stable")
            g.append(f'<polyline points="{_points(xa(rx[ro]), ya(np.asarray(reference[1])[ro, j]))}" '
                     f'fill="none" stroke="{COLORS["ref"]}" stroke-width="1" stroke-dasharray="4,3"/>')
        g.append(f'<polyline points="{_points(xa(xs), ya(mean[:, j]))}" fill="none" '
                 f'stroke="{COLORS["mean"]}" stroke-width="1.5"/>')
        if train is not None:
            g += _circles(xa(np.asarray(train[0]).ravel()), ya(np.asarray(train[1])[:, j]), COLORS["train"], 1.8)
        g += _circles(xa(xs), ya(truth[:, j]), COLORS["truth"])
        g.append("</g>")
        panels += g

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    p = mean.shape[1]
    w.writerow(["x"] + [f"y{j}_{s}" for j in range(1, p + 1) for s in ("true", "mean", "band_low", "band_high")])
    for i in range(len(xs)):
        row = [repr(float(xs[i]))]
        for j in range(p):
            row += [repr(float(v)) for v in (truth[i, j], mean[i, j], low[i, j], high[i, j])]
        w.writerow(row)
    return _svg(panels, p), buf.getvalue()


def interval_chart(report: EvalReport):
    """Per-test-point means with capped interval bars and truth markers."""
    n, p = report.mean.shape
    idx = np.arange(n, dtype=float)
    panels = []
    for j in range(p):
        xa = _Axis.fit([idx], MARGIN, PANEL_W - MARGIN / 2)
        ya = _Axis.fit([report.ci_low[:, j], report.ci_high[:, j], report.y_true[:, j]], PANEL_H - MARGIN, MARGIN / 2)
        g = _frame(0, j * PANEL_H, f"output y{j + 1} ({report.ci_kind})", xa, ya)
        px = xa(idx)
        lo, hi, mid = ya(report.ci_low[:, j]), ya(report.ci_high[:, j]), ya(report.mean[:, j])
        for k in range(n):
            stroke = COLORS["mean"]
            g.append(f'<line x1="{px[k]:.2f}" y1="{lo[k]:.2f}" x2="{px[k]:.2f}" y2="{hi[k]:.2f}" stroke="{stroke}"/>')
            for yy in (lo[k], hi[k]):
                g.append(f'<line x1="{px[k] - 3:.2f}" y1="{yy:.2f}" x2="{px[k] + 3:.2f}" y2="{yy:.2f}" '
                         f'stroke="{stroke}"/>')
        g += _circles(px, mid, COLORS["mean"], 2.0)
        g += [f'<rect x="{x - 2.5:.2f}" y="{y - 2.5:.2f}" width="5" height="5" fill="{COLORS["truth"]}"/>'
              for x, y in zip(px, ya(report.y_true[:, j]))]
        g.append("</g>")
        panels += g

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["point"] + [f"y{j}_{s}" for j in range(1, p + 1) for s in ("true", "mean", "ci_low", "ci_high")])
    for i in range(n):
        row = [i]
        for j in range(p):
            row += [repr(float(a[i, j])) for a in (report.y_true, report.mean, report.ci_low, report.ci_high)]
        w.writerow(row)
    return _svg(panels, p), buf.getvalue()
