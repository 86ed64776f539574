"""Run manifests, CSV output and a minimal SVG plot emitter."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from importlib import metadata
from xml.sax.saxutils import escape

import numpy as np

from . import __version__
from .conic import LP_TOL, SDP_TOL, TOL_ENV

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def _version(pkg: str) -> str:
    try:
        return metadata.version(pkg)
    except metadata.PackageNotFoundError:
        return "unknown"


def build_manifest(**fields) -> dict:
    """Manifest with seeds and settings from ``fields`` plus tolerances and versions."""
    man = {k: _plain(v) for k, v in fields.items()}
    man["tolerances"] = {"lp": LP_TOL, "sdp": SDP_TOL, "override": os.environ.get(TOL_ENV)}
    man["versions"] = {"dro_invopt": __version__, "numpy": _version("numpy"),
                       "scipy": _version("scipy"), "clarabel": _version("clarabel")}
    return man


def canonical_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"))


def manifest_hash(manifest: dict) -> str:
    return hashlib.sha256(canonical_json(manifest).encode()).hexdigest()


def write_manifest(path, manifest: dict) -> str:
    h = manifest_hash(manifest)
    with open(path, "w") as fh:
        json.dump(dict(_plain(manifest), manifest_sha256=h), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return h


def _plain(v):
    if isinstance(v, dict):
        return {str(k): _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, np.ndarray):
        return _plain(v.tolist())
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else repr(v)
    if isinstance(v, (np.integer, np.bool_)):
        return v.item()
    return v


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return "" if v is None else str(v)


def write_csv(path, columns, rows, manifest_sha: str | None = None):
    """Rows are dicts; the first line is ``# manifest_sha256=<hash>`` when given."""
    with open(path, "w", newline="") as fh:
        if manifest_sha:
            fh.write(f"# manifest_sha256={manifest_sha}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in columns])


def read_csv(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        rows = list(reader)
    return rows[0], [dict(zip(rows[0], r)) for r in rows[1:]]


# --------------------------------------------------------------------------
# SVG


class _Axes:
    def __init__(self, xs, ys, logx=False, logy=False, width=640, height=420, margin=70):
        self.w, self.h, self.m = width, height, margin
        self.logx, self.logy = logx, logy
        fx = [self._tx(v) for v in xs if self._valid(v, logx)]
        fy = [self._ty(v) for v in ys if self._valid(v, logy)]
        self.x0, self.x1 = _span(fx)
        self.y0, self.y1 = _span(fy)

    @staticmethod
    def _valid(v, log):
        return v is not None and math.isfinite(v) and (v > 0 or not log)

    def _tx(self, v):
        return math.log10(v) if self.logx else v

    def _ty(self, v):
        return math.log10(v) if self.logy else v

    def ok(self, x, y):
        return self._valid(x, self.logx) and self._valid(y, self.logy)

    def px(self, v):
        return self.m + (self._tx(v) - self.x0) / (self.x1 - self.x0) * (self.w - 2 * self.m)

    def py(self, v):
        return self.h - self.m - (self._ty(v) - self.y0) / (self.y1 - self.y0) * (self.h - 2 * self.m)


def _span(vals):
    if not vals:
        return 0.0, 1.0
    lo, hi = min(vals), max(vals)
    if hi - lo < 1e-12:
        lo, hi = lo - 0.5, hi + 0.5
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _frame(ax: _Axes, title, xlabel, ylabel, manifest_sha) -> list[str]:
    w, h, m = ax.w, ax.h, ax.m
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
           f'viewBox="0 0 {w} {h}" data-manifest-sha256="{escape(manifest_sha or "")}">',
           f"<desc>manifest_sha256={escape(manifest_sha or '')}</desc>",
           f'<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>',
           f'<text x="{w / 2:.1f}" y="{m / 2:.1f}" text-anchor="middle" font-size="16">{escape(title)}</text>',
           f'<line x1="{m}" y1="{h - m}" x2="{w - m}" y2="{h - m}" stroke="black"/>',
           f'<line x1="{m}" y1="{m}" x2="{m}" y2="{h - m}" stroke="black"/>',
           f'<text x="{w / 2:.1f}" y="{h - 20}" text-anchor="middle" font-size="13">{escape(xlabel)}</text>',
           f'<text x="20" y="{h / 2:.1f}" text-anchor="middle" font-size="13" '
           f'transform="rotate(-90 20 {h / 2:.1f})">{escape(ylabel)}</text>']
    for frac in (0.0, 0.5, 1.0):
        yv = ax.y0 + frac * (ax.y1 - ax.y0)
        label = 10 ** yv if ax.logy else yv
        ypix = h - m - frac * (h - 2 * m)
        out.append(f'<text x="{m - 6}" y="{ypix + 4:.1f}" text-anchor="end" font-size="11">{label:.3g}</text>')
    return out


def svg_line_plot(series: dict, title: str, xlabel: str, ylabel: str, manifest_sha: str | None = None,
                  logx: bool = False, logy: bool = False) -> str:
    """``series`` maps a label to a list of ``(x, y)`` points (NaN points are skipped)."""
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    ax = _Axes(xs, ys, logx, logy)
    out = _frame(ax, title, xlabel, ylabel, manifest_sha)
    ticks = sorted({x for x in xs if ax._valid(x, logx)})
    for x in ticks:
        out.append(f'<text x="{ax.px(x):.1f}" y="{ax.h - ax.m + 16}" text-anchor="middle" '
                   f'font-size="10">{x:.3g}</text>')
    for k, (label, pts) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        good = [(ax.px(x), ax.py(y)) for x, y in pts if ax.ok(x, y)]
        if good:
            coords = " ".join(f"{a:.2f},{b:.2f}" for a, b in good)
            out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
            for a, b in good:
                out.append(f'<circle cx="{a:.2f}" cy="{b:.2f}" r="3" fill="{color}"/>')
        ly = ax.m + 16 * k
        out.append(f'<text x="{ax.w - ax.m + 4}" y="{ly}" font-size="11" fill="{color}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def svg_box_plot(groups: dict, title: str, ylabel: str, manifest_sha: str | None = None,
                 logy: bool = False) -> str:
    """``groups`` maps a label to a list of values; draws quartile boxes and whiskers."""
    labels = list(groups)
    stats = {}
    for label in labels:
        v = np.asarray([x for x in groups[label] if x is not None and math.isfinite(x)
                        and (x > 0 or not logy)], dtype=float)
        stats[label] = np.percentile(v, [0, 25, 50, 75, 100]) if v.size else None
    ys = [float(x) for s in stats.values() if s is not None for x in s]
    ax = _Axes(list(range(len(labels) + 2)), ys, False, logy)
    ax.x0, ax.x1 = 0.0, len(labels) + 1.0
    out = _frame(ax, title, "", ylabel, manifest_sha)
    for k, label in enumerate(labels, start=1):
        cx = ax.px(k)
        out.append(f'<text x="{cx:.1f}" y="{ax.h - ax.m + 16}" text-anchor="middle" '
                   f'font-size="10">{escape(str(label))}</text>')
        s = stats[label]
        if s is None:
            continue
        lo, q1, med, q3, hi = (ax.py(float(v)) for v in s)
        half = 0.3 * (ax.px(1) - ax.px(0))
        color = PALETTE[(k - 1) % len(PALETTE)]
        out.append(f'<line x1="{cx:.1f}" y1="{lo:.1f}" x2="{cx:.1f}" y2="{hi:.1f}" stroke="{color}"/>')
        out.append(f'<rect x="{cx - half:.1f}" y="{q3:.1f}" width="{2 * half:.1f}" '
                   f'height="{max(q1 - q3, 0.5):.1f}" fill="none" stroke="{color}" stroke-width="2"/>')
        out.append(f'<line x1="{cx - half:.1f}" y1="{med:.1f}" x2="{cx + half:.1f}" y2="{med:.1f}" '
                   f'stroke="{color}" stroke-width="2"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
