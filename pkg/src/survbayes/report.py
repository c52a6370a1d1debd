"""Rendering of posterior summaries: machine-readable JSON, aligned text
tables, forest-plot data CSV, and a self-contained SVG forest plot.

Every artifact here is a pure function of the summaries, so identical runs
produce byte-identical files; wall-clock timings are deliberately kept out
and reported separately.
"""

from __future__ import annotations

import json
import math
import os
from typing import Iterable, Sequence

from .data import _atomic_write_text
from .diagnostics import Diagnostics
from .errors import ConfigError
from .summary import PosteriorSummary


def summary_record(s: PosteriorSummary) -> dict:
    """JSON-ready dict for one model (no timing fields)."""
    return {
        "label": s.label,
        "mean": s.mean,
        "sd": s.sd,
        "median": s.median,
        "ci_low": s.ci_low,
        "ci_high": s.ci_high,
        "prob_hr": {repr(float(c)): p for c, p in sorted(s.prob_hr.items())},
        "rhat": s.rhat,
        "ess_ratio": s.ess_ratio,
        "converged": s.converged,
    }


def summaries_to_json(summaries: Sequence[PosteriorSummary], level: float = 0.95) -> str:
    payload = {
        "level": level,
        "scale": "log_hazard_ratio",
        "models": [summary_record(s) for s in summaries],
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def summaries_from_json(text: str) -> list[PosteriorSummary]:
    try:
        payload = json.loads(text)
        models = payload["models"]
        out = []
        for rec in models:
            out.append(
                PosteriorSummary(
                    label=rec["label"],
                    mean=rec["mean"],
                    sd=rec["sd"],
                    median=rec["median"],
                    ci_low=rec["ci_low"],
                    ci_high=rec["ci_high"],
                    prob_hr={float(k): v for k, v in rec["prob_hr"].items()},
                    rhat=rec.get("rhat"),
                    ess_ratio=rec.get("ess_ratio"),
                    converged=rec["converged"],
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed summary JSON: {exc}") from None
    return out


def _fmt(x: float | None, width: int = 10, digits: int = 4) -> str:
    if x is None:
        return "-".rjust(width)
    return f"{x:.{digits}f}".rjust(width)


def format_summary_table(summaries: Sequence[PosteriorSummary], level: float = 0.95) -> str:
    """Aligned text table; every number equals its JSON counterpart rounded
    to 4 decimals for display."""
    if not summaries:
        raise ConfigError("no summaries to format")
    thresholds = sorted({c for s in summaries for c in s.prob_hr})
    pct = f"{level * 100:g}%"
    label_w = max(5, max(len(s.label) for s in summaries))
    head = [
        "model".ljust(label_w),
        "mean".rjust(10),
        "sd".rjust(10),
        "median".rjust(10),
        f"lo{pct}".rjust(10),
        f"hi{pct}".rjust(10),
        *[f"P(HR>{c:g})".rjust(10) for c in thresholds],
        "rhat".rjust(8),
        "ess_r".rjust(8),
        "conv".rjust(5),
    ]
    lines = ["  ".join(head)]
    lines.append("-" * len(lines[0]))
    for s in summaries:
        row = [
            s.label.ljust(label_w),
            _fmt(s.mean),
            _fmt(s.sd),
            _fmt(s.median),
            _fmt(s.ci_low),
            _fmt(s.ci_high),
            *[_fmt(s.prob_hr.get(c), 10) for c in thresholds],
            _fmt(s.rhat, 8, 3),
            _fmt(s.ess_ratio, 8, 3),
            ("yes" if s.converged else "NO").rjust(5),
        ]
        lines.append("  ".join(row))
    return "\n".join(lines) + "\n"


def forest_data_csv(summaries: Sequence[PosteriorSummary]) -> str:
    """label,mean,lo,hi rows; floats written with repr for exact round-trip."""
    lines = ["label,mean,lo,hi"]
    for s in summaries:
        lines.append(f"{s.label},{s.mean!r},{s.ci_low!r},{s.ci_high!r}")
    return "\n".join(lines) + "\n"


def _svg_x(value: float, lo: float, hi: float, x0: float, x1: float) -> float:
    return x0 + (value - lo) / (hi - lo) * (x1 - x0)


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    """Round tick positions covering [lo, hi]."""
    span = hi - lo
    raw = span / max(n - 1, 1)
    mag = 10.0 ** math.floor(math.log10(raw)) if raw > 0 else 1.0
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        step = mult * mag
        if span / step <= n:
            break
    start = math.ceil(lo / step) * step
    ticks = []
    v = start
    while v <= hi + 1e-12:
        ticks.append(round(v, 10))
        v += step
    return ticks


def forest_svg(summaries: Sequence[PosteriorSummary], level: float = 0.95) -> str:
    """One row per model: square at the posterior mean, whiskers at the
    credible interval, dashed reference line at log(HR) = 0."""
    if not summaries:
        raise ConfigError("no summaries to plot")
    lo = min(min(s.ci_low for s in summaries), 0.0)
    hi = max(max(s.ci_high for s in summaries), 0.0)
    pad = 0.05 * (hi - lo if hi > lo else 1.0)
    lo, hi = lo - pad, hi + pad

    label_w = 170
    row_h = 28
    width = 640
    top = 34
    x0, x1 = label_w + 10, width - 20
    height = top + row_h * len(summaries) + 44
    zero_x = _svg_x(0.0, lo, hi, x0, x1)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="monospace" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{label_w + 10}" y="18" fill="black">log hazard ratio, '
        f"{level * 100:g}% credible interval</text>",
        f'<line x1="{zero_x:.2f}" y1="{top}" x2="{zero_x:.2f}" y2="{height - 40}" '
        'stroke="#888888" stroke-dasharray="4,3"/>',
    ]
    for i, s in enumerate(summaries):
        cy = top + row_h * i + row_h / 2
        xl = _svg_x(s.ci_low, lo, hi, x0, x1)
        xr = _svg_x(s.ci_high, lo, hi, x0, x1)
        xm = _svg_x(s.mean, lo, hi, x0, x1)
        color = "black" if s.converged else "#b00000"
        parts.append(f'<text x="6" y="{cy + 4:.2f}" fill="{color}">{_esc(s.label)}</text>')
        parts.append(
            f'<line x1="{xl:.2f}" y1="{cy:.2f}" x2="{xr:.2f}" y2="{cy:.2f}" stroke="{color}"/>'
        )
        for xw in (xl, xr):
            parts.append(
                f'<line x1="{xw:.2f}" y1="{cy - 5:.2f}" x2="{xw:.2f}" y2="{cy + 5:.2f}" '
                f'stroke="{color}"/>'
            )
        parts.append(
            f'<rect x="{xm - 4:.2f}" y="{cy - 4:.2f}" width="8" height="8" fill="{color}"/>'
        )
    axis_y = height - 40
    parts.append(f'<line x1="{x0}" y1="{axis_y}" x2="{x1}" y2="{axis_y}" stroke="black"/>')
    for tick in _ticks(lo, hi):
        tx = _svg_x(tick, lo, hi, x0, x1)
        parts.append(f'<line x1="{tx:.2f}" y1="{axis_y}" x2="{tx:.2f}" y2="{axis_y + 5}" stroke="black"/>')
        parts.append(
            f'<text x="{tx:.2f}" y="{axis_y + 18}" text-anchor="middle" fill="black">{tick:g}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def diagnostics_record(label: str, diag: Diagnostics) -> dict:
    return {
        "label": label,
        "passed": diag.passed,
        "failures": list(diag.failures),
        "n_chains": diag.n_chains,
        "saved_per_chain": diag.saved_per_chain,
        "parameters": [
            {
                "name": name,
                "rhat": None if math.isnan(diag.rhat[j]) else float(diag.rhat[j]),
                "ess": float(diag.ess[j]),
                "ess_ratio": float(diag.ess_ratio[j]),
            }
            for j, name in enumerate(diag.parameter_names)
        ],
    }


def diagnostics_to_json(records: Iterable[dict]) -> str:
    return json.dumps({"models": list(records)}, sort_keys=True, indent=2) + "\n"


def write_text(path: str | os.PathLike[str], text: str) -> None:
    _atomic_write_text(path, text)
