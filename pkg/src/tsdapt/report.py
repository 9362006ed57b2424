"""Result tables and the accuracy-vs-noise plot of the synthetic sweep.

The CSV files are the source of truth; the SVG is drawn from the same
aggregates that go into ``summary.csv``.
"""

from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import quoteattr

import numpy as np

from .data import MAX_NOISE

RESULT_COLUMNS = ("b", "seed", "bound", "metric", "transform", "accuracy")
SUMMARY_COLUMNS = ("b", "bound", "metric", "transform", "n", "mean", "std")

_COLORS = {"selected": "#d62728", "oracle_upper": "#000000", "none_lower": "#17becf"}
_EXTRA_COLORS = ("#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#e377c2", "#ff7f0e", "#7f7f7f", "#bcbd22")


@dataclass(frozen=True)
class ResultRow:
    b: float
    seed: int
    bound: str
    metric: str
    transform: str
    accuracy: float

    def sort_key(self):
        return (self.b, self.seed, self.bound, self.metric, self.transform)


def format_b(b):
    return f"{b:.1f}"


def sorted_rows(rows):
    return sorted(rows, key=ResultRow.sort_key)


def _write(path, lines):
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8", newline="\n")


def results_lines(rows):
    lines = [",".join(RESULT_COLUMNS)]
    for r in sorted_rows(rows):
        lines.append(f"{format_b(r.b)},{r.seed},{r.bound},{r.metric},{r.transform},{r.accuracy!r}")
    return lines


def aggregate(rows):
    """Mean and population std of accuracy over seeds, per (b, bound, metric, transform).

    Returns a list of ``(b, bound, metric, transform, n, mean, std)`` sorted
    like the results table.
    """
    groups = {}
    for r in sorted_rows(rows):
        groups.setdefault((r.b, r.bound, r.metric, r.transform), []).append(r.accuracy)
    out = []
    for key in sorted(groups):
        acc = np.array(groups[key])
        out.append((*key, acc.size, float(acc.mean()), float(acc.std())))
    return out


def summary_lines(agg):
    lines = [",".join(SUMMARY_COLUMNS)]
    for b, bound, metric, transform, n, mean, std in agg:
        lines.append(f"{format_b(b)},{bound},{metric},{transform},{n},{mean!r},{std!r}")
    return lines


# ---------------------------------------------------------------------------
# plot

_W, _H = 720, 440
_LEFT, _RIGHT, _TOP, _BOTTOM = 60, 200, 20, 50


def _px(b):
    return _LEFT + (b / MAX_NOISE) * (_W - _LEFT - _RIGHT)


def _py(acc):
    return _H - _BOTTOM - acc * (_H - _TOP - _BOTTOM)


def _curves(agg):
    """One curve per (bound, metric, transform); the metric is irrelevant to
    the two bounds, so those are drawn once per transform."""
    curves = {}
    for b, bound, metric, transform, n, mean, std in agg:
        key = (bound, metric if bound == "selected" else "", transform)
        pts = curves.setdefault(key, {})
        if b not in pts:
            pts[b] = (mean, std, metric)
    return curves


def render_svg(agg, title="Accuracy vs. noise"):
    curves = _curves(agg)
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" viewBox="0 0 {_W} {_H}">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f"<text x=\"{_W / 2:.0f}\" y=\"14\" text-anchor=\"middle\" font-size=\"13\">{title}</text>",
    ]
    x0, x1 = _px(0.0), _px(MAX_NOISE)
    y0, y1 = _py(0.0), _py(1.0)
    out.append(f'<g class="axes" stroke="black" fill="none"><path d="M{x0:.2f},{y1:.2f} L{x0:.2f},{y0:.2f} L{x1:.2f},{y0:.2f}"/></g>')
    ticks = ['<g class="ticks" font-size="10">']
    for i in range(0, 20, 2):
        b = i / 10
        ticks.append(f'<text x="{_px(b):.2f}" y="{y0 + 15:.2f}" text-anchor="middle">{format_b(b)}</text>')
    ticks.append(f'<text x="{_px(MAX_NOISE):.2f}" y="{y0 + 15:.2f}" text-anchor="middle">{format_b(MAX_NOISE)}</text>')
    for i in range(6):
        acc = i / 5
        ticks.append(f'<text x="{x0 - 6:.2f}" y="{_py(acc) + 3:.2f}" text-anchor="end">{acc:.1f}</text>')
        ticks.append(f'<line x1="{x0:.2f}" x2="{x1:.2f}" y1="{_py(acc):.2f}" y2="{_py(acc):.2f}" stroke="#dddddd"/>')
    ticks.append(f'<text x="{(x0 + x1) / 2:.2f}" y="{_H - 12}" text-anchor="middle">noise b</text>')
    ticks.append(f'<text x="14" y="{(y0 + y1) / 2:.2f}" transform="rotate(-90 14 {(y0 + y1) / 2:.2f})" text-anchor="middle">accuracy</text>')
    ticks.append("</g>")
    out.extend(ticks)

    extra = iter(_EXTRA_COLORS * 4)
    for idx, (key, pts) in enumerate(sorted(curves.items())):
        bound, metric, transform = key
        color = _COLORS[bound] if bound != "selected" or metric == "kMMD" else next(extra)
        label = f"{bound} ({metric})" if metric else bound
        if len({k[2] for k in curves}) > 1:
            label += f" [{transform}]"
        bs = sorted(pts)
        upper = [f"{_px(b):.2f},{_py(min(1.0, pts[b][0] + pts[b][1])):.2f}" for b in bs]
        lower = [f"{_px(b):.2f},{_py(max(0.0, pts[b][0] - pts[b][1])):.2f}" for b in reversed(bs)]
        line = [f"{_px(b):.2f},{_py(pts[b][0]):.2f}" for b in bs]
        out.append(
            f"<g class=\"curve\" data-bound={quoteattr(bound)} data-metric={quoteattr(metric)} "
            f"data-transform={quoteattr(transform)}>"
        )
        out.append(f'<polygon class="band" points="{" ".join(upper + lower)}" fill="{color}" fill-opacity="0.15" stroke="none"/>')
        out.append(f'<polyline points="{" ".join(line)}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for b in bs:
            mean, std, _ = pts[b]
            out.append(
                f'<circle cx="{_px(b):.2f}" cy="{_py(mean):.2f}" r="2" fill="{color}" '
                f'data-b="{format_b(b)}" data-mean="{mean!r}" data-std="{std!r}"/>'
            )
        ly = _TOP + 20 + 16 * idx
        out.append(f'<line x1="{_W - _RIGHT + 15}" x2="{_W - _RIGHT + 35}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{_W - _RIGHT + 40}" y="{ly + 4}" font-size="10">{label}</text>')
        out.append("</g>")
    out.append("</svg>")
    return out


def emit_report(rows, out_dir):
    """Write ``results.csv``, ``summary.csv`` and ``accuracy.svg`` into ``out_dir``.

    Row order in the files does not depend on the order of ``rows``.
    """
    if not rows:
        raise ValueError("no result rows to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    agg = aggregate(rows)
    _write(out_dir / "results.csv", results_lines(rows))
    _write(out_dir / "summary.csv", summary_lines(agg))
    _write(out_dir / "accuracy.svg", render_svg(agg))
    return agg


def write_results(rows, out_dir):
    """Write only ``results.csv`` (used to flush partial results)."""
    _write(Path(out_dir) / "results.csv", results_lines(rows))
