"""
Minimal SVG line charts (axes, ticks, legend, one polyline per series)
"""

import logging
from typing import Dict, List, Sequence, Tuple
from xml.sax.saxutils import escape

import numpy as np

logger = logging.getLogger(__name__)

WIDTH, HEIGHT = 640, 420
MARGIN_LEFT, MARGIN_RIGHT, MARGIN_TOP, MARGIN_BOTTOM = 70, 160, 40, 55
PALETTE = ('#1f77b4', '#d62728', '#2ca02c', '#ff7f0e', '#9467bd', '#8c564b', '#e377c2', '#7f7f7f')


def _num(value: float) -> str:
    return f"{value:.2f}"


def nice_ticks(lo: float, hi: float, count: int = 5) -> List[float]:
    """Round tick positions covering [lo, hi]"""
    if not hi > lo:
        lo, hi = lo - 1.0, hi + 1.0
    raw = (hi - lo) / max(count, 1)
    magnitude = 10.0 ** np.floor(np.log10(raw))
    step = next(m * magnitude for m in (1.0, 2.0, 2.5, 5.0, 10.0) if m * magnitude >= raw)
    start = np.floor(lo / step) * step
    ticks = []
    value = start
    while value <= hi + 1e-9 * step:
        ticks.append(float(round(value, 10)))
        value += step
    if ticks[-1] < hi:
        ticks.append(float(round(value, 10)))
    return ticks


def _tick_label(value: float) -> str:
    return f"{value:g}"


def line_chart(series: Dict[str, Sequence[Tuple[float, float]]], title: str = '', x_label: str = '',
               y_label: str = '') -> str:
    """Render series {label: [(x, y), ...]} as an SVG document string

    Non-finite points are skipped. Output depends only on the inputs.
    """
    points = [(x, y) for pts in series.values() for x, y in pts if np.isfinite(x) and np.isfinite(y)]
    xs = [p[0] for p in points] or [0.0, 1.0]
    ys = [p[1] for p in points] or [0.0, 1.0]
    x_ticks = nice_ticks(min(xs), max(xs))
    y_ticks = nice_ticks(min(ys), max(ys))
    x0, x1 = x_ticks[0], x_ticks[-1]
    y0, y1 = y_ticks[0], y_ticks[-1]
    plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT
    plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM

    def px(x):
        return MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w

    def py(y):
        return MARGIN_TOP + (y1 - y) / (y1 - y0) * plot_h

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{_num(MARGIN_LEFT + plot_w / 2)}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>',
    ]
    for t in x_ticks:
        x = _num(px(t))
        out.append(f'<line x1="{x}" y1="{MARGIN_TOP}" x2="{x}" y2="{MARGIN_TOP + plot_h}" stroke="#dddddd"/>')
        out.append(f'<text x="{x}" y="{MARGIN_TOP + plot_h + 16}" text-anchor="middle">{_tick_label(t)}</text>')
    for t in y_ticks:
        y = _num(py(t))
        out.append(f'<line x1="{MARGIN_LEFT}" y1="{y}" x2="{MARGIN_LEFT + plot_w}" y2="{y}" stroke="#dddddd"/>')
        out.append(f'<text x="{MARGIN_LEFT - 6}" y="{y}" text-anchor="end" dominant-baseline="middle">'
                   f'{_tick_label(t)}</text>')
    out.append(f'<text x="{_num(MARGIN_LEFT + plot_w / 2)}" y="{HEIGHT - 12}" text-anchor="middle">'
               f'{escape(x_label)}</text>')
    out.append(f'<text x="16" y="{_num(MARGIN_TOP + plot_h / 2)}" text-anchor="middle" '
               f'transform="rotate(-90 16 {_num(MARGIN_TOP + plot_h / 2)})">{escape(y_label)}</text>')

    for k, (label, pts) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        finite = [(x, y) for x, y in pts if np.isfinite(x) and np.isfinite(y)]
        if finite:
            coords = ' '.join(f"{_num(px(x))},{_num(py(y))}" for x, y in finite)
            out.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
            for x, y in finite:
                out.append(f'<circle cx="{_num(px(x))}" cy="{_num(py(y))}" r="3" fill="{color}"/>')
        ly = MARGIN_TOP + 12 + 18 * k
        lx = WIDTH - MARGIN_RIGHT + 12
        out.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 26}" y="{ly}" dominant-baseline="middle">{escape(label)}</text>')
    out.append('</svg>')
    return '\n'.join(out) + '\n'


def save_line_chart(series: Dict[str, Sequence[Tuple[float, float]]], filename: str, title: str = '',
                    x_label: str = '', y_label: str = '') -> None:
    with open(filename, 'w', encoding='utf-8', newline='\n') as f:
        f.write(line_chart(series, title, x_label, y_label))
    logger.info(f"Chart written to {filename}")
