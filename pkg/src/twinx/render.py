"""Standalone SVG renderers for the four chart types.

Pure text generation: fixed 3-decimal coordinates, no timestamps or random
ids, so identical inputs yield byte-identical documents on any platform.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .aggregate import DependenceData, FeatureCloud, ForceSegments
from .errors import EmptyInput

_HEX_RE = re.compile(r"^#[0-9a-fA-F]{6}$")


@dataclass(frozen=True)
class ChartStyle:
    width: int = 640
    height: int = 480
    margin_left: int = 170
    margin_right: int = 30
    margin_top: int = 40
    margin_bottom: int = 50
    positive_color: str = "#d62728"   # red family: positive pushes
    negative_color: str = "#1f77b4"   # blue family: negative pushes
    gradient_low: str = "#1f77b4"     # low feature value
    gradient_high: str = "#d62728"    # high feature value
    font_family: str = "Helvetica"
    font_size: int = 12

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("chart dimensions must be positive")
        for c in (self.positive_color, self.negative_color,
                  self.gradient_low, self.gradient_high):
            if not _HEX_RE.match(c):
                raise ValueError(f"{c!r} is not a 6-digit hex color")


def _fmt(x: float) -> str:
    s = f"{float(x):.3f}"
    return "0.000" if s == "-0.000" else s


def _hex_to_rgb(c: str) -> tuple[int, int, int]:
    return int(c[1:3], 16), int(c[3:5], 16), int(c[5:7], 16)


def gradient_color(t: float, style: ChartStyle) -> str:
    """Linear blue-to-red interpolation; t=0 and t=1 hit the exact endpoints."""
    t = min(1.0, max(0.0, float(t)))
    lo = _hex_to_rgb(style.gradient_low)
    hi = _hex_to_rgb(style.gradient_high)
    rgb = tuple(round(a + t * (b - a)) for a, b in zip(lo, hi))
    return "#%02x%02x%02x" % rgb


def _svg_open(style: ChartStyle, title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{style.width}" '
        f'height="{style.height}" viewBox="0 0 {style.width} {style.height}" '
        f'font-family="{escape(style.font_family, {chr(34): "&quot;"})}" '
        f'font-size="{style.font_size}">',
        f'<rect x="0" y="0" width="{style.width}" height="{style.height}" '
        f'fill="#ffffff"/>',
        f'<text x="{_fmt(style.width / 2)}" y="20" text-anchor="middle" '
        f'font-size="{style.font_size + 2}">{escape(title)}</text>',
    ]


def _text(x: float, y: float, s: str, anchor: str = "start",
          size: int | None = None, extra: str = "") -> str:
    attr = f' font-size="{size}"' if size is not None else ""
    return (f'<text x="{_fmt(x)}" y="{_fmt(y)}" text-anchor="{anchor}"'
            f'{attr}{extra}>{escape(s)}</text>')


def _span(lo: float, hi: float) -> tuple[float, float]:
    """Pad a data range; degenerate ranges get a fixed half-width."""
    if hi > lo:
        pad = 0.05 * (hi - lo)
        return lo - pad, hi + pad
    center = lo
    return center - 0.5, center + 0.5


class _Axis:
    def __init__(self, data_lo: float, data_hi: float, px_lo: float, px_hi: float):
        self.lo, self.hi = _span(data_lo, data_hi)
        self.px_lo, self.px_hi = px_lo, px_hi

    def __call__(self, v: float) -> float:
        t = (v - self.lo) / (self.hi - self.lo)
        return self.px_lo + t * (self.px_hi - self.px_lo)


def render_bar(ranking: list[tuple[str, float]], style: ChartStyle = ChartStyle()
               ) -> str:
    """Horizontal importance bars, most important on top."""
    if not ranking:
        raise EmptyInput("empty ranking")
    left = style.margin_left
    right = style.width - style.margin_right
    top = style.margin_top
    bottom = style.height - style.margin_bottom
    vmax = max(v for _, v in ranking)
    axis = _Axis(0.0, vmax if vmax > 0 else 1.0, left, right)
    row_h = (bottom - top) / len(ranking)
    bar_h = max(2.0, row_h * 0.65)

    parts = _svg_open(style, "Mean absolute attribution by channel")
    for idx, (name, val) in enumerate(ranking):
        y = top + idx * row_h + (row_h - bar_h) / 2
        parts.append(
            f'<rect class="bar" x="{_fmt(left)}" y="{_fmt(y)}" '
            f'width="{_fmt(max(0.0, axis(val) - left))}" height="{_fmt(bar_h)}" '
            f'fill="{style.positive_color}"/>'
        )
        parts.append(_text(left - 6, y + bar_h / 2 + 4, name, anchor="end",
                           size=style.font_size - 2))
        parts.append(_text(axis(val) + 4, y + bar_h / 2 + 4, _fmt(val),
                           size=style.font_size - 3))
    parts.append(
        f'<line x1="{_fmt(left)}" y1="{_fmt(bottom)}" x2="{_fmt(right)}" '
        f'y2="{_fmt(bottom)}" stroke="#333333"/>'
    )
    parts.append(_text((left + right) / 2, bottom + 30, "mean(|SHAP value|)",
                       anchor="middle"))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_beeswarm(clouds: list[FeatureCloud], style: ChartStyle = ChartStyle()
                    ) -> str:
    """One row per feature, one colored circle per explanation point."""
    if not clouds:
        raise EmptyInput("no beeswarm features")
    left = style.margin_left
    right = style.width - style.margin_right
    top = style.margin_top
    bottom = style.height - style.margin_bottom
    all_phi = np.concatenate([c.phi for c in clouds])
    axis = _Axis(float(all_phi.min()), float(all_phi.max()), left, right)
    row_h = (bottom - top) / len(clouds)
    step = min(4.0, row_h * 0.3)

    parts = _svg_open(style, "Attribution summary by channel")
    zero_x = axis(0.0)
    parts.append(
        f'<line class="zero" x1="{_fmt(zero_x)}" y1="{_fmt(top)}" '
        f'x2="{_fmt(zero_x)}" y2="{_fmt(bottom)}" stroke="#999999" '
        f'stroke-dasharray="3,3"/>'
    )
    for idx, cloud in enumerate(clouds):
        cy0 = top + (idx + 0.5) * row_h
        parts.append(_text(left - 6, cy0 + 4, cloud.name, anchor="end",
                           size=style.font_size - 2))
        for i in range(len(cloud.phi)):
            parts.append(
                f'<circle class="pt" cx="{_fmt(axis(float(cloud.phi[i])))}" '
                f'cy="{_fmt(cy0 + float(cloud.offset[i]) * step)}" r="3" '
                f'fill="{gradient_color(float(cloud.color[i]), style)}"/>'
            )
    parts.append(_text((left + right) / 2, bottom + 30, "SHAP value",
                       anchor="middle"))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_dependence(dd: DependenceData, style: ChartStyle = ChartStyle()) -> str:
    """Scatter of one channel's value against its attribution."""
    if len(dd.x) == 0:
        raise EmptyInput("no dependence points")
    left = style.margin_left
    right = style.width - style.margin_right
    top = style.margin_top
    bottom = style.height - style.margin_bottom
    xaxis = _Axis(float(dd.x.min()), float(dd.x.max()), left, right)
    yaxis = _Axis(float(dd.phi.min()), float(dd.phi.max()), bottom, top)
    c_lo, c_hi = float(dd.color.min()), float(dd.color.max())
    c_span = (c_hi - c_lo) if c_hi > c_lo else 1.0

    parts = _svg_open(style, f"Attribution dependence: {dd.feature}")
    parts.append(
        f'<line x1="{_fmt(left)}" y1="{_fmt(bottom)}" x2="{_fmt(right)}" '
        f'y2="{_fmt(bottom)}" stroke="#333333"/>'
    )
    parts.append(
        f'<line x1="{_fmt(left)}" y1="{_fmt(top)}" x2="{_fmt(left)}" '
        f'y2="{_fmt(bottom)}" stroke="#333333"/>'
    )
    for i in range(len(dd.x)):
        t = (float(dd.color[i]) - c_lo) / c_span
        parts.append(
            f'<circle class="pt" cx="{_fmt(xaxis(float(dd.x[i])))}" '
            f'cy="{_fmt(yaxis(float(dd.phi[i])))}" r="3" '
            f'fill="{gradient_color(t, style)}"/>'
        )
    parts.append(_text((left + right) / 2, bottom + 30, dd.feature,
                       anchor="middle"))
    parts.append(_text(18, (top + bottom) / 2,
                       f"SHAP value for {dd.feature}", anchor="middle",
                       extra=f' transform="rotate(-90 18 {_fmt((top + bottom) / 2)})"'))
    legend = f"color: {dd.interaction}"
    if dd.undefined_correlation:
        legend += " (no correlation defined)"
    parts.append(_text(right, top - 8, legend, anchor="end",
                       size=style.font_size - 2))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _arrow(x0: float, x1: float, y0: float, y1: float, fill: str,
           cls: str, point_right: bool) -> str:
    head = min(7.0, abs(x1 - x0))
    ym = (y0 + y1) / 2
    if point_right:
        pts = [(x0, y0), (x1 - head, y0), (x1, ym), (x1 - head, y1), (x0, y1)]
    else:
        pts = [(x1, y0), (x0 + head, y0), (x0, ym), (x0 + head, y1), (x1, y1)]
    path = " ".join(f"{_fmt(px)},{_fmt(py)}" for px, py in pts)
    return f'<polygon class="{cls}" points="{path}" fill="{fill}"/>'


def render_force(fs: ForceSegments, style: ChartStyle = ChartStyle()) -> str:
    """Signed pushes from the base value to the explained score.

    Positive (red) segments push rightward toward fx and sit to its left;
    negative (blue) segments push leftward toward fx from its right. Larger
    magnitudes sit closer to fx.
    """
    left = style.margin_left
    right = style.width - style.margin_right
    band_y = style.height * 0.45
    band_h = 26.0
    total_pos = sum(p for _, p, _ in fs.positive)
    total_neg = sum(-p for _, p, _ in fs.negative)
    axis = _Axis(fs.fx - total_pos, fs.fx + total_neg, left, right)

    parts = _svg_open(style, "Score decomposition")
    parts.append(
        f'<line x1="{_fmt(left)}" y1="{_fmt(band_y + band_h / 2)}" '
        f'x2="{_fmt(right)}" y2="{_fmt(band_y + band_h / 2)}" stroke="#cccccc"/>'
    )

    label_rows: list[tuple[str, str]] = []
    edge = fs.fx
    for name, phi, summary in fs.positive:
        x1 = axis(edge)
        x0 = axis(edge - phi)
        parts.append(_arrow(x0, x1, band_y, band_y + band_h,
                            style.positive_color, "seg-pos", point_right=True))
        label_rows.append((style.positive_color, f"{name} = {_fmt(summary)}"))
        edge -= phi
    edge = fs.fx
    for name, phi, summary in fs.negative:
        x0 = axis(edge)
        x1 = axis(edge - phi)  # phi < 0, so this extends rightward
        parts.append(_arrow(x0, x1, band_y, band_y + band_h,
                            style.negative_color, "seg-neg", point_right=False))
        label_rows.append((style.negative_color, f"{name} = {_fmt(summary)}"))
        edge -= phi

    bx = axis(fs.base)
    parts.append(
        f'<line x1="{_fmt(bx)}" y1="{_fmt(band_y - 18)}" x2="{_fmt(bx)}" '
        f'y2="{_fmt(band_y + band_h + 6)}" stroke="#555555" '
        f'stroke-dasharray="4,2"/>'
    )
    parts.append(_text(bx, band_y - 24, f"base value = {_fmt(fs.base)}",
                       anchor="middle", size=style.font_size - 2))
    fxx = axis(fs.fx)
    parts.append(
        f'<line x1="{_fmt(fxx)}" y1="{_fmt(band_y - 6)}" x2="{_fmt(fxx)}" '
        f'y2="{_fmt(band_y + band_h + 18)}" stroke="#000000"/>'
    )
    parts.append(_text(fxx, band_y + band_h + 32, f"score = {_fmt(fs.fx)}",
                       anchor="middle", size=style.font_size - 2))

    ly = band_y + band_h + 52
    for color, row in label_rows:
        parts.append(f'<circle cx="{_fmt(left + 4)}" cy="{_fmt(ly - 4)}" r="4" '
                     f'fill="{color}"/>')
        parts.append(_text(left + 14, ly, row, size=style.font_size - 2))
        ly += 16
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
