"""Item-respondent (Wright) maps.

A map puts everything on one logit axis: a histogram of respondent abilities
on the left, one lane per item with its two cumulative thresholds in the
middle (sorted by the upper threshold), and respondent labels on the right
with a dashed cut line at each ability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from html import escape
from typing import Optional, Sequence

from .errors import ValidationError
from .model import SOURCE_ORDER

GROUP_LABELS = {src: f"d{i + 1}" for i, src in enumerate(SOURCE_ORDER)}
AXIS_MARGIN = 0.25


@dataclass(frozen=True)
class ItemColumn:
    item_id: str
    source: Optional[str]
    gammas: tuple

    @property
    def upper(self) -> float:
        return self.gammas[-1]


@dataclass(frozen=True)
class MapOptions:
    bin_width: float = 0.25
    grouped: bool = False
    title: str = ""


@dataclass(frozen=True)
class WrightMapModel:
    axis: tuple
    item_columns: tuple
    respondent_marks: tuple  # (id, theta)
    cut_points: tuple
    histogram: tuple  # (low, high, count)
    bin_width: float
    groups: Optional[tuple] = None  # (label, source, (column indices))
    title: str = ""


def _item_id(item) -> str:
    return getattr(item, "label", None) or str(item)


def build_map(thresholds: Sequence, abilities: Sequence, options: MapOptions = MapOptions()) -> WrightMapModel:
    """Lay out one dimension's thresholds and abilities on a shared axis."""
    if not thresholds:
        raise ValidationError("map needs at least one item")
    if not abilities:
        raise ValidationError("map needs at least one respondent")
    cols = [
        ItemColumn(_item_id(t.item), getattr(t.item, "source", None), tuple(float(g) for g in t.gammas))
        for t in thresholds
    ]
    key = lambda c: (c.upper, c.item_id)  # noqa: E731
    groups = None
    if options.grouped:
        by_source = {}
        for c in cols:
            if c.source not in GROUP_LABELS:
                raise ValidationError(f"item {c.item_id}: unknown source {c.source!r} for grouped map")
            by_source.setdefault(c.source, []).append(c)
        ordered, groups = [], []
        for src in SOURCE_ORDER:
            members = sorted(by_source.get(src, []), key=key)
            if not members:
                continue
            start = len(ordered)
            ordered.extend(members)
            groups.append((GROUP_LABELS[src], src, tuple(range(start, len(ordered)))))
        cols, groups = ordered, tuple(groups)
    else:
        cols = sorted(cols, key=key)
    marks = tuple((a.respondent_id, float(a.theta)) for a in abilities)
    values = [g for c in cols for g in c.gammas] + [t for _, t in marks]
    axis = (min(values) - AXIS_MARGIN, max(values) + AXIS_MARGIN)
    bw = options.bin_width
    if not bw > 0:
        raise ValidationError("bin width must be positive")
    counts = {}
    for _, t in marks:
        b = math.floor(t / bw + 1e-9)
        counts[b] = counts.get(b, 0) + 1
    histogram = tuple((round(b * bw, 10), round((b + 1) * bw, 10), counts[b]) for b in sorted(counts))
    return WrightMapModel(
        axis=axis,
        item_columns=tuple(cols),
        respondent_marks=marks,
        cut_points=tuple(t for _, t in marks),
        histogram=histogram,
        bin_width=bw,
        groups=groups,
        title=options.title,
    )


# -- SVG -----------------------------------------------------------------------


@dataclass(frozen=True)
class SvgStyle:
    plot_height: float = 560.0
    top: float = 60.0
    bottom: float = 90.0
    axis_width: float = 56.0
    hist_width: float = 110.0
    lane_width: float = 16.0
    group_gap: float = 14.0
    label_slot: float = 190.0
    font_size: float = 11.0
    min_label_gap: float = 12.0


def _fmt(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


class AxisTransform:
    """Linear logit-to-pixel map; higher logits are higher on the page."""

    def __init__(self, axis: tuple, top: float, height: float):
        self.lo, self.hi = axis
        self.top = top
        self.height = height

    def y(self, v: float) -> float:
        return self.top + (self.hi - v) / (self.hi - self.lo) * self.height

    def value(self, y: float) -> float:
        return self.hi - (y - self.top) / self.height * (self.hi - self.lo)


def _lane_positions(model: WrightMapModel, x0: float, style: SvgStyle) -> list:
    xs = []
    x = x0 + style.lane_width / 2
    group_of = {}
    if model.groups:
        for g, (_, _, idx) in enumerate(model.groups):
            for i in idx:
                group_of[i] = g
    prev = None
    for i in range(len(model.item_columns)):
        g = group_of.get(i)
        if prev is not None and g != prev:
            x += style.group_gap
        xs.append(x)
        x += style.lane_width
        prev = g
    return xs


def _label_slots(marks, tr: AxisTransform, style: SvgStyle) -> list:
    """Horizontal slot per respondent so nearby labels never overprint."""
    order = sorted(range(len(marks)), key=lambda i: (-marks[i][1], marks[i][0]))
    last_y = []
    slots = [0] * len(marks)
    for i in order:
        y = tr.y(marks[i][1])
        for s, ly in enumerate(last_y):
            if y - ly >= style.min_label_gap:
                slots[i] = s
                last_y[s] = y
                break
        else:
            slots[i] = len(last_y)
            last_y.append(y)
    return slots


def render_svg(model: WrightMapModel, style: SvgStyle = SvgStyle()) -> str:
    tr = AxisTransform(model.axis, style.top, style.plot_height)
    axis_x = style.axis_width + style.hist_width
    lanes_x0 = axis_x + 12.0
    xs = _lane_positions(model, lanes_x0, style)
    lanes_end = (xs[-1] + style.lane_width / 2 if xs else lanes_x0) + 12.0
    slots = _label_slots(model.respondent_marks, tr, style)
    n_slots = max(slots) + 1 if slots else 1
    width = lanes_end + 20.0 + n_slots * style.label_slot
    height = style.top + style.plot_height + style.bottom
    fs = style.font_size
    out = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{_fmt(width)}" height="{_fmt(height)}" '
        f'viewBox="0 0 {_fmt(width)} {_fmt(height)}" font-family="Helvetica, Arial, sans-serif" font-size="{_fmt(fs)}">',
        f'<desc>axis {_fmt(model.axis[0])} {_fmt(model.axis[1])}; y = {_fmt(style.top)} + '
        f'({model.axis[1]:.10f} - logit) / {model.axis[1] - model.axis[0]:.10f} * {_fmt(style.plot_height)}</desc>',
        '<rect x="0" y="0" width="100%" height="100%" fill="#ffffff"/>',
    ]
    if model.title:
        out.append(f'<text x="{_fmt(width / 2)}" y="24" text-anchor="middle" font-size="{_fmt(fs + 4)}">{escape(model.title)}</text>')
    out.append(f'<text x="{_fmt(axis_x - style.hist_width / 2)}" y="{_fmt(style.top - 14)}" text-anchor="middle">Respondents</text>')
    out.append(f'<text x="{_fmt((lanes_x0 + lanes_end) / 2)}" y="{_fmt(style.top - 30)}" text-anchor="middle">Items (threshold 1 open, threshold 2 filled)</text>')
    # axis and ticks
    out.append(f'<line class="axis" x1="{_fmt(axis_x)}" y1="{_fmt(style.top)}" x2="{_fmt(axis_x)}" y2="{_fmt(style.top + style.plot_height)}" stroke="#000000"/>')
    lo, hi = model.axis
    step = 0.5 if hi - lo <= 6 else 1.0
    t = math.ceil(lo / step) * step
    while t <= hi + 1e-9:
        y = tr.y(t)
        out.append(f'<line x1="{_fmt(axis_x - 4)}" y1="{_fmt(y)}" x2="{_fmt(axis_x)}" y2="{_fmt(y)}" stroke="#000000"/>')
        out.append(f'<text x="{_fmt(style.axis_width - 6)}" y="{_fmt(y + fs / 3)}" text-anchor="end">{_fmt(t)}</text>')
        t += step
    out.append(f'<text transform="translate(14 {_fmt(style.top + style.plot_height / 2)}) rotate(-90)" text-anchor="middle">Logits</text>')
    # histogram
    top_count = max((c for _, _, c in model.histogram), default=1)
    for lo_b, hi_b, c in model.histogram:
        y1, y2 = tr.y(min(hi_b, hi)), tr.y(max(lo_b, lo))
        w = (style.hist_width - 10) * c / top_count
        out.append(
            f'<rect class="hist" x="{_fmt(axis_x - w)}" y="{_fmt(y1)}" width="{_fmt(w)}" height="{_fmt(max(y2 - y1, 0.5))}" '
            f'fill="#9fb6cd" stroke="#4a6a8a" stroke-width="0.5"/>'
        )
    # groups
    if model.groups:
        for label, src, idx in model.groups:
            gx0 = xs[idx[0]] - style.lane_width / 2
            gx1 = xs[idx[-1]] + style.lane_width / 2
            out.append(f'<text class="group" x="{_fmt((gx0 + gx1) / 2)}" y="{_fmt(style.top - 6)}" text-anchor="middle">{label}</text>')
            out.append(f'<rect x="{_fmt(gx0)}" y="{_fmt(style.top)}" width="{_fmt(gx1 - gx0)}" height="{_fmt(style.plot_height)}" fill="none" stroke="#bbbbbb"/>')
    # cut lines below the markers
    for (rid, theta), slot in zip(model.respondent_marks, slots):
        y = tr.y(theta)
        x_end = lanes_end + 16.0 + slot * style.label_slot
        out.append(f'<line class="cut" x1="{_fmt(lanes_x0)}" y1="{_fmt(y)}" x2="{_fmt(x_end)}" y2="{_fmt(y)}" stroke="#888888" stroke-dasharray="3 3"/>')
    # item lanes
    for x, col in zip(xs, model.item_columns):
        out.append(f'<line x1="{_fmt(x)}" y1="{_fmt(style.top)}" x2="{_fmt(x)}" y2="{_fmt(style.top + style.plot_height)}" stroke="#eeeeee"/>')
        for k, g in enumerate(col.gammas):
            filled = k == len(col.gammas) - 1
            out.append(
                f'<circle class="{"threshold2" if filled else "threshold1"}" data-item="{escape(col.item_id)}" cx="{_fmt(x)}" cy="{_fmt(tr.y(g))}" r="4" '
                + ('fill="#1f3b73" stroke="#1f3b73"' if filled else 'fill="#ffffff" stroke="#1f3b73"')
                + "/>"
            )
        ly = style.top + style.plot_height + 8
        out.append(f'<text class="item-label" transform="translate({_fmt(x + fs / 3)} {_fmt(ly)}) rotate(90)" font-size="{_fmt(fs - 2)}">{escape(col.item_id)}</text>')
    # respondent labels
    for (rid, theta), slot in zip(model.respondent_marks, slots):
        y = tr.y(theta)
        x = lanes_end + 20.0 + slot * style.label_slot
        out.append(
            f'<text class="respondent" data-theta="{theta!r}" x="{_fmt(x)}" y="{_fmt(y)}" dominant-baseline="middle">'
            f'{escape(rid)} ({theta:.2f})</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


# -- text ----------------------------------------------------------------------


def render_text(model: WrightMapModel, width: int = 100, band: float = 0.2) -> str:
    """Monospaced map, one row per ``band`` logits, highest row first.

    ``#`` marks threshold 2 (the upper threshold), ``-`` threshold 1, and
    ``.`` fills the item area along a respondent's cut line.
    """
    if width < 60:
        raise ValidationError("text map needs at least 60 columns")
    label_w, hist_w = 7, 8
    n = len(model.item_columns)
    seps = set()
    if model.groups:
        for g, (_, _, idx) in enumerate(model.groups):
            if g:
                seps.add(idx[0])
    item_w = n + len(seps)
    if label_w + hist_w + item_w + 2 + 8 > width:
        raise ValidationError(f"width {width} too small for {n} items")
    lo, hi = model.axis
    top = math.ceil(hi / band - 1e-9) * band
    n_rows = int(math.floor((top - lo) / band + 1e-9)) + 1

    def row_of(v):
        return min(max(int(math.floor((top - v) / band + 1e-9)), 0), n_rows - 1)

    hist = [0] * n_rows
    names = [[] for _ in range(n_rows)]
    for rid, theta in model.respondent_marks:
        r = row_of(theta)
        hist[r] += 1
        names[r].append(rid)
    grid = [[" "] * n for _ in range(n_rows)]
    for j, col in enumerate(model.item_columns):
        for k, g in enumerate(col.gammas):
            r = row_of(g)
            mark = "#" if k == len(col.gammas) - 1 else "-"
            if grid[r][j] != "#":
                grid[r][j] = mark
    lines = []
    if model.title:
        lines.append(model.title[:width])
    header = " " * label_w + "persons".rjust(hist_w) + "|" + "items".center(item_w)[:item_w] + "| respondents"
    lines.append(header[:width].rstrip())
    if model.groups:
        glabel = [" "] * item_w
        pos = 0
        for g, (label, _, idx) in enumerate(model.groups):
            if g:
                pos += 1
            for c, ch in enumerate(label[: len(idx)]):
                glabel[pos + c] = ch
            pos += len(idx)
        lines.append((" " * (label_w + hist_w) + "|" + "".join(glabel) + "|").rstrip())
    for r in range(n_rows):
        upper = top - r * band
        cells = []
        for j in range(n):
            if j in seps:
                cells.append(" ")
            ch = grid[r][j]
            if ch == " " and names[r]:
                ch = "."
            cells.append(ch)
        h = ("X" * hist[r])[:hist_w].rjust(hist_w)
        right = ", ".join(names[r])
        line = f"{upper:6.2f} " + h + "|" + "".join(cells) + "|" + (" " + right if right else "")
        if len(line) > width:
            line = line[: width - 1] + "~"
        lines.append(line.rstrip())
    lines.append("")
    lines.append("items, left to right:")
    for j, col in enumerate(model.item_columns):
        gam = " ".join(f"{g:+.2f}" for g in col.gammas)
        lines.append(f"{j + 1:3d} {col.item_id}  {gam}"[:width])
    return "\n".join(lines) + "\n"
