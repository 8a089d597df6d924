"""Minimal SVG line and bar charts."""

from __future__ import annotations

from xml.sax.saxutils import escape

PALETTE = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"]

W, H = 640, 420
LEFT, RIGHT, TOP, BOTTOM = 60, 150, 40, 50


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / n
    return [lo + i * step for i in range(n + 1)]


class _Frame:
    def __init__(self, xlim, ylim):
        self.x0, self.x1 = xlim
        self.y0, self.y1 = ylim
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            self.y1 = self.y0 + 1.0

    def sx(self, x):
        return LEFT + (x - self.x0) / (self.x1 - self.x0) * (W - LEFT - RIGHT)

    def sy(self, y):
        return H - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (H - TOP - BOTTOM)


def _axes(frame, title, xlabel, ylabel, xticks=None):
    out = [
        f'<text x="{W / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<line x1="{LEFT}" y1="{H - BOTTOM}" x2="{W - RIGHT}" y2="{H - BOTTOM}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{H - BOTTOM}" stroke="black"/>',
        f'<text x="{(LEFT + W - RIGHT) / 2:.1f}" y="{H - 12}" text-anchor="middle" font-size="13">{escape(xlabel)}</text>',
        f'<text x="16" y="{(TOP + H - BOTTOM) / 2:.1f}" text-anchor="middle" font-size="13" '
        f'transform="rotate(-90 16 {(TOP + H - BOTTOM) / 2:.1f})">{escape(ylabel)}</text>',
    ]
    for v in xticks if xticks is not None else _ticks(frame.x0, frame.x1):
        x = frame.sx(v)
        out.append(f'<line x1="{x:.1f}" y1="{H - BOTTOM}" x2="{x:.1f}" y2="{H - BOTTOM + 5}" stroke="black"/>')
        out.append(f'<text x="{x:.1f}" y="{H - BOTTOM + 18}" text-anchor="middle" font-size="11">{v:g}</text>')
    for v in _ticks(frame.y0, frame.y1):
        y = frame.sy(v)
        out.append(f'<line x1="{LEFT - 5}" y1="{y:.1f}" x2="{LEFT}" y2="{y:.1f}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 8}" y="{y + 4:.1f}" text-anchor="end" font-size="11">{v:.3g}</text>')
    return out


def _legend(names, dashed_note=False):
    out = []
    for i, name in enumerate(names):
        y = TOP + 10 + 20 * i
        color = PALETTE[i % len(PALETTE)]
        out.append(f'<rect x="{W - RIGHT + 15}" y="{y - 9}" width="14" height="10" fill="{color}"/>')
        out.append(f'<text x="{W - RIGHT + 35}" y="{y}" font-size="12">{escape(str(name))}</text>')
    if dashed_note:
        y = TOP + 10 + 20 * len(names)
        out.append(
            f'<line x1="{W - RIGHT + 15}" y1="{y - 4}" x2="{W - RIGHT + 29}" y2="{y - 4}" '
            'stroke="black" stroke-dasharray="4,3"/>'
        )
        out.append(f'<text x="{W - RIGHT + 35}" y="{y}" font-size="12">95% interval</text>')
    return out


def _polyline(frame, xs, ys, color, dashed=False):
    pts = " ".join(f"{frame.sx(x):.1f},{frame.sy(y):.1f}" for x, y in zip(xs, ys))
    dash = ' stroke-dasharray="5,4"' if dashed else ""
    return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.8"{dash}/>'


def _document(body):
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">\n'
        '<rect width="100%" height="100%" fill="white"/>\n' + "\n".join(body) + "\n</svg>\n"
    )


def interval_chart(series, title="", xlabel="", ylabel="", reference=None, ylim=(0.0, 1.0)):
    """Solid median line plus dashed interval bounds for each series.

    ``series`` is a list of ``(name, x, median, lower, upper)`` tuples.
    """
    xs = [x for s in series for x in s[1]] or [0.0, 1.0]
    frame = _Frame((min(xs), max(xs)), ylim)
    body = _axes(frame, title, xlabel, ylabel, xticks=sorted(set(xs)) if len(set(xs)) <= 10 else None)
    if reference is not None:
        y = frame.sy(reference)
        body.append(
            f'<line x1="{LEFT}" y1="{y:.1f}" x2="{W - RIGHT}" y2="{y:.1f}" stroke="#999" stroke-dasharray="2,2"/>'
        )
    for i, (name, x, med, lo, hi) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        if len(x) == 1:
            cx, cy = frame.sx(x[0]), frame.sy(med[0])
            body.append(f'<circle cx="{cx:.1f}" cy="{cy:.1f}" r="3" fill="{color}"/>')
            body.append(
                f'<line x1="{cx:.1f}" y1="{frame.sy(lo[0]):.1f}" x2="{cx:.1f}" y2="{frame.sy(hi[0]):.1f}" '
                f'stroke="{color}" stroke-dasharray="5,4"/>'
            )
            continue
        body.append(_polyline(frame, x, med, color))
        body.append(_polyline(frame, x, lo, color, dashed=True))
        body.append(_polyline(frame, x, hi, color, dashed=True))
    body += _legend([s[0] for s in series], dashed_note=True)
    return _document(body)


def bar_chart(series, title="", xlabel="", ylabel=""):
    """Grouped bars; ``series`` is a list of ``(name, categories, heights)``."""
    cats = sorted({c for s in series for c in s[1]}) or [0]
    top = max([h for s in series for h in s[2]] or [1.0])
    frame = _Frame((min(cats) - 0.5, max(cats) + 0.5), (0.0, top * 1.05 if top > 0 else 1.0))
    step = max(1, len(cats) // 12)
    body = _axes(frame, title, xlabel, ylabel, xticks=cats[::step])
    n = max(len(series), 1)
    width = (frame.sx(1) - frame.sx(0)) * 0.8 / n
    for i, (name, c, h) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        for cat, height in zip(c, h):
            x = frame.sx(cat) - 0.4 * (frame.sx(1) - frame.sx(0)) + i * width
            y = frame.sy(height)
            body.append(
                f'<rect x="{x:.1f}" y="{y:.1f}" width="{width:.1f}" height="{H - BOTTOM - y:.1f}" fill="{color}"/>'
            )
    body += _legend([s[0] for s in series])
    return _document(body)
