"""Minimal SVG line plot for EDC curves (no plotting dependency)."""

from xml.sax.saxutils import escape

WIDTH, HEIGHT = 480, 360
MARGIN = 56


def _ticks(lo, hi, n=5):
    return [lo + (hi - lo) * i / n for i in range(n + 1)]


def polyline_svg(points, title="", xlabel="discard fraction", ylabel="FNMR", x_max=None, y_max=None):
    """Render ``[(x, y), ...]`` as an SVG document string.

    Axes start at 0; the upper limits default to the data range (at least 1e-9
    so that a flat zero curve still has a usable scale).
    """
    xs = [float(p[0]) for p in points]
    ys = [float(p[1]) for p in points]
    x_max = max(max(xs, default=0.0), 1e-9) if x_max is None else x_max
    y_max = max(max(ys, default=0.0), 1e-9) if y_max is None else y_max
    pw, ph = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN

    def sx(x):
        return MARGIN + pw * x / x_max

    def sy(y):
        return HEIGHT - MARGIN - ph * y / y_max

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
    ]
    for t in _ticks(0.0, x_max):
        out.append(f'<text x="{sx(t):.2f}" y="{HEIGHT - MARGIN + 16}" font-size="10" '
                   f'text-anchor="middle">{t:.3g}</text>')
    for t in _ticks(0.0, y_max):
        out.append(f'<text x="{MARGIN - 6}" y="{sy(t) + 3:.2f}" font-size="10" '
                   f'text-anchor="end">{t:.3g}</text>')
    out.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 14}" font-size="12" text-anchor="middle">'
               f'{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{HEIGHT / 2}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 16 {HEIGHT / 2})">{escape(ylabel)}</text>')
    if title:
        out.append(f'<text x="{WIDTH / 2}" y="{MARGIN / 2}" font-size="13" text-anchor="middle">'
                   f'{escape(title)}</text>')
    coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in zip(xs, ys))
    out.append(f'<polyline points="{coords}" fill="none" stroke="#1f4e9c" stroke-width="1.5"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_svg(path, points, **kw):
    with open(path, "w") as fh:
        fh.write(polyline_svg(points, **kw))
