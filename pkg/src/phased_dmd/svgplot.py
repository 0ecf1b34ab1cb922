"""Bare-bones SVG line plot of 1D sampling trajectories (time runs left to right from 1 to 0)."""

from xml.sax.saxutils import escape

WIDTH, HEIGHT, MARGIN = 640, 420, 40


def trajectories_svg(traj, path, title="", y_range=None, dim=0):
    times = traj.times
    ys = traj.states[:, :, dim]
    lo, hi = y_range if y_range is not None else (float(ys.min()), float(ys.max()))
    if hi <= lo:
        hi = lo + 1.0

    def px(t):
        return MARGIN + (1.0 - t) * (WIDTH - 2 * MARGIN)

    def py(y):
        return HEIGHT - MARGIN - (y - lo) / (hi - lo) * (HEIGHT - 2 * MARGIN)

    xs = px(times)
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        '<rect width="100%" height="100%" fill="white"/>',
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<text x="{MARGIN}" y="{HEIGHT - 12}" font-size="12">t=1</text>',
        f'<text x="{WIDTH - MARGIN - 20}" y="{HEIGHT - 12}" font-size="12">t=0</text>',
        f'<text x="4" y="{MARGIN}" font-size="12">{hi:.2g}</text>',
        f'<text x="4" y="{HEIGHT - MARGIN}" font-size="12">{lo:.2g}</text>',
    ]
    if title:
        lines.append(f'<text x="{WIDTH / 2}" y="20" font-size="14" text-anchor="middle">{escape(title)}</text>')
    for i in range(ys.shape[1]):
        pts = " ".join(f"{x:.1f},{y:.1f}" for x, y in zip(xs, py(ys[:, i])))
        lines.append(f'<polyline points="{pts}" fill="none" stroke="steelblue" stroke-opacity="0.35" stroke-width="1"/>')
    lines.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return path
