"""Dependency-free SVG scatter of normalized 2-D embeddings on the unit circle."""

from xml.sax.saxutils import escape

import numpy as np

from .losses import l2_normalize_rows

PALETTE = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728",
    "#9467bd", "#8c564b", "#e377c2", "#17becf",
]


def _f(v):
    return f"{v:.2f}"


def embedding_svg(embeddings, labels, report, title="", size=480, max_points_per_class=400):
    """Render points, class centers, the gap angle between consecutive
    centers and each class's std next to its center.

    ``report`` is the GeometryReport of the same embeddings. Output is a
    deterministic string (no randomness, fixed float formatting).
    """
    unit = l2_normalize_rows(embeddings)
    labels = np.asarray(labels)
    half = size / 2.0
    r = size * 0.36

    def xy(v, radius=r):
        # SVG y grows downward
        return half + radius * v[0], half - radius * v[1]

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<circle cx="{_f(half)}" cy="{_f(half)}" r="{_f(r)}" fill="none" stroke="#bbbbbb" stroke-width="1"/>',
    ]
    if title:
        out.append(f'<text x="{_f(half)}" y="18" font-size="14" text-anchor="middle" font-family="sans-serif">{escape(title)}</text>')
    for i, c in enumerate(report.labels):
        color = PALETTE[i % len(PALETTE)]
        pts = unit[labels == c]
        if len(pts) > max_points_per_class:
            pts = pts[np.linspace(0, len(pts) - 1, max_points_per_class).astype(int)]
        out.append(f'<g fill="{color}" fill-opacity="0.5">')
        for p in pts:
            x, y = xy(p)
            out.append(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="2"/>')
        out.append("</g>")
        cx, cy = xy(report.class_centers[i])
        ox, oy = xy(report.class_centers[i], 0.0)
        out.append(f'<line x1="{_f(ox)}" y1="{_f(oy)}" x2="{_f(cx)}" y2="{_f(cy)}" stroke="{color}" stroke-width="1.5"/>')
        tx, ty = xy(report.class_centers[i], r * 1.22)
        out.append(
            f'<text x="{_f(tx)}" y="{_f(ty)}" font-size="11" text-anchor="middle" font-family="sans-serif" '
            f'fill="{color}">{c}: std {report.per_class_std[i]:.4f}</text>'
        )
    # gap labels sit halfway between consecutive centers
    for i in range(len(report.labels)):
        phi = np.radians(report.polar_angles_deg[i] + report.consecutive_angles_deg[i] / 2.0)
        tx, ty = xy(np.array([np.cos(phi), np.sin(phi)]), r * 0.75)
        out.append(
            f'<text x="{_f(tx)}" y="{_f(ty)}" font-size="10" text-anchor="middle" font-family="sans-serif" '
            f'fill="#444444">{report.consecutive_angles_deg[i]:.1f}&#176;</text>'
        )
    out.append(
        f'<text x="{_f(half)}" y="{size - 10}" font-size="12" text-anchor="middle" font-family="sans-serif">'
        f"mean std {report.mean_std:.4f}, min angle {report.min_angle_deg:.1f}&#176;</text>"
    )
    out.append("</svg>")
    return "\n".join(out) + "\n"
