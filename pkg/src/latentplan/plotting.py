"""Dependency-free SVG figures: plan fans, the PCA variance curve and component weights."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 480
MARGIN = 56


class _Frame:
    """Maps a data rectangle onto the drawable area of the canvas."""

    def __init__(self, x_range, y_range, equal_aspect: bool = False):
        (x0, x1), (y0, y1) = x_range, y_range
        if x1 <= x0:
            x0, x1 = x0 - 1.0, x1 + 1.0
        if y1 <= y0:
            y0, y1 = y0 - 1.0, y1 + 1.0
        w, h = WIDTH - 2 * MARGIN, HEIGHT - 2 * MARGIN
        sx, sy = w / (x1 - x0), h / (y1 - y0)
        if equal_aspect:
            sx = sy = min(sx, sy)
            # centre the data in whichever direction has slack
            x0 -= (w / sx - (x1 - x0)) / 2
            y0 -= (h / sy - (y1 - y0)) / 2
        self.x0, self.y0, self.sx, self.sy = x0, y0, sx, sy

    def px(self, x) -> np.ndarray:
        return MARGIN + (np.asarray(x, dtype=float) - self.x0) * self.sx

    def py(self, y) -> np.ndarray:
        return HEIGHT - MARGIN - (np.asarray(y, dtype=float) - self.y0) * self.sy


def _polyline(frame: _Frame, pts: np.ndarray, **style) -> str:
    coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(frame.px(pts[:, 0]), frame.py(pts[:, 1])))
    return f'<polyline points="{coords}" fill="none" {_attrs(style)}/>'


def _attrs(style: dict) -> str:
    return " ".join(f'{k.replace("_", "-")}="{v}"' for k, v in style.items())


def _text(x: float, y: float, s: str, **style) -> str:
    style = {"font_family": "sans-serif", "font_size": "12", **style}
    return f'<text x="{x:.2f}" y="{y:.2f}" {_attrs(style)}>{escape(s)}</text>'


def _document(title: str, body: list[str]) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">')
    parts = [head, f"<title>{escape(title)}</title>", f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
             _text(WIDTH / 2, 24, title, text_anchor="middle", font_size="15")]
    return "\n".join(parts + body + ["</svg>"]) + "\n"


def _axes(frame: _Frame, x_ticks, y_ticks, x_label: str, y_label: str, fmt: str = "{:g}") -> list[str]:
    left, bottom = MARGIN, HEIGHT - MARGIN
    out = [f'<line x1="{left}" y1="{bottom}" x2="{WIDTH - MARGIN}" y2="{bottom}" stroke="black"/>',
           f'<line x1="{left}" y1="{MARGIN}" x2="{left}" y2="{bottom}" stroke="black"/>']
    for t in x_ticks:
        x = float(frame.px(t))
        out.append(f'<line x1="{x:.2f}" y1="{bottom}" x2="{x:.2f}" y2="{bottom + 4}" stroke="black"/>')
        out.append(_text(x, bottom + 17, fmt.format(t), text_anchor="middle"))
    for t in y_ticks:
        y = float(frame.py(t))
        out.append(f'<line x1="{left - 4}" y1="{y:.2f}" x2="{left}" y2="{y:.2f}" stroke="black"/>')
        out.append(_text(left - 7, y + 4, fmt.format(t), text_anchor="end"))
    out.append(_text(WIDTH / 2, HEIGHT - 14, x_label, text_anchor="middle"))
    out.append(_text(16, HEIGHT / 2, y_label, text_anchor="middle", transform=f"rotate(-90 16 {HEIGHT / 2})"))
    return out


def _write(svg: str, path: str | Path | None) -> str:
    if path is not None:
        Path(path).write_text(svg, encoding="utf-8")
    return svg


def trajectory_fan_svg(
    plans: np.ndarray,
    ground_truth: np.ndarray | None = None,
    map_polylines: Sequence[np.ndarray] = (),
    goal: np.ndarray | None = None,
    history: np.ndarray | None = None,
    title: str = "Sampled plans",
    path: str | Path | None = None,
) -> str:
    """K sampled plans over the map, with ground truth, goal waypoints and ego history.

    Args:
        plans: ``(K, H, 2)`` trajectories in metres, ego frame.
        ground_truth: optional ``(H, 2)`` expert future.
        map_polylines: lane boundaries, each ``(P, 2)``.
        goal: optional ``(G, 2)`` goal waypoints.
        history: optional ``(T, 2)`` past ego positions.
        title: figure title.
        path: if given, the SVG is also written there.

    Returns:
        The SVG document as a string.
    """
    plans = np.asarray(plans, dtype=float)
    layers = [plans.reshape(-1, 2)]
    for extra in (ground_truth, goal, history):
        if extra is not None and len(extra):
            layers.append(np.asarray(extra, dtype=float).reshape(-1, 2))
    pts = np.concatenate(layers)
    pad = 3.0
    frame = _Frame((pts[:, 0].min() - pad, pts[:, 0].max() + pad), (pts[:, 1].min() - pad, pts[:, 1].max() + pad),
                   equal_aspect=True)
    body = ['<g id="map">']
    body += [_polyline(frame, np.asarray(p, dtype=float), stroke="#b0b0b0", stroke_width="1.5") for p in map_polylines]
    body.append("</g>")
    body.append('<g id="plans">')
    body += [_polyline(frame, p, stroke="#1f77b4", stroke_width="1.2", stroke_opacity="0.45") for p in plans]
    body.append("</g>")
    if history is not None:
        body.append(_polyline(frame, np.asarray(history, dtype=float), stroke="#555555", stroke_width="2",
                              stroke_dasharray="4 3", id="history"))
    if ground_truth is not None:
        body.append(_polyline(frame, np.asarray(ground_truth, dtype=float), stroke="black", stroke_width="2.2",
                              id="ground-truth"))
    if goal is not None and len(goal):
        body.append('<g id="goal">')
        g = np.asarray(goal, dtype=float)
        body += [f'<circle cx="{x:.2f}" cy="{y:.2f}" r="4" fill="#d62728"/>'
                 for x, y in zip(frame.px(g[:, 0]), frame.py(g[:, 1]))]
        body.append("</g>")
    body.append(_text(MARGIN, HEIGHT - 14, f"K={len(plans)} plans; black: ground truth; red: goal", fill="#333333"))
    return _write(_document(title, body), path)


def variance_curve_svg(
    rows: Sequence[dict], marker_k: int = 16, title: str = "Cumulative explained variance",
    path: str | Path | None = None,
) -> str:
    """Cumulative explained-variance ratio against the number of components, marking ``marker_k``."""
    ks = np.array([r["k"] for r in rows], dtype=float)
    ratios = np.array([r["cum_variance_ratio"] for r in rows], dtype=float)
    lo = float(min(ratios.min(), 0.9))
    frame = _Frame((0.0, max(ks.max(), marker_k) + 1), (lo, 1.0))
    y_ticks = np.linspace(lo, 1.0, 5)
    x_ticks = [k for k in range(0, int(ks.max()) + 2, max(1, int(ks.max()) // 8))]
    body = _axes(frame, x_ticks, [], "number of components k", "cumulative variance ratio")
    for t in y_ticks:
        y = float(frame.py(t))
        body.append(f'<line x1="{MARGIN - 4}" y1="{y:.2f}" x2="{MARGIN}" y2="{y:.2f}" stroke="black"/>')
        body.append(_text(MARGIN - 7, y + 4, f"{t:.3f}", text_anchor="end"))
    body.append(_polyline(frame, np.stack([ks, ratios], axis=1), stroke="#1f77b4", stroke_width="2", id="curve"))
    body += [f'<circle cx="{x:.2f}" cy="{y:.2f}" r="2.5" fill="#1f77b4"/>'
             for x, y in zip(frame.px(ks), frame.py(ratios))]
    x = float(frame.px(marker_k))
    hit = ratios[ks == marker_k]
    label = f"k={marker_k}" + (f": {hit[0]:.5f}" if hit.size else "")
    body.append(f'<line id="k{marker_k}-marker" x1="{x:.2f}" y1="{MARGIN}" x2="{x:.2f}" y2="{HEIGHT - MARGIN}" '
                f'stroke="#d62728" stroke-dasharray="5 4"/>')
    body.append(_text(x + 5, MARGIN + 14, label, fill="#d62728"))
    return _write(_document(title, body), path)


def component_weights_svg(
    indices: Sequence[int], weights: Sequence[float], title: str = "Latent component weights",
    path: str | Path | None = None,
) -> str:
    """Bar chart of one trajectory's weight on each principal component."""
    idx = np.asarray(indices, dtype=int)
    w = np.asarray(weights, dtype=float)
    span = max(float(np.abs(w).max()), 1e-9) * 1.1
    frame = _Frame((idx.min() - 0.5, idx.max() + 0.5), (-span, span))
    body = _axes(frame, list(idx), [-span / 1.1, 0.0, span / 1.1], "component", "weight", fmt="{:.3g}")
    zero = float(frame.py(0.0))
    body.append(f'<line x1="{MARGIN}" y1="{zero:.2f}" x2="{WIDTH - MARGIN}" y2="{zero:.2f}" stroke="#888888"/>')
    bar = 0.7 * frame.sx
    body.append('<g id="bars">')
    for i, v in zip(idx, w):
        x = float(frame.px(i)) - bar / 2
        top = float(frame.py(max(v, 0.0)))
        height = abs(float(frame.py(v)) - zero)
        colour = "#1f77b4" if v >= 0 else "#ff7f0e"
        body.append(f'<rect x="{x:.2f}" y="{top:.2f}" width="{bar:.2f}" height="{height:.2f}" fill="{colour}"/>')
    body.append("</g>")
    return _write(_document(title, body), path)
