"""Hand-written SVG output: phase portraits, time series and basin maps.

Coordinates are printed with a fixed number of decimals so that identical
inputs always give identical bytes.
"""
from __future__ import annotations

from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .errors import UnsupportedOperation

PALETTE = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c"]
DIVERGED_COLOR = "#222222"
UNRESOLVED_COLOR = "#ffffff"
MARGIN = 40


def _num(v: float) -> str:
    return f"{v:.3f}".rstrip("0").rstrip(".") if np.isfinite(v) else "0"


class _Canvas:
    def __init__(self, bounds, width: int, height: int):
        (x0, x1), (y0, y1) = bounds
        if x1 <= x0:
            x0, x1 = x0 - 1.0, x1 + 1.0
        if y1 <= y0:
            y0, y1 = y0 - 1.0, y1 + 1.0
        self.x0, self.x1, self.y0, self.y1 = x0, x1, y0, y1
        self.w, self.h = width, height
        self.parts: list[str] = []

    def sx(self, x):
        return MARGIN + (np.asarray(x) - self.x0) / (self.x1 - self.x0) * (self.w - 2 * MARGIN)

    def sy(self, y):
        return self.h - MARGIN - (np.asarray(y) - self.y0) / (self.y1 - self.y0) * (self.h - 2 * MARGIN)

    def add(self, s: str):
        self.parts.append(s)

    def axes(self, xlabel: str, ylabel: str, title: str = ""):
        l, r, t, b = MARGIN, self.w - MARGIN, MARGIN, self.h - MARGIN
        self.add(f'<rect x="{l}" y="{t}" width="{r - l}" height="{b - t}" fill="none" stroke="#000" stroke-width="1"/>')
        for frac in (0.0, 0.5, 1.0):
            xv = self.x0 + frac * (self.x1 - self.x0)
            yv = self.y0 + frac * (self.y1 - self.y0)
            px, py = _num(float(self.sx(xv))), _num(float(self.sy(yv)))
            self.add(f'<text x="{px}" y="{b + 14}" font-size="10" text-anchor="middle">{_num(xv)}</text>')
            self.add(f'<text x="{l - 4}" y="{py}" font-size="10" text-anchor="end">{_num(yv)}</text>')
        self.add(f'<text x="{self.w / 2:g}" y="{self.h - 6}" font-size="12" text-anchor="middle">{escape(xlabel)}</text>')
        self.add(f'<text x="12" y="{self.h / 2:g}" font-size="12" text-anchor="middle" '
                 f'transform="rotate(-90 12 {self.h / 2:g})">{escape(ylabel)}</text>')
        if title:
            self.add(f'<text x="{self.w / 2:g}" y="20" font-size="13" text-anchor="middle">{escape(title)}</text>')

    def polyline(self, xs, ys, color: str, width: float = 1.2):
        px, py = self.sx(xs), self.sy(ys)
        pts = " ".join(f"{_num(a)},{_num(b)}" for a, b in zip(px, py))
        self.add(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width:g}"/>')

    def render(self) -> str:
        head = (f'<?xml version="1.0" encoding="UTF-8"?>\n'
                f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w}" height="{self.h}" '
                f'viewBox="0 0 {self.w} {self.h}">\n'
                f'<rect width="{self.w}" height="{self.h}" fill="#fff"/>\n')
        return head + "\n".join(self.parts) + "\n</svg>\n"


def _states(tr) -> np.ndarray:
    return np.atleast_2d(np.asarray(getattr(tr, "states", tr), dtype=float))


def _projection(dim: int, projection: Optional[Sequence[int]]) -> tuple:
    if projection is not None:
        p = tuple(int(i) for i in projection)
        if len(p) != 2 or not all(0 <= i < dim for i in p):
            raise UnsupportedOperation(f"projection {p} invalid for dimension {dim}")
        return p
    if dim == 2:
        return (0, 1)
    if dim == 3:
        return (0, 2)
    raise UnsupportedOperation(f"phase plot of a {dim}-dimensional system needs a 2D projection")


def field_grid(system, box, n: int = 15, projection: Optional[Sequence[int]] = None, slice_point=None):
    """Sample the vector field on an n x n grid of the projected plane.

    For projected 3D systems the remaining coordinate is fixed at
    ``slice_point`` (default: box center).
    """
    B = np.asarray(box, dtype=float).reshape(system.dim, 2)
    i, j = _projection(system.dim, projection)
    base = B.mean(axis=1) if slice_point is None else np.asarray(slice_point, dtype=float)
    gx = np.linspace(B[i, 0], B[i, 1], n)
    gy = np.linspace(B[j, 0], B[j, 1], n)
    P = np.tile(base, (n * n, 1))
    P[:, i] = np.repeat(gx, n)
    P[:, j] = np.tile(gy, n)
    V = system.f(P)
    return P[:, [i, j]], V[:, [i, j]]


def render_phase_plot(trajectories: Sequence, vector_field_grid=None, basins=None, *, dim: Optional[int] = None,
                      projection: Optional[Sequence[int]] = None, bounds=None, title: str = "",
                      width: int = 480, height: int = 480) -> str:
    """Phase portrait: optional basin shading, field arrows (red), trajectories (blue)."""
    trajs = [_states(t) for t in trajectories]
    if dim is None:
        if trajs:
            dim = trajs[0].shape[1]
        elif basins is not None:
            dim = len(basins.axes)
        else:
            dim = 2
    i, j = _projection(dim, projection)
    if bounds is None:
        chunks = [t[:, [i, j]] for t in trajs]
        if vector_field_grid is not None:
            chunks.append(np.asarray(vector_field_grid[0], dtype=float))
        if basins is not None:
            chunks.append(np.array([[basins.axes[0][0], basins.axes[1][0]],
                                    [basins.axes[0][-1], basins.axes[1][-1]]]))
        allp = np.vstack(chunks) if chunks else np.array([[-1.0, -1.0], [1.0, 1.0]])
        allp = allp[np.all(np.isfinite(allp), axis=1)]
        bounds = ((allp[:, 0].min(), allp[:, 0].max()), (allp[:, 1].min(), allp[:, 1].max()))
    cv = _Canvas(bounds, width, height)
    if basins is not None:
        _basin_cells(cv, basins)
    if vector_field_grid is not None:
        P, V = (np.asarray(a, dtype=float) for a in vector_field_grid)
        span = min(cv.x1 - cv.x0, cv.y1 - cv.y0)
        spacing = span / max(2.0, np.sqrt(len(P)))
        for p, v in zip(P, V):
            nv = np.hypot(*v)
            if not np.isfinite(nv) or nv == 0:
                continue
            q = p + 0.8 * spacing * v / nv
            x1, y1, x2, y2 = cv.sx(p[0]), cv.sy(p[1]), cv.sx(q[0]), cv.sy(q[1])
            cv.add(f'<line x1="{_num(x1)}" y1="{_num(y1)}" x2="{_num(x2)}" y2="{_num(y2)}" '
                   f'stroke="#d62728" stroke-width="0.8"/>')
            cv.add(f'<circle cx="{_num(x2)}" cy="{_num(y2)}" r="1.3" fill="#d62728"/>')
    for t in trajs:
        t = t[np.all(np.isfinite(t), axis=1)]
        if len(t) > 4000:
            t = t[:: int(np.ceil(len(t) / 4000))]
        if len(t):
            cv.polyline(t[:, i], t[:, j], "#1f4e9c")
    cv.axes(f"x{i + 1}", f"x{j + 1}", title)
    return cv.render()


def render_time_series(trajectory, title: str = "", width: int = 480, height: int = 320) -> str:
    S = _states(trajectory)
    t = np.asarray(getattr(trajectory, "times", np.arange(len(S))), dtype=float)
    ok = np.all(np.isfinite(S), axis=1)
    bounds = ((t.min(), t.max()), (S[ok].min(), S[ok].max()))
    cv = _Canvas(bounds, width, height)
    for k in range(S.shape[1]):
        cv.polyline(t[ok], S[ok, k], PALETTE[k % len(PALETTE)])
    cv.axes("t", "x", title)
    return cv.render()


def _label_color(lab: int) -> str:
    if lab == -2:
        return DIVERGED_COLOR
    if lab < 0:
        return UNRESOLVED_COLOR
    return PALETTE[lab % len(PALETTE)]


def _cell_edges(axis: np.ndarray) -> np.ndarray:
    a = np.asarray(axis, dtype=float)
    if len(a) == 1:
        return np.array([a[0] - 0.5, a[0] + 0.5])
    mid = 0.5 * (a[1:] + a[:-1])
    return np.concatenate([[a[0] - (mid[0] - a[0])], mid, [a[-1] + (a[-1] - mid[-1])]])


def _basin_cells(cv: _Canvas, basins):
    L = np.asarray(basins.labels)
    if L.ndim == 1:
        ex = _cell_edges(basins.axes[0])
        for k, lab in enumerate(L):
            x0, x1 = cv.sx(ex[k]), cv.sx(ex[k + 1])
            cv.add(f'<rect x="{_num(x0)}" y="{MARGIN}" width="{_num(x1 - x0)}" height="{cv.h - 2 * MARGIN}" '
                   f'fill="{_label_color(int(lab))}" stroke="none"/>')
        return
    if L.ndim != 2:
        raise UnsupportedOperation("basin shading supports 1D and 2D maps only")
    ex, ey = _cell_edges(basins.axes[0]), _cell_edges(basins.axes[1])
    for a in range(L.shape[0]):
        x0, x1 = cv.sx(ex[a]), cv.sx(ex[a + 1])
        for b in range(L.shape[1]):
            y0, y1 = cv.sy(ey[b + 1]), cv.sy(ey[b])
            cv.add(f'<rect x="{_num(x0)}" y="{_num(y0)}" width="{_num(x1 - x0)}" height="{_num(y1 - y0)}" '
                   f'fill="{_label_color(int(L[a, b]))}" fill-opacity="0.55" stroke="none"/>')


def render_basin_svg(basin_map, title: str = "", width: int = 480, height: int = 480) -> str:
    L = np.asarray(basin_map.labels)
    ex = _cell_edges(basin_map.axes[0])
    if L.ndim == 1:
        bounds = ((ex[0], ex[-1]), (0.0, 1.0))
        height = min(height, 160)
    elif L.ndim == 2:
        ey = _cell_edges(basin_map.axes[1])
        bounds = ((ex[0], ex[-1]), (ey[0], ey[-1]))
    else:
        raise UnsupportedOperation("basin maps above 2D cannot be drawn")
    cv = _Canvas(bounds, width, height)
    _basin_cells(cv, basin_map)
    cv.axes("x1", "x2" if L.ndim == 2 else "", title or basin_map.system_name)
    return cv.render()
