"""Level-set grids and a dependency-light SVG contour overlay."""

from __future__ import annotations

from pathlib import Path
from typing import Callable

import contourpy
import numpy as np

SIG = 9


def fmt(v: float) -> str:
    return f"{v:.{SIG}g}"


def lattice(box: tuple[float, float, float, float], n: int) -> tuple[np.ndarray, np.ndarray]:
    x0, x1, y0, y1 = box
    return np.meshgrid(np.linspace(x0, x1, n), np.linspace(y0, y1, n), indexing="xy")


def eval_grid(fn: Callable[[np.ndarray], np.ndarray], box, n: int, dim: int = 2) -> tuple[np.ndarray, ...]:
    """Evaluate ``fn`` on an n x n lattice over the first two coordinates (others zero)."""
    gx, gy = lattice(box, n)
    pts = np.zeros((gx.size, dim))
    pts[:, 0] = gx.ravel()
    pts[:, 1] = gy.ravel()
    return gx, gy, np.asarray(fn(pts)).reshape(gx.shape)


def write_grid_csv(path: str | Path, gx, gy, values) -> int:
    rows = [f"{fmt(x)},{fmt(y)},{fmt(v)}\n" for x, y, v in zip(gx.ravel(), gy.ravel(), values.ravel())]
    Path(path).write_text("".join(rows))
    return len(rows)


def interior_levels(z: np.ndarray, n: int) -> np.ndarray:
    """``n`` levels between the minimum and the lowest boundary value, so bowls give closed curves."""
    edge = min(z[0].min(), z[-1].min(), z[:, 0].min(), z[:, -1].min())
    top = edge if edge > z.min() else z.max()
    return np.linspace(z.min(), top, n + 2)[1:-1]


def contour_lines(gx, gy, z, levels) -> list[tuple[float, list[np.ndarray]]]:
    gen = contourpy.contour_generator(gx, gy, z, line_type=contourpy.LineType.Separate)
    return [(float(lv), gen.lines(lv)) for lv in levels]


def _path(line: np.ndarray, to_px) -> str:
    pts = [to_px(p) for p in line]
    closed = len(line) > 2 and np.allclose(line[0], line[-1])
    if closed:
        pts = pts[:-1]
    d = "M" + " L".join(f"{fmt(x)},{fmt(y)}" for x, y in pts)
    return d + (" Z" if closed else "")


def write_svg(path: str | Path, box, layers: list[tuple[str, str, list]], size: int = 600) -> None:
    """``layers`` = [(id, colour, contour_lines(...)), ...]."""
    x0, x1, y0, y1 = box

    def to_px(p):
        return ((p[0] - x0) / (x1 - x0) * size, (y1 - p[1]) / (y1 - y0) * size)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
           f'viewBox="0 0 {size} {size}">\n',
           f'<rect width="{size}" height="{size}" fill="white"/>\n']
    for layer_id, colour, lines in layers:
        out.append(f'<g id="{layer_id}" fill="none" stroke="{colour}" stroke-width="1.2">\n')
        for level, segs in lines:
            for seg in segs:
                if len(seg) > 1:
                    out.append(f'<path data-level="{fmt(level)}" d="{_path(seg, to_px)}"/>\n')
        out.append("</g>\n")
    out.append("</svg>\n")
    Path(path).write_text("".join(out))
