"""Report serialisation: JSON, CSV, DOT and a small SVG scatter plot."""
from __future__ import annotations

import hashlib
import json
import os
from typing import Iterable

import numpy as np

from .enclosure import BoxGrid, _atomic_write

__all__ = ["to_jsonable", "dumps", "write_json", "write_text", "config_hash", "components_svg", "boxes_csv"]

VERDICT_COLOURS = {
    "Unordered": "#1f77b4",
    "StationaryParc": "#2ca02c",
    "ParcUnion": "#17becf",
    "Violation": "#d62728",
    "Skipped": "#7f7f7f",
}


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return repr(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> None:
    _atomic_write(path, dumps(obj))


def write_text(path, text: str) -> None:
    _atomic_write(path, text)


def config_hash(canonical_config: str, version: str) -> str:
    return hashlib.sha256(f"{canonical_config}\nversion={version}".encode()).hexdigest()


def boxes_csv(grid: BoxGrid, rows: Iterable[tuple[int, int, str]]) -> str:
    """One line per box: id, centre coordinates, component id, verdict."""
    rows = list(rows)
    head = ["box_id"] + [f"c{i}" for i in range(grid.dimension)] + ["component", "verdict"]
    out = [",".join(head)]
    if rows:
        ids = np.array([r[0] for r in rows], dtype=np.int64)
        C = grid.centers(ids)
        for (b, comp, verdict), c in zip(rows, C):
            out.append(",".join([str(int(b))] + [repr(float(v)) for v in c] + [str(comp), verdict]))
    return "\n".join(out) + "\n"


def components_svg(grid: BoxGrid, rows: Iterable[tuple[int, int, str]], size: int = 600, title: str = "") -> str:
    """Scatter of box centres (first two coordinates), coloured by verdict."""
    rows = list(rows)
    pad = 20
    lo, hi = grid.lower[:2], grid.upper[:2]
    if grid.dimension == 1:
        lo, hi = np.array([grid.lower[0], 0.0]), np.array([grid.upper[0], 1.0])
    scale = (size - 2 * pad) / (hi - lo)
    r = max(1.0, 0.5 * float(np.min(grid.widths[:2] * scale[:grid.dimension])))
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             f"<title>{title}</title>",
             f'<rect x="{pad}" y="{pad}" width="{size - 2 * pad}" height="{size - 2 * pad}" '
             'fill="none" stroke="#444"/>']
    if rows:
        ids = np.array([row[0] for row in rows], dtype=np.int64)
        C = grid.centers(ids)
        for (b, comp, verdict), c in zip(rows, C):
            y0 = c[1] if grid.dimension > 1 else 0.5
            px = pad + (c[0] - lo[0]) * scale[0]
            py = size - pad - (y0 - lo[1]) * scale[1]
            colour = VERDICT_COLOURS.get(verdict, "#000000")
            parts.append(f'<circle cx="{px:.3f}" cy="{py:.3f}" r="{r:.3f}" fill="{colour}" '
                         f'data-box="{int(b)}" data-component="{comp}"/>')
    y = pad + 14
    for verdict, colour in VERDICT_COLOURS.items():
        parts.append(f'<text x="{size - pad - 110}" y="{y}" font-size="11" fill="{colour}">{verdict}</text>')
        y += 14
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def ensure_dir(path) -> None:
    os.makedirs(path, exist_ok=True)
