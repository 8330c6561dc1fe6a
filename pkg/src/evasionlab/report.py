"""Artifact writers: result tables, frontier/dominance JSON, SVG plots.

Everything here is deterministic: fixed column orders, fixed float
formatting, no timestamps, so re-running a benchmark with the same seed
reproduces every output byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

CSV_COLUMNS = ("setting", "method", "success", "queries", "iterations")

_METHOD_COLORS = {
    "ENS": "#4c72b0",
    "PRISM": "#dd8452",
    "PRISM_R": "#55a868",
    "QO": "#c44e52",
}
_FALLBACK_COLOR = "#8172b3"

# qualitative palette for class heatmaps (10 classes)
_CLASS_COLORS = (
    "#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3",
    "#937860", "#da8bc3", "#8c8c8c", "#ccb974", "#64b5cd",
)


def method_color(method: str) -> str:
    return _METHOD_COLORS.get(method, _FALLBACK_COLOR)


def write_results_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in sorted(rows, key=lambda r: (r.method, r.setting_id)):
            w.writerow([
                r.setting_id, r.method,
                "true" if r.success else "false",
                r.queries, r.iterations,
            ])


def read_results_csv(path) -> list:
    from .bench import ResultRow

    out = []
    with open(path, newline="") as fh:
        for doc in csv.DictReader(fh):
            out.append(ResultRow(
                setting_id=int(doc["setting"]), method=doc["method"],
                success=doc["success"] == "true",
                queries=int(doc["queries"]),
                iterations=int(doc["iterations"]),
            ))
    return out


def write_frontier_json(frontier, path) -> None:
    doc = [
        {"setting": p.setting_id, "method": p.method, "q_star": p.q_star}
        for p in frontier
    ]
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def write_dominance_json(model, path, q_max: float = 100000.0) -> None:
    doc = {
        "methods": list(model.methods),
        "intercepts": [round(float(v), 12) for v in model.intercepts],
        "slopes": [round(float(v), 12) for v in model.slopes],
        "degenerate": model.degenerate,
        "iterations": model.iterations,
        "final_nll": round(model.nll_path[-1], 12) if model.nll_path else None,
        "regions": [
            {"method": m, "onset": round(q, 6)}
            for m, q in model.boundaries(q_max)
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


# ---------------------------------------------------------------------------
# SVG helpers (hand-rolled: static markup, no dependencies)

def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _svg_header(width: int, height: int) -> list:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]


def _text(x, y, s, size=11, anchor="start", rotate=None) -> str:
    t = (f'transform="rotate(-90 {_fmt(x)} {_fmt(y)})" ' if rotate else "")
    return (f'<text x="{_fmt(x)}" y="{_fmt(y)}" {t}font-family="sans-serif" '
            f'font-size="{size}" text-anchor="{anchor}">{s}</text>')


def write_pareto_svg(rows, frontier, path, title="per-setting query cost") -> None:
    """Sorted q* curves per method plus the dotted pareto frontier.

    x: settings ranked by that method's successful query count;
    y: queries on a log scale. Failed settings do not appear.
    """
    width, height = 640, 420
    left, right, top, bottom = 60, 20, 34, 46
    plot_w = width - left - right
    plot_h = height - top - bottom

    series = {}
    for r in rows:
        if r.success:
            series.setdefault(r.method, []).append(r.queries)
    for qs in series.values():
        qs.sort()
    front = sorted(p.q_star for p in frontier)

    q_max = 1.0
    n_max = 1
    for qs in list(series.values()) + ([front] if front else []):
        if qs:
            q_max = max(q_max, max(qs))
            n_max = max(n_max, len(qs))

    def xpos(rank: int) -> float:
        return left + plot_w * rank / max(1, n_max - 1)

    def ypos(q: float) -> float:
        lg = math.log10(max(q, 1.0)) / math.log10(max(q_max, 10.0))
        return top + plot_h * (1.0 - lg)

    parts = _svg_header(width, height)
    parts.append(_text(width / 2, 18, title, size=13, anchor="middle"))
    parts.append(
        f'<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" '
        'fill="none" stroke="#cccccc"/>'
    )
    decades = int(math.ceil(math.log10(max(q_max, 10.0)))) + 1
    for d in range(decades):
        q = 10 ** d
        if q > q_max * 1.01 and d > 0:
            break
        y = ypos(q)
        parts.append(
            f'<line x1="{left}" y1="{_fmt(y)}" x2="{width - right}" '
            f'y2="{_fmt(y)}" stroke="#eeeeee"/>'
        )
        parts.append(_text(left - 6, y + 4, f"1e{d}", anchor="end"))
    parts.append(_text(width / 2, height - 10, "settings solved (ranked)",
                       anchor="middle"))
    parts.append(_text(16, height / 2, "queries", anchor="middle", rotate=True))

    legend_y = top + 14
    for method in sorted(series):
        qs = series[method]
        color = method_color(method)
        pts = " ".join(
            f"{_fmt(xpos(i))},{_fmt(ypos(q))}" for i, q in enumerate(qs)
        )
        if len(qs) == 1:
            pts += f" {_fmt(xpos(0) + 2)},{_fmt(ypos(qs[0]))}"
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            'stroke-width="1.5"/>'
        )
        for i, q in enumerate(qs):
            parts.append(
                f'<circle cx="{_fmt(xpos(i))}" cy="{_fmt(ypos(q))}" r="2.4" '
                f'fill="{color}"/>'
            )
        parts.append(
            f'<rect x="{width - right - 150}" y="{legend_y - 9}" width="12" '
            f'height="4" fill="{color}"/>'
        )
        parts.append(_text(width - right - 132, legend_y - 3,
                           f"{method} ({len(qs)})"))
        legend_y += 16
    if front:
        pts = " ".join(
            f"{_fmt(xpos(i))},{_fmt(ypos(q))}" for i, q in enumerate(front)
        )
        if len(front) == 1:
            pts += f" {_fmt(xpos(0) + 2)},{_fmt(ypos(front[0]))}"
        parts.append(
            f'<polyline points="{pts}" fill="none" stroke="#222222" '
            'stroke-width="1.2" stroke-dasharray="4 3"/>'
        )
        parts.append(
            f'<rect x="{width - right - 150}" y="{legend_y - 9}" width="12" '
            'height="4" fill="#222222"/>'
        )
        parts.append(_text(width - right - 132, legend_y - 3, "frontier"))
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def write_scan_json(scan, path, metadata: dict | None = None) -> None:
    doc = {
        "u_values": [round(float(u), 9) for u in scan.u_values],
        "v_values": [round(float(v), 9) for v in scan.v_values],
        "classes": scan.classes.tolist(),
        "scores": [[round(float(s), 9) for s in row] for row in scan.scores],
        "start_cell": list(scan.start_cell),
        "adv_cell": list(scan.adv_cell),
        "goal_cell": list(scan.goal_cell),
        "degenerate": scan.degenerate,
    }
    if metadata:
        doc["metadata"] = metadata
    with open(path, "w") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def write_scan_svg(scan, path, title="decision plane") -> None:
    """Class heatmap of the scan grid with start/adv/goal markers."""
    nu, nv = scan.classes.shape
    cell = 6
    left, top = 50, 30
    width = left + nu * cell + 20
    height = top + nv * cell + 40
    parts = _svg_header(width, height)
    parts.append(_text(width / 2, 18, title, size=13, anchor="middle"))
    for i in range(nu):
        for j in range(nv):
            color = _CLASS_COLORS[int(scan.classes[i, j]) % len(_CLASS_COLORS)]
            # v grows upward: row j=0 sits at the bottom
            x = left + i * cell
            y = top + (nv - 1 - j) * cell
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                f'fill="{color}"/>'
            )

    def mark(cell_ij, label, shape):
        i, j = cell_ij
        cx = left + i * cell + cell / 2
        cy = top + (nv - 1 - j) * cell + cell / 2
        if shape == "circle":
            parts.append(
                f'<circle cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="4" fill="none" '
                'stroke="black" stroke-width="1.5"/>'
            )
        else:
            parts.append(
                f'<rect x="{_fmt(cx - 3.5)}" y="{_fmt(cy - 3.5)}" width="7" '
                'height="7" fill="none" stroke="black" stroke-width="1.5"/>'
            )
        parts.append(_text(cx + 6, cy + 4, label, size=10))

    mark(scan.goal_cell, "goal", "circle")
    mark(scan.start_cell, "start", "circle")
    mark(scan.adv_cell, "adv", "rect")
    parts.append(_text(left, height - 12,
                       f"u: {scan.u_values[0]:.2f}..{scan.u_values[-1]:.2f}  "
                       f"v: {scan.v_values[0]:.2f}..{scan.v_values[-1]:.2f}",
                       size=10))
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def write_report(rows, frontier, dominance, out_dir,
                 q_max: float = 100000.0) -> dict:
    """Emit the fixed-name artifact set; returns name -> path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "results.csv": out / "results.csv",
        "frontier.json": out / "frontier.json",
        "pareto.svg": out / "pareto.svg",
    }
    write_results_csv(rows, paths["results.csv"])
    write_frontier_json(frontier, paths["frontier.json"])
    write_pareto_svg(rows, frontier, paths["pareto.svg"])
    if dominance is not None:
        paths["dominance.json"] = out / "dominance.json"
        write_dominance_json(dominance, paths["dominance.json"], q_max=q_max)
    return {k: str(v) for k, v in paths.items()}
