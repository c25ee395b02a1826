"""Rank-correlation analysis over fidelity grids and report export."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .records import EvalRecord


class AnalysisError(ValueError):
    pass


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """Fractional ranks, ties averaged (rank base 1)."""
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman_full(x: Sequence[float], y: Sequence[float]) -> tuple[float, bool]:
    """Spearman rho with average ranks for ties, plus a degeneracy flag.

    Zero rank variance on either side (all values tied) is defined as
    rho = 0 with the flag set.
    """
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    if xa.ndim != 1 or ya.ndim != 1:
        raise AnalysisError("inputs must be 1-D")
    if len(xa) != len(ya):
        raise AnalysisError(f"length mismatch: {len(xa)} vs {len(ya)}")
    if len(xa) < 2:
        raise AnalysisError("need at least 2 observations")
    if np.isnan(xa).any() or np.isnan(ya).any():
        raise AnalysisError("NaN inputs rejected")

    rx = _average_ranks(xa)
    ry = _average_ranks(ya)
    if np.array_equal(rx, ry):
        return 1.0, False
    if np.all(rx == rx[0]) or np.all(ry == ry[0]):
        return 0.0, True

    n = len(rx)
    has_ties = len(np.unique(rx)) != n or len(np.unique(ry)) != n
    if not has_ties:
        d = rx - ry
        return 1.0 - 6.0 * float(np.sum(d * d)) / (n * (n * n - 1)), False
    cx = rx - rx.mean()
    cy = ry - ry.mean()
    rho = float(np.sum(cx * cy) / math.sqrt(np.sum(cx * cx) * np.sum(cy * cy)))
    return max(-1.0, min(1.0, rho)), False


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    return spearman_full(x, y)[0]


def sentinelize(objectives: Sequence[float], config_ids: Sequence[int]) -> list[float]:
    """Replace +inf sentinels with distinct large values ordered by config id.

    Finite ties keep average-rank handling; ties among diverged runs break by
    id so rankings stay total.
    """
    finite = [v for v in objectives if math.isfinite(v)]
    base = (max(finite) if finite else 0.0) + 1.0
    diverged = sorted(cid for v, cid in zip(objectives, config_ids)
                      if not math.isfinite(v))
    offset = {cid: i for i, cid in enumerate(diverged)}
    out = []
    for v, cid in zip(objectives, config_ids):
        out.append(v if math.isfinite(v) else base + offset[cid])
    return out


@dataclass(frozen=True)
class RankLandscape:
    """Spearman rho per (layers level, data level) against a reference cell."""

    layer_levels: tuple[float, ...]
    data_levels: tuple[float, ...]
    rho: np.ndarray  # shape (len(layer_levels), len(data_levels))
    reference: tuple[float, float]  # (layers, data_fraction)
    n_configs: int
    n_seeds: int

    def cell(self, layers: float, data_fraction: float) -> float:
        i = self.layer_levels.index(layers)
        j = self.data_levels.index(data_fraction)
        return float(self.rho[i, j])

    def to_json(self) -> dict[str, Any]:
        return {
            "layer_levels": list(self.layer_levels),
            "data_levels": list(self.data_levels),
            "rho": [[float(v) for v in row] for row in self.rho],
            "reference": list(self.reference),
            "n_configs": self.n_configs,
            "n_seeds": self.n_seeds,
        }


def rank_landscape(records: Iterable[EvalRecord],
                   reference: tuple[float, float] | None = None) -> RankLandscape:
    """Build the rank-correlation landscape over the joint fidelity grid.

    Multi-seed objectives are averaged per (config, cell) before ranking;
    every config must appear at every cell for every seed.
    """
    by_cell: dict[tuple[float, float], dict[int, list[float]]] = {}
    seeds: set[int] = set()
    configs: set[int] = set()
    for rec in records:
        cell = (rec.fidelity["layers"], rec.fidelity["data_fraction"])
        by_cell.setdefault(cell, {}).setdefault(rec.config_id, []).append(rec.objective)
        seeds.add(rec.seed)
        configs.add(rec.config_id)
    if not by_cell:
        raise AnalysisError("no records given")

    layer_levels = tuple(sorted({c[0] for c in by_cell}))
    data_levels = tuple(sorted({c[1] for c in by_cell}))
    config_ids = sorted(configs)

    gaps = []
    for lv in layer_levels:
        for dv in data_levels:
            cell = by_cell.get((lv, dv), {})
            for cid in config_ids:
                if cid not in cell:
                    gaps.append((cid, lv, dv))
    if gaps:
        shown = ", ".join(f"(config {c}, layers {l}, data {d})" for c, l, d in gaps[:5])
        raise AnalysisError(
            f"missing (config, cell) pairs: {shown}"
            + (f" and {len(gaps) - 5} more" if len(gaps) > 5 else ""))

    def cell_vector(lv: float, dv: float) -> list[float]:
        cell = by_cell[(lv, dv)]
        means = [sum(cell[cid]) / len(cell[cid]) for cid in config_ids]
        return sentinelize(means, config_ids)

    if reference is None:
        reference = (layer_levels[-1], data_levels[-1])
    ref_vec = cell_vector(*reference)

    rho = np.zeros((len(layer_levels), len(data_levels)))
    for i, lv in enumerate(layer_levels):
        for j, dv in enumerate(data_levels):
            rho[i, j] = spearman(cell_vector(lv, dv), ref_vec)
    return RankLandscape(layer_levels=layer_levels, data_levels=data_levels,
                         rho=rho, reference=reference,
                         n_configs=len(config_ids), n_seeds=len(seeds))


def threshold_map(landscape: RankLandscape,
                  thresholds: Sequence[float]) -> dict[float, np.ndarray]:
    """One boolean mask per threshold: cell true iff rho >= threshold."""
    for t in thresholds:
        if not -1.0 < t <= 1.0:
            raise AnalysisError(f"threshold {t} outside (-1, 1]")
    return {float(t): landscape.rho >= t for t in thresholds}


# -- report export --------------------------------------------------------------

COMPARISON_COLUMNS = ["Data Level", "Configuration", "Rank Correlation",
                      "FLOPs", "Cost"]


def comparison_rows(traces: Mapping[str, Any],
                    landscape: RankLandscape | None) -> list[dict[str, Any]]:
    """Table rows comparing schedules at matched data levels.

    One block per data level reached by any trace, one row per schedule,
    cumulative FLOPs/wall seconds through that point of the run.
    """
    rows = []
    levels: list[float] = sorted({
        rung.fidelity.get("data_fraction", 1.0)
        for trace in traces.values() for rung in trace.rungs
    })
    for level in levels:
        for mode in sorted(traces):
            trace = traces[mode]
            cum_flops = 0
            cum_wall_ms = 0.0
            hit = None
            for rung in trace.rungs:
                cum_flops += sum(r.cost.flops for r in rung.results)
                cum_wall_ms += sum(r.cost.wall_ms for r in rung.results)
                if rung.fidelity.get("data_fraction", 1.0) == level:
                    hit = rung
                    break
            if hit is None:
                continue
            z = hit.fidelity.get("layers")
            rho = ""
            if landscape is not None and z is not None:
                try:
                    rho = round(landscape.cell(z, level), 4)
                except ValueError:
                    rho = ""
            rows.append({
                "Data Level": level,
                "Configuration": f"layers {int(z) if z else '?'} ({mode} SH)",
                "Rank Correlation": rho,
                "FLOPs": cum_flops,
                "Cost": round(cum_wall_ms / 1e3, 6),
            })
    return rows


def write_comparison_csv(path: Path, rows: list[dict[str, Any]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COMPARISON_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def write_landscape_csv(path: Path, landscape: RankLandscape) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layers\\data"] + [str(d) for d in landscape.data_levels])
        for i, lv in enumerate(landscape.layer_levels):
            writer.writerow([lv] + [f"{landscape.rho[i, j]:.6f}"
                                    for j in range(len(landscape.data_levels))])


def _ramp(value: float) -> str:
    """Diverging blue-white-red ramp over [-1, 1]."""
    v = max(-1.0, min(1.0, value))
    if v >= 0:
        r, g, b = 255, int(255 * (1 - v)), int(255 * (1 - v))
    else:
        r, g, b = int(255 * (1 + v)), int(255 * (1 + v)), 255
    return f"#{r:02x}{g:02x}{b:02x}"


def landscape_svg(landscape: RankLandscape, title: str = "rank correlation",
                  cell_px: int = 56) -> str:
    """Self-contained SVG heatmap; no plotting dependency."""
    rows = len(landscape.layer_levels)
    cols = len(landscape.data_levels)
    margin_left, margin_top = 90, 50
    width = margin_left + cols * cell_px + 20
    height = margin_top + rows * cell_px + 40
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{margin_left}" y="24" font-family="monospace" font-size="14">{title}</text>',
    ]
    for i in range(rows):
        # largest fidelity on top
        lv = landscape.layer_levels[rows - 1 - i]
        y = margin_top + i * cell_px
        parts.append(
            f'<text x="{margin_left - 8}" y="{y + cell_px / 2 + 4}" text-anchor="end" '
            f'font-family="monospace" font-size="11">layers {lv:g}</text>')
        for j in range(cols):
            x = margin_left + j * cell_px
            val = float(landscape.rho[rows - 1 - i, j])
            parts.append(
                f'<rect x="{x}" y="{y}" width="{cell_px}" height="{cell_px}" '
                f'fill="{_ramp(val)}" stroke="#888"/>')
            parts.append(
                f'<text x="{x + cell_px / 2}" y="{y + cell_px / 2 + 4}" text-anchor="middle" '
                f'font-family="monospace" font-size="11">{val:.2f}</text>')
    for j, dv in enumerate(landscape.data_levels):
        x = margin_left + j * cell_px
        parts.append(
            f'<text x="{x + cell_px / 2}" y="{height - 14}" text-anchor="middle" '
            f'font-family="monospace" font-size="11">{dv:g}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def export_report(outdir: str | Path, traces: Mapping[str, Any] | None = None,
                  landscapes: Mapping[str, RankLandscape] | None = None,
                  summary_extra: Mapping[str, Any] | None = None) -> list[Path]:
    """Write comparison CSV, landscape CSVs, SVG heatmaps, and a JSON summary."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    traces = traces or {}
    landscapes = landscapes or {}

    main_landscape = next(iter(landscapes.values()), None)
    rows = comparison_rows(traces, main_landscape)
    comparison = outdir / "schedule_comparison.csv"
    write_comparison_csv(comparison, rows)
    written.append(comparison)

    for name, ls in landscapes.items():
        csv_path = outdir / f"landscape_{name}.csv"
        write_landscape_csv(csv_path, ls)
        written.append(csv_path)
        svg_path = outdir / f"landscape_{name}.svg"
        svg_path.write_text(landscape_svg(ls, title=f"rank correlation ({name})"))
        written.append(svg_path)

    summary: dict[str, Any] = {
        "traces": {
            name: {
                "winner": trace.winner.to_json() if trace.winner else None,
                "rungs": [
                    {
                        "level": r.level,
                        "fidelity": dict(r.fidelity),
                        "survivors": list(r.survivors),
                        "flops": sum(e.cost.flops for e in r.results),
                        "wall_ms": sum(e.cost.wall_ms for e in r.results),
                    }
                    for r in trace.rungs
                ],
            }
            for name, trace in traces.items()
        },
        "landscapes": {name: ls.to_json() for name, ls in landscapes.items()},
    }
    if summary_extra:
        summary.update(summary_extra)
    summary_path = outdir / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True))
    written.append(summary_path)
    return written
