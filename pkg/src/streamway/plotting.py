"""Static SVG renderings of a run directory.

Plots read only the files written by the pipeline, never the engine, so deleting
the plots and re-emitting them gives identical bytes.
"""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from .errors import MissingArtifact
from .flow import read_field_dump

KINDS = ("field", "corridors", "paths")
_KIND_COLORS = {"building": "#8c8c8c", "atm_no_fly": "#4a7bd0", "failed_uas": "#d04a4a"}
_SVG_META = {"Date": None, "Creator": "streamway"}


def _read_csv(path: Path) -> list[dict]:
    if not path.exists():
        raise MissingArtifact(f"missing {path}")
    with path.open(newline="") as fh:
        return list(csv.DictReader(fh))


def _meta(run_dir: Path) -> dict:
    p = run_dir / "run_meta.json"
    if not p.exists():
        raise MissingArtifact(f"missing {p}")
    return json.loads(p.read_text())


def _sections(run_dir: Path, rel: str) -> list[tuple[str, np.ndarray]]:
    polys: dict[tuple[str, str], list] = defaultdict(list)
    for row in _read_csv(run_dir / rel):
        polys[(row["name"], row["kind"])].append((float(row["x"]), float(row["y"])))
    return [(kind, np.array(pts)) for (_, kind), pts in polys.items()]


def _fill_sections(ax, sections, scale: float) -> None:
    for kind, pts in sections:
        ax.fill(pts[:, 0] * scale, pts[:, 1] * scale, color=_KIND_COLORS.get(kind, "#888888"),
                alpha=0.8, linewidth=0)


def _save(fig: Figure, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context({"svg.hashsalt": "streamway", "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata=_SVG_META)
    return path


def _layer_title(layer: dict) -> str:
    return f"L{layer['index']}  {layer['altitude']:g} m  {layer['direction']}"


def plot_fields(run_dir: Path) -> list[Path]:
    meta = _meta(run_dir)
    fields = meta["artifacts"]["fields"]
    if not fields:
        raise MissingArtifact("no field dumps in this run (use --dump-fields)")
    s = meta["plot_scale"]
    out = []
    for layer in meta["layers"]:
        key = str(layer["index"])
        if key not in fields:
            raise MissingArtifact(f"no field dump for layer {key}")
        path = run_dir / fields[key]
        if not path.exists():
            raise MissingArtifact(f"missing {path}")
        hdr, psi = read_field_dump(path)
        x = (hdr["x0"] + hdr["dx"] * np.arange(hdr["nx"])) * s
        y = (hdr["y0"] + hdr["dy"] * np.arange(hdr["ny"])) * s
        fig = Figure(figsize=(8, 4.5))
        ax = fig.add_subplot()
        ax.contour(x, y, psi, levels=30, linewidths=0.6, cmap="viridis")
        _fill_sections(ax, _sections(run_dir, meta["artifacts"]["sections"][key]), s)
        ax.set_aspect("equal")
        ax.set_title(f"stream function, {_layer_title(layer)}")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        out.append(_save(fig, run_dir / "plots" / f"field_L{key}.svg"))
    return out


def _corridor_lines(run_dir: Path, rel: str) -> list[np.ndarray]:
    lines: dict[int, list] = defaultdict(list)
    for row in _read_csv(run_dir / rel):
        lines[int(row["streamline"])].append((float(row["x"]), float(row["y"])))
    return [np.array(lines[k]) for k in sorted(lines)]


def plot_corridors(run_dir: Path) -> list[Path]:
    meta = _meta(run_dir)
    corr = meta["artifacts"]["corridors"]
    if not corr:
        raise MissingArtifact("no corridor files in this run")
    s = meta["plot_scale"]
    layers = meta["layers"]
    ncols = min(4, len(layers))
    nrows = int(np.ceil(len(layers) / ncols))
    fig = Figure(figsize=(4 * ncols, 2.4 * nrows + 0.6))
    for n, layer in enumerate(layers):
        key = str(layer["index"])
        if key not in corr:
            raise MissingArtifact(f"no corridor file for layer {key}")
        ax = fig.add_subplot(nrows, ncols, n + 1)
        _fill_sections(ax, _sections(run_dir, meta["artifacts"]["sections"][key]), s)
        for pts in _corridor_lines(run_dir, corr[key]):
            ax.plot(pts[:, 0] * s, pts[:, 1] * s, linewidth=0.7, color="#2b8a3e")
        r = meta["region"]
        ax.set_xlim(r["x_min"] * s, r["x_max"] * s)
        ax.set_ylim(r["y_min"] * s, r["y_max"] * s)
        ax.set_aspect("equal")
        ax.set_title(_layer_title(layer), fontsize=9)
        ax.tick_params(labelsize=7)
    fig.tight_layout()
    return [_save(fig, run_dir / "plots" / "corridors.svg")]


def plot_paths(run_dir: Path) -> list[Path]:
    meta = _meta(run_dir)
    paths = meta["artifacts"]["paths"]
    if not paths:
        raise MissingArtifact("no path files in this run")
    s = meta["plot_scale"]
    fig = Figure(figsize=(9, 6))
    ax = fig.add_subplot(projection="3d")
    cmap = matplotlib.colormaps["tab10"]
    for n, (uas, rel) in enumerate(sorted(paths.items())):
        rows = _read_csv(run_dir / rel)
        xyz = np.array([(float(r["x"]), float(r["y"]), float(r["z"])) for r in rows])
        color = cmap(n % 10)
        ax.plot(xyz[:, 0] * s, xyz[:, 1] * s, xyz[:, 2], color=color, linewidth=1.4, label=uas)
        ax.scatter([xyz[0, 0] * s], [xyz[0, 1] * s], [xyz[0, 2]], color=color, marker="o", s=18)
        changes = [i for i, r in enumerate(rows) if r["action"] in ("up", "down")]
        if changes:
            c = xyz[changes]
            ax.scatter(c[:, 0] * s, c[:, 1] * s, c[:, 2], color=color, marker="^", s=24)
    r = meta["region"]
    ax.set_xlim(r["x_min"] * s, r["x_max"] * s)
    ax.set_ylim(r["y_min"] * s, r["y_max"] * s)
    ax.set_zticks([layer["altitude"] for layer in meta["layers"]])
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_zlabel("altitude (m)")
    ax.legend(loc="upper left", fontsize=8)
    ax.set_title("allocated paths (triangles mark layer changes)")
    return [_save(fig, run_dir / "plots" / "paths.svg")]


_PLOTTERS = {"field": plot_fields, "corridors": plot_corridors, "paths": plot_paths}


def emit_plots(run_dir, which=KINDS) -> list[Path]:
    run_dir = Path(run_dir)
    out = []
    for kind in which:
        if kind not in _PLOTTERS:
            raise ValueError(f"unknown plot kind {kind!r}; expected one of {KINDS}")
        out.extend(_PLOTTERS[kind](run_dir))
    return out
