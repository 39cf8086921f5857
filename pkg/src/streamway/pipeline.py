"""End-to-end run: map -> fields -> corridors -> event loop, written out as plain files.

Layout of an output directory::

    run_meta.json              scenario echo and artifact index
    summary.json               stage timings, audits, per-UAS status (not byte-stable: timings)
    sections/sections_L{i}.csv obstacle sections per layer (name, kind, vertex, x, y)
    corridors/corridors_L{i}.csv   waypoints (layer, streamline, level, k, x, y, z)
    fields/field_L{i}.txt      psi dumps, only with dump_fields
    paths/path_{uas}.csv       t, layer, streamline, k, x, y, z, action
    allocation_log.csv         time, uas_id, event, outcome, path_file, detail

Every file except summary.json is byte-identical across runs of the same document.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from .engine import UtmEngine
from .errors import StageError, StreamwayError
from .flow import write_field_dump
from .scenario import ScenarioDocument

logger = logging.getLogger(__name__)

MODES = ("field", "corridors", "plan", "simulate")
_INITIAL_TYPES = {"atm_allocation", "atm_release", "atm_notice", "tick"}
_REQUEST_TYPES = {"request", "depart"}


def fmt(v: float) -> str:
    """Fixed six-decimal rendering; keeps files stable and diffable."""
    s = f"{float(v):.6f}"
    return "0.000000" if s == "-0.000000" else s


@dataclass
class RunArtifacts:
    out_dir: Path
    mode: str
    sections: dict[int, Path] = field(default_factory=dict)
    corridors: dict[int, Path] = field(default_factory=dict)
    fields: dict[int, Path] = field(default_factory=dict)
    paths: dict[str, Path] = field(default_factory=dict)
    log: Path | None = None
    meta: Path | None = None
    summary: Path | None = None
    plots: list[Path] = field(default_factory=list)
    engine: UtmEngine | None = None
    audit: dict = field(default_factory=dict)

    @property
    def unallocated(self) -> list[str]:
        return list(self.audit.get("unallocated", []))


def select_events(doc: ScenarioDocument, mode: str) -> list:
    """Events a mode feeds to the engine.

    field/corridors see only the airspace in force at t=0; plan adds every request and
    departure on top of that; simulate replays the whole stream.
    """
    if mode == "simulate":
        return doc.events()
    raw = doc.data.get("events", [])
    keep = []
    for e in raw:
        initial = e["type"] in _INITIAL_TYPES and e["time"] == 0
        if initial or (mode == "plan" and e["type"] in _REQUEST_TYPES):
            keep.append(e)
    sub = ScenarioDocument({**doc.data, "events": keep})
    return sub.events()


def run_pipeline(doc: ScenarioDocument, out_dir, mode: str = "simulate", dump_fields: bool = False,
                 plots: tuple[str, ...] = ()) -> RunArtifacts:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    art = RunArtifacts(out, mode)
    t_start = time.perf_counter()

    try:
        engine = UtmEngine(doc.config(), doc.obstacles(), defer=True)
    except StreamwayError as exc:
        raise StageError("merge", exc) from exc
    try:
        engine.regenerate()
    except (StreamwayError, ValueError) as exc:
        raise StageError(engine.stage, exc) from exc
    art.engine = engine

    for ev in select_events(doc, mode):
        try:
            engine.step(ev)
        except (StreamwayError, ValueError) as exc:
            raise StageError("events", exc) from exc

    _write_sections(engine, out, art)
    if dump_fields or mode == "field":
        _write_fields(engine, out, art)
    if mode != "field":
        _write_corridors(engine, out, art)
    if mode in ("plan", "simulate"):
        _write_paths(engine, out, art)
        _write_log(engine, out, art)

    art.audit = _audit(engine) if mode in ("plan", "simulate") else {}
    _write_meta(doc, art)
    timings = {k: round(v, 6) for k, v in sorted(engine.timings.items())}
    timings["total"] = round(time.perf_counter() - t_start, 6)
    art.summary = out / "summary.json"
    art.summary.write_text(json.dumps({"mode": mode, "timings_s": timings, "audit": art.audit}, indent=2) + "\n")

    if plots:
        from .plotting import emit_plots
        art.plots = emit_plots(out, plots)
    return art


def _write_sections(engine: UtmEngine, out: Path, art: RunArtifacts) -> None:
    d = out / "sections"
    d.mkdir(exist_ok=True)
    for layer in engine.layers:
        p = d / f"sections_L{layer.index}.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["layer", "altitude", "name", "kind", "vertex", "x", "y"])
            for poly in engine.sections(layer):
                for n, (x, y) in enumerate(poly.vertices):
                    w.writerow([layer.index, fmt(layer.altitude), poly.name, poly.kind.value, n, fmt(x), fmt(y)])
        art.sections[layer.index] = p


def _write_fields(engine: UtmEngine, out: Path, art: RunArtifacts) -> None:
    d = out / "fields"
    d.mkdir(exist_ok=True)
    for layer in engine.layers:
        p = d / f"field_L{layer.index}.txt"
        write_field_dump(engine.fields[layer.index], p)
        art.fields[layer.index] = p


def _write_corridors(engine: UtmEngine, out: Path, art: RunArtifacts) -> None:
    d = out / "corridors"
    d.mkdir(exist_ok=True)
    for cs in engine.corridors:
        layer = cs.layer
        p = d / f"corridors_L{layer.index}.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["layer", "streamline", "level", "k", "x", "y", "z"])
            for s, (line, wps) in enumerate(zip(cs.streamlines, cs.waypoints)):
                for k, (x, y) in enumerate(wps):
                    w.writerow([layer.index, s, fmt(line.level), k, fmt(x), fmt(y), fmt(layer.altitude)])
        art.corridors[layer.index] = p


def _write_paths(engine: UtmEngine, out: Path, art: RunArtifacts) -> None:
    d = out / "paths"
    d.mkdir(exist_ok=True)
    for uas_id, steps in engine.paths().items():
        p = d / f"path_{uas_id}.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "layer", "streamline", "k", "x", "y", "z", "action"])
            for s in steps:
                w.writerow([s.t, s.layer, s.streamline, s.k, fmt(s.x), fmt(s.y), fmt(s.z), s.action])
        art.paths[uas_id] = p


def _write_log(engine: UtmEngine, out: Path, art: RunArtifacts) -> None:
    art.log = out / "allocation_log.csv"
    with art.log.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "uas_id", "event", "outcome", "path_file", "detail"])
        for rec in engine.log:
            ref = ""
            if rec.uas_id in art.paths:
                ref = art.paths[rec.uas_id].relative_to(art.out_dir).as_posix()
            w.writerow([rec.time, rec.uas_id, rec.event, rec.outcome, ref, rec.detail])


def _audit(engine: UtmEngine) -> dict:
    sep = engine.separation_audit()
    geo = engine.geometry_audit()
    status = {u: r.status for u, r in sorted(engine.uas.items())}
    return {
        "separation_ok": not sep,
        "separation_violations": len(sep),
        "geometry_ok": not geo,
        "geometry_violations": len(geo),
        "status": status,
        "unallocated": sorted({q.uas_id for q in engine.queue}),
    }


def _write_meta(doc: ScenarioDocument, art: RunArtifacts) -> None:
    rel = lambda p: p.relative_to(art.out_dir).as_posix()  # noqa: E731
    meta = {
        "scenario": doc.name,
        "mode": art.mode,
        "plot_scale": doc.plot_scale,
        "layers": [{"index": i + 1, "altitude": a, "direction": d}
                   for i, (a, d) in enumerate(zip(doc.data["layers"]["altitudes"], doc.data["layers"]["directions"]))],
        "region": doc.data["region"],
        "artifacts": {
            "sections": {str(k): rel(v) for k, v in sorted(art.sections.items())},
            "corridors": {str(k): rel(v) for k, v in sorted(art.corridors.items())},
            "fields": {str(k): rel(v) for k, v in sorted(art.fields.items())},
            "paths": {k: rel(v) for k, v in art.paths.items()},
            "log": rel(art.log) if art.log else None,
        },
    }
    art.meta = art.out_dir / "run_meta.json"
    art.meta.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
