"""Scenario documents: YAML on disk, validated against the bundled JSON schema."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import yaml

from .airspace import ObstacleKind, ObstaclePolygon, Region, cylinder, default_direction
from .engine import (
    AtmAllocation,
    AtmNotice,
    AtmRelease,
    ClearFailure,
    EngineConfig,
    NewRequest,
    Tick,
    UasFailure,
    UasRequest,
)
from .errors import ParseError, SchemaViolation

SCHEMA_VERSION = 1
DEMO_NAME = "demo"

NUMERIC_DEFAULTS = {
    "dx": 5.0,
    "dy": 5.0,
    "spacing": 10.0,
    "delta0": None,
    "penalty": 15.0,
    "gamma": 1.0,
    "epsilon": 1e-6,
    "inflation": None,
    "merge_distance": None,
    "horizon": None,
    "solver_tol": 1e-8,
    "failure_side": None,
}

_DIR_CODES = {"+x": ("x", 1), "-x": ("x", -1), "+y": ("y", 1), "-y": ("y", -1)}


def _dir_code(axis: str, sign: int) -> str:
    return ("+" if sign > 0 else "-") + axis


def schema() -> dict:
    text = resources.files("streamway").joinpath("data/scenario.schema.json").read_text()
    return json.loads(text)


def demo_path() -> Path:
    return Path(str(resources.files("streamway").joinpath("data/demo_scenario.yaml")))


@dataclass
class ScenarioDocument:
    """Validated, canonical scenario (all defaults filled in)."""

    data: dict

    @property
    def name(self) -> str:
        return self.data.get("name", "")

    @property
    def region(self) -> Region:
        r = self.data["region"]
        return Region(r["x_min"], r["x_max"], r["y_min"], r["y_max"])

    def directions(self) -> list[tuple[str, int]]:
        return [_DIR_CODES[c] for c in self.data["layers"]["directions"]]

    def config(self) -> EngineConfig:
        n = self.data["numerics"]
        return EngineConfig(
            region=self.region,
            altitudes=tuple(self.data["layers"]["altitudes"]),
            directions=self.directions(),
            dx=n["dx"], dy=n["dy"],
            inflation=n["inflation"],
            merge_distance=n["merge_distance"],
            counts=dict(self.data["layers"]["streamlines"]),
            spacing=n["spacing"],
            delta0=n["delta0"],
            penalty=n["penalty"],
            gamma=n["gamma"],
            epsilon=n["epsilon"],
            horizon=n["horizon"],
            solver_tol=n["solver_tol"],
            failure_side=n["failure_side"],
        )

    def obstacles(self) -> list[ObstaclePolygon]:
        return [_shape(o, o.get("name", f"obstacle{i}"), o.get("kind", "building"))
                for i, o in enumerate(self.data.get("obstacles", []))]

    def events(self, kinds: set[str] | None = None) -> list:
        out = []
        for e in self.data.get("events", []):
            if kinds is not None and e["type"] not in kinds:
                continue
            out.append(_event(e))
        return out

    @property
    def plot_scale(self) -> float:
        return float(self.data.get("plot", {}).get("scale", 1.0))

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)


def _shape(spec: dict, name: str, kind: str) -> ObstaclePolygon:
    if "cylinder" in spec:
        c = spec["cylinder"]
        return cylinder(tuple(c["center"]), c["radius"], spec["base"], spec["top"], ObstacleKind(kind), name)
    return ObstaclePolygon(tuple(tuple(p) for p in spec["polygon"]), spec["base"], spec["top"],
                           ObstacleKind(kind), name)


def _event(e: dict):
    t = int(e["time"])
    kind = e["type"]
    if kind == "request":
        return NewRequest(t, UasRequest(e["uas"], t, "enter", tuple(e["entry"]), tuple(e["goal"])))
    if kind == "depart":
        return NewRequest(t, UasRequest(e["uas"], t, "depart"))
    if kind == "uas_failure":
        pos = e.get("position")
        return UasFailure(t, e["uas"], tuple(pos) if pos else None)
    if kind == "clear_failure":
        return ClearFailure(t, e["uas"])
    if kind == "atm_allocation":
        return AtmAllocation(t, e["zone"], _shape(e, e["zone"], "atm_no_fly"), e.get("duration"))
    if kind == "atm_release":
        return AtmRelease(t, e["zone"])
    if kind == "atm_notice":
        return AtmNotice(t, e.get("note", ""))
    return Tick(t)


def canonicalize(raw: dict) -> dict:
    """Fill defaults so that equal scenarios serialize identically."""
    doc = copy.deepcopy(raw)
    doc.setdefault("name", "")
    layers = doc["layers"]
    n = len(layers["altitudes"])
    layers["altitudes"] = [float(a) for a in layers["altitudes"]]
    layers.setdefault("directions", [_dir_code(*default_direction(i + 1)) for i in range(n)])
    counts = layers.setdefault("streamlines", {})
    counts.setdefault("odd", 10)
    counts.setdefault("even", 18)
    doc["region"] = {k: float(v) for k, v in doc["region"].items()}

    num = dict(NUMERIC_DEFAULTS)
    num.update(doc.get("numerics", {}))
    h = max(num["dx"], num["dy"])
    if num["inflation"] is None:
        num["inflation"] = h
    if num["merge_distance"] is None:
        num["merge_distance"] = 2 * h
    if num["delta0"] is None:
        alts = layers["altitudes"]
        gap = min(b - a for a, b in zip(alts, alts[1:])) if n > 1 else num["spacing"]
        num["delta0"] = 1.5 * gap
    if num["failure_side"] is None:
        num["failure_side"] = 4 * num["spacing"]
    for k, v in num.items():
        if isinstance(v, int) and not isinstance(v, bool) and k != "horizon":
            num[k] = float(v)
    doc["numerics"] = num
    doc.setdefault("obstacles", [])
    for o in doc["obstacles"]:
        o.setdefault("kind", "building")
    doc.setdefault("events", [])
    doc.setdefault("plot", {})
    doc["plot"].setdefault("scale", 1.0)
    return doc


def _semantic_violations(doc: dict) -> list[str]:
    out = []
    r = doc["region"]
    if not r["x_min"] < r["x_max"]:
        out.append("region: x_min must be < x_max")
    if not r["y_min"] < r["y_max"]:
        out.append("region: y_min must be < y_max")
    alts = doc["layers"]["altitudes"]
    if any(b <= a for a, b in zip(alts, alts[1:])):
        out.append("layers.altitudes: must be strictly increasing")
    dirs = doc["layers"]["directions"]
    if len(dirs) != len(alts):
        out.append("layers.directions: one entry per altitude required")
    for i, d in enumerate(dirs):
        expected = "x" if (i + 1) % 2 == 1 else "y"
        if d[1] != expected:
            out.append(f"layers.directions[{i}]: layer {i + 1} must move along {expected}")
    for i, o in enumerate(doc.get("obstacles", [])):
        if not o["base"] < o["top"]:
            out.append(f"obstacles[{i}]: base must be below top")
        if "polygon" in o:
            try:
                _shape(o, "", o.get("kind", "building"))
            except ValueError as exc:
                out.append(f"obstacles[{i}]: {exc}")
    times = [e["time"] for e in doc.get("events", [])]
    if any(b < a for a, b in zip(times, times[1:])):
        out.append("events: times must be nondecreasing")
    return out


def validate(raw: dict) -> ScenarioDocument:
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        raise SchemaViolation([f"{'.'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors])
    doc = canonicalize(raw)
    problems = _semantic_violations(doc)
    if problems:
        raise SchemaViolation(problems)
    return ScenarioDocument(doc)


def loads(text: str) -> ScenarioDocument:
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else "unknown position"
        raise ParseError(f"{where}: {exc.problem}") from exc
    except yaml.YAMLError as exc:
        raise ParseError(str(exc)) from exc
    if not isinstance(raw, dict):
        raise ParseError("scenario must be a mapping at the top level")
    return validate(raw)


def load_scenario(path) -> ScenarioDocument:
    if str(path) == DEMO_NAME:
        path = demo_path()
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    return loads(path.read_text())


def dumps(doc: ScenarioDocument) -> str:
    return yaml.safe_dump(doc.to_dict(), sort_keys=False, default_flow_style=None)


def save_scenario(doc: ScenarioDocument, path) -> None:
    Path(path).write_text(dumps(doc))
