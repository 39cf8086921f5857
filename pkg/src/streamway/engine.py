"""Event-driven UTM state machine with first-come-first-serve corridor allocation."""

from __future__ import annotations

import logging
import time as _time
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .airspace import (
    Grid,
    Layer,
    ObstacleKind,
    ObstaclePolygon,
    Region,
    build_grid,
    make_layers,
    merge_proximal_obstacles,
    points_in_polygon,
    section_layer,
    square,
)
from .corridors import CorridorConfig, CorridorSet, build_corridor_set
from .errors import NoPathAvailable, ReplanInfeasible, SnapFailure, StreamwayError, UnknownUas
from .flow import BoundaryConditionSpec, FlowField, solve_stream_function
from .mdp import CorridorPlanner, PathStep, PlanResult, StateSpace
from .reservations import ReservationTable

logger = logging.getLogger(__name__)


class MachineState(str, Enum):
    TERMINAL1_NORMAL = "terminal1_normal"
    TERMINAL2_UPDATED = "terminal2_updated"
    NT1 = "nt1"  # ATM interface without geometry change
    NT2 = "nt2"  # request/ATM event that changes geometry
    NT3 = "nt3"  # failed UAS
    NT4 = "nt4"  # plain enter/depart request


# ---------------------------------------------------------------------------
# events

@dataclass(frozen=True)
class UasRequest:
    uas_id: str
    time: int
    kind: str = "enter"  # "enter" or "depart"
    entry: tuple[float, float, float] | None = None
    goal: tuple[float, float, float] | None = None


@dataclass(frozen=True)
class NewRequest:
    time: int
    request: UasRequest


@dataclass(frozen=True)
class UasFailure:
    time: int
    uas_id: str
    position: tuple[float, float, float] | None = None


@dataclass(frozen=True)
class ClearFailure:
    time: int
    uas_id: str


@dataclass(frozen=True)
class AtmAllocation:
    time: int
    zone_id: str
    zone: ObstaclePolygon
    duration: int | None = None


@dataclass(frozen=True)
class AtmRelease:
    time: int
    zone_id: str


@dataclass(frozen=True)
class AtmNotice:
    """ATM contact that carries no geometry (cost/transition refresh only)."""

    time: int
    note: str = ""


@dataclass(frozen=True)
class Tick:
    time: int


GEOMETRY_EVENTS = (UasFailure, ClearFailure, AtmAllocation, AtmRelease)


def branch_of(event) -> MachineState:
    """Which update branch an event takes (TERMINAL1 means no-op)."""
    if event is None or isinstance(event, Tick):
        return MachineState.TERMINAL1_NORMAL
    if isinstance(event, (UasFailure, ClearFailure)):
        return MachineState.NT3
    if isinstance(event, (AtmAllocation, AtmRelease)):
        return MachineState.NT2
    if isinstance(event, AtmNotice):
        return MachineState.NT1
    if isinstance(event, NewRequest):
        return MachineState.NT4
    raise TypeError(f"unknown event {event!r}")


# ---------------------------------------------------------------------------

@dataclass
class EngineConfig:
    region: Region
    altitudes: Sequence[float] = (20, 25, 30, 35, 40, 45, 50, 55)
    directions: Sequence[tuple[str, int]] | None = None
    dx: float = 5.0
    dy: float = 5.0
    inflation: float | None = None
    merge_distance: float | None = None
    counts: dict = field(default_factory=lambda: {"odd": 10, "even": 18})
    spacing: float = 10.0
    delta0: float | None = None
    penalty: float = 15.0
    gamma: float = 1.0
    epsilon: float = 1e-6
    horizon: int | None = None
    solver_tol: float = 1e-8
    failure_side: float | None = None

    def __post_init__(self):
        if self.inflation is None:
            self.inflation = max(self.dx, self.dy)
        if self.merge_distance is None:
            self.merge_distance = 2 * max(self.dx, self.dy)
        if self.delta0 is None:
            alts = list(self.altitudes)
            gap = min(b - a for a, b in zip(alts, alts[1:])) if len(alts) > 1 else self.spacing
            self.delta0 = 1.5 * gap
        if self.failure_side is None:
            self.failure_side = 4 * self.spacing

    def layers(self) -> list[Layer]:
        return make_layers(self.altitudes, self.directions)


@dataclass
class LogRecord:
    time: int
    uas_id: str
    event: str
    outcome: str
    detail: str = ""


@dataclass
class UasRecord:
    request: UasRequest
    steps: list[PathStep]
    status: str = "active"  # active, held, failed, departed, completed
    arrival: int = 0  # FCFS rank


@dataclass
class StepOutcome:
    time: int
    branch: MachineState
    machine_state: MachineState
    geometry_changed: tuple[int, ...] = ()
    replanned: tuple[str, ...] = ()
    errors: tuple[str, ...] = ()


class UtmEngine:
    """Single owner of corridor geometry, reservations and vehicle paths.

    Events must be fed in nondecreasing time order via step().
    """

    def __init__(self, config: EngineConfig, obstacles: Sequence[ObstaclePolygon] = (), start_time: int = 0,
                 defer: bool = False):
        self.config = config
        self.layers = config.layers()
        self.timings: dict[str, float] = defaultdict(float)
        t0 = _time.perf_counter()
        self.static = merge_proximal_obstacles(list(obstacles), config.merge_distance)
        self.timings["merge"] += _time.perf_counter() - t0
        self.zones: dict[str, ObstaclePolygon] = {}
        self.zone_expiry: dict[str, int] = {}
        self.time = start_time
        self.reservations = ReservationTable()
        self.uas: dict[str, UasRecord] = {}
        self.queue: list[UasRequest] = []
        self.log: list[LogRecord] = []
        self.machine_state = MachineState.TERMINAL1_NORMAL
        self.trace: list[StepOutcome] = []
        self._arrivals = 0
        self._layer_cache: dict[int, tuple[tuple, Grid, FlowField, CorridorSet]] = {}
        self.fields: dict[int, FlowField] = {}
        self.corridors: list[CorridorSet] = []
        self.stage = "merge"  # last geometry stage entered, for error attribution
        if not defer:
            self.regenerate()

    # ----------------------------------------------------------------- geometry
    def unplanned(self) -> list[ObstaclePolygon]:
        return list(self.static) + [self.zones[z] for z in sorted(self.zones)]

    def sections(self, layer: Layer) -> list[ObstaclePolygon]:
        return section_layer(self.unplanned(), layer.altitude)

    def regenerate(self) -> tuple[int, ...]:
        """Re-solve fields and corridors for layers whose obstacle sections changed."""
        cfg = self.config
        ccfg = CorridorConfig(counts=dict(cfg.counts), spacing=cfg.spacing)
        changed = []
        corridors = []
        for layer in self.layers:
            self.stage = "section"
            t_sec = _time.perf_counter()
            secs = self.sections(layer)
            self.timings["section"] += _time.perf_counter() - t_sec
            signature = tuple((p.vertices, p.kind.value) for p in secs)
            cached = self._layer_cache.get(layer.index)
            if cached is None or cached[0] != signature:
                self.stage = "grid"
                t0 = _time.perf_counter()
                grid = build_grid(cfg.region, secs, cfg.dx, cfg.dy, cfg.inflation)
                t1 = _time.perf_counter()
                self.stage = "solve"
                fld = solve_stream_function(grid, BoundaryConditionSpec.centered(cfg.region, layer.axis), cfg.solver_tol)
                t2 = _time.perf_counter()
                self.stage = "corridors"
                cs = build_corridor_set(fld, layer, ccfg)
                t3 = _time.perf_counter()
                self.timings["grid"] += t1 - t0
                self.timings["solve"] += t2 - t1
                self.timings["corridors"] += t3 - t2
                cached = (signature, grid, fld, cs)
                self._layer_cache[layer.index] = cached
                changed.append(layer.index)
            self.fields[layer.index] = cached[2]
            corridors.append(cached[3])
        self.corridors = corridors
        if changed:
            self.stage = "mdp"
            self.space = StateSpace(corridors, 1, cfg.delta0)
            horizon = cfg.horizon or max(3 * max(len(w) for cs in corridors for w in cs.waypoints), 20)
            self.planner = CorridorPlanner(self.space, cfg.penalty, cfg.gamma, cfg.epsilon, horizon)
        return tuple(changed)

    # ----------------------------------------------------------------- snapping
    def layer_for_altitude(self, z: float) -> Layer:
        alts = np.array([l.altitude for l in self.layers])
        i = int(np.argmin(np.abs(alts - z)))
        gaps = np.diff(alts)
        tol = 0.5 * gaps.min() if gaps.size else np.inf
        if abs(alts[i] - z) > tol:
            raise SnapFailure(f"altitude {z} is not near any layer")
        return self.layers[i]

    def snap(self, point) -> int:
        x, y, z = point
        layer = self.layer_for_altitude(z)
        sid, d = self.space.nearest(layer.index, x, y)
        if sid < 0 or d > self.config.delta0:
            raise SnapFailure(f"no waypoint within {self.config.delta0} m of ({x}, {y}, {z})")
        return sid

    # ----------------------------------------------------------------- events
    def step(self, event) -> StepOutcome:
        t = self.time if event is None else event.time
        if t < self.time:
            raise ValueError(f"event time {t} precedes engine time {self.time}")
        self.time = t
        self._retire(t)
        branch = branch_of(event)
        expired = sorted(z for z, exp in self.zone_expiry.items() if exp <= t)
        for z in expired:
            self.zones.pop(z, None)
            self.zone_expiry.pop(z, None)
            self._record("", "atm_expiry", "zone_removed", z)
        if expired and branch in (MachineState.TERMINAL1_NORMAL, MachineState.NT1, MachineState.NT4):
            branch = MachineState.NT2 if branch == MachineState.TERMINAL1_NORMAL else branch
        if branch == MachineState.TERMINAL1_NORMAL:
            self.machine_state = MachineState.TERMINAL1_NORMAL
            out = StepOutcome(t, branch, self.machine_state)
            self.trace.append(out)
            return out

        changed: tuple[int, ...] = ()
        replanned: list[str] = []
        errors: list[str] = []
        geometry = isinstance(event, GEOMETRY_EVENTS) or bool(expired)
        if isinstance(event, UasFailure):
            self._fail(event)
        elif isinstance(event, ClearFailure):
            self.zones.pop(f"failure:{event.uas_id}", None)
            self._record(event.uas_id, "clear_failure", "zone_removed")
        elif isinstance(event, AtmAllocation):
            self.zones[event.zone_id] = event.zone
            if event.duration is not None:
                self.zone_expiry[event.zone_id] = t + event.duration
            self._record("", "atm_allocation", "zone_added", event.zone_id)
        elif isinstance(event, AtmRelease):
            if self.zones.pop(event.zone_id, None) is None:
                errors.append(f"unknown zone {event.zone_id}")
            self.zone_expiry.pop(event.zone_id, None)
            self._record("", "atm_release", "zone_removed", event.zone_id)
        elif isinstance(event, AtmNotice):
            self._record("", "atm_notice", "costs_refreshed", event.note)

        if geometry:
            t0 = _time.perf_counter()
            changed = self.regenerate()
            self.timings["regenerate"] += _time.perf_counter() - t0
            replanned, errs = self._replan_affected(changed)
            errors.extend(errs)

        if isinstance(event, NewRequest):
            req = event.request
            if req.kind == "depart":
                try:
                    self.release(req.uas_id)
                    self._record(req.uas_id, "depart", "released")
                except UnknownUas as exc:
                    errors.append(str(exc))
                    self._record(req.uas_id, "depart", "unknown_uas")
            else:
                try:
                    self.allocate_fcfs(req)
                except StreamwayError as exc:
                    errors.append(f"{req.uas_id}: {exc}")

        self._retry_pending(exclude=event.request.uas_id if isinstance(event, NewRequest) else None)
        self.machine_state = MachineState.TERMINAL2_UPDATED
        out = StepOutcome(t, branch, self.machine_state, changed, tuple(replanned), tuple(errors))
        self.trace.append(out)
        return out

    def run(self, events) -> list[StepOutcome]:
        return [self.step(ev) for ev in sorted(events, key=lambda e: e.time)]

    # ----------------------------------------------------------------- allocation
    def allocate_fcfs(self, request: UasRequest) -> PlanResult:
        """Plan against current reservations and reserve the whole path (holds included)."""
        if request.uas_id in self.uas and self.uas[request.uas_id].status in ("active", "held"):
            raise ValueError(f"{request.uas_id} already has an allocation")
        try:
            start = self.snap(request.entry)
            goal = self.snap(request.goal)
        except SnapFailure:
            self._record(request.uas_id, "request", "snap_failure")
            raise
        t0 = max(request.time, self.time)
        t_start = _time.perf_counter()
        try:
            plan = self.planner.plan(start, goal, t0, self.reservations, request.uas_id)
        except NoPathAvailable:
            if all(q.uas_id != request.uas_id for q in self.queue):
                self.queue.append(request)
            self._record(request.uas_id, "request", "queued")
            raise
        finally:
            self.timings["plan"] += _time.perf_counter() - t_start
        self.reservations.reserve_path(request.uas_id, [(s.key, s.t) for s in plan.steps])
        self._arrivals += 1
        self.uas[request.uas_id] = UasRecord(request, list(plan.steps), "active", self._arrivals)
        self.queue = [q for q in self.queue if q.uas_id != request.uas_id]
        self._record(request.uas_id, "request", "allocated", f"{plan.mode} cost={plan.cost:.6f}")
        return plan

    def release(self, uas_id: str) -> None:
        rec = self.uas.get(uas_id)
        if rec is None or rec.status not in ("active", "held"):
            raise UnknownUas(f"no active UAS {uas_id!r}")
        self.reservations.release(uas_id)
        rec.status = "departed"
        self.machine_state = MachineState.TERMINAL1_NORMAL

    def _retry_pending(self, exclude=None) -> None:
        for req in list(self.queue):
            if req.uas_id == exclude:
                continue
            try:
                self.allocate_fcfs(req)
            except StreamwayError:
                pass
        for uas_id in [u for u, r in sorted(self.uas.items(), key=lambda kv: kv[1].arrival) if r.status == "held"]:
            try:
                self._replan_one(uas_id)
            except ReplanInfeasible:
                pass

    def _retire(self, t: int) -> None:
        for uas_id, rec in self.uas.items():
            if rec.status == "active" and rec.steps and rec.steps[-1].t < t:
                rec.status = "completed"
                self.reservations.release(uas_id)

    # ----------------------------------------------------------------- disruption
    def _fail(self, event: UasFailure) -> None:
        rec = self.uas.get(event.uas_id)
        pos = event.position
        if pos is None:
            if rec is None:
                raise UnknownUas(f"no UAS {event.uas_id!r}")
            step = self._step_at(rec, event.time)
            pos = (step.x, step.y, step.z)
        layer = self.layer_for_altitude(pos[2])
        pos_idx = self.layers.index(layer)
        lo = self.layers[max(pos_idx - 1, 0)].altitude
        hi = self.layers[min(pos_idx + 1, len(self.layers) - 1)].altitude
        if hi <= lo:
            hi = lo + 1e-6
        zone = square((pos[0], pos[1]), self.config.failure_side, lo, hi, ObstacleKind.FAILED_UAS,
                      f"failure:{event.uas_id}")
        self.zones[f"failure:{event.uas_id}"] = zone
        if rec is not None:
            self.reservations.release(event.uas_id, from_time=event.time)
            rec.steps = [s for s in rec.steps if s.t < event.time]
            rec.status = "failed"
        self._record(event.uas_id, "uas_failure", "zone_added", f"at ({pos[0]:.3f}, {pos[1]:.3f}, {pos[2]:.3f})")

    @staticmethod
    def _step_at(rec: UasRecord, t: int) -> PathStep:
        before = [s for s in rec.steps if s.t <= t]
        return before[-1] if before else rec.steps[0]

    def _replan_affected(self, changed: tuple[int, ...]) -> tuple[list[str], list[str]]:
        if not changed:
            return [], []
        now = self.time
        changed_set = set(changed)
        affected = [
            u for u, r in sorted(self.uas.items(), key=lambda kv: kv[1].arrival)
            if r.status in ("active", "held") and any(s.t >= now and s.layer in changed_set for s in r.steps)
        ]
        for u in affected:
            self.reservations.release(u, from_time=now)
        errors = []
        for u in affected:
            try:
                self._replan_one(u)
            except ReplanInfeasible as exc:
                errors.append(str(exc))
        return affected, errors

    def _replan_one(self, uas_id: str) -> None:
        """Re-route a vehicle from where it is at the current time; hold it if impossible."""
        rec = self.uas[uas_id]
        now = self.time
        self.reservations.release(uas_id, from_time=now)
        prefix = [s for s in rec.steps if s.t < now]
        try:
            goal = self.snap(rec.request.goal)
            if prefix or (rec.steps and rec.steps[0].t <= now):
                here = self._step_at(rec, now)
                start = self.snap((here.x, here.y, here.z))
                plan = self.planner.plan(start, goal, now, self.reservations, uas_id, fixed_start=True)
            else:
                start = self.snap(rec.request.entry)
                plan = self.planner.plan(start, goal, now, self.reservations, uas_id)
        except StreamwayError as exc:
            self._hold(rec, prefix)
            self._record(uas_id, "replan", "held", str(exc))
            raise ReplanInfeasible(uas_id, f"{uas_id} held: {exc}") from exc
        self.reservations.reserve_path(uas_id, [(s.key, s.t) for s in plan.steps])
        rec.steps = prefix + list(plan.steps)
        rec.status = "active"
        self._record(uas_id, "replan", "replanned", f"{plan.mode} cost={plan.cost:.6f}")

    def _hold(self, rec: UasRecord, prefix: list[PathStep]) -> None:
        now = self.time
        uas_id = rec.request.uas_id
        if not (prefix or (rec.steps and rec.steps[0].t <= now)):
            # not airborne yet: back to the request queue
            rec.steps = []
            rec.status = "departed"
            if all(q.uas_id != uas_id for q in self.queue):
                self.queue.append(rec.request)
            return
        here = self._step_at(rec, now)
        try:
            sid = self.snap((here.x, here.y, here.z))
        except SnapFailure:
            rec.steps = prefix
            rec.status = "held"
            return
        key = self.space.keys[sid]
        x, y, z = self.space.position(sid)
        hold = []
        for t in range(now, now + self.planner.horizon):
            if not self.reservations.is_free(key, t, ignore=uas_id):
                break
            hold.append(PathStep(t, *key, x, y, z, "hold"))
        if hold:
            self.reservations.reserve_path(uas_id, [(s.key, s.t) for s in hold])
        rec.steps = prefix + hold
        rec.status = "held"

    # ----------------------------------------------------------------- reporting
    def _record(self, uas_id, event, outcome, detail=""):
        self.log.append(LogRecord(self.time, uas_id, event, outcome, detail))

    def paths(self) -> dict[str, list[PathStep]]:
        return {u: list(r.steps) for u, r in sorted(self.uas.items(), key=lambda kv: kv[1].arrival) if r.steps}

    def separation_audit(self) -> list[tuple]:
        """Every (cell, time) claimed by two vehicles, over all stored paths (active or not)."""
        claims = defaultdict(set)
        for u, r in self.uas.items():
            for s in r.steps:
                claims[(s.key, s.t)].add(u)
        # cells are only comparable within one corridor geometry; also compare positions
        pos_claims = defaultdict(set)
        for u, r in self.uas.items():
            for s in r.steps:
                pos_claims[(round(s.x, 6), round(s.y, 6), round(s.z, 6), s.t)].add(u)
        bad = [(k, t, sorted(w)) for (k, t), w in claims.items() if len(w) > 1]
        bad += [(p[:3], p[3], sorted(w)) for p, w in pos_claims.items() if len(w) > 1]
        return bad

    def geometry_audit(self) -> list[tuple[str, PathStep]]:
        """Path steps at or after the current time that fall inside an active unplanned zone."""
        bad = []
        for u, r in self.uas.items():
            for s in r.steps:
                if s.t < self.time:
                    continue
                for poly in section_layer(self.unplanned(), s.z):
                    if points_in_polygon(np.array([s.x]), np.array([s.y]), poly.vertices)[0]:
                        bad.append((u, s))
                        break
        return bad
