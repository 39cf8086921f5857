"""Deterministic corridor-allocation MDP: state space, value iteration, policy, roll-out."""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from .corridors import CorridorSet
from .errors import HorizonTooSmall, NoFiniteValueAtStart, NoPathAvailable, RolloutStalled

logger = logging.getLogger(__name__)

SENTINEL = 1e12
DEFAULT_PENALTY = 15.0
DEFAULT_GAMMA = 1.0
DEFAULT_EPSILON = 1e-6


class Action(IntEnum):
    FORWARD = 0  # a1
    HOLD = 1  # a2
    UP = 2  # a3
    DOWN = 3  # a4

    @property
    def label(self) -> str:
        return self.name.lower()

    @property
    def changes_layer(self) -> bool:
        return self in (Action.UP, Action.DOWN)


ACTIONS = tuple(Action)


@dataclass(frozen=True, order=True)
class State:
    layer: int
    streamline: int
    k: int
    t: int = 0

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.layer, self.streamline, self.k)


class StateSpace:
    """Dense ids for (layer, streamline, waypoint index) x time.

    Spatial id `sid` enumerates waypoints layer by layer; the full state id is
    t * n_spatial + sid.
    """

    def __init__(self, corridors: Sequence[CorridorSet], horizon: int = 1, delta0: float = 7.5):
        if not corridors:
            raise ValueError("no corridor sets")
        if horizon < 1:
            raise HorizonTooSmall("horizon must be at least 1")
        self.corridors = list(corridors)
        self.delta0 = float(delta0)
        keys, xy, z = [], [], []
        for cs in self.corridors:
            for s, wps in enumerate(cs.waypoints):
                for k in range(len(wps)):
                    keys.append((cs.layer.index, s, k))
                    xy.append(wps[k])
                    z.append(cs.layer.altitude)
        self.keys = keys
        self.sid_of = {key: i for i, key in enumerate(keys)}
        self.xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        self.z = np.asarray(z, dtype=float)
        self.layer_of = np.array([k[0] for k in keys], dtype=np.int64)
        self.n_spatial = len(keys)
        self.layer_indices = [cs.layer.index for cs in self.corridors]
        if horizon > 1:
            shortest = min(len(w) for cs in self.corridors for w in cs.waypoints)
            if horizon < shortest:
                raise HorizonTooSmall(f"horizon {horizon} cannot fit a {shortest}-waypoint corridor")
        self.horizon = int(horizon)

        self._trees = {}
        self._layer_sids = {}
        for li in self.layer_indices:
            sids = np.flatnonzero(self.layer_of == li)
            self._layer_sids[li] = sids
            self._trees[li] = cKDTree(self.xy[sids]) if sids.size else None
        self.succ = self._build_successors()

    def __len__(self) -> int:
        return self.n_spatial * self.horizon

    def state_id(self, state: State) -> int:
        return state.t * self.n_spatial + self.sid_of[state.key]

    def state(self, state_id: int) -> State:
        t, sid = divmod(state_id, self.n_spatial)
        layer, s, k = self.keys[sid]
        return State(layer, s, k, t)

    def position(self, sid: int) -> tuple[float, float, float]:
        return float(self.xy[sid, 0]), float(self.xy[sid, 1]), float(self.z[sid])

    def nearest(self, layer: int, x: float, y: float) -> tuple[int, float]:
        """Nearest waypoint on a layer by planar distance: (sid, distance)."""
        tree = self._trees.get(layer)
        if tree is None:
            return -1, float("inf")
        d, i = tree.query((x, y))
        return int(self._layer_sids[layer][i]), float(d)

    def _build_successors(self) -> np.ndarray:
        """(4, n_spatial) successor sids per action, -1 where infeasible."""
        n = self.n_spatial
        succ = np.full((4, n), -1, dtype=np.int64)
        order = {li: pos for pos, li in enumerate(self.layer_indices)}
        for sid, (layer, s, k) in enumerate(self.keys):
            nxt = self.sid_of.get((layer, s, k + 1))
            if nxt is not None:
                succ[Action.FORWARD, sid] = nxt
            succ[Action.HOLD, sid] = sid
            pos = order[layer]
            x, y = self.xy[sid]
            if pos + 1 < len(self.layer_indices):
                cand, d = self.nearest(self.layer_indices[pos + 1], x, y)
                if d <= self.delta0:
                    succ[Action.UP, sid] = cand
            if pos > 0:
                cand, d = self.nearest(self.layer_indices[pos - 1], x, y)
                if d <= self.delta0:
                    succ[Action.DOWN, sid] = cand
        return succ

    def planar_distance(self, a: int, b: int) -> float:
        return float(np.hypot(*(self.xy[a] - self.xy[b])))


@dataclass
class CostModel:
    """J_a(s, s') = d(s', goal) + alpha_a * penalty, plus a small base step cost
    on non-goal successors that sit exactly above/below the goal (keeps every
    non-goal transition strictly positive)."""

    goal: int
    penalty: float = DEFAULT_PENALTY
    base_step: float = 1e-2

    def costs(self, space: StateSpace) -> np.ndarray:
        """(4, n_spatial) transition costs aligned with space.succ (inf where infeasible)."""
        d_goal = np.hypot(*(space.xy - space.xy[self.goal]).T)
        out = np.full(space.succ.shape, np.inf)
        for a in ACTIONS:
            nxt = space.succ[a]
            ok = nxt >= 0
            c = d_goal[nxt[ok]].copy()
            zero = (c == 0) & (nxt[ok] != self.goal)
            c[zero] += self.base_step
            if a.changes_layer:
                c += self.penalty
            out[a, ok] = c
        return out


@dataclass
class ValueTable:
    values: np.ndarray
    policy: np.ndarray  # action per state, -1 at goals and dead ends
    transitions: list = field(repr=False, default_factory=list)
    goals: frozenset = frozenset()
    gamma: float = DEFAULT_GAMMA
    epsilon: float = DEFAULT_EPSILON
    sweeps: int = 0
    history: list | None = field(default=None, repr=False)

    def is_finite(self, s: int) -> bool:
        return self.values[s] < SENTINEL


def _reachable_to_goal(transitions, goals) -> np.ndarray:
    n = len(transitions)
    rev = [[] for _ in range(n)]
    for s, outs in enumerate(transitions):
        for _, s2, _ in outs:
            rev[s2].append(s)
    seen = np.zeros(n, dtype=bool)
    queue = deque(goals)
    for g in goals:
        seen[g] = True
    order = []
    while queue:
        u = queue.popleft()
        order.append(u)
        for v in rev[u]:
            if not seen[v]:
                seen[v] = True
                queue.append(v)
    return seen, order


def value_iteration(transitions: Sequence[Sequence[tuple[int, int, float]]], goals, gamma: float = DEFAULT_GAMMA,
                    epsilon: float = DEFAULT_EPSILON, order: Sequence[int] | None = None,
                    max_sweeps: int = 100_000, record: bool = False) -> ValueTable:
    """Gauss-Seidel value iteration on a deterministic graph.

    transitions[s] lists (action, successor, cost). Goal states are absorbing with
    value 0. States that cannot reach a goal keep the SENTINEL value. Sweeps run in
    `order` (default: breadth-first distance from the goals) until the largest
    per-state change is <= epsilon.

    A self-loop (hold in place) is resolved in closed form inside the update: with
    gamma == 1 and positive cost it can never be the minimiser at the fixed point,
    so iterating it would only creep towards the true value one cost step per sweep.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    n = len(transitions)
    goals = frozenset(int(g) for g in goals)
    reach, bfs = _reachable_to_goal(transitions, goals)
    V = [0.0 if reach[s] else SENTINEL for s in range(n)]
    if order is None:
        order = bfs
    sweep_states = [s for s in order if reach[s] and s not in goals]
    history = [list(V)] if record else None
    sweeps = 0
    while True:
        sweeps += 1
        delta = 0.0
        for s in sweep_states:
            best = SENTINEL
            for _, s2, c in transitions[s]:
                if s2 == s:
                    # holding forever: fixed point of v = c + gamma*v
                    if gamma < 1.0:
                        q = c / (1.0 - gamma)
                        if q < best:
                            best = q
                    continue
                v2 = V[s2]
                if v2 >= SENTINEL:
                    continue
                q = c + gamma * v2
                if q < best:
                    best = q
            diff = abs(best - V[s])
            if diff > delta:
                delta = diff
            V[s] = best
        if record:
            history.append(list(V))
        if delta <= epsilon:
            break
        if sweeps >= max_sweeps:
            logger.warning("value iteration stopped after %d sweeps (delta=%g)", sweeps, delta)
            break
    table = ValueTable(np.asarray(V), np.full(n, -1, dtype=np.int64), transitions, goals,
                       gamma, epsilon, sweeps, history)
    table.policy = extract_policy(table)
    return table


def extract_policy(table: ValueTable) -> np.ndarray:
    """Greedy action per state; exact ties go to the lowest action (a1 < a2 < a3 < a4)."""
    V = table.values
    policy = np.full(len(V), -1, dtype=np.int64)
    for s, outs in enumerate(table.transitions):
        if s in table.goals or V[s] >= SENTINEL:
            continue
        best, best_a = SENTINEL, -1
        for a, s2, c in sorted(outs, key=lambda o: o[0]):
            if V[s2] >= SENTINEL:
                continue
            q = c + table.gamma * V[s2]
            if q < best:
                best, best_a = q, a
        policy[s] = best_a
    return policy


def bellman_residual(table: ValueTable) -> float:
    V = table.values
    worst = 0.0
    for s, outs in enumerate(table.transitions):
        if s in table.goals or V[s] >= SENTINEL:
            continue
        q = min((c + table.gamma * V[s2] for _, s2, c in outs if V[s2] < SENTINEL), default=SENTINEL)
        worst = max(worst, abs(V[s] - q))
    return worst


def roll_out(table: ValueTable, start: int, goal: int, max_steps: int | None = None) -> list[tuple[int, int]]:
    """Follow the policy from start; returns (state, action) pairs, the goal itself excluded."""
    if not table.is_finite(start):
        raise NoFiniteValueAtStart(f"state {start} has no finite value")
    if max_steps is None:
        max_steps = len(table.values)
    nxt = {s: {a: s2 for a, s2, _ in outs} for s, outs in enumerate(table.transitions)}
    path = []
    s = start
    while s != goal:
        if len(path) >= max_steps:
            raise RolloutStalled(f"no arrival within {max_steps} steps")
        a = int(table.policy[s])
        if a < 0:
            raise RolloutStalled(f"dead end at state {s}")
        path.append((s, a))
        s = nxt[s][a]
    return path


def spatial_transitions(space: StateSpace, cost: CostModel) -> list[list[tuple[int, int, float]]]:
    costs = cost.costs(space)
    out = []
    for sid in range(space.n_spatial):
        row = []
        for a in ACTIONS:
            s2 = int(space.succ[a, sid])
            if s2 >= 0:
                row.append((int(a), s2, float(costs[a, sid])))
        out.append(row)
    return out


@dataclass
class PathStep:
    t: int
    layer: int
    streamline: int
    k: int
    x: float
    y: float
    z: float
    action: str  # action taken from this state; "goal" on the final row

    @property
    def key(self):
        return (self.layer, self.streamline, self.k)


@dataclass
class PlanResult:
    steps: list[PathStep]
    cost: float
    mode: str  # "spatial" or "time-expanded"

    @property
    def layer_changes(self) -> int:
        return sum(1 for s in self.steps if s.action in ("up", "down"))


class CorridorPlanner:
    """Single-vehicle planner over a StateSpace against a reservation table."""

    def __init__(self, space: StateSpace, penalty: float = DEFAULT_PENALTY, gamma: float = DEFAULT_GAMMA,
                 epsilon: float = DEFAULT_EPSILON, horizon: int | None = None, base_step: float | None = None):
        self.space = space
        self.penalty = float(penalty)
        self.gamma = float(gamma)
        self.epsilon = float(epsilon)
        self.horizon = int(horizon or max(space.horizon, 2))
        spacing = self._typical_spacing()
        self.base_step = float(base_step if base_step is not None else spacing * 1e-3)

    def _typical_spacing(self) -> float:
        sp = self.space
        f = sp.succ[Action.FORWARD]
        ok = f >= 0
        if not ok.any():
            return 1.0
        return float(np.median(np.hypot(*(sp.xy[f[ok]] - sp.xy[ok]).T)))

    def cost_model(self, goal: int) -> CostModel:
        return CostModel(goal, self.penalty, self.base_step)

    def successors(self, state: State, reservations=None, ignore=None) -> list[tuple[Action, State]]:
        sid = self.space.sid_of[state.key]
        out = []
        for a in ACTIONS:
            s2 = int(self.space.succ[a, sid])
            if s2 < 0:
                continue
            key2 = self.space.keys[s2]
            if reservations is not None:
                if not reservations.is_free(key2, state.t + 1, ignore=ignore):
                    continue
                if reservations.swap_blocked(state.key, key2, state.t, ignore=ignore):
                    continue
            out.append((a, State(*key2, state.t + 1)))
        return out

    def solve_spatial(self, goal: int) -> ValueTable:
        return value_iteration(spatial_transitions(self.space, self.cost_model(goal)), [goal],
                               self.gamma, self.epsilon)

    def _steps(self, sids: list[int], actions: list[int], t0: int) -> list[PathStep]:
        steps = []
        for i, sid in enumerate(sids):
            layer, s, k = self.space.keys[sid]
            x, y, z = self.space.position(sid)
            label = Action(actions[i]).label if i < len(actions) else "goal"
            steps.append(PathStep(t0 + i, layer, s, k, x, y, z, label))
        return steps

    def plan(self, start: int, goal: int, t0: int, reservations=None, uas=None,
             fixed_start: bool = False) -> PlanResult:
        """Cheapest conflict-free path from start (entering at t0 or later) to goal.

        The time-invariant spatial problem is solved first; if its roll-out collides
        with a reservation, the full time-expanded problem over [t0, t0 + horizon) is
        solved instead. With fixed_start the vehicle must be at start at exactly t0.
        """
        table = self.solve_spatial(goal)
        if not table.is_finite(start):
            raise NoPathAvailable(f"goal unreachable from start in the corridor graph")
        pairs = roll_out(table, start, goal, max_steps=self.space.n_spatial)
        sids = [s for s, _ in pairs] + [goal]
        actions = [a for _, a in pairs]
        cost = float(table.values[start])
        steps = self._steps(sids, actions, t0)
        if reservations is None or not reservations.conflicts(uas, [(st.key, st.t) for st in steps]):
            return PlanResult(steps, cost, "spatial")
        return self.plan_time_expanded(start, goal, t0, reservations, uas, fixed_start)

    def time_expanded_values(self, goal: int, t0: int, reservations=None, uas=None):
        """Backward induction over the window; returns (V, policy) shaped (H, n_spatial).

        Time strictly increases along every transition, so one Gauss-Seidel sweep in
        decreasing t is already the fixed point.
        """
        sp = self.space
        H = self.horizon
        n = sp.n_spatial
        costs = self.cost_model(goal).costs(sp)
        occupied = reservations.by_time(ignore=uas) if reservations is not None else {}
        moves = reservations.moves_by_time(ignore=uas) if reservations is not None else {}
        V = np.full((H, n), SENTINEL)
        P = np.full((H, n), -1, dtype=np.int64)
        V[H - 1, goal] = 0.0
        for h in range(H - 2, -1, -1):
            t = t0 + h
            blocked_next = np.zeros(n, dtype=bool)
            for key in occupied.get(t + 1, ()):
                sid = sp.sid_of.get(key)
                if sid is not None:
                    blocked_next[sid] = True
            swaps = moves.get(t, ())
            best = np.full(n, SENTINEL)
            best_a = np.full(n, -1, dtype=np.int64)
            for a in ACTIONS:
                nxt = sp.succ[a]
                ok = nxt >= 0
                safe_nxt = np.where(ok, nxt, 0)
                ok &= ~blocked_next[safe_nxt]
                for their_src, their_dst in swaps:
                    # their move a -> b forbids our move b -> a in the same tick
                    ours, into = sp.sid_of.get(their_dst), sp.sid_of.get(their_src)
                    if ours is not None and into is not None and nxt[ours] == into:
                        ok[ours] = False
                v_next = V[h + 1, safe_nxt]
                ok &= v_next < SENTINEL
                q = np.where(ok, costs[a] + self.gamma * v_next, SENTINEL)
                better = q < best
                best[better] = q[better]
                best_a[better] = int(a)
            V[h] = best
            P[h] = best_a
            V[h, goal] = 0.0
            P[h, goal] = -1
        return V, P

    def plan_time_expanded(self, start: int, goal: int, t0: int, reservations=None, uas=None,
                           fixed_start: bool = False) -> PlanResult:
        V, P = self.time_expanded_values(goal, t0, reservations, uas)
        start_key = self.space.keys[start]
        entry = None
        last = 1 if fixed_start else self.horizon
        for h in range(last):
            if reservations is not None and not reservations.is_free(start_key, t0 + h, ignore=uas):
                continue
            if V[h, start] < SENTINEL:
                entry = h
                break
        if entry is None:
            raise NoPathAvailable(f"no conflict-free path within {self.horizon} ticks of t={t0}")
        sids, actions = [start], []
        h, s = entry, start
        while s != goal:
            a = int(P[h, s])
            if a < 0 or h + 1 >= self.horizon:
                raise RolloutStalled(f"time-expanded roll-out stalled at h={h}")
            actions.append(a)
            s = int(self.space.succ[a, s])
            h += 1
            sids.append(s)
        return PlanResult(self._steps(sids, actions, t0 + entry), float(V[entry, start]), "time-expanded")
