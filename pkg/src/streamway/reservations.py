"""First-come-first-serve space-time reservation ledger."""

from __future__ import annotations

from collections import defaultdict
from typing import Hashable, Iterable

Key = tuple  # (layer, streamline, k)


class ReservationConflict(ValueError):
    pass


class ReservationTable:
    """Who occupies which spatial state at which time index.

    Moves are recorded too so two vehicles cannot swap cells head-on in one tick.
    """

    def __init__(self):
        self.cells: dict[tuple[Key, int], Hashable] = {}
        self.moves: dict[tuple[Key, Key, int], Hashable] = {}
        self.by_uas: dict[Hashable, list[tuple[Key, int]]] = defaultdict(list)

    def __len__(self):
        return len(self.cells)

    def owner(self, key: Key, t: int):
        return self.cells.get((key, t))

    def is_free(self, key: Key, t: int, ignore=None) -> bool:
        who = self.cells.get((key, t))
        return who is None or who == ignore

    def swap_blocked(self, src: Key, dst: Key, t: int, ignore=None) -> bool:
        """True if another vehicle moves dst -> src between t and t+1."""
        if src == dst:
            return False
        who = self.moves.get((dst, src, t))
        return who is not None and who != ignore

    def occupied_at(self, t: int, ignore=None) -> set[Key]:
        return {k for (k, tt), who in self.cells.items() if tt == t and who != ignore}

    def by_time(self, ignore=None) -> dict[int, set[Key]]:
        out: dict[int, set[Key]] = defaultdict(set)
        for (k, t), who in self.cells.items():
            if who != ignore:
                out[t].add(k)
        return out

    def moves_by_time(self, ignore=None) -> dict[int, set[tuple[Key, Key]]]:
        out: dict[int, set[tuple[Key, Key]]] = defaultdict(set)
        for (a, b, t), who in self.moves.items():
            if who != ignore:
                out[t].add((a, b))
        return out

    def conflicts(self, uas, steps: Iterable[tuple[Key, int]]) -> list[tuple[Key, int]]:
        steps = list(steps)
        bad = [(k, t) for k, t in steps if not self.is_free(k, t, ignore=uas)]
        for (a, ta), (b, tb) in zip(steps, steps[1:]):
            if tb == ta + 1 and self.swap_blocked(a, b, ta, ignore=uas):
                bad.append((b, tb))
        return bad

    def reserve_path(self, uas, steps: Iterable[tuple[Key, int]]) -> None:
        steps = list(steps)
        bad = self.conflicts(uas, steps)
        if bad:
            raise ReservationConflict(f"{uas}: cells already reserved: {bad[:3]}")
        for k, t in steps:
            self.cells[(k, t)] = uas
            self.by_uas[uas].append((k, t))
        for (a, ta), (b, tb) in zip(steps, steps[1:]):
            if tb == ta + 1 and a != b:
                self.moves[(a, b, ta)] = uas

    def release(self, uas, from_time: int | None = None) -> None:
        """Drop the vehicle's reservations (only those at or after from_time if given)."""
        kept = []
        for k, t in self.by_uas.get(uas, []):
            if from_time is None or t >= from_time:
                if self.cells.get((k, t)) == uas:
                    del self.cells[(k, t)]
            else:
                kept.append((k, t))
        for mk in [mk for mk, who in self.moves.items()
                   if who == uas and (from_time is None or mk[2] >= from_time)]:
            del self.moves[mk]
        if kept:
            self.by_uas[uas] = kept
        else:
            self.by_uas.pop(uas, None)

    def holders(self) -> list:
        return list(self.by_uas)

    def audit(self) -> list[tuple[Key, int, list]]:
        """Exhaustive separation scan: (key, t) cells claimed by more than one vehicle."""
        claims: dict[tuple[Key, int], set] = defaultdict(set)
        for uas, steps in self.by_uas.items():
            for k, t in steps:
                claims[(k, t)].add(uas)
        return [(k, t, sorted(map(str, who))) for (k, t), who in sorted(claims.items(), key=lambda kv: (kv[0][1], kv[0][0]))
                if len(who) > 1]
