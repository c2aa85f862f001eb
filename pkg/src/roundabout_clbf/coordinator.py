"""Per-CZ coordinator tables and the event-driven update protocol.

Each CZ keeps an ordered table of the CAVs currently inside it. Indices are
1-based and dense: a new CAV takes ``N + 1`` and an exit shifts every larger
index down by one, in every table and every stored reference. A separate
``uid`` never changes and is what logs use to identify a vehicle.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence

from .dynamics import VehicleState
from .topology import ENTRY, RING, RoundaboutTopology, Route


class ProtocolError(RuntimeError):
    """An event that is inconsistent with the current tables."""


@dataclass
class CavRecord:
    idx: int
    uid: int
    state: VehicleState
    route: Route
    leg: int = 0
    i_p: Optional[int] = None
    i_m: Optional[int] = None
    p_offset: int = 0  # CZ hops from this CAV's CZ to its i_p's CZ

    @property
    def initial_cz(self) -> int:
        return self.route.entry_cz

    @property
    def final_cz(self) -> int:
        return self.route.exit_cz

    @property
    def current_cz(self) -> int:
        return self.route.czs[self.leg]

    @property
    def c(self) -> int:
        return self.route.segment_class(self.leg)

    @property
    def at_final_cz(self) -> bool:
        return self.leg == len(self.route) - 1

    def remaining_distance(self, L: float) -> float:
        return self.route.remaining_distance(self.leg, self.state.x, L)


@dataclass(frozen=True)
class Neighbors:
    i_p: Optional[int]
    i_m: Optional[int]
    p_offset: int = 0


def interleavings(f0: Sequence[int], f1: Sequence[int]) -> List[List[int]]:
    """All merges of two ordered lists that keep each list's internal order."""
    out: List[List[int]] = []

    def rec(i: int, j: int, acc: List[int]) -> None:
        if i == len(f0) and j == len(f1):
            out.append(list(acc))
            return
        if i < len(f0):
            acc.append(f0[i])
            rec(i + 1, j, acc)
            acc.pop()
        if j < len(f1):
            acc.append(f1[j])
            rec(i, j + 1, acc)
            acc.pop()

    rec(0, 0, [])
    return out


@dataclass
class CoordinatorTables:
    topology: RoundaboutTopology = field(default_factory=RoundaboutTopology)
    tables: Dict[int, List[CavRecord]] = field(default_factory=dict)
    sequences: Dict[int, List[int]] = field(default_factory=dict)
    _next_uid: int = 1

    def __post_init__(self):
        for k in self.topology.zones:
            self.tables.setdefault(k, [])
            self.sequences.setdefault(k, [])

    # --- lookup ---------------------------------------------------------

    @property
    def n_total(self) -> int:
        return sum(len(t) for t in self.tables.values())

    def records(self) -> Iterable[CavRecord]:
        for k in self.topology.zones:
            yield from self.tables[k]

    def get(self, idx: int) -> CavRecord:
        for rec in self.records():
            if rec.idx == idx:
                return rec
        raise ProtocolError(f"no CAV with index {idx}")

    def by_uid(self, uid: int) -> CavRecord:
        for rec in self.records():
            if rec.uid == uid:
                return rec
        raise ProtocolError(f"no CAV with uid {uid}")

    def table(self, k: int) -> List[CavRecord]:
        self.topology.check_cz(k)
        return self.tables[k]

    def segment(self, k: int, c: int) -> List[CavRecord]:
        """CAVs on one inbound segment of CZ k, front vehicle first."""
        return [r for r in self.table(k) if r.c == c]

    # --- events ---------------------------------------------------------

    def on_arrival(self, route: Route, state0: VehicleState, uid: Optional[int] = None) -> int:
        if route.czs[0] != route.entry_cz:
            raise ProtocolError("route must start at its entry CZ")
        idx = self.n_total + 1
        if uid is None:
            uid = self._next_uid
        self._next_uid = max(self._next_uid, uid + 1)
        rec = CavRecord(idx=idx, uid=uid, state=state0, route=route)
        self.tables[route.entry_cz].append(rec)
        self.sequences[route.entry_cz].append(idx)
        return idx

    def on_exit(self, idx: int) -> CavRecord:
        rec = self.get(idx)
        if not rec.at_final_cz:
            raise ProtocolError(f"CAV {idx} exits before reaching its final CZ")
        self.tables[rec.current_cz].remove(rec)

        def shift(j: Optional[int]) -> Optional[int]:
            if j is None or j == idx:
                return None
            return j - 1 if j > idx else j

        for other in self.records():
            other.idx = shift(other.idx)
            other.i_p = shift(other.i_p)
            other.i_m = shift(other.i_m)
        for k, seq in self.sequences.items():
            self.sequences[k] = [shift(j) for j in seq if j != idx]
        return rec

    def on_cz_transition(self, idx: int, state: VehicleState) -> int:
        """Move a CAV that crossed its MP into the next CZ's ring segment."""
        rec = self.get(idx)
        if rec.at_final_cz:
            raise ProtocolError(f"CAV {idx} is at its final CZ and must exit instead")
        src = rec.current_cz
        self.tables[src].remove(rec)
        self.sequences[src] = [j for j in self.sequences[src] if j != idx]
        rec.leg += 1
        rec.state = state
        dst = rec.current_cz
        if dst != self.topology.next_cz(src):
            raise ProtocolError("route is not counterclockwise")
        self.tables[dst].append(rec)
        self.sequences[dst].append(idx)
        return dst

    # --- neighbor assignment ---------------------------------------------

    def feasible_sequences(self, k: int) -> List[List[int]]:
        f0 = [r.idx for r in self.segment(k, RING)]
        f1 = [r.idx for r in self.segment(k, ENTRY)]
        return interleavings(f0, f1)

    def check_sequence(self, k: int, f: Sequence[int]) -> None:
        members = [r.idx for r in self.table(k)]
        if sorted(f) != sorted(members):
            raise ValueError(f"sequence {list(f)} is not a permutation of CZ {k} members {members}")
        for c in (RING, ENTRY):
            road = [r.idx for r in self.segment(k, c)]
            if [j for j in f if j in road] != road:
                raise ValueError(f"sequence {list(f)} reorders vehicles on one segment")

    def cross_cz_leader(self, rec: CavRecord) -> tuple[Optional[int], int]:
        """Last ring-segment CAV in the first downstream CZ (along the route) that has one.

        The scan ends at the exit CZ or on coming back round to the current CZ.
        """
        for hop, k in enumerate(rec.route.czs[rec.leg + 1:], start=1):
            if k == rec.current_cz:
                break
            ring = self.segment(k, RING)
            if ring:
                return ring[-1].idx, hop
        return None, 0

    def assign_neighbors(self, k: int, f: Sequence[int]) -> Dict[int, Neighbors]:
        self.check_sequence(k, f)
        recs = {r.idx: r for r in self.table(k)}
        out: Dict[int, Neighbors] = {}
        last_of_class: Dict[int, Optional[int]] = {RING: None, ENTRY: None}
        # latest opposite-class predecessor that will actually pass through the MP
        last_merging: Dict[int, Optional[int]] = {RING: None, ENTRY: None}
        for j in f:
            rec = recs[j]
            c = rec.c
            i_m = None if rec.at_final_cz else last_merging[1 - c]
            if last_of_class[c] is not None:
                i_p, hop = last_of_class[c], 0
            elif rec.at_final_cz:
                i_p, hop = None, 0
            else:
                i_p, hop = self.cross_cz_leader(rec)
            out[j] = Neighbors(i_p=i_p, i_m=i_m, p_offset=hop)
            last_of_class[c] = j
            if not rec.at_final_cz:
                last_merging[c] = j
        return out

    def sync_sequence(self, k: int) -> List[int]:
        """Stored sequence restricted to current members; newcomers appended."""
        members = [r.idx for r in self.table(k)]
        kept = [j for j in self.sequences[k] if j in members]
        kept += [j for j in members if j not in kept]
        try:
            self.check_sequence(k, kept)
        except ValueError:
            kept = members
        self.sequences[k] = kept
        return kept

    def apply_sequence(self, k: int, f: Sequence[int]) -> Dict[int, Neighbors]:
        nb = self.assign_neighbors(k, f)
        self.sequences[k] = list(f)
        for rec in self.table(k):
            n = nb[rec.idx]
            rec.i_p, rec.i_m, rec.p_offset = n.i_p, n.i_m, n.p_offset
        return nb

    def refresh(self) -> None:
        """Recompute i_p/i_m columns of every table from the stored sequences."""
        for k in self.topology.zones:
            self.apply_sequence(k, self.sync_sequence(k))

    # --- snapshots --------------------------------------------------------

    def copy(self) -> "CoordinatorTables":
        tables = {k: [replace(r) for r in t] for k, t in self.tables.items()}
        return CoordinatorTables(self.topology, tables,
                                 {k: list(s) for k, s in self.sequences.items()}, self._next_uid)

    def snapshot(self) -> str:
        """One line per record, grouped by CZ in table order."""
        def opt(j):
            return "-" if j is None else str(j)

        lines = []
        for k in self.topology.zones:
            lines.append(f"S{k} seq={self.sequences[k]}")
            for r in self.tables[k]:
                lines.append(
                    f"  idx={r.idx} uid={r.uid} x={r.state.x!r} v={r.state.v!r} "
                    f"initial={r.initial_cz} final={r.final_cz} current={r.current_cz} "
                    f"c={r.c} i_p={opt(r.i_p)} i_m={opt(r.i_m)}")
        return "\n".join(lines)
