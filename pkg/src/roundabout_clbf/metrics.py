"""Trip accounting: travel time, energy, combined objective, safety counters."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional

# tolerance for calling a rear-end gap violated; absorbs floating-point noise at the boundary
UNSAFE_TOL = 1e-6


def record_energy(u: float, Td: float) -> float:
    """Energy increment of one step: 0.5 u^2 Td."""
    return 0.5 * u * u * Td


def is_unsafe(gap: float, v: float, phi: float, delta: float, tol: float = UNSAFE_TOL) -> bool:
    """Rear-end rule z >= phi v + delta broken by more than ``tol``."""
    return gap < phi * v + delta - tol


def combined_objective(total_time: float, total_energy: float, beta: float) -> float:
    return beta * total_time + total_energy


@dataclass
class TripTotals:
    origin: int
    time: float = 0.0
    energy: float = 0.0
    steps: int = 0
    done: bool = False


@dataclass
class ZoneAverages:
    count: int
    avg_time: float
    avg_energy: float
    avg_objective: float


@dataclass
class MetricsSummary:
    controller: str
    horizon: Optional[int]
    beta: float
    n_arrivals: int = 0
    n_completed: int = 0
    n_in_system: int = 0
    n_queued: int = 0
    total_time: float = 0.0
    total_energy: float = 0.0
    total_objective: float = 0.0
    per_cz: Dict[int, ZoneAverages] = field(default_factory=dict)
    infeasible_count: int = 0
    unsafe_count: int = 0
    collision_count: int = 0
    fallback_steps: int = 0
    queue_delay_total: float = 0.0
    qp_solves: int = 0
    qp_time_mean_ms: float = 0.0
    wall_time_s: float = 0.0
    steps: int = 0
    trace_digest: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        d["per_cz"] = {str(k): asdict(v) for k, v in self.per_cz.items()}
        return d


def summarize_trips(trips: Iterable[TripTotals], beta: float, extra_time: float = 0.0) -> tuple:
    """Totals and per-origin averages. ``extra_time`` is added to the time total (queue delay)."""
    by_zone: Dict[int, List[TripTotals]] = defaultdict(list)
    total_time = extra_time
    total_energy = 0.0
    for trip in trips:
        by_zone[trip.origin].append(trip)
        total_time += trip.time
        total_energy += trip.energy
    per = {}
    for k in sorted(by_zone):
        rows = by_zone[k]
        n = len(rows)
        tt = sum(r.time for r in rows) / n
        ee = sum(r.energy for r in rows) / n
        per[k] = ZoneAverages(n, tt, ee, combined_objective(tt, ee, beta))
    return total_time, total_energy, combined_objective(total_time, total_energy, beta), per


def trips_from_rows(rows: Iterable[dict], Td: float) -> List[TripTotals]:
    """Rebuild per-vehicle totals from trajectory-table rows (dicts with cav_id, cz, segment_class, u)."""
    trips: Dict[int, TripTotals] = {}
    for r in rows:
        cid = int(r["cav_id"])
        trip = trips.get(cid)
        if trip is None:
            # the first row of a trip is on its entry segment, in its origin CZ
            trip = trips[cid] = TripTotals(origin=int(r["cz"]))
        u = float(r["u"])
        trip.steps += 1
        trip.time = trip.steps * Td
        trip.energy += record_energy(u, Td)
    return [trips[k] for k in sorted(trips)]
