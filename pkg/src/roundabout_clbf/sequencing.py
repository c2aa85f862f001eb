"""Feasible merging sequences and optimal sequence selection for one CZ."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

from .coordinator import CoordinatorTables, Neighbors, interleavings
from .topology import ENTRY, RING

COST_TIE_TOL = 1e-9


class AllInfeasible(RuntimeError):
    """Every candidate sequence of a CZ was rejected."""

    def __init__(self, cz: int, reasons: Dict[tuple, str]):
        super().__init__(f"no feasible sequence in CZ {cz}")
        self.cz = cz
        self.reasons = reasons


@dataclass
class SequenceEvaluation:
    sequence: List[int]
    feasible: bool
    total: float = float("inf")
    plans: Dict[int, object] = field(default_factory=dict)
    neighbors: Dict[int, Neighbors] = field(default_factory=dict)
    reason: str = ""


# evaluator(cz, sequence, neighbors) -> SequenceEvaluation
Evaluator = Callable[[int, List[int], Dict[int, Neighbors]], SequenceEvaluation]


def enumerate_feasible(tables: CoordinatorTables, k: int) -> List[List[int]]:
    """Order-preserving interleavings of the ring and entry queues of CZ k."""
    f0 = [r.idx for r in tables.segment(k, RING)]
    f1 = [r.idx for r in tables.segment(k, ENTRY)]
    return interleavings(f0, f1)


def better(a: SequenceEvaluation, b: Optional[SequenceEvaluation]) -> bool:
    """Strictly lower cost wins; costs within the tie tolerance go to the smaller index list."""
    if b is None:
        return True
    if a.total < b.total - COST_TIE_TOL:
        return True
    if a.total > b.total + COST_TIE_TOL:
        return False
    return a.sequence < b.sequence


def select_optimal(tables: CoordinatorTables, k: int, evaluate: Evaluator,
                   candidates: Optional[Sequence[Sequence[int]]] = None) -> SequenceEvaluation:
    """Evaluate every feasible sequence of CZ k and return the cheapest feasible one.

    Raises :class:`AllInfeasible` when none survives.
    """
    cands = enumerate_feasible(tables, k) if candidates is None else [list(f) for f in candidates]
    best: Optional[SequenceEvaluation] = None
    reasons: Dict[tuple, str] = {}
    for f in cands:
        nb = tables.assign_neighbors(k, f)
        ev = evaluate(k, list(f), nb)
        ev.neighbors = nb
        if not ev.feasible:
            reasons[tuple(f)] = ev.reason
            continue
        if better(ev, best):
            best = ev
    if best is None:
        raise AllInfeasible(k, reasons)
    return best
