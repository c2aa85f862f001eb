"""Single-lane roundabout geometry.

The roundabout has ``n_cz`` merging points M_1..M_n. Control zone k holds the
two segments that feed M_k: the entry road from origin O_k (segment class 1)
and the ring segment arriving from M_{k-1} (segment class 0). All segments
share the same length ``L``; positions are measured from the segment origin.
Traffic circulates counterclockwise, i.e. CZ k is followed by CZ k+1 (mod n).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

ENTRY = 1
RING = 0


@dataclass(frozen=True)
class RoundaboutTopology:
    n_cz: int = 3
    L: float = 60.0

    def __post_init__(self):
        if self.n_cz < 2:
            raise ValueError(f"need at least two control zones, got {self.n_cz}")
        if not self.L > 0:
            raise ValueError(f"segment length must be positive, got {self.L}")

    @property
    def zones(self) -> range:
        return range(1, self.n_cz + 1)

    def check_cz(self, k: int) -> None:
        if not 1 <= k <= self.n_cz:
            raise ValueError(f"CZ index {k} outside [1, {self.n_cz}]")

    def next_cz(self, k: int) -> int:
        self.check_cz(k)
        return k % self.n_cz + 1

    def cz_offset(self, cz_from: int, cz_to: int) -> int:
        """Number of counterclockwise CZ hops from ``cz_from`` to ``cz_to``."""
        self.check_cz(cz_from)
        self.check_cz(cz_to)
        return (cz_to - cz_from) % self.n_cz

    def make_route(self, entry_cz: int, exit_cz: int) -> "Route":
        self.check_cz(entry_cz)
        self.check_cz(exit_cz)
        hops = (exit_cz - entry_cz) % self.n_cz or self.n_cz
        czs = [entry_cz]
        for _ in range(hops):
            czs.append(self.next_cz(czs[-1]))
        return Route(entry_cz, exit_cz, tuple(czs))


def cz_offset(cz_from: int, cz_to: int, n_cz: int = 3) -> int:
    return RoundaboutTopology(n_cz=n_cz).cz_offset(cz_from, cz_to)


def adjusted_gap(x_follower: float, x_leader: float, offset: int, L: float) -> float:
    """Distance from follower to leader with the leader unrolled ``offset`` segments ahead."""
    if offset < 0:
        raise ValueError("offset must be non-negative")
    if not (0.0 <= x_follower <= L and 0.0 <= x_leader <= L):
        raise ValueError("positions must lie within [0, L]")
    return (x_leader + L * offset) - x_follower


def make_route(entry_cz: int, exit_cz: int, topology: RoundaboutTopology) -> "Route":
    return topology.make_route(entry_cz, exit_cz)


@dataclass(frozen=True)
class Route:
    """CZs visited by one CAV: the entry CZ (on its entry road), then ring segments."""

    entry_cz: int
    exit_cz: int
    czs: Tuple[int, ...]

    def __len__(self) -> int:
        return len(self.czs)

    def remaining_distance(self, leg: int, x: float, L: float) -> float:
        """Distance left to the exit MP when on leg ``leg`` (0 = entry road) at position x."""
        return (L - x) + L * (len(self.czs) - 1 - leg)

    def segment_class(self, leg: int) -> int:
        return ENTRY if leg == 0 else RING
