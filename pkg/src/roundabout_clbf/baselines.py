"""Comparison controllers.

* OCBF: track the unconstrained optimal trajectory with a one-step QP under
  speed-limit, rear-end and merge barrier rows. Merge order is FIFO (entry
  order) or SDF (shortest time to the MP first).
* CF-baseline: intelligent-driver-model car following with gap acceptance at
  the entry stop line. It stands in for human drivers and makes no claim to
  match any particular microsimulator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import qp
from .controllers import ControllerStats
from .coordinator import CavRecord, CoordinatorTables
from .dynamics import AffineRollout, Limits, VehicleState
from .mpc import Track, constant_velocity
from .neighbors import Decision, in_frame, neighbor_offset
from .safety import ClassKConfig, ConstraintRows, row_merge_cbf, row_rear_end, row_vlimits
from .topology import ENTRY, RING
from .unconstrained import PolyTrajectory, UnconstrainedSolveError, solve_unconstrained


@dataclass(frozen=True)
class OcbfConfig:
    w_speed: float = 1.0
    w_control: float = 1.0
    gammas: ClassKConfig = field(default_factory=ClassKConfig)
    limits: Limits = field(default_factory=Limits)
    beta: float = 8.0 / 9.0
    L: float = 60.0
    Td: float = 0.1

    def __post_init__(self):
        if not (self.w_speed > 0 and self.w_control > 0):
            raise ValueError("tracking weights must be positive")


# --- sequencing rules ---------------------------------------------------------

def _merge_queues(records: Sequence[CavRecord], key) -> List[int]:
    """Interleave the two segment queues, repeatedly taking the head with the smaller key."""
    queues = {c: [r for r in records if r.c == c] for c in (RING, ENTRY)}
    out: List[int] = []
    while queues[RING] or queues[ENTRY]:
        pick = min((q[0] for q in queues.values() if q), key=key)
        queues[pick.c].pop(0)
        out.append(pick.idx)
    return out


def fifo_order(records: Sequence[CavRecord]) -> List[int]:
    """Entry order (ascending index), without reordering vehicles on one segment."""
    return _merge_queues(records, key=lambda r: r.idx)


def sdf_order(records: Sequence[CavRecord], L: float, key: str = "time") -> List[int]:
    """Merge the two segment queues, taking whichever head reaches the MP sooner.

    ``key="time"`` ranks by (L - x) / v, ``key="distance"`` by L - x. Ties go to
    the smaller index. Each segment keeps its on-road order.
    """
    if key not in ("time", "distance"):
        raise ValueError("key must be 'time' or 'distance'")

    def score(r: CavRecord) -> tuple:
        d = L - r.state.x
        s = d / max(r.state.v, 1e-6) if key == "time" else d
        return (s, r.idx)

    return _merge_queues(records, key=score)


def committed(r: CavRecord, L: float, u_min: float) -> bool:
    """True when even full braking cannot stop the vehicle before its MP."""
    return r.state.v * r.state.v / (2.0 * -u_min) >= L - r.state.x


def realizable_order(records: Sequence[CavRecord], base: Sequence[int], L: float, u_min: float) -> List[int]:
    """Reorder so that vehicles unable to stop before the MP are not made to yield.

    Otherwise the base order is kept, as is each segment's on-road order.
    """
    rank = {j: n for n, j in enumerate(base)}
    return _merge_queues(records, key=lambda r: (not committed(r, L, u_min), rank[r.idx]))


# --- OCBF -------------------------------------------------------------------

def reference_at(ref: PolyTrajectory, t: float) -> tuple[float, float]:
    """(u_ref, v_ref) at time t; past the terminal time the reference cruises."""
    if t >= ref.tf:
        return 0.0, ref.final_speed
    u, v, _ = ref.eval(max(t, ref.t0))
    return u, v


def ocbf_step(state: VehicleState, reference: PolyTrajectory, t: float, cfg: OcbfConfig,
              leader: Optional[Track] = None, merge: Optional[Track] = None) -> tuple[float, bool]:
    """One tracking QP. Returns (control, feasible).

    Tracks are two-sample neighbor forecasts (now and one step ahead) in the
    ego frame. When the QP is infeasible the speed-limit rows are dropped and
    the safety rows alone are retried; if that fails too the vehicle brakes
    at u_min. Either way the step is reported infeasible.
    """
    Td, lim, L = cfg.Td, cfg.limits, cfg.L
    # the midpoint control is the interval mean of the linear reference, so it lands on v_ref exactly
    u_ref, _ = reference_at(reference, t + 0.5 * Td)
    _, v_ref = reference_at(reference, t + Td)
    pred = AffineRollout(state, 1, Td)
    safety = []
    if leader is not None:
        safety.append(row_rear_end(pred, leader.x, leader.v, lim, cfg.gammas.gamma3,
                                   steps=leader.live_steps()))
    if merge is not None:
        if float(merge.x[0]) < L:
            safety.append(row_merge_cbf(pred, merge.x, merge.v, L, lim, cfg.gammas.gamma4))
        elif merge.live_steps().size:
            safety.append(row_rear_end(pred, merge.x, merge.v, lim, cfg.gammas.gamma3, tag="rear-m"))
    # (u - u_ref)^2 + w (v + u Td - v_ref)^2, halved
    a = cfg.w_control + cfg.w_speed * Td * Td
    b = -cfg.w_control * u_ref + cfg.w_speed * Td * (state.v - v_ref)
    for rows, ok in ((ConstraintRows.stack([row_vlimits(pred, lim, cfg.gammas)] + safety, 1), True),
                     (ConstraintRows.stack(safety, 1), False)):
        sol = qp.solve(qp.QpProblem([[a]], [b], rows.A, rows.b, lim.u_min, lim.u_max, rows.tags))
        if sol.ok:
            return float(sol.x[0]), ok
    return lim.u_min, False


class OcbfController:
    def __init__(self, cfg: OcbfConfig, ordering: str = "fifo", sdf_key: str = "time"):
        if ordering not in ("fifo", "sdf"):
            raise ValueError("ordering must be 'fifo' or 'sdf'")
        self.cfg = cfg
        self.ordering = ordering
        self.sdf_key = sdf_key
        self.name = f"ocbf-{ordering}"
        self.refs: Dict[int, tuple[int, PolyTrajectory]] = {}
        self.in_episode: Dict[int, bool] = {}
        self.u_prev: Dict[int, float] = {}
        self.stats = ControllerStats()

    def order(self, tables: CoordinatorTables, k: int) -> List[int]:
        recs = tables.table(k)
        if self.ordering == "fifo":
            base = fifo_order(recs)
        else:
            base = sdf_order(recs, self.cfg.L, self.sdf_key)
        return realizable_order(recs, base, self.cfg.L, self.cfg.limits.u_min)

    def reference(self, rec: CavRecord, t: float) -> PolyTrajectory:
        """Unconstrained plan over the rest of the route, recomputed on entering each CZ."""
        hit = self.refs.get(rec.uid)
        if hit is not None and hit[0] == rec.leg:
            return hit[1]
        cfg = self.cfg
        D = rec.remaining_distance(cfg.L)
        try:
            ref = solve_unconstrained(t, rec.state.v, D, cfg.beta, v_min=cfg.limits.v_min)
        except (UnconstrainedSolveError, ValueError):
            ref = solve_unconstrained(t, max(rec.state.v, 0.1), D, 0.0)
        self.refs[rec.uid] = (rec.leg, ref)
        return ref

    def _track(self, tables, ego, j, done: Dict[int, float]) -> Track:
        other = tables.get(j)
        u = done.get(other.uid)
        Td = self.cfg.Td
        if u is None:
            trk = constant_velocity(other.state, 1, Td)
        else:
            s = other.state
            trk = Track(np.array([s.x, s.x + s.v * Td + 0.5 * u * Td * Td]), np.array([s.v, s.v + u * Td]))
        return in_frame(trk, other, neighbor_offset(tables, ego, other), self.cfg.L)

    def decide(self, tables: CoordinatorTables, step: int, resequence: bool) -> Dict[int, Decision]:
        t = step * self.cfg.Td
        out: Dict[int, Decision] = {}
        done: Dict[int, float] = {}
        for k in tables.topology.zones:
            if not tables.table(k):
                continue
            if resequence or k not in self.stats.sequence_ids:
                f = self.order(tables, k)
                self.stats.new_sequence(k)
            else:
                f = tables.sync_sequence(k)
            nb = tables.apply_sequence(k, f)
            for j in f:
                rec = tables.get(j)
                n = nb[j]
                leader = self._track(tables, rec, n.i_p, done) if n.i_p is not None else None
                merge = self._track(tables, rec, n.i_m, done) if n.i_m is not None else None
                u, ok = ocbf_step(rec.state, self.reference(rec, t), t, self.cfg, leader, merge)
                self.stats.qp_solves += 1
                if not ok:
                    if not self.in_episode.get(rec.uid, False):
                        self.stats.infeasible += 1
                    self.stats.fallback_steps += 1
                self.in_episode[rec.uid] = not ok
                done[rec.uid] = u
                out[rec.uid] = Decision(u, not ok, "ocbf")
        return out

    def applied(self, uid: int, u: float) -> None:
        self.u_prev[uid] = u

    def removed(self, uid: int) -> None:
        self.refs.pop(uid, None)
        self.in_episode.pop(uid, None)
        self.u_prev.pop(uid, None)


# --- car-following stand-in ----------------------------------------------------

@dataclass(frozen=True)
class CarFollowingConfig:
    a_max: float = 2.6
    b_comf: float = 4.5
    headway: float = 1.0
    s0: float = 2.5
    v_des: float = 30.0
    exponent: float = 4.0
    t_crit: float = 3.0
    limits: Limits = field(default_factory=Limits)
    L: float = 60.0
    Td: float = 0.1


def idm_accel(v: float, gap: Optional[float], v_lead: Optional[float], cfg: CarFollowingConfig) -> float:
    free = 1.0 - (v / cfg.v_des) ** cfg.exponent
    if gap is None:
        return cfg.a_max * free
    dv = v - v_lead
    s_star = cfg.s0 + max(0.0, v * cfg.headway + v * dv / (2.0 * math.sqrt(cfg.a_max * cfg.b_comf)))
    return cfg.a_max * (free - (s_star / max(gap, 1e-3)) ** 2)


def car_following_step(state: VehicleState, cfg: CarFollowingConfig,
                       leader: Optional[tuple[float, float]] = None) -> float:
    """IDM control; ``leader`` is (position in ego frame, speed) or None."""
    if leader is None:
        a = idm_accel(state.v, None, None, cfg)
    else:
        a = idm_accel(state.v, leader[0] - state.x, leader[1], cfg)
    lim = cfg.limits
    return min(lim.u_max, max(lim.u_min, a))


class CarFollowingController:
    """IDM with gap acceptance; the coordinator columns are kept in FIFO order for metrics."""

    name = "cf-baseline"

    def __init__(self, cfg: CarFollowingConfig):
        self.cfg = cfg
        self.stats = ControllerStats()
        self.committed: Dict[int, bool] = {}

    def _time_to_mp(self, r: CavRecord) -> float:
        return (self.cfg.L - r.state.x) / max(r.state.v, 0.1)

    def yielding(self, tables: CoordinatorTables, r: CavRecord) -> bool:
        if r.c != ENTRY or self.committed.get(r.uid, False):
            return False
        cfg = self.cfg
        gap_to_line = cfg.L - r.state.x
        if r.state.v * r.state.v / (2.0 * cfg.b_comf) >= gap_to_line:
            # cannot stop before the line any more
            self.committed[r.uid] = True
            return False
        for o in tables.segment(r.current_cz, RING):
            if o.at_final_cz:
                continue
            if o.state.x >= r.state.x or self._time_to_mp(o) < cfg.t_crit:
                return True
        self.committed[r.uid] = True
        return False

    def decide(self, tables: CoordinatorTables, step: int, resequence: bool) -> Dict[int, Decision]:
        cfg = self.cfg
        out: Dict[int, Decision] = {}
        for k in tables.topology.zones:
            if not tables.table(k):
                continue
            if resequence or k not in self.stats.sequence_ids:
                self.stats.new_sequence(k)
            f = fifo_order(tables.table(k))
            tables.apply_sequence(k, f)
        for k in tables.topology.zones:
            recs = tables.table(k)
            yields = {r.uid: self.yielding(tables, r) for r in recs}
            for r in recs:
                cands = []
                if r.i_p is not None:
                    p = tables.get(r.i_p)
                    off = neighbor_offset(tables, r, p)
                    cands.append((p.state.x + off * cfg.L, p.state.v))
                # vehicles on the other inbound segment that are nearer the MP and going through it
                for o in recs:
                    if o.c != r.c and o.state.x > r.state.x and not o.at_final_cz \
                            and not yields.get(o.uid, False):
                        cands.append((o.state.x, o.state.v))
                if yields[r.uid]:
                    cands.append((cfg.L, 0.0))
                lead = min(cands) if cands else None
                out[r.uid] = Decision(car_following_step(r.state, cfg, lead), False, "idm")
        return out

    def applied(self, uid: int, u: float) -> None:
        pass

    def removed(self, uid: int) -> None:
        self.committed.pop(uid, None)
