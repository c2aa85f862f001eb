"""Closed-loop MPC-CLBF controller: event-driven sequencing plus per-step replanning."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .coordinator import CavRecord, CoordinatorTables, Neighbors
from .mpc import MpcConfig, PlanResult, Track, braking_plan, plan_cav
from .neighbors import Decision, PlanStore, in_frame, neighbor_offset
from .sequencing import AllInfeasible, SequenceEvaluation, select_optimal

log = logging.getLogger(__name__)


@dataclass
class ControllerStats:
    infeasible: int = 0
    fallback_steps: int = 0
    qp_solves: int = 0
    qp_time: float = 0.0
    sequence_ids: Dict[int, int] = field(default_factory=dict)
    next_sequence_id: int = 0

    def new_sequence(self, cz: int) -> None:
        self.sequence_ids[cz] = self.next_sequence_id
        self.next_sequence_id += 1

    def add(self, plan: PlanResult) -> None:
        self.qp_solves += plan.qp_solves
        self.qp_time += plan.qp_time


class MpcClbfController:
    name = "mpc-clbf"

    def __init__(self, cfg: MpcConfig):
        self.cfg = cfg
        self.store = PlanStore()
        self.u_prev: Dict[int, float] = {}
        self.stats = ControllerStats()

    # --- single-vehicle planning -------------------------------------------------

    def _track_of(self, tables: CoordinatorTables, ego: CavRecord, j: int, step: int,
                  local: Dict[int, PlanResult]) -> Track:
        other = tables.get(j)
        plan = local.get(j)
        if plan is not None:
            trk = plan.track()
        else:
            trk = self.store.own_track(other, step, self.cfg.H, self.cfg.Td)
        return in_frame(trk, other, neighbor_offset(tables, ego, other), self.cfg.L)

    def plan_one(self, tables: CoordinatorTables, rec: CavRecord, nb: Neighbors, step: int,
                 local: Dict[int, PlanResult]) -> PlanResult:
        cfg = self.cfg
        leader = self._track_of(tables, rec, nb.i_p, step, local) if nb.i_p is not None else None
        merge = self._track_of(tables, rec, nb.i_m, step, local) if nb.i_m is not None else None
        plan = plan_cav(rec.state, rec.remaining_distance(cfg.L), cfg, leader=leader, merge=merge,
                        u_prev=self.u_prev.get(rec.uid, 0.0),
                        nominal_u=self.store.nominal_u(rec.uid, step))
        self.stats.add(plan)
        return plan

    def evaluate(self, tables: CoordinatorTables, step: int):
        def run(k: int, f: List[int], nb: Dict[int, Neighbors]) -> SequenceEvaluation:
            local: Dict[int, PlanResult] = {}
            total = 0.0
            for j in f:
                plan = self.plan_one(tables, tables.get(j), nb[j], step, local)
                if not plan.feasible:
                    return SequenceEvaluation(f, False, reason=f"CAV {j}: {plan.reason}")
                local[j] = plan
                total += plan.cost
            return SequenceEvaluation(f, True, total, local)
        return run

    # --- closed loop -----------------------------------------------------------

    def decide(self, tables: CoordinatorTables, step: int, resequence: bool) -> Dict[int, Decision]:
        out: Dict[int, Decision] = {}
        evaluator = self.evaluate(tables, step)
        for k in tables.topology.zones:
            if not tables.table(k):
                continue
            chosen: Optional[SequenceEvaluation] = None
            if resequence:
                try:
                    chosen = select_optimal(tables, k, evaluator)
                except AllInfeasible as exc:
                    self.stats.infeasible += 1
                    log.info("step %d: %s; holding previous order", step, exc)
                if chosen is not None:
                    tables.apply_sequence(k, chosen.sequence)
                    self.stats.new_sequence(k)
                    for j, plan in chosen.plans.items():
                        rec = tables.get(j)
                        self.store.put(rec.uid, step, plan)
                        out[rec.uid] = Decision(plan.first, False, plan.branch)
                    continue
            f = tables.sync_sequence(k)
            nb = tables.apply_sequence(k, f)
            if k not in self.stats.sequence_ids:
                self.stats.new_sequence(k)
            local: Dict[int, PlanResult] = {}
            for j in f:
                rec = tables.get(j)
                plan = self.plan_one(tables, rec, nb[j], step, local)
                fallback = not plan.feasible
                if fallback:
                    plan = braking_plan(rec.state, self.cfg, plan.reason)
                    self.stats.fallback_steps += 1
                local[j] = plan
                self.store.put(rec.uid, step, plan)
                out[rec.uid] = Decision(plan.first, fallback, plan.branch)
        return out

    def applied(self, uid: int, u: float) -> None:
        self.u_prev[uid] = u

    def removed(self, uid: int) -> None:
        self.store.forget(uid)
        self.u_prev.pop(uid, None)
