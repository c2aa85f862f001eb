"""Shared plumbing for closed-loop controllers: decisions, plan storage, neighbor tracks."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from .coordinator import CavRecord, CoordinatorTables
from .mpc import PlanResult, Track, constant_velocity, rollout_track, shift_nominal


@dataclass
class Decision:
    u: float
    fallback: bool = False
    branch: str = ""


@dataclass
class StoredPlan:
    step: int
    plan: PlanResult


@dataclass
class PlanStore:
    """Latest plan per vehicle uid, stamped with the step it was made on."""

    plans: Dict[int, StoredPlan] = field(default_factory=dict)

    def put(self, uid: int, step: int, plan: PlanResult) -> None:
        self.plans[uid] = StoredPlan(step, plan)

    def fresh(self, uid: int, step: int) -> Optional[PlanResult]:
        sp = self.plans.get(uid)
        return sp.plan if sp is not None and sp.step == step else None

    def nominal_u(self, uid: int, step: int) -> Optional[np.ndarray]:
        """Previous step's controls shifted by one, for linearizing the CLBF term."""
        sp = self.plans.get(uid)
        if sp is None or sp.step != step - 1 or not sp.plan.feasible or sp.plan.u.size == 0:
            return None
        return shift_nominal(sp.plan.u)

    def forget(self, uid: int) -> None:
        self.plans.pop(uid, None)

    def prune(self, live_uids) -> None:
        for uid in [u for u in self.plans if u not in live_uids]:
            del self.plans[uid]

    def own_track(self, rec: CavRecord, step: int, H: int, Td: float) -> Track:
        """Best available forecast of a vehicle in its own frame."""
        plan = self.fresh(rec.uid, step)
        if plan is not None and plan.u.size == H:
            return plan.track()
        nominal = self.nominal_u(rec.uid, step)
        if nominal is not None and nominal.size == H:
            return rollout_track(rec.state, nominal, Td)
        return constant_velocity(rec.state, H, Td)


def in_frame(track: Track, neighbor: CavRecord, ego_cz_offset: int, L: float) -> Track:
    """Shift a neighbor track into the ego frame and mark where it leaves the roundabout."""
    out = track.shifted(ego_cz_offset * L)
    if neighbor.at_final_cz:
        out.vanishes = True
        out.gone_at = L + ego_cz_offset * L
    return out


def neighbor_offset(tables: CoordinatorTables, ego: CavRecord, other: CavRecord) -> int:
    return tables.topology.cz_offset(ego.current_cz, other.current_cz)
