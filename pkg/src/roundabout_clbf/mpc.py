"""Receding-horizon planner for one CAV.

The planner dispatches on which neighbors exist:

* neither a leader nor a merge partner: sample the closed-form unconstrained
  trajectory onto the horizon (filtered through the speed-limit rows);
* a merge partner: check the sign of the merge barrier and its rate, pick
  CLBF parameters and solve the horizon QP with merge rows;
* only a leader: solve the horizon QP with rear-end rows.

The horizon QP minimizes ``sum_h 0.5 u_h^2 - lam * v_h`` subject to
speed-limit, rear-end and merge rows and the actuator box.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import qp
from .dynamics import AffineRollout, Limits, VehicleState
from .safety import (ClassKConfig, ClbfParams, ConstraintRows, b4_rate, b4_value, choose_pq,
                     merge_bbar, row_merge_clbf, row_rear_end, row_vlimits)
from .unconstrained import UnconstrainedSolveError, sample_horizon, solve_unconstrained

BRANCH_UNCONSTRAINED = "unconstrained"
BRANCH_REAR = "rear-only"
BRANCH_MERGE_SAFE = "merge-cbf"
BRANCH_MERGE_RECOVER = "merge-clbf"
BRANCH_FALLBACK = "fallback"


@dataclass(frozen=True)
class MpcConfig:
    H: int = 20
    Td: float = 0.1
    lam: float = 0.5
    beta: float = 8.0 / 9.0
    L: float = 60.0
    limits: Limits = field(default_factory=Limits)
    gammas: ClassKConfig = field(default_factory=ClassKConfig)
    p_default: float = 1.0
    n_root: int = 1

    def __post_init__(self):
        if self.H < 1:
            raise ValueError("horizon must be >= 1")
        if not self.Td > 0:
            raise ValueError("Td must be positive")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")


@dataclass
class Track:
    """A neighbor trajectory sampled at t, t+Td, ..., t+H*Td in the ego's frame.

    ``vanishes`` marks a vehicle that leaves the roundabout once it reaches
    ``x = gone_at`` (in the same frame); rows past that point are dropped.
    """

    x: np.ndarray
    v: np.ndarray
    vanishes: bool = False
    gone_at: float = float("inf")

    def shifted(self, dx: float) -> "Track":
        return Track(self.x + dx, self.v, self.vanishes, self.gone_at + dx)

    def live_steps(self) -> np.ndarray:
        """Start-of-interval indices (0-based) at which the neighbor is still present."""
        H = self.x.size - 1
        idx = np.arange(H)
        if not self.vanishes:
            return idx
        return idx[self.x[:H] < self.gone_at]


@dataclass
class PlanResult:
    u: np.ndarray
    x: np.ndarray
    v: np.ndarray
    cost: float
    feasible: bool = True
    branch: str = ""
    params: Optional[ClbfParams] = None
    reason: str = ""
    state0: Optional[VehicleState] = None
    qp_time: float = 0.0
    qp_solves: int = 0

    @property
    def first(self) -> float:
        return float(self.u[0])

    def track(self) -> Track:
        s = self.state0
        return Track(np.concatenate([[s.x], self.x]), np.concatenate([[s.v], self.v]))


def infeasible(reason: str, branch: str = "", **kw) -> PlanResult:
    empty = np.zeros(0)
    return PlanResult(empty, empty, empty, float("inf"), False, branch, reason=reason, **kw)


def objective_terms(pred: AffineRollout, lam: float) -> tuple[np.ndarray, np.ndarray, float]:
    """(P, q, const) with cost ``0.5 u'Pu + q'u + const = sum(0.5 u_h^2 - lam v_h)``."""
    if lam < 0:
        raise ValueError("lam must be non-negative")
    H = pred.H
    P = np.eye(H)
    q = -lam * pred.Sv.sum(axis=0)
    const = -lam * float(pred.v_const.sum())
    return P, q, const


def plan_cost(pred: AffineRollout, u, lam: float) -> float:
    u = np.asarray(u, dtype=float)
    _, v = pred.evaluate(u)
    return float(0.5 * u @ u - lam * v.sum())


def constant_velocity(state: VehicleState, H: int, Td: float) -> Track:
    steps = np.arange(H + 1, dtype=float)
    return Track(state.x + state.v * Td * steps, np.full(H + 1, state.v))


def rollout_track(state: VehicleState, u, Td: float) -> Track:
    pred = AffineRollout(state, len(u), Td)
    x, v = pred.evaluate(u)
    return Track(np.concatenate([[state.x], x]), np.concatenate([[state.v], v]))


def shift_nominal(u) -> np.ndarray:
    """Drop the applied control and repeat the last one to refill the horizon."""
    u = np.asarray(u, dtype=float)
    if u.size == 0:
        return u
    return np.concatenate([u[1:], u[-1:]])


def receding_step(plan: PlanResult) -> float:
    if not plan.feasible:
        raise ValueError("cannot apply an infeasible plan")
    return plan.first


def time_to_reach(track: Track, target: float, Td: float) -> float:
    """First time the sampled track reaches ``target``; constant speed past the horizon."""
    x = track.x
    if x[0] >= target:
        return 0.0
    hit = np.flatnonzero(x >= target)
    if hit.size:
        j = int(hit[0])
        frac = (target - x[j - 1]) / (x[j] - x[j - 1])
        return (j - 1 + frac) * Td
    v_end = max(float(track.v[-1]), 1e-3)
    return (x.size - 1) * Td + (target - x[-1]) / v_end


def _solve_rows(pred: AffineRollout, cfg: MpcConfig, rows: ConstraintRows,
                P=None, q=None) -> tuple[qp.QpSolution, float]:
    if P is None:
        P, q, _ = objective_terms(pred, cfg.lam)
    lim = cfg.limits
    prob = qp.QpProblem(P, q, rows.A, rows.b, lim.u_min, lim.u_max, rows.tags)
    t0 = time.perf_counter()
    sol = qp.solve(prob)
    return sol, time.perf_counter() - t0


def _finish(pred: AffineRollout, cfg: MpcConfig, u, branch: str, params=None,
            qp_time: float = 0.0, qp_solves: int = 0) -> PlanResult:
    u = np.asarray(u, dtype=float)
    x, v = pred.evaluate(u)
    return PlanResult(u, x, v, plan_cost(pred, u, cfg.lam), True, branch, params,
                      state0=pred.state0, qp_time=qp_time, qp_solves=qp_solves)


def plan_unconstrained(state: VehicleState, remaining: float, cfg: MpcConfig) -> PlanResult:
    pred = AffineRollout(state, cfg.H, cfg.Td)
    lim = cfg.limits
    try:
        traj = solve_unconstrained(0.0, state.v, remaining, cfg.beta, v_min=lim.v_min)
        u_ref = np.clip(sample_horizon(traj, cfg.H, cfg.Td), lim.u_min, lim.u_max)
    except (UnconstrainedSolveError, ValueError):
        u_ref = np.zeros(cfg.H)
    rows = row_vlimits(pred, lim, cfg.gammas)
    if np.all(rows.satisfied(u_ref)):
        return _finish(pred, cfg, u_ref, BRANCH_UNCONSTRAINED)
    # speed limits would be broken: project the reference onto the limit rows
    sol, dt = _solve_rows(pred, cfg, rows, np.eye(cfg.H), -u_ref)
    if not sol.ok:
        return infeasible(f"limit projection {sol.status.value}", BRANCH_UNCONSTRAINED,
                          qp_time=dt, qp_solves=1)
    return _finish(pred, cfg, sol.x, BRANCH_UNCONSTRAINED, qp_time=dt, qp_solves=1)


def merge_rows(pred: AffineRollout, cfg: MpcConfig, merge: Track, params: ClbfParams,
               nominal: Track) -> ConstraintRows:
    """Merge rows while the partner is short of the MP, rear-end rows once it is past."""
    L, lim = cfg.L, cfg.limits
    H = cfg.H
    xm, vm = merge.x[:H], merge.v[:H]
    before = np.flatnonzero(xm < L)
    after = np.flatnonzero(xm >= L)
    if merge.vanishes:
        after = after[xm[after] < merge.gone_at]
    k = lim.phi / L
    nb4 = nominal.x[:H] * 0.0
    nb4[before] = xm[before] - nominal.x[before] - k * xm[before] * nominal.v[before] - lim.delta
    blocks = [row_merge_clbf(pred, merge.x, merge.v, L, lim, params, nominal_b4=nb4, steps=before),
              row_rear_end(pred, merge.x, merge.v, lim, cfg.gammas.gamma3, steps=after, tag="rear-m")]
    return ConstraintRows.stack(blocks, H)


def plan_cav(state: VehicleState, remaining: float, cfg: MpcConfig,
             leader: Optional[Track] = None, merge: Optional[Track] = None,
             u_prev: float = 0.0, nominal_u=None) -> PlanResult:
    """One planning call for one CAV.

    ``leader`` and ``merge`` are neighbor tracks already expressed in this
    CAV's frame. ``u_prev`` is the control applied on the previous step, used
    for the merge-barrier rate. ``nominal_u`` is the shifted previous plan used
    to freeze the CLBF power term; constant velocity when absent.
    """
    if leader is None and merge is None:
        return plan_unconstrained(state, remaining, cfg)

    lim, H, L = cfg.limits, cfg.H, cfg.L
    pred = AffineRollout(state, H, cfg.Td)
    blocks = [row_vlimits(pred, lim, cfg.gammas)]
    if leader is not None:
        blocks.append(row_rear_end(pred, leader.x, leader.v, lim, cfg.gammas.gamma3,
                                   steps=leader.live_steps()))
    params = None
    branch = BRANCH_REAR
    if merge is not None:
        xm0, vm0 = float(merge.x[0]), float(merge.v[0])
        b4 = b4_value(state.x, state.v, xm0, L, lim)
        b4dot = b4_rate(state.v, u_prev, xm0, vm0, L, lim)
        if b4 < 0 and b4dot < 0:
            return infeasible(f"merge barrier {b4:.3g} falling at {b4dot:.3g}", BRANCH_MERGE_RECOVER)
        t_m = time_to_reach(merge, L, cfg.Td) if xm0 < L else 0.0
        bbar = merge_bbar(state.v, xm0, vm0, L, lim)
        params = choose_pq(b4, b4dot, bbar, t_m, cfg.n_root, cfg.p_default)
        if params is None:
            return infeasible(f"no CLBF gain for b4={b4:.3g}, t_m={t_m:.3g}", BRANCH_MERGE_RECOVER)
        branch = BRANCH_MERGE_SAFE if params.q == 1.0 else BRANCH_MERGE_RECOVER
        if nominal_u is None or len(nominal_u) != H:
            nominal = constant_velocity(state, H, cfg.Td)
        else:
            nominal = rollout_track(state, nominal_u, cfg.Td)
        blocks.append(merge_rows(pred, cfg, merge, params, nominal))
    rows = ConstraintRows.stack(blocks, H)
    sol, dt = _solve_rows(pred, cfg, rows)
    if not sol.ok:
        return infeasible(f"QP {sol.status.value}", branch, params=params, qp_time=dt, qp_solves=1)
    return _finish(pred, cfg, sol.x, branch, params, qp_time=dt, qp_solves=1)


def braking_plan(state: VehicleState, cfg: MpcConfig, reason: str = "") -> PlanResult:
    """Hardest braking the actuator and speed-floor rows allow, over the whole horizon."""
    lim, g2, Td = cfg.limits, cfg.gammas.gamma2, cfg.Td
    u = np.empty(cfg.H)
    v = state.v
    for h in range(cfg.H):
        u[h] = min(lim.u_max, max(lim.u_min, -g2 * (v - lim.v_min)))
        v += u[h] * Td
    pred = AffineRollout(state, cfg.H, Td)
    out = _finish(pred, cfg, u, BRANCH_FALLBACK)
    out.reason = reason
    return out
