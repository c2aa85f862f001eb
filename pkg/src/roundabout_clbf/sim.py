"""Closed-loop roundabout simulation."""

from __future__ import annotations

import dataclasses
import hashlib
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .baselines import CarFollowingConfig, CarFollowingController, OcbfConfig, OcbfController
from .controllers import MpcClbfController
from .coordinator import CoordinatorTables
from .dynamics import Limits, VehicleState, plant_step
from .metrics import MetricsSummary, TripTotals, is_unsafe, record_energy, summarize_trips
from .mpc import MpcConfig
from .safety import ClassKConfig
from .topology import ENTRY, RoundaboutTopology
from .unconstrained import beta_from_alpha

log = logging.getLogger(__name__)

CONTROLLERS = ("mpc-clbf", "ocbf-fifo", "ocbf-sdf", "cf-baseline")

COLUMNS = ("t", "cav_id", "cz", "segment_class", "x", "v", "u", "sequence_id", "unsafe", "fallback")


@dataclass
class ScenarioConfig:
    """Every scenario knob, flat so it maps one-to-one onto a config file."""

    controller: str = "mpc-clbf"
    arrival_rates: Sequence[float] = (396.0, 396.0, 396.0)
    duration: float = 300.0
    drain_limit: float = 300.0
    Td: float = 0.1
    H: int = 20
    alpha: float = 0.1
    lam: float = 0.5
    n_cz: int = 3
    L: float = 60.0
    v_min: float = 5.0
    v_max: float = 30.0
    u_min: float = -4.0
    u_max: float = 4.0
    phi: float = 1.8
    delta: float = 0.0
    gamma1: float = 1.0
    gamma2: float = 1.0
    gamma3: float = 1.0
    gamma4: float = 1.0
    p_default: float = 1.0
    n_root: int = 1
    v0_low: float = 10.0
    v0_high: float = 15.0
    allow_full_loop: bool = True
    count_queue_delay: bool = False
    ocbf_w_speed: float = 1.0
    sdf_key: str = "time"
    cf_t_crit: float = 3.0
    seed: int = 0

    def __post_init__(self):
        self.arrival_rates = tuple(float(r) for r in self.arrival_rates)
        if self.controller not in CONTROLLERS:
            raise ValueError(f"controller must be one of {CONTROLLERS}")
        if len(self.arrival_rates) != self.n_cz:
            raise ValueError("need one arrival rate per CZ")
        if any(r < 0 for r in self.arrival_rates):
            raise ValueError("arrival rates must be non-negative")
        if not self.Td > 0:
            raise ValueError("Td must be positive")
        if self.H < 1:
            raise ValueError("H must be >= 1")
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0, 1)")
        if self.duration < 0 or self.drain_limit < 0:
            raise ValueError("durations must be non-negative")
        if not self.v0_low <= self.v0_high:
            raise ValueError("v0_low must not exceed v0_high")
        # the component objects validate their own fields
        self.limits()
        self.gammas()
        self.topology()

    def limits(self) -> Limits:
        return Limits(self.v_min, self.v_max, self.u_min, self.u_max, self.phi, self.delta)

    def gammas(self) -> ClassKConfig:
        return ClassKConfig(self.gamma1, self.gamma2, self.gamma3, self.gamma4)

    def topology(self) -> RoundaboutTopology:
        return RoundaboutTopology(self.n_cz, self.L)

    @property
    def beta(self) -> float:
        return beta_from_alpha(self.alpha, self.limits().u_sq_max)

    def replace(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw)

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in dataclasses.fields(cls)]


@dataclass(frozen=True)
class Arrival:
    t: float
    entry_cz: int
    exit_cz: int
    v0: float


def generate_arrivals(cfg: ScenarioConfig) -> List[Arrival]:
    """Poisson arrivals per origin over [0, duration), seeded and origin-independent."""
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_cz)
    out: List[Arrival] = []
    for k, (rate, ss) in enumerate(zip(cfg.arrival_rates, streams), start=1):
        if rate <= 0:
            continue
        rng = np.random.default_rng(ss)
        t = 0.0
        while True:
            t += rng.exponential(3600.0 / rate)
            if t >= cfg.duration:
                break
            if cfg.allow_full_loop:
                exit_cz = int(rng.integers(1, cfg.n_cz + 1))
            else:
                exit_cz = int(rng.integers(1, cfg.n_cz))
                exit_cz = exit_cz + 1 if exit_cz >= k else exit_cz
            v0 = float(rng.uniform(cfg.v0_low, cfg.v0_high))
            out.append(Arrival(t, k, exit_cz, v0))
    out.sort(key=lambda a: (a.t, a.entry_cz))
    return out


def trace_digest(trace: Sequence[Arrival]) -> str:
    h = hashlib.sha256()
    for a in trace:
        h.update(f"{a.t!r},{a.entry_cz},{a.exit_cz},{a.v0!r};".encode())
    return h.hexdigest()


def build_controller(cfg: ScenarioConfig):
    if cfg.controller == "mpc-clbf":
        return MpcClbfController(MpcConfig(H=cfg.H, Td=cfg.Td, lam=cfg.lam, beta=cfg.beta, L=cfg.L,
                                           limits=cfg.limits(), gammas=cfg.gammas(),
                                           p_default=cfg.p_default, n_root=cfg.n_root))
    if cfg.controller in ("ocbf-fifo", "ocbf-sdf"):
        ocfg = OcbfConfig(w_speed=cfg.ocbf_w_speed, gammas=cfg.gammas(), limits=cfg.limits(),
                          beta=cfg.beta, L=cfg.L, Td=cfg.Td)
        return OcbfController(ocfg, cfg.controller.split("-")[1], cfg.sdf_key)
    return CarFollowingController(CarFollowingConfig(limits=cfg.limits(), L=cfg.L, Td=cfg.Td,
                                                     v_des=cfg.v_max, t_crit=cfg.cf_t_crit))


@dataclass
class SimResult:
    summary: MetricsSummary
    rows: List[tuple] = field(default_factory=list)
    trace: List[Arrival] = field(default_factory=list)


class Simulation:
    def __init__(self, cfg: ScenarioConfig, trace: Optional[Sequence[Arrival]] = None, controller=None):
        self.cfg = cfg
        self.trace = list(trace) if trace is not None else generate_arrivals(cfg)
        self.controller = controller if controller is not None else build_controller(cfg)
        self.topology = cfg.topology()
        self.limits = cfg.limits()
        self.tables = CoordinatorTables(self.topology)
        self.rows: List[tuple] = []
        self.trips: Dict[int, TripTotals] = {}
        self.queues: Dict[int, List[tuple]] = {k: [] for k in self.topology.zones}
        self.unsafe = 0
        self.collisions = 0
        self.queue_delay = 0.0
        self.next_arrival = 0
        self.uid_counter = 0

    # --- arrivals -------------------------------------------------------

    def _admit(self, t: float) -> bool:
        """Move due arrivals into origin queues and spawn queue heads that fit."""
        while self.next_arrival < len(self.trace) and self.trace[self.next_arrival].t <= t + 1e-9:
            a = self.trace[self.next_arrival]
            self.uid_counter += 1
            self.queues[a.entry_cz].append((self.uid_counter, a))
            self.next_arrival += 1
        spawned = False
        lim = self.limits
        for k in self.topology.zones:
            q = self.queues[k]
            while q:
                uid, a = q[0]
                on_entry = self.tables.segment(k, ENTRY)
                if on_entry and on_entry[-1].state.x < lim.phi * a.v0 + lim.delta:
                    break
                q.pop(0)
                route = self.topology.make_route(a.entry_cz, a.exit_cz)
                self.tables.on_arrival(route, VehicleState(0.0, a.v0), uid=uid)
                self.trips[uid] = TripTotals(origin=k)
                self.queue_delay += max(0.0, t - a.t)
                spawned = True
        return spawned

    # --- per-step bookkeeping -----------------------------------------------

    def _safety_flags(self) -> Dict[int, bool]:
        flags = {}
        lim, L = self.limits, self.cfg.L
        for rec in self.tables.records():
            bad = False
            if rec.i_p is not None:
                lead = self.tables.get(rec.i_p)
                off = self.topology.cz_offset(rec.current_cz, lead.current_cz)
                gap = lead.state.x + off * L - rec.state.x
                bad = is_unsafe(gap, rec.state.v, lim.phi, lim.delta)
                if gap <= 0.0:
                    self.collisions += 1
                    log.warning("physical gap %.4g between uid %d and its leader uid %d",
                                gap, rec.uid, lead.uid)
            flags[rec.uid] = bad
        return flags

    def _events(self) -> bool:
        L = self.cfg.L
        fired = False
        exits = sorted((r.idx, r.uid) for r in self.tables.records() if r.at_final_cz and r.state.x >= L)
        for _, uid in exits:
            rec = self.tables.by_uid(uid)
            self.tables.on_exit(rec.idx)
            self.trips[uid].done = True
            self.controller.removed(uid)
            fired = True
        moves = sorted((r.idx, r.uid) for r in self.tables.records() if r.state.x >= L)
        for _, uid in moves:
            rec = self.tables.by_uid(uid)
            self.tables.on_cz_transition(rec.idx, VehicleState(rec.state.x - L, rec.state.v))
            fired = True
        return fired

    def run(self) -> SimResult:
        cfg = self.cfg
        Td = cfg.Td
        wall0 = time.perf_counter()
        stop_at = cfg.duration + cfg.drain_limit
        step = 0
        pending = self._admit(0.0)
        while True:
            t = step * Td
            busy = self.tables.n_total > 0 or any(self.queues.values()) or self.next_arrival < len(self.trace)
            if not busy or t >= stop_at - 1e-9:
                break
            if self.tables.n_total:
                decisions = self.controller.decide(self.tables, step, pending)
                flags = self._safety_flags()
                seq_ids = self.controller.stats.sequence_ids
                for rec in sorted(self.tables.records(), key=lambda r: r.idx):
                    d = decisions[rec.uid]
                    new_state, u = plant_step(rec.state, d.u, Td, self.limits)
                    self.rows.append((t, rec.uid, rec.current_cz, rec.c, rec.state.x, rec.state.v, u,
                                      seq_ids.get(rec.current_cz, -1), int(flags[rec.uid]),
                                      int(d.fallback)))
                    self.unsafe += flags[rec.uid]
                    trip = self.trips[rec.uid]
                    trip.steps += 1
                    trip.time = trip.steps * Td
                    trip.energy += record_energy(u, Td)
                    rec.state = new_state
                    self.controller.applied(rec.uid, u)
            step += 1
            pending = self._events()
            pending = self._admit(step * Td) or pending
        return SimResult(self._summary(step, time.perf_counter() - wall0), self.rows, self.trace)

    def _summary(self, steps: int, wall: float) -> MetricsSummary:
        cfg = self.cfg
        st = self.controller.stats
        extra = self.queue_delay if cfg.count_queue_delay else 0.0
        tt, ee, obj, per = summarize_trips(self.trips.values(), cfg.beta, extra)
        return MetricsSummary(
            controller=self.controller.name,
            horizon=cfg.H if cfg.controller == "mpc-clbf" else None,
            beta=cfg.beta,
            n_arrivals=len(self.trace),
            n_completed=sum(1 for tr in self.trips.values() if tr.done),
            n_in_system=self.tables.n_total,
            n_queued=sum(len(q) for q in self.queues.values()) + len(self.trace) - self.next_arrival,
            total_time=tt, total_energy=ee, total_objective=obj, per_cz=per,
            infeasible_count=st.infeasible, unsafe_count=self.unsafe,
            collision_count=self.collisions, fallback_steps=st.fallback_steps,
            queue_delay_total=self.queue_delay, qp_solves=st.qp_solves,
            qp_time_mean_ms=1e3 * st.qp_time / st.qp_solves if st.qp_solves else 0.0,
            wall_time_s=wall, steps=steps, trace_digest=trace_digest(self.trace),
        )


def run(cfg: ScenarioConfig, trace: Optional[Sequence[Arrival]] = None) -> SimResult:
    return Simulation(cfg, trace).run()
