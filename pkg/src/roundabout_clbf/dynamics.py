"""Double-integrator vehicle model with exact zero-order-hold discretization."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class VehicleState:
    x: float
    v: float


@dataclass(frozen=True)
class Limits:
    v_min: float = 5.0
    v_max: float = 30.0
    u_min: float = -4.0
    u_max: float = 4.0
    phi: float = 1.8
    delta: float = 0.0

    def __post_init__(self):
        if not (self.v_min >= 0 and self.v_max > 0 and self.v_min < self.v_max):
            raise ValueError("need 0 <= v_min < v_max")
        if not self.u_min < 0 < self.u_max:
            raise ValueError("need u_min < 0 < u_max")
        if not self.phi > 0:
            raise ValueError("reaction time phi must be positive")
        if self.delta < 0:
            raise ValueError("safety margin delta must be non-negative")

    @property
    def u_sq_max(self) -> float:
        return max(self.u_max ** 2, self.u_min ** 2)


def step(state: VehicleState, u: float, Td: float) -> VehicleState:
    """Advance one interval of length Td under constant acceleration u."""
    if not Td > 0:
        raise ValueError("Td must be positive")
    return VehicleState(state.x + state.v * Td + 0.5 * u * Td * Td, state.v + u * Td)


def plant_step(state: VehicleState, u: float, Td: float, limits: Limits) -> tuple[VehicleState, float]:
    """Physical update: clamps u to the actuator box and never lets the vehicle reverse.

    Returns the new state and the control actually applied.
    """
    u_applied = min(max(u, limits.u_min), limits.u_max)
    if u_applied != u and abs(u_applied - u) > 1e-9:
        log.warning("control %.6g outside [%g, %g]; clamped", u, limits.u_min, limits.u_max)
    if state.v + u_applied * Td < 0.0:
        # stop inside the interval; the remainder is spent at rest
        t_stop = state.v / -u_applied if u_applied < 0 else 0.0
        x = state.x + state.v * t_stop + 0.5 * u_applied * t_stop * t_stop
        return VehicleState(x, 0.0), u_applied
    return step(state, u_applied, Td), u_applied


def rollout(state0: VehicleState, controls, Td: float) -> tuple[np.ndarray, np.ndarray]:
    """Positions and speeds at the end of each of the H intervals."""
    u = np.asarray(controls, dtype=float)
    if u.ndim != 1 or u.size < 1:
        raise ValueError("controls must be a non-empty vector")
    x = np.empty_like(u)
    v = np.empty_like(u)
    xi, vi = state0.x, state0.v
    for h, uh in enumerate(u):
        xi, vi = xi + vi * Td + 0.5 * uh * Td * Td, vi + uh * Td
        x[h], v[h] = xi, vi
    return x, v


class AffineRollout:
    """Horizon states written as affine maps of the stacked control vector.

    ``v = v_const + Sv @ u`` and ``x = x_const + Sx @ u``, with row h giving the
    state at the end of interval h (h = 1..H). The ``*_start`` counterparts give
    the state at the start of interval h, i.e. where control u_h is applied;
    row 1 of those is the current state.
    """

    _cache: dict = {}

    def __init__(self, state0: VehicleState, H: int, Td: float):
        if H < 1:
            raise ValueError("horizon must be >= 1")
        self.state0 = state0
        self.H = H
        self.Td = Td
        self.Sv, self.Sx, self.Sv_start, self.Sx_start, steps = self._matrices(H, Td)
        self.v_const = state0.v + np.zeros(H)
        self.x_const = state0.x + state0.v * Td * steps
        self.x_const_start = state0.x + state0.v * Td * (steps - 1.0)

    @classmethod
    def _matrices(cls, H: int, Td: float):
        key = (H, Td)
        hit = cls._cache.get(key)
        if hit is None:
            steps = np.arange(1, H + 1, dtype=float)
            lower = np.tril(np.ones((H, H)))
            Sv = Td * lower
            diff = steps[:, None] - steps[None, :]  # h - j
            Sx = Td * Td * np.where(diff >= 0, diff + 0.5, 0.0)
            Sv_start = np.vstack([np.zeros((1, H)), Sv[:-1]])
            Sx_start = np.vstack([np.zeros((1, H)), Sx[:-1]])
            hit = (Sv, Sx, Sv_start, Sx_start, steps)
            for arr in hit:
                arr.setflags(write=False)
            cls._cache[key] = hit
        return hit

    def evaluate(self, u) -> tuple[np.ndarray, np.ndarray]:
        u = np.asarray(u, dtype=float)
        return self.x_const + self.Sx @ u, self.v_const + self.Sv @ u

    def evaluate_start(self, u) -> tuple[np.ndarray, np.ndarray]:
        u = np.asarray(u, dtype=float)
        return self.x_const_start + self.Sx_start @ u, self.v_const + self.Sv_start @ u
