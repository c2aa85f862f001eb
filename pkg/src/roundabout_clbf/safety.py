"""Barrier-function constraint rows for the horizon QP.

Every constraint is written over the stacked control vector ``u = [u_1..u_H]``
as ``coeffs @ u >= bound``. Horizon states come from
:class:`~roundabout_clbf.dynamics.AffineRollout`; row h pairs the control
``u_h`` with the state at the start of its interval, so the first row always
involves the measured current state. Neighbor trajectories passed in are
sampled at the same instants (index 0 = now).

Barriers (all required to stay non-negative)::

    b1 = v_max - v                       speed ceiling
    b2 = v - v_min                       speed floor
    b3 = x_p - x - phi v - delta         rear-end, leader p
    b4 = x_m - x - (phi/L) x_m v - delta merging, conflicting CAV m

For b4 the CLBF variant replaces the linear class-K term with
``p * b4**q``, q = 1/(2n+1), which drives an initially unsafe state into the
safe set in finite time.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .dynamics import AffineRollout, Limits


@dataclass(frozen=True)
class ClassKConfig:
    gamma1: float = 1.0
    gamma2: float = 1.0
    gamma3: float = 1.0
    gamma4: float = 1.0

    def __post_init__(self):
        for name in ("gamma1", "gamma2", "gamma3", "gamma4"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class ClbfParams:
    p: float
    q: float
    t_m: float = float("nan")

    def __post_init__(self):
        if not self.p > 0:
            raise ValueError("p must be positive")
        if not valid_exponent(self.q):
            raise ValueError(f"q={self.q} is neither 1 nor 1/(2n+1)")


@dataclass
class ConstraintRows:
    """A block of rows ``A @ u >= b`` with one provenance tag per row."""

    A: np.ndarray
    b: np.ndarray
    tags: list

    def __len__(self) -> int:
        return self.b.size

    def row(self, i: int) -> tuple[np.ndarray, float, str]:
        return self.A[i], float(self.b[i]), self.tags[i]

    def satisfied(self, u, tol: float = 1e-9) -> np.ndarray:
        return self.A @ np.asarray(u, dtype=float) >= self.b - tol

    @staticmethod
    def stack(blocks: Sequence["ConstraintRows"], H: int) -> "ConstraintRows":
        blocks = [blk for blk in blocks if len(blk)]
        if not blocks:
            return ConstraintRows(np.zeros((0, H)), np.zeros(0), [])
        tags = []
        for blk in blocks:
            tags.extend(blk.tags)
        return ConstraintRows(np.vstack([blk.A for blk in blocks]),
                              np.concatenate([blk.b for blk in blocks]), tags)


def valid_exponent(q: float) -> bool:
    if q == 1.0:
        return True
    if not 0 < q < 1:
        return False
    n = (1.0 / q - 1.0) / 2.0
    return n >= 1 and abs(n - round(n)) < 1e-9


def odd_pow(w, e: float):
    """Real power with the odd-root convention: sign(w) * |w|**e for e = k/(2n+1), k odd.

    For even numerators (e.g. 1 - q = 2n/(2n+1)) callers use :func:`even_pow`.
    """
    w = np.asarray(w, dtype=float)
    out = np.sign(w) * np.abs(w) ** e
    return float(out) if out.ndim == 0 else out


def even_pow(w, e: float):
    """|w|**e: the real value of w**(2n/(2n+1)) taken through the odd root."""
    w = np.asarray(w, dtype=float)
    out = np.abs(w) ** e
    return float(out) if out.ndim == 0 else out


# --- pointwise Lie-derivative forms (value >= 0 required) -------------------

def cbf_speed_max(v: float, u: float, limits: Limits, gamma1: float) -> float:
    return -u + gamma1 * (limits.v_max - v)


def cbf_speed_min(v: float, u: float, limits: Limits, gamma2: float) -> float:
    return u + gamma2 * (v - limits.v_min)


def b3_value(x: float, v: float, x_p: float, limits: Limits) -> float:
    return x_p - x - limits.phi * v - limits.delta


def cbf_rear_end(x, v, u, x_p, v_p, limits: Limits, gamma3: float) -> float:
    return v_p - v - limits.phi * u + gamma3 * b3_value(x, v, x_p, limits)


def b4_value(x: float, v: float, x_m: float, L: float, limits: Limits) -> float:
    return x_m - x - limits.phi / L * x_m * v - limits.delta


def b4_rate(v: float, u: float, x_m: float, v_m: float, L: float, limits: Limits) -> float:
    """Time derivative of b4 under control u."""
    k = limits.phi / L
    return v_m - v - k * x_m * u - k * v_m * v


def cbf_merge(x, v, u, x_m, v_m, L, limits: Limits, gamma4: float) -> float:
    return b4_rate(v, u, x_m, v_m, L, limits) + gamma4 * b4_value(x, v, x_m, L, limits)


def clbf_merge(x, v, u, x_m, v_m, L, limits: Limits, params: ClbfParams, b4_nominal=None) -> float:
    b4 = b4_value(x, v, x_m, L, limits) if b4_nominal is None else b4_nominal
    return b4_rate(v, u, x_m, v_m, L, limits) + params.p * odd_pow(b4, params.q)


def merge_bbar(v: float, x_m: float, v_m: float, L: float, limits: Limits) -> float:
    """Worst-case-braking margin used in the upper bound on p."""
    k = limits.phi / L
    return k * x_m * limits.u_min + k * v_m * v + v - v_m


# --- horizon rows -----------------------------------------------------------

def _eye_row(H: int, h: int) -> np.ndarray:
    e = np.zeros(H)
    e[h] = 1.0
    return e


def row_vlimits(pred: AffineRollout, limits: Limits, gammas: ClassKConfig,
                steps: Optional[Sequence[int]] = None) -> ConstraintRows:
    """Speed ceiling and floor rows; two per horizon step (0-based step indices)."""
    H = pred.H
    idx = np.arange(H) if steps is None else np.asarray(steps, dtype=int)
    eye = np.eye(H)[idx]
    Sv = pred.Sv_start[idx]
    v0 = pred.v_const[idx]
    # -u_h + g1 (v_max - v_h) >= 0  ->  (-e_h - g1 Sv) u >= -g1 (v_max - v0)
    A1 = -eye - gammas.gamma1 * Sv
    b1 = -gammas.gamma1 * (limits.v_max - v0)
    # u_h + g2 (v_h - v_min) >= 0  ->  (e_h + g2 Sv) u >= -g2 (v0 - v_min)
    A2 = eye + gammas.gamma2 * Sv
    b2 = -gammas.gamma2 * (v0 - limits.v_min)
    tags = [f"vmax[{h + 1}]" for h in idx] + [f"vmin[{h + 1}]" for h in idx]
    return ConstraintRows(np.vstack([A1, A2]), np.concatenate([b1, b2]), tags)


def row_rear_end(pred: AffineRollout, x_p, v_p, limits: Limits, gamma3: float,
                 steps: Optional[Sequence[int]] = None, tag: str = "rear",
                 sampled: bool = True) -> ConstraintRows:
    """Rear-end rows against a leader whose horizon positions are given in the follower's frame.

    Leaders in a downstream CZ must already be shifted by ``offset * L``.

    With ``sampled`` the row carries the exact zero-order-hold term
    ``0.5 Td (u_p - u)``, where u_p is read off the leader's speed samples.
    The row then reads ``b3[h+1] >= (1 - gamma3 Td) b3[h]``, which keeps b3
    non-negative between samples instead of only in the limit Td -> 0.
    Without it the row is the plain continuous-time condition.
    """
    H = pred.H
    x_p = np.asarray(x_p, dtype=float)
    v_p = np.asarray(v_p, dtype=float)
    idx = np.arange(H) if steps is None else np.asarray(steps, dtype=int)
    if idx.size == 0:
        return ConstraintRows(np.zeros((0, H)), np.zeros(0), [])
    phi, g = limits.phi, gamma3
    Sv, Sx = pred.Sv_start[idx], pred.Sx_start[idx]
    v0, x0 = pred.v_const[idx], pred.x_const_start[idx]
    # v_p - v - phi u + g (x_p - x - phi v - delta) >= 0
    c_u = phi
    const = v_p[idx] - (1.0 + g * phi) * v0 + g * (x_p[idx] - x0 - limits.delta)
    if sampled:
        if v_p.size < H + 1:
            raise ValueError("sampled rows need the leader speed at H + 1 instants")
        c_u = phi + 0.5 * pred.Td
        const = const + 0.5 * (v_p[idx + 1] - v_p[idx])
    A = -(1.0 + g * phi) * Sv - c_u * np.eye(H)[idx] - g * Sx
    return ConstraintRows(A, -const, [f"{tag}[{h + 1}]" for h in idx])


def row_merge_cbf(pred: AffineRollout, x_m, v_m, L: float, limits: Limits, gamma4: float,
                  steps: Optional[Sequence[int]] = None) -> ConstraintRows:
    """Merging rows with a linear class-K term (classic CBF)."""
    H = pred.H
    x_m = np.asarray(x_m, dtype=float)
    v_m = np.asarray(v_m, dtype=float)
    idx = np.arange(H) if steps is None else np.asarray(steps, dtype=int)
    if idx.size == 0:
        return ConstraintRows(np.zeros((0, H)), np.zeros(0), [])
    k = limits.phi / L
    xm, vm = x_m[idx], v_m[idx]
    Sv, Sx = pred.Sv_start[idx], pred.Sx_start[idx]
    v0, x0 = pred.v_const[idx], pred.x_const_start[idx]
    # rate: vm - v - k xm u - k vm v ; b4: xm - x - k xm v - delta
    cv = -(1.0 + k * vm) - gamma4 * k * xm          # coefficient on v_h
    A = cv[:, None] * Sv - (k * xm)[:, None] * np.eye(H)[idx] - gamma4 * Sx
    const = vm + cv * v0 + gamma4 * (xm - x0 - limits.delta)
    return ConstraintRows(A, -const, [f"merge[{h + 1}]" for h in idx])


def row_merge_clbf(pred: AffineRollout, x_m, v_m, L: float, limits: Limits, params: ClbfParams,
                   nominal_b4=None, steps: Optional[Sequence[int]] = None) -> ConstraintRows:
    """Merging rows with the CLBF term ``p * b4**q``.

    For q = 1 the term is affine in u and the rows coincide with
    :func:`row_merge_cbf` at gamma4 = p. For q < 1 the power is evaluated on
    ``nominal_b4`` (a predicted b4 trajectory), keeping every row affine.
    """
    if params.q == 1.0:
        rows = row_merge_cbf(pred, x_m, v_m, L, limits, params.p, steps)
        rows.tags = [t.replace("merge", "clbf") for t in rows.tags]
        return rows
    H = pred.H
    x_m = np.asarray(x_m, dtype=float)
    v_m = np.asarray(v_m, dtype=float)
    idx = np.arange(H) if steps is None else np.asarray(steps, dtype=int)
    if idx.size == 0:
        return ConstraintRows(np.zeros((0, H)), np.zeros(0), [])
    if nominal_b4 is None:
        raise ValueError("q < 1 needs a nominal b4 trajectory")
    k = limits.phi / L
    xm, vm = x_m[idx], v_m[idx]
    cv = -(1.0 + k * vm)
    A = cv[:, None] * pred.Sv_start[idx] - (k * xm)[:, None] * np.eye(H)[idx]
    const = vm + cv * pred.v_const[idx] + params.p * odd_pow(np.asarray(nominal_b4, dtype=float)[idx], params.q)
    return ConstraintRows(A, -np.atleast_1d(const), [f"clbf[{h + 1}]" for h in idx])


# --- finite-time convergence --------------------------------------------------

def t_conv(b4_0: float, p: float, q: float) -> float:
    """Upper bound on the time for ``db/dt >= -p b**q`` to lift b from b4_0 < 0 to 0."""
    if not p > 0:
        raise ValueError("p must be positive")
    if q == 1.0 or not valid_exponent(q):
        raise ValueError("q must be 1/(2n+1) with n >= 1")
    if b4_0 > 0:
        raise ValueError("t_conv is defined for b4_0 <= 0")
    return even_pow(b4_0, 1.0 - q) / (p * (1.0 - q))


def p_interval(b4_0: float, bbar_0: float, t_m: float, n: int = 1) -> tuple[float, float]:
    """Admissible CLBF gain range for an initially unsafe merge (b4_0 < 0)."""
    if not t_m > 0:
        raise ValueError("t_m must be positive")
    q = 1.0 / (2 * n + 1)
    lower = even_pow(b4_0, 1.0 - q) / ((1.0 - q) * t_m)
    upper = bbar_0 / odd_pow(b4_0, q)
    return lower, upper


def choose_pq(b4_0: float, b4dot_0: float, bbar_0: float, t_m: float, n: int = 1,
              p_default: float = 1.0) -> Optional[ClbfParams]:
    """Pick CLBF parameters, or None when no admissible pair exists.

    Inside the safe set the classic CBF (q = 1) is used. Outside it, a state
    that is still moving away from the set is rejected, otherwise p is the
    midpoint of the admissible interval.
    """
    if b4_0 >= 0:
        return ClbfParams(p=p_default, q=1.0, t_m=t_m)
    if b4dot_0 < 0:
        return None
    if not t_m > 0:
        return None
    lower, upper = p_interval(b4_0, bbar_0, t_m, n)
    if not (lower <= upper) or upper <= 0:
        return None
    return ClbfParams(p=0.5 * (lower + upper), q=1.0 / (2 * n + 1), t_m=t_m)
