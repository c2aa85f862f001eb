"""Closed-form unconstrained energy/time optimal trajectory.

With the Hamiltonian analysis of ``beta*(tf - t0) + int 0.5*u^2 dt`` under
double-integrator dynamics, the optimal control is linear in time,
``u(t) = a t + b``, so speed is quadratic and position cubic. The five
boundary/transversality conditions are::

    0.5 a t0^2 + b t0 + c = v0                     (speed at t0)
    a t0^3/6 + b t0^2/2 + c t0 + d = 0             (position at t0)
    a tf^3/6 + b tf^2/2 + c tf + d = D             (position at tf)
    a tf + b = 0                                   (u(tf) = 0)
    beta + 0.5 a^2 tf^2 + a b tf + a c = 0         (H(tf) = 0)

Working in local time tau = t - t0 the first four give ``b' = -a tau_f`` and
``a = 3 (v0 tau_f - D) / tau_f^3``; the last reduces to a scalar equation in
tau_f, solved by safeguarded Newton iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

V_MIN_EFFECTIVE = 0.1


class UnconstrainedSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class PolyTrajectory:
    a: float
    b: float
    c: float
    d: float
    t0: float
    tf: float
    distance: float

    def eval(self, t: float) -> tuple[float, float, float]:
        """Return (u, v, x) at absolute time t in [t0, tf]."""
        span = self.tf - self.t0
        tol = 1e-9 * max(1.0, abs(self.tf))
        if t < self.t0 - tol or t > self.tf + tol:
            raise ValueError(f"t={t} outside [{self.t0}, {self.tf}]")
        tau = min(max(t - self.t0, 0.0), span)
        return self.eval_local(tau)

    def eval_local(self, tau: float) -> tuple[float, float, float]:
        # local-time form avoids cancellation when t0 is large
        a, b1, v0 = self.a, self.local_b, self.local_c
        u = a * tau + b1
        v = 0.5 * a * tau * tau + b1 * tau + v0
        x = a * tau ** 3 / 6.0 + 0.5 * b1 * tau * tau + v0 * tau
        return u, v, x

    @property
    def local_b(self) -> float:
        return self.a * self.t0 + self.b

    @property
    def local_c(self) -> float:
        t0 = self.t0
        return 0.5 * self.a * t0 * t0 + self.b * t0 + self.c

    @property
    def final_speed(self) -> float:
        return self.eval_local(self.tf - self.t0)[1]

    def energy(self) -> float:
        """Integral of 0.5*u^2 over [t0, tf]."""
        # u is linear and vanishes at tf
        return self.local_b ** 2 * (self.tf - self.t0) / 6.0

    def residuals(self, v0: float, beta: float) -> list[float]:
        a, b, c, d, t0, tf = self.a, self.b, self.c, self.d, self.t0, self.tf
        return [
            0.5 * a * t0 ** 2 + b * t0 + c - v0,
            a * t0 ** 3 / 6 + 0.5 * b * t0 ** 2 + c * t0 + d,
            a * tf ** 3 / 6 + 0.5 * b * tf ** 2 + c * tf + d - self.distance,
            a * tf + b,
            beta + 0.5 * a ** 2 * tf ** 2 + a * b * tf + a * c,
        ]


def _hamiltonian_residual(tau: float, v0: float, D: float, beta: float) -> tuple[float, float]:
    """Scaled terminal-Hamiltonian condition and its derivative in tau.

    Multiplying ``beta + a*v(tau)`` by tau^4 gives the quartic
    ``beta tau^4 - 1.5 v0^2 tau^2 + 6 v0 D tau - 4.5 D^2``.
    """
    g = beta * tau ** 4 - 1.5 * v0 * v0 * tau * tau + 6.0 * v0 * D * tau - 4.5 * D * D
    dg = 4.0 * beta * tau ** 3 - 3.0 * v0 * v0 * tau + 6.0 * v0 * D
    return g, dg


def solve_unconstrained(t0: float, v0: float, distance: float, beta: float,
                        v_min: float = 0.0, tol: float = 1e-13, max_iter: int = 100) -> PolyTrajectory:
    if not distance > 0:
        raise ValueError("distance must be positive")
    if beta < 0:
        raise ValueError("beta must be non-negative")
    if not (v0 > 0 or beta > 0):
        raise ValueError("need v0 > 0 or beta > 0")
    D = float(distance)
    if beta == 0.0:
        # H(tf) = 0 forces a = 0: cruise at v0
        return _from_local(0.0, v0, D / v0, t0, D)

    v_floor = max(v_min, V_MIN_EFFECTIVE)
    hi = D / v0 if v0 >= v_floor else D / v_floor
    lo = 0.0
    g_hi, _ = _hamiltonian_residual(hi, v0, D, beta)
    if g_hi <= 0:
        raise UnconstrainedSolveError(
            f"no terminal time in (0, {hi:.6g}] for v0={v0}, D={D}, beta={beta}")
    # g(0) = -4.5 D^2 < 0 < g(hi): bracketed root
    tau = 0.5 * hi
    for _ in range(max_iter):
        g, dg = _hamiltonian_residual(tau, v0, D, beta)
        if g > 0:
            hi = tau
        else:
            lo = tau
        nxt = tau - g / dg if dg != 0 else -1.0
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if abs(nxt - tau) <= tol * max(1.0, tau):
            tau = nxt
            break
        tau = nxt
    else:
        raise UnconstrainedSolveError("terminal-time iteration did not converge")
    a = 3.0 * (v0 * tau - D) / tau ** 3
    return _from_local(a, v0, tau, t0, D)


def _from_local(a: float, v0: float, tau_f: float, t0: float, D: float) -> PolyTrajectory:
    b1 = -a * tau_f
    # shift u = a*tau + b1, v = a tau^2/2 + b1 tau + v0, x = a tau^3/6 + b1 tau^2/2 + v0 tau to absolute t
    b = b1 - a * t0
    c = 0.5 * a * t0 * t0 - b1 * t0 + v0
    d = -a * t0 ** 3 / 6.0 + 0.5 * b1 * t0 * t0 - v0 * t0
    return PolyTrajectory(a=a, b=b, c=c, d=d, t0=t0, tf=t0 + tau_f, distance=D)


def beta_from_alpha(alpha: float, u_sq_max: float) -> float:
    """Time weight equivalent to the convex time/energy mix with weight alpha."""
    if not 0.0 <= alpha < 1.0:
        raise ValueError("alpha must lie in [0, 1)")
    return alpha * u_sq_max / (2.0 * (1.0 - alpha))


def sample_horizon(traj: PolyTrajectory, H: int, Td: float) -> list[float]:
    """Piecewise-constant controls matching the linear u(t) on each interval.

    Each interval takes the interval-average (midpoint) value, which reproduces the
    speed profile exactly at interval boundaries. Past tf the control is zero.
    """
    span = traj.tf - traj.t0
    out = []
    a, b1 = traj.a, traj.local_b
    for h in range(H):
        lo, hi = h * Td, (h + 1) * Td
        if lo >= span:
            out.append(0.0)
            continue
        hi_c = min(hi, span)
        # average of a*tau + b1 over [lo, hi_c], zero beyond tf
        mean = a * 0.5 * (lo + hi_c) + b1
        out.append(mean * (hi_c - lo) / Td)
    return out
