"""Small dense convex QP solver.

Solves::

    minimize    0.5 x' P x + q' x
    subject to  A x >= b,   lb <= x <= ub

with the Goldfarb-Idnani dual active-set method. The method starts from the
unconstrained minimizer and adds violated constraints one at a time while
keeping dual feasibility, so it terminates either at the optimum or with a
proof of infeasibility: a violated row whose normal is a non-negative
combination of the active normals with no room to move.

Sizes here are desk scale (a few dozen variables), so the active-set
algebra is recomputed from scratch on each iteration instead of updating
factorizations.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

FEAS_TOL = 1e-10
_ZERO = 1e-14


class QpStatus(enum.Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITER = "MaxIter"


@dataclass
class QpProblem:
    P: np.ndarray
    q: np.ndarray
    A: np.ndarray = None
    b: np.ndarray = None
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    tags: Sequence[str] = ()

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        q = np.asarray(self.q, dtype=float).reshape(-1)
        n = q.size
        if P.shape != (n, n):
            raise ValueError(f"cost matrix shape {P.shape} does not match {n} variables")
        self.P = 0.5 * (P + P.T)
        self.q = q
        if self.A is None:
            self.A = np.zeros((0, n))
            self.b = np.zeros(0)
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n) if np.size(self.A) else np.zeros((0, n))
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.A.shape[0] != self.b.size:
            raise ValueError("row count of A does not match b")
        for name in ("lb", "ub"):
            val = getattr(self, name)
            if val is not None:
                val = np.broadcast_to(np.asarray(val, dtype=float), (n,)).copy()
                setattr(self, name, val)
        if self.lb is not None and self.ub is not None and np.any(self.lb > self.ub):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def n(self) -> int:
        return self.q.size

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.P @ x + self.q @ x)

    def all_rows(self) -> tuple[np.ndarray, np.ndarray]:
        """General rows followed by box rows, all in ``C x >= d`` form."""
        n = self.n
        blocks, rhs = [self.A], [self.b]
        if self.lb is not None:
            keep = np.isfinite(self.lb)
            blocks.append(np.eye(n)[keep])
            rhs.append(self.lb[keep])
        if self.ub is not None:
            keep = np.isfinite(self.ub)
            blocks.append(-np.eye(n)[keep])
            rhs.append(-self.ub[keep])
        return np.vstack(blocks), np.concatenate(rhs)

    def max_violation(self, x) -> float:
        C, d = self.all_rows()
        if not d.size:
            return 0.0
        return float(max(0.0, np.max(d - C @ np.asarray(x, dtype=float))))

    def dump(self, path) -> None:
        """Write the problem as JSON for cross-checking with another solver."""
        doc = {
            "P": self.P.tolist(), "q": self.q.tolist(),
            "A": self.A.tolist(), "b": self.b.tolist(),
            "lb": None if self.lb is None else self.lb.tolist(),
            "ub": None if self.ub is None else self.ub.tolist(),
            "tags": list(self.tags),
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)

    @classmethod
    def load(cls, path) -> "QpProblem":
        with open(path) as fh:
            doc = json.load(fh)
        return cls(doc["P"], doc["q"], doc["A"], doc["b"], doc["lb"], doc["ub"], doc.get("tags", ()))


@dataclass
class QpSolution:
    x: Optional[np.ndarray]
    objective: float
    status: QpStatus
    iterations: int = 0
    active: list = field(default_factory=list)
    multipliers: Optional[np.ndarray] = None
    evidence: list = field(default_factory=list)
    kkt_residual: float = float("nan")
    max_violation: float = float("nan")

    @property
    def ok(self) -> bool:
        return self.status is QpStatus.OPTIMAL


def _inverse_hessian(P: np.ndarray) -> np.ndarray:
    n = P.shape[0]
    scale = max(1.0, float(np.max(np.abs(np.diag(P)))) if n else 1.0)
    reg = 0.0
    for _ in range(8):
        try:
            L = np.linalg.cholesky(P + reg * np.eye(n))
            Linv = np.linalg.inv(L)
            return Linv.T @ Linv
        except np.linalg.LinAlgError:
            # positive semidefinite cost: a tiny ridge keeps the dual method well posed
            reg = 1e-10 * scale if reg == 0.0 else reg * 100.0
    raise ValueError("cost matrix is not positive semidefinite")


def solve(problem: QpProblem, max_iter: Optional[int] = None) -> QpSolution:
    C, d = problem.all_rows()
    Ginv = _inverse_hessian(problem.P)
    return _dual_active_set(problem, C, d, Ginv, max_iter)


def _dual_active_set(problem, C, d, Ginv, max_iter) -> QpSolution:
    n = problem.n
    m = d.size
    norms = np.sqrt(np.einsum("ij,ij->i", C, C)) if m else np.zeros(0)

    # rows with no coefficients are either vacuous or certify infeasibility at once
    zero_rows = norms <= _ZERO
    if np.any(zero_rows & (d > FEAS_TOL)):
        bad = int(np.flatnonzero(zero_rows & (d > FEAS_TOL))[0])
        return QpSolution(None, float("nan"), QpStatus.INFEASIBLE, evidence=[bad])
    live = ~zero_rows
    Cn = np.zeros_like(C)
    dn = np.zeros_like(d)
    Cn[live] = C[live] / norms[live, None]
    dn[live] = d[live] / norms[live]

    x = -Ginv @ problem.q
    active: list[int] = []
    u = np.zeros(0)
    limit = max_iter if max_iter is not None else 10 * (m + n) + 50
    it = 0
    while True:
        s = Cn @ x - dn if m else np.zeros(0)
        if m:
            s[~live] = 0.0
            if active:
                s[active] = np.maximum(s[active], 0.0)
        if not m or s.min() >= -FEAS_TOL:
            return _finish(problem, x, active, u, Cn, norms, it)
        p = int(np.argmin(s))
        npv = Cn[p]
        u_plus = np.append(u, 0.0)
        while True:
            it += 1
            if it > limit:
                return QpSolution(x, problem.objective(x), QpStatus.MAX_ITER, it, list(active))
            Gn = Ginv @ npv
            if active:
                N = Cn[active].T
                GN = Ginv @ N
                M = N.T @ GN
                try:
                    r = np.linalg.solve(M, GN.T @ npv)
                except np.linalg.LinAlgError:
                    r = np.linalg.lstsq(M, GN.T @ npv, rcond=None)[0]
                z = Gn - GN @ r
            else:
                r = np.zeros(0)
                z = Gn
            # largest dual step keeping active multipliers non-negative
            t1, drop = np.inf, -1
            if r.size:
                pos = r > _ZERO
                if np.any(pos):
                    ratios = np.full(r.size, np.inf)
                    ratios[pos] = u_plus[:-1][pos] / r[pos]
                    drop = int(np.argmin(ratios))
                    t1 = float(ratios[drop])
            zn = float(z @ npv)
            sp = float(npv @ x - dn[p])
            # z vanishes when the new normal lies in the span of the active ones
            degenerate = len(active) >= n or zn <= 1e-11 * float(npv @ Gn)
            t2 = np.inf if degenerate else -sp / zn
            t = min(t1, t2)
            if not np.isfinite(t):
                return QpSolution(None, float("nan"), QpStatus.INFEASIBLE, it,
                                  list(active), evidence=sorted(active + [p]))
            if not np.isfinite(t2):
                # pure dual step: p depends on the active normals
                u_plus[:-1] -= t * r
                u_plus[-1] += t
                u_plus = np.delete(u_plus, drop)
                del active[drop]
                continue
            x = x + t * z
            u_plus[:-1] -= t * r
            u_plus[-1] += t
            if t2 <= t1:
                active.append(p)
                u = u_plus
                break
            u_plus = np.delete(u_plus, drop)
            del active[drop]


def _finish(problem, x, active, u, Cn, norms, it) -> QpSolution:
    mult = np.zeros(0)
    grad = problem.P @ x + problem.q
    if active:
        mult = np.maximum(u, 0.0) / norms[active]
        C_act = Cn[active] * norms[active, None]
        resid = grad - C_act.T @ mult
    else:
        resid = grad
    return QpSolution(
        x=x,
        objective=problem.objective(x),
        status=QpStatus.OPTIMAL,
        iterations=it,
        active=list(active),
        multipliers=mult,
        kkt_residual=float(np.max(np.abs(resid))) if resid.size else 0.0,
        max_violation=problem.max_violation(x),
    )
