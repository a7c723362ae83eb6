"""Sparse max-LP representation and a dense bounded-variable primal simplex.

The solver is two-phase with Bland's anti-cycling rule, so it is deterministic
for a fixed input and never loops forever. Variable bounds are handled by
bound-shifting inside the solver (nonbasic variables may rest at either bound)
rather than as explicit rows, which keeps the tableau at one row per
constraint.

Tolerances are centralized here: ``PIVOT_TOL`` for pricing/pivot eligibility
and ``FEAS_TOL`` for feasibility certification.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

PIVOT_TOL = 1e-10
FEAS_TOL = 1e-7
REFACTOR_EVERY = 150

LE, EQ, GE = "<=", "=", ">="


@dataclass
class LinearProgram:
    """A maximization LP with named variables and sparse rows."""

    variables: list[tuple[str, float, float]] = field(default_factory=list)
    objective: dict[str, float] = field(default_factory=dict)
    constraints: list[tuple[dict[str, float], str, float]] = field(default_factory=list)
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def add_var(self, name: str, lb: float = 0.0, ub: float = math.inf, obj: float = 0.0) -> str:
        if name in self._index:
            raise ValueError(f"duplicate variable {name!r}")
        if not (lb <= ub):
            raise ValueError(f"variable {name!r} has bounds {lb} > {ub}")
        self._index[name] = len(self.variables)
        self.variables.append((name, float(lb), float(ub)))
        if obj != 0.0:
            self.objective[name] = float(obj)
        return name

    def add_constraint(self, coeffs: dict[str, float], rel: str, rhs: float) -> None:
        if rel not in (LE, EQ, GE):
            raise ValueError(f"unknown relation {rel!r}")
        for name, c in coeffs.items():
            if name not in self._index:
                raise ValueError(f"constraint references undeclared variable {name!r}")
            if not math.isfinite(c):
                raise ValueError(f"non-finite coefficient for {name!r}")
        self.constraints.append((dict(coeffs), rel, float(rhs)))

    def var_index(self, name: str) -> int:
        return self._index[name]

    @property
    def n_vars(self) -> int:
        return len(self.variables)


@dataclass(frozen=True)
class LPSolution:
    status: str  # "optimal" | "infeasible" | "unbounded"
    objective_value: float
    values: dict[str, float]

    def __getitem__(self, name: str) -> float:
        return self.values[name]


class _Tableau:
    """Working state of the bounded-variable simplex (phase-agnostic)."""

    AT_LB, AT_UB, BASIC = 0, 1, 2

    def __init__(self, A: np.ndarray, b: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                 basis: list[int]):
        self.A = A
        self.b = b
        self.lo = lo
        self.hi = hi
        self.m, self.N = A.shape
        self.basis = list(basis)
        self.status = np.full(self.N, self.AT_LB, dtype=np.int8)
        for j in basis:
            self.status[j] = self.BASIC
        self.Binv = np.eye(self.m)
        self.xB = b.copy()
        self.pivots = 0

    def nonbasic_values(self) -> np.ndarray:
        x = np.where(self.status == self.AT_UB, self.hi, self.lo).astype(float)
        x[self.status == self.BASIC] = 0.0
        return x

    def refactor(self) -> None:
        Bmat = self.A[:, self.basis]
        self.Binv = np.linalg.inv(Bmat)
        xN = self.nonbasic_values()
        self.xB = self.Binv @ (self.b - self.A @ xN)

    def full_solution(self) -> np.ndarray:
        x = self.nonbasic_values()
        for r, j in enumerate(self.basis):
            x[j] = self.xB[r]
        return x

    def maximize(self, c: np.ndarray, max_iters: int) -> str:
        """Run Bland-rule simplex on objective c; returns "optimal"/"unbounded"."""
        for _ in range(max_iters):
            cB = c[self.basis]
            y = cB @ self.Binv
            d = c - y @ self.A
            movable = (self.hi - self.lo) > 0.0
            up = (self.status == self.AT_LB) & (d > PIVOT_TOL) & movable
            down = (self.status == self.AT_UB) & (d < -PIVOT_TOL) & movable
            eligible = np.flatnonzero(up | down)
            if eligible.size == 0:
                return "optimal"
            j = int(eligible[0])  # Bland: smallest index enters
            sigma = 1.0 if self.status[j] == self.AT_LB else -1.0
            w = self.Binv @ self.A[:, j]
            delta = -sigma * w  # xB moves by t * delta

            # candidates: (variable index, max step); the entering variable's
            # own range is a candidate too (bound flip)
            best_t = self.hi[j] - self.lo[j]
            best_var = j
            best_row = -1
            for k in range(self.m):
                dk = delta[k]
                var = self.basis[k]
                if dk < -1e-12:
                    t = (self.xB[k] - self.lo[var]) / (-dk)
                elif dk > 1e-12:
                    hb = self.hi[var]
                    if not math.isfinite(hb):
                        continue
                    t = (hb - self.xB[k]) / dk
                else:
                    continue
                if t < -1e-9:
                    t = 0.0
                if t < best_t - 1e-12 or (t < best_t + 1e-12 and var < best_var):
                    best_t = t
                    best_var = var
                    best_row = k
            if not math.isfinite(best_t):
                return "unbounded"
            t = max(best_t, 0.0)
            self.xB += t * delta
            if best_row < 0:
                # bound flip: entering variable jumps to its other bound
                self.status[j] = self.AT_UB if sigma > 0 else self.AT_LB
                continue
            leaving = self.basis[best_row]
            self.status[leaving] = self.AT_LB if delta[best_row] < 0 else self.AT_UB
            enter_val = (self.lo[j] if sigma > 0 else self.hi[j]) + sigma * t
            self.basis[best_row] = j
            self.status[j] = self.BASIC
            self.xB[best_row] = enter_val
            # eta update of Binv
            piv = w[best_row]
            row = self.Binv[best_row, :] / piv
            self.Binv -= np.outer(w, row)
            self.Binv[best_row, :] = row
            self.pivots += 1
            if self.pivots % REFACTOR_EVERY == 0:
                self.refactor()
        raise RuntimeError("simplex iteration limit exceeded")


def solve(lp: LinearProgram) -> LPSolution:
    """Solve a LinearProgram to optimality (or report infeasible/unbounded)."""
    n = lp.n_vars
    m = len(lp.constraints)
    names = [v[0] for v in lp.variables]
    lb = np.array([v[1] for v in lp.variables], dtype=float)
    ub = np.array([v[2] for v in lp.variables], dtype=float)
    if not np.all(np.isfinite(lb)):
        raise ValueError("free variables (infinite lower bound) are not supported")

    # shift structurals to y = x - lb, append one slack per row
    N = n + m
    A = np.zeros((m, N))
    b = np.zeros(m)
    lo = np.zeros(N)
    hi = np.concatenate([ub - lb, np.full(m, math.inf)])
    for i, (coeffs, rel, rhs) in enumerate(lp.constraints):
        shift = 0.0
        for name, cval in coeffs.items():
            jj = lp.var_index(name)
            A[i, jj] = cval
            shift += cval * lb[jj]
        b[i] = rhs - shift
        if rel == LE:
            A[i, n + i] = 1.0
        elif rel == GE:
            A[i, n + i] = -1.0
        else:
            hi[n + i] = 0.0
            A[i, n + i] = 1.0
    neg = b < 0
    A[neg, :] *= -1.0
    b[neg] *= -1.0

    # artificial columns form the starting basis
    Afull = np.hstack([A, np.eye(m)])
    lo_full = np.concatenate([lo, np.zeros(m)])
    hi_full = np.concatenate([hi, np.full(m, math.inf)])
    tab = _Tableau(Afull, b, lo_full, hi_full, basis=list(range(N, N + m)))

    max_iters = 50000 + 200 * (N + m)
    c1 = np.zeros(N + m)
    c1[N:] = -1.0
    tab.maximize(c1, max_iters)
    art_sum = float(np.sum(tab.full_solution()[N:]))
    if art_sum > FEAS_TOL:
        return LPSolution("infeasible", math.nan, {})

    # pin artificials to zero and optimize the real objective
    tab.hi[N:] = 0.0
    tab.refactor()
    c2 = np.zeros(N + m)
    for name, cval in lp.objective.items():
        c2[lp.var_index(name)] = cval
    status = tab.maximize(c2, max_iters)
    if status == "unbounded":
        return LPSolution("unbounded", math.inf, {})

    x = tab.full_solution()[:n] + lb
    x = np.minimum(np.maximum(x, lb), ub)  # snap roundoff into the box
    values = {names_j: float(x[j]) for j, names_j in enumerate(names)}
    obj = sum(cval * values[name] for name, cval in lp.objective.items())
    return LPSolution("optimal", float(obj), values)


def check_feasible(lp: LinearProgram, values: dict[str, float]) -> float:
    """Largest absolute constraint/bound violation of ``values``.

    Raises KeyError when ``values`` misses a declared variable or names an
    undeclared one.
    """
    declared = {v[0] for v in lp.variables}
    unknown = set(values) - declared
    if unknown:
        raise KeyError(f"unknown variable names: {sorted(unknown)}")
    missing = declared - set(values)
    if missing:
        raise KeyError(f"missing variable values: {sorted(missing)}")
    worst = 0.0
    for name, lo, hi in lp.variables:
        x = values[name]
        worst = max(worst, lo - x, x - hi)
    for coeffs, rel, rhs in lp.constraints:
        lhs = sum(c * values[name] for name, c in coeffs.items())
        if rel == LE:
            worst = max(worst, lhs - rhs)
        elif rel == GE:
            worst = max(worst, rhs - lhs)
        else:
            worst = max(worst, abs(lhs - rhs))
    return worst


def _lp_safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.]", "_", name)


def export_lp_text(lp: LinearProgram) -> str:
    """Render in the standard LP text file format (for external cross-checks)."""
    out = ["Maximize", " obj:"]
    terms = [f" {c:+g} {_lp_safe(v)}" for v, c in lp.objective.items()]
    out[1] += "".join(terms) if terms else " 0 " + _lp_safe(lp.variables[0][0])
    out.append("Subject To")
    for i, (coeffs, rel, rhs) in enumerate(lp.constraints):
        row = "".join(f" {c:+g} {_lp_safe(v)}" for v, c in coeffs.items())
        op = {LE: "<=", GE: ">=", EQ: "="}[rel]
        out.append(f" c{i}:{row} {op} {rhs:g}")
    out.append("Bounds")
    for name, lo, hi in lp.variables:
        hi_s = "+inf" if math.isinf(hi) else f"{hi:g}"
        out.append(f" {lo:g} <= {_lp_safe(name)} <= {hi_s}")
    out.append("End")
    return "\n".join(out) + "\n"
