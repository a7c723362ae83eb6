"""Builders for the bandit LPs: trees, layered DAGs, and budgeted exploitation.

Time-indexed variables: z[u,t] is the probability of playing state u at time t,
w[u,t] the probability of first entering u at t (for LP4, x[u,t] is the
probability of exploiting u at t). Variables that are provably zero in any
feasible solution are not created: a state at depth d cannot be played before
time d+1, roots are entered exactly once at time 1 (w[root,1] = 1, later
entries pinned to zero), and non-roots cannot be entered at time 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .lp import GE, LE, LinearProgram
from .model import MABInstance, validate_mab


@dataclass(frozen=True)
class MabLPIndex:
    budget: int
    kind: str  # "tree" | "dag" | "exploit"
    z: dict[tuple[str, int], str] = field(repr=False)
    w: dict[tuple[str, int], str] = field(repr=False)
    x: dict[tuple[str, int], str] = field(repr=False)
    depth: dict[str, int] = field(repr=False)
    arm_of: dict[str, int] = field(repr=False)

    def z_val(self, values: dict[str, float], u: str, t: int) -> float:
        name = self.z.get((u, t))
        return values[name] if name else 0.0

    def w_val(self, values: dict[str, float], u: str, t: int) -> float:
        name = self.w.get((u, t))
        return values[name] if name else 0.0

    def x_val(self, values: dict[str, float], u: str, t: int) -> float:
        name = self.x.get((u, t))
        return values[name] if name else 0.0


def _require_valid(instance: MABInstance, shapes: tuple[str, ...]) -> None:
    problems = validate_mab(instance)
    if problems:
        raise ValueError("invalid instance: " + "; ".join(problems))
    for i, arm in enumerate(instance.arms):
        if arm.shape not in shapes:
            raise ValueError(f"arm {i} has shape {arm.shape!r}, expected one of {shapes}")


def _build(instance: MABInstance, kind: str) -> tuple[LinearProgram, MabLPIndex]:
    B = instance.budget
    lp = LinearProgram()
    zmap: dict[tuple[str, int], str] = {}
    wmap: dict[tuple[str, int], str] = {}
    xmap: dict[tuple[str, int], str] = {}
    depth: dict[str, int] = {}
    arm_of: dict[str, int] = {}
    with_x = kind == "exploit"

    for ai, arm in enumerate(instance.arms):
        d = arm.depths()
        parents = arm.parents()
        for u in arm.states:
            depth[u] = d.get(u, B + 1)
            arm_of[u] = ai
        for u in arm.states:
            du = depth[u]
            for t in range(du + 1, B + 1):
                name = lp.add_var(f"z[{u},{t}]", 0.0, 1.0,
                                  obj=0.0 if with_x else arm.reward(u))
                zmap[(u, t)] = name
            if with_x:
                for t in range(du + 1, B + 1):
                    xmap[(u, t)] = lp.add_var(f"x[{u},{t}]", 0.0, 1.0, obj=arm.reward(u))
        wmap[(arm.root, 1)] = lp.add_var(f"w[{arm.root},1]", 1.0, 1.0)
        for u in arm.states:
            if u == arm.root:
                continue
            for t in range(depth[u] + 1, B + 1):
                wmap[(u, t)] = lp.add_var(f"w[{u},{t}]", 0.0, 1.0)

        # arrival identities: entering u at t means an in-neighbor was played at t-1
        for u in arm.states:
            if u == arm.root:
                continue
            for t in range(depth[u] + 1, B + 1):
                row = {wmap[(u, t)]: 1.0}
                for v, p in parents[u]:
                    name = zmap.get((v, t - 1))
                    if name:
                        row[name] = row.get(name, 0.0) - p
                lp.add_constraint(row, "=", 0.0)

        # cumulative play <= cumulative arrival, per state and time
        for u in arm.states:
            for t in range(depth[u] + 1, B + 1):
                row: dict[str, float] = {}
                for tp in range(1, t + 1):
                    name = wmap.get((u, tp))
                    if name:
                        row[name] = row.get(name, 0.0) + 1.0
                    zn = zmap.get((u, tp))
                    if zn:
                        row[zn] = row.get(zn, 0.0) - 1.0
                    if with_x:
                        xn = xmap.get((u, tp))
                        if xn:
                            row[xn] = row.get(xn, 0.0) - 1.0
                lp.add_constraint(row, GE, 0.0)

    # one play per time step across all arms
    for t in range(1, B + 1):
        row = {name: 1.0 for (u, tt), name in zmap.items() if tt == t}
        if row:
            lp.add_constraint(row, LE, 1.0)

    if with_x:
        row = {name: 1.0 for name in xmap.values()}
        if row:
            lp.add_constraint(row, LE, float(instance.exploit_budget))

    index = MabLPIndex(budget=B, kind=kind, z=zmap, w=wmap, x=xmap,
                       depth=depth, arm_of=arm_of)
    return lp, index


def build_lp_mab(instance: MABInstance) -> tuple[LinearProgram, MabLPIndex]:
    _require_valid(instance, ("tree",))
    return _build(instance, "tree")


def build_lp_mabdag(instance: MABInstance) -> tuple[LinearProgram, MabLPIndex]:
    _require_valid(instance, ("layered-dag",))
    return _build(instance, "dag")


def build_lp4(instance: MABInstance) -> tuple[LinearProgram, MabLPIndex]:
    if instance.exploit_budget is None:
        raise ValueError("LP4 requires an exploit budget K")
    _require_valid(instance, ("tree",))
    return _build(instance, "exploit")
