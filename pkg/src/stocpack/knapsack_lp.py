"""Builders for the four knapsack LPs.

Start-time convention: x[i,t] means "t budget units are consumed before item i
starts", t in [0, B-1]. ER(i, t) is then the expected reward of item i when it
starts with B-t units left, so ER(i, 0) is the full-budget reward, and the
truncated-load constraint at time t counts starts strictly before t.

The compact ("poly") variants group start times into power-of-two classes:
class 0 covers start time {0}, class j covers [2^j - 1, 2^(j+1) - 1), capped
at B-1. Each class's objective coefficient is the ER at its last covered slot,
which is the reward guaranteed no matter where inside the class an item lands.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .lp import GE, LE, LinearProgram
from .model import ItemDist, StocKInstance, validate_stock


def expected_truncated_size(item: ItemDist, t: int) -> float:
    """E[min(S, t)]."""
    if t < 0:
        raise ValueError("t must be >= 0")
    return sum(p * min(s, t) for s, p in item.probs.items())


def expected_start_reward(item: ItemDist, t: int, budget: int) -> float:
    """Expected reward if the item starts after t units are consumed."""
    if not (0 <= t <= budget):
        raise ValueError(f"start time {t} outside [0, {budget}]")
    return sum(p * item.reward(s) for s, p in item.probs.items() if s <= budget - t)


def _require_valid(instance: StocKInstance) -> None:
    problems = validate_stock(instance)
    if problems:
        raise ValueError("invalid instance: " + "; ".join(problems))


@dataclass(frozen=True)
class NoCancelLPIndex:
    budget: int
    n: int

    def var(self, i: int, t: int) -> str:
        return f"x_{i}_{t}"

    def start_times(self) -> range:
        return range(self.budget)

    def solution_matrix(self, values: dict[str, float]) -> list[list[float]]:
        return [[values[self.var(i, t)] for t in self.start_times()] for i in range(self.n)]


def build_lp_nocancel(instance: StocKInstance) -> tuple[LinearProgram, NoCancelLPIndex]:
    _require_valid(instance)
    B = instance.budget
    lp = LinearProgram()
    index = NoCancelLPIndex(budget=B, n=instance.n)
    for i, item in enumerate(instance.items):
        prev = math.inf
        for t in range(B):
            er = expected_start_reward(item, t, B)
            assert er <= prev + 1e-12, "ER must be non-increasing in the start time"
            prev = er
            lp.add_var(index.var(i, t), 0.0, 1.0, obj=er)
        lp.add_constraint({index.var(i, t): 1.0 for t in range(B)}, LE, 1.0)
    for t in range(1, B + 1):
        coeffs = {}
        for i, item in enumerate(instance.items):
            load = expected_truncated_size(item, t)
            if load == 0.0:
                continue
            for tp in range(min(t, B)):
                coeffs[index.var(i, tp)] = load
        lp.add_constraint(coeffs, LE, 2.0 * t)
    return lp, index


def poly_classes(budget: int) -> list[range]:
    """Start-time spans of the power-of-two classes, covering [0, B-1]."""
    spans = []
    j = 0
    while 2**j <= budget:
        spans.append(range(2**j - 1, min(2 ** (j + 1) - 1, budget)))
        j += 1
    return spans


@dataclass(frozen=True)
class PolyNoCancelLPIndex:
    budget: int
    n: int

    def var(self, i: int, j: int) -> str:
        return f"xbar_{i}_{j}"

    def classes(self) -> list[range]:
        return poly_classes(self.budget)


def build_poly_lp_nocancel(instance: StocKInstance) -> tuple[LinearProgram, PolyNoCancelLPIndex]:
    _require_valid(instance)
    B = instance.budget
    lp = LinearProgram()
    index = PolyNoCancelLPIndex(budget=B, n=instance.n)
    spans = index.classes()
    for i, item in enumerate(instance.items):
        for j, span in enumerate(spans):
            coeff = expected_start_reward(item, span[-1], B)
            lp.add_var(index.var(i, j), 0.0, 1.0, obj=coeff)
        lp.add_constraint({index.var(i, j): 1.0 for j in range(len(spans))}, LE, 1.0)
    for j in range(len(spans)):
        horizon = 2 ** (j + 1)
        coeffs = {}
        for i, item in enumerate(instance.items):
            load = expected_truncated_size(item, horizon)
            if load == 0.0:
                continue
            for jp in range(j + 1):
                coeffs[index.var(i, jp)] = load
        lp.add_constraint(coeffs, LE, 2.0 * 2**j)
    return lp, index


def expand_poly_solution(values: dict[str, float], index: PolyNoCancelLPIndex) -> dict[str, float]:
    """Spread class masses uniformly over their spans (feasible for LP_NoCancel)."""
    flat = NoCancelLPIndex(budget=index.budget, n=index.n)
    out = {flat.var(i, t): 0.0 for i in range(index.n) for t in flat.start_times()}
    for i in range(index.n):
        for j, span in enumerate(index.classes()):
            mass = values[index.var(i, j)]
            for t in span:
                out[flat.var(i, t)] = mass / len(span)
    return out


@dataclass(frozen=True)
class SmallLPIndex:
    budget: int
    n: int

    def v(self, i: int, t: int) -> str:
        return f"v_{i}_{t}"

    def s(self, i: int, t: int) -> str:
        return f"s_{i}_{t}"

    def steps(self) -> range:
        return range(self.budget + 1)


def early_reward_horizon(budget: int) -> int:
    return budget // 2


def _check_early(instance: StocKInstance) -> None:
    half = early_reward_horizon(instance.budget)
    for i, item in enumerate(instance.items):
        for s, r in item.rewards.items():
            if s > half and r > 0.0 and item.prob(s) > 0.0:
                raise ValueError(
                    f"item {i} has positive reward at size {s} > B/2 = {half}; "
                    "not an early instance"
                )


def build_lp_small(instance: StocKInstance) -> tuple[LinearProgram, SmallLPIndex]:
    _require_valid(instance)
    _check_early(instance)
    B = instance.budget
    half = early_reward_horizon(B)
    lp = LinearProgram()
    index = SmallLPIndex(budget=B, n=instance.n)
    for i, item in enumerate(instance.items):
        for t in index.steps():
            hz = item.hazard(t)
            obj = item.reward(t) * hz if 1 <= t <= half else 0.0
            lb = 1.0 if t == 0 else 0.0
            lp.add_var(index.v(i, t), lb, 1.0, obj=obj)
        for t in index.steps():
            lp.add_var(index.s(i, t), 0.0, 1.0)
        for t in range(B):
            lp.add_constraint(
                {index.v(i, t): 1.0, index.s(i, t): -1.0, index.v(i, t + 1): -1.0}, "=", 0.0
            )
        lp.add_constraint({index.v(i, B): 1.0, index.s(i, B): -1.0}, "=", 0.0)
        for t in index.steps():
            hz = item.hazard(t)
            if hz > 0.0:
                lp.add_constraint({index.s(i, t): 1.0, index.v(i, t): -hz}, GE, 0.0)
    budget_row = {
        index.s(i, t): float(t) for i in range(instance.n) for t in index.steps() if t > 0
    }
    lp.add_constraint(budget_row, LE, float(B))
    return lp, index


def quantize_instance(instance: StocKInstance) -> tuple[StocKInstance, list[int]]:
    """Group sizes into [2^j, 2^(j+1)) classes; rewards are mass-averaged.

    Returns the quantized instance (support on powers of two) and the list of
    quantized sizes.
    """
    B = instance.budget
    qsizes = []
    j = 0
    while 2**j <= B:
        qsizes.append(2**j)
        j += 1
    items = []
    for item in instance.items:
        probs: dict[int, float] = {}
        rewards: dict[int, float] = {}
        for q in qsizes:
            mass = sum(p for s, p in item.probs.items() if q <= s < 2 * q)
            if mass <= 0.0:
                continue
            wsum = sum(p * item.reward(s) for s, p in item.probs.items() if q <= s < 2 * q)
            probs[q] = mass
            rewards[q] = wsum / mass
        items.append(ItemDist(probs=probs, rewards=rewards))
    return StocKInstance(budget=B, items=items), qsizes


@dataclass(frozen=True)
class PolySmallLPIndex:
    """Index of the quantized small LP.

    ``points`` are the stopping points 0, 1, 2, 4, ..., 2^J: point 0 is
    "never started", point 2^j is "stopped after the j-th quantized class".
    """

    budget: int
    n: int
    points: tuple[int, ...]
    quantized: StocKInstance

    def v(self, i: int, k: int) -> str:
        return f"vbar_{i}_{k}"

    def s(self, i: int, k: int) -> str:
        return f"sbar_{i}_{k}"


def build_poly_lp_small(instance: StocKInstance) -> tuple[LinearProgram, PolySmallLPIndex]:
    _require_valid(instance)
    _check_early(instance)
    B = instance.budget
    half = early_reward_horizon(B)
    quantized, qsizes = quantize_instance(instance)
    points = [0] + qsizes
    K = len(points) - 1
    lp = LinearProgram()
    index = PolySmallLPIndex(budget=B, n=instance.n, points=tuple(points), quantized=quantized)
    for i, item in enumerate(quantized.items):
        for k, q in enumerate(points):
            hz = item.hazard(q) if q > 0 else 0.0
            obj = item.reward(q) * hz if 0 < q <= half else 0.0
            lb = 1.0 if k == 0 else 0.0
            lp.add_var(index.v(i, k), lb, 1.0, obj=obj)
        for k in range(K + 1):
            lp.add_var(index.s(i, k), 0.0, 1.0)
        for k in range(K):
            lp.add_constraint(
                {index.v(i, k): 1.0, index.s(i, k): -1.0, index.v(i, k + 1): -1.0}, "=", 0.0
            )
        lp.add_constraint({index.v(i, K): 1.0, index.s(i, K): -1.0}, "=", 0.0)
        for k, q in enumerate(points):
            if q == 0:
                continue
            hz = item.hazard(q)
            if hz > 0.0:
                lp.add_constraint({index.s(i, k): 1.0, index.v(i, k): -hz}, GE, 0.0)
    budget_row: dict[str, float] = {}
    for i in range(instance.n):
        for k, q in enumerate(points):
            if q > 0:
                budget_row[index.s(i, k)] = float(q)
    lp.add_constraint(budget_row, LE, float(B))
    return lp, index
