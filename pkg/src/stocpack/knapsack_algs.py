"""Randomized rounding and execution for the knapsack pipelines.

Start-time rounding drops each item with probability 3/4 and otherwise samples
its deadline from the LP start distribution; execution attempts items in
deadline order and lets started items run to completion. The cancellation
rounding reproduces the LP stopping law exactly: at each decision point t the
item is canceled with probability q[t], completes with the hazard probability,
or processes one more unit, and these outcomes are drawn as one mutually
exclusive choice so that P(stop at t | kept) = s*[t] for every t.

Executions take a seeded random source and are pure given the seed; the draw
order is fixed (one keep/deadline draw per item in index order, then draws in
processing order), so runs are replayable.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Optional

from .knapsack_lp import (
    NoCancelLPIndex,
    PolyNoCancelLPIndex,
    SmallLPIndex,
    build_lp_nocancel,
    build_lp_small,
    build_poly_lp_nocancel,
    build_poly_lp_small,
    early_reward_horizon,
)
from .lp import LPSolution, solve
from .model import ItemDist, StocKInstance

IGNORED = math.inf
V_FLOOR = 1e-12  # v* below this is "never reached"; its q is irrelevant


@dataclass(frozen=True)
class ItemOutcome:
    kind: str  # "completed" | "canceled" | "never-started" | "overflowed"
    at: Optional[int] = None  # size for completed/overflowed, step for canceled


@dataclass(frozen=True)
class KnapsackRunResult:
    total_reward: float
    outcomes: tuple[ItemOutcome, ...]
    budget_consumed: int


@dataclass(frozen=True)
class StartTimeSchedule:
    deadlines: dict[int, int]  # item -> D_i, ignored items absent
    order: tuple[int, ...]  # non-ignored items by ascending (D_i, index)


@dataclass(frozen=True)
class CancelPolicy:
    keep: tuple[bool, ...]
    q: tuple[tuple[float, ...], ...]  # q[i][t], t in [0, B]
    order: tuple[int, ...]  # kept items, ascending index


def _schedule(deadlines: dict[int, int]) -> StartTimeSchedule:
    order = tuple(sorted(deadlines, key=lambda i: (deadlines[i], i)))
    return StartTimeSchedule(deadlines=deadlines, order=order)


def round_nocancel(solution: LPSolution, index: NoCancelLPIndex, rng: random.Random
                   ) -> StartTimeSchedule:
    """Sample D_i = t with probability x*[i,t]/4, else ignore the item."""
    deadlines = {}
    for i in range(index.n):
        u = rng.random()
        acc = 0.0
        for t in index.start_times():
            acc += solution.values[index.var(i, t)] / 4.0
            if u < acc:
                deadlines[i] = t
                break
    return _schedule(deadlines)


def round_poly_nocancel(solution: LPSolution, index: PolyNoCancelLPIndex, rng: random.Random
                        ) -> StartTimeSchedule:
    """Two-stage rule: class j w.p. xbar[i,j]/4, then a uniform slot inside it."""
    spans = index.classes()
    deadlines = {}
    for i in range(index.n):
        u = rng.random()
        acc = 0.0
        for j, span in enumerate(spans):
            acc += solution.values[index.var(i, j)] / 4.0
            if u < acc:
                deadlines[i] = span[int(rng.random() * len(span))]
                break
    return _schedule(deadlines)


def sample_size(item: ItemDist, rng: random.Random) -> int:
    u = rng.random()
    acc = 0.0
    for s in item.support():
        acc += item.prob(s)
        if u < acc:
            return s
    return item.support()[-1]


def execute_nocancel(instance: StocKInstance, schedule: StartTimeSchedule,
                     rng: random.Random) -> KnapsackRunResult:
    """Attempt items in deadline order; add item i iff occupied space <= D_i."""
    B = instance.budget
    outcomes: list[ItemOutcome] = [ItemOutcome("never-started")] * instance.n
    occupied = 0
    reward = 0.0
    for i in schedule.order:
        if occupied <= schedule.deadlines[i]:
            s = sample_size(instance.items[i], rng)
            if occupied + s <= B:
                reward += instance.items[i].reward(s)
                outcomes[i] = ItemOutcome("completed", s)
            else:
                outcomes[i] = ItemOutcome("overflowed", s)
            occupied += s
    return KnapsackRunResult(reward, tuple(outcomes), occupied)


def split_early_late(instance: StocKInstance) -> tuple[StocKInstance, StocKInstance]:
    """Zero out rewards above/below the floor(B/2) threshold; sizes unchanged."""
    half = early_reward_horizon(instance.budget)
    early_items, late_items = [], []
    for item in instance.items:
        early_items.append(ItemDist(
            probs=dict(item.probs),
            rewards={s: r for s, r in item.rewards.items() if s <= half},
        ))
        late_items.append(ItemDist(
            probs=dict(item.probs),
            rewards={s: r for s, r in item.rewards.items() if s > half},
        ))
    return (StocKInstance(instance.budget, early_items),
            StocKInstance(instance.budget, late_items))


def _cancel_schedule(v: list[float], s: list[float], item: ItemDist) -> list[float]:
    q = []
    for t in range(len(v)):
        if v[t] <= V_FLOOR:
            q.append(0.0)
        else:
            q.append(min(1.0, max(0.0, s[t] / v[t] - item.hazard(t))))
    return q


def round_small(solution: LPSolution, index: SmallLPIndex, instance: StocKInstance,
                rng: random.Random, keep_prob: float = 0.25) -> CancelPolicy:
    """Keep each item w.p. 1/4; q[i,t] = s*/v* - hazard, clamped to [0,1]."""
    keep = tuple(rng.random() < keep_prob for _ in range(index.n))
    qs = []
    for i, item in enumerate(instance.items):
        v = [solution.values[index.v(i, t)] for t in index.steps()]
        s = [solution.values[index.s(i, t)] for t in index.steps()]
        qs.append(tuple(_cancel_schedule(v, s, item)))
    order = tuple(i for i in range(index.n) if keep[i])
    return CancelPolicy(keep=keep, q=tuple(qs), order=order)


def stopping_law(policy: CancelPolicy, instance: StocKInstance, i: int) -> list[float]:
    """Exact forward-recursion law P(stop at t | kept) induced by the policy."""
    item = instance.items[i]
    q = policy.q[i]
    law = []
    reach = 1.0
    for t in range(len(q)):
        hz = min(item.hazard(t), 1.0 - q[t])
        law.append(reach * (q[t] + hz))
        reach *= 1.0 - q[t] - hz
    return law


def execute_small(instance: StocKInstance, policy: CancelPolicy,
                  rng: random.Random) -> KnapsackRunResult:
    """Run kept items in order; reward only from completions within budget."""
    B = instance.budget
    outcomes: list[ItemOutcome] = [ItemOutcome("never-started")] * instance.n
    total = 0
    reward = 0.0
    for i in policy.order:
        item = instance.items[i]
        q = policy.q[i]
        stopped = False
        for t in range(len(q)):
            hz = min(item.hazard(t), 1.0 - q[t])
            u = rng.random()
            if u < q[t]:
                outcomes[i] = ItemOutcome("canceled", t)
                total += t
                stopped = True
                break
            if u < q[t] + hz:
                if total + t <= B:
                    reward += item.reward(t)
                outcomes[i] = ItemOutcome("completed", t)
                total += t
                stopped = True
                break
        if not stopped:  # ran off the schedule; item has no mass left anyway
            outcomes[i] = ItemOutcome("canceled", len(q) - 1)
            total += len(q) - 1
    return KnapsackRunResult(reward, tuple(outcomes), total)


def _deadline_plan(values: dict[str, float], names, divisor: float = 4.0):
    """Cumulative (threshold, deadline) pairs per item; zero slots dropped.

    Walking these with one uniform reproduces the reference rounding draws
    exactly (zero-probability slots never change the cumulative thresholds).
    """
    plan = []
    for row in names:
        acc = 0.0
        cum = []
        for t, name in row:
            p = values[name] / divisor
            if p > 0.0:
                acc += p
                cum.append((acc, t))
        plan.append(cum)
    return plan


def _size_plan(instance: StocKInstance):
    plan = []
    for item in instance.items:
        acc = 0.0
        cum = []
        for s in item.support():
            acc += item.prob(s)
            cum.append((acc, s, item.reward(s)))
        plan.append(cum)
    return plan


def _sample_deadlines(plan, rng: random.Random) -> dict[int, int]:
    deadlines = {}
    for i, cum in enumerate(plan):
        u = rng.random()
        for acc, t in cum:
            if u < acc:
                deadlines[i] = t
                break
    return deadlines


class NoCancelPipeline:
    """LP_NoCancel -> StocK-NoCancel rounding, with the LP solved once."""

    def __init__(self, instance: StocKInstance):
        self.instance = instance
        self.lp, self.index = build_lp_nocancel(instance)
        self.solution = solve(self.lp)
        names = [[(t, self.index.var(i, t)) for t in self.index.start_times()]
                 for i in range(instance.n)]
        self._deadlines = _deadline_plan(self.solution.values, names)
        self._sizes = _size_plan(instance)

    @property
    def lp_opt(self) -> float:
        return self.solution.objective_value

    def run(self, rng: random.Random) -> KnapsackRunResult:
        schedule = round_nocancel(self.solution, self.index, rng)
        return execute_nocancel(self.instance, schedule, rng)

    def run_reward(self, rng: random.Random) -> float:
        reward, _ = self.run_tracked(rng)
        return reward

    def run_tracked(self, rng: random.Random) -> tuple[float, list[tuple[int, int, bool]]]:
        """Fast mirror of run(); also reports (item, deadline, failed) attempts."""
        B = self.instance.budget
        deadlines = _sample_deadlines(self._deadlines, rng)
        order = sorted(deadlines, key=lambda i: (deadlines[i], i))
        occupied = 0
        reward = 0.0
        attempts = []
        for i in order:
            d = deadlines[i]
            if occupied > d:
                attempts.append((i, d, True))
                continue
            attempts.append((i, d, False))
            u = rng.random()
            for acc, s, r in self._sizes[i]:
                if u < acc:
                    break
            if occupied + s <= B:
                reward += r
            occupied += s
        return reward, attempts


class PolyNoCancelPipeline:
    """PolyLP_L -> two-stage start-time rounding."""

    def __init__(self, instance: StocKInstance):
        self.instance = instance
        self.lp, self.index = build_poly_lp_nocancel(instance)
        self.solution = solve(self.lp)
        self._sizes = _size_plan(instance)
        self._classes = []
        for i in range(instance.n):
            acc = 0.0
            cum = []
            for j, span in enumerate(self.index.classes()):
                p = self.solution.values[self.index.var(i, j)] / 4.0
                if p > 0.0:
                    acc += p
                    cum.append((acc, span))
            self._classes.append(cum)

    @property
    def lp_opt(self) -> float:
        return self.solution.objective_value

    def run(self, rng: random.Random) -> KnapsackRunResult:
        schedule = round_poly_nocancel(self.solution, self.index, rng)
        return execute_nocancel(self.instance, schedule, rng)

    def run_reward(self, rng: random.Random) -> float:
        B = self.instance.budget
        deadlines = {}
        for i, cum in enumerate(self._classes):
            u = rng.random()
            for acc, span in cum:
                if u < acc:
                    deadlines[i] = span[int(rng.random() * len(span))]
                    break
        occupied = 0
        reward = 0.0
        for i in sorted(deadlines, key=lambda i: (deadlines[i], i)):
            if occupied > deadlines[i]:
                continue
            u = rng.random()
            for acc, s, r in self._sizes[i]:
                if u < acc:
                    break
            if occupied + s <= B:
                reward += r
            occupied += s
        return reward


class SmallPipeline:
    """LP_S -> StocK-Small with keep probability 1/4 (early instances)."""

    def __init__(self, instance: StocKInstance):
        self.instance = instance
        self.lp, self.index = build_lp_small(instance)
        self.solution = solve(self.lp)
        # one trial plan per item: (cancel threshold, stop threshold, reward)
        self._steps = []
        for i, item in enumerate(instance.items):
            v = [self.solution.values[self.index.v(i, t)] for t in self.index.steps()]
            s = [self.solution.values[self.index.s(i, t)] for t in self.index.steps()]
            q = _cancel_schedule(v, s, item)
            row = []
            for t in range(len(q)):
                hz = min(item.hazard(t), 1.0 - q[t])
                row.append((q[t], q[t] + hz, item.reward(t)))
            self._steps.append(row)

    @property
    def lp_opt(self) -> float:
        return self.solution.objective_value

    def policy(self, rng: random.Random) -> CancelPolicy:
        return round_small(self.solution, self.index, self.instance, rng)

    def run(self, rng: random.Random) -> KnapsackRunResult:
        return execute_small(self.instance, self.policy(rng), rng)

    def run_reward(self, rng: random.Random) -> float:
        B = self.instance.budget
        keep = [rng.random() < 0.25 for _ in range(self.instance.n)]
        total = 0
        reward = 0.0
        for i in range(self.instance.n):
            if not keep[i]:
                continue
            row = self._steps[i]
            used = len(row) - 1
            for t, (a, b, r) in enumerate(row):
                u = rng.random()
                if u < a:
                    used = t
                    break
                if u < b:
                    if total + t <= B:
                        reward += r
                    used = t
                    break
            total += used
        return reward


class PolySmallPipeline:
    """PolyLP_S on the quantized instance, keep probability 1/8, executed on
    the original instance: decisions happen at power-of-two processed sizes.

    Canceling at decision point 2^j abandons the item after 2^j - 1 true
    units (enough processing to know the size reached the class); completing
    there realizes the true size inside [2^j, 2^(j+1)) and consumes it.
    """

    def __init__(self, instance: StocKInstance):
        self.instance = instance
        self.lp, self.index = build_poly_lp_small(instance)
        self.solution = solve(self.lp)
        points = self.index.points
        self._plan = []
        for i in range(instance.n):
            qitem = self.index.quantized.items[i]
            v = [self.solution.values[self.index.v(i, k)] for k in range(len(points))]
            s = [self.solution.values[self.index.s(i, k)] for k in range(len(points))]
            q = _cancel_schedule(v, s, qitem)
            row = []
            for k, qsize in enumerate(points):
                hz = min(qitem.hazard(qsize) if qsize > 0 else 0.0, 1.0 - q[k])
                # true sizes inside the class, with conditional thresholds
                item = instance.items[i]
                sizes = [(sz, item.prob(sz), item.reward(sz))
                         for sz in item.support() if qsize <= sz < 2 * qsize]
                mass = sum(p for _, p, _ in sizes)
                cum = []
                acc = 0.0
                for sz, p, r in sizes:
                    acc += p
                    cum.append((acc / mass if mass > 0 else 1.0, sz, r))
                row.append((q[k], q[k] + hz, qsize, cum))
            self._plan.append(row)

    @property
    def lp_opt(self) -> float:
        return self.solution.objective_value

    def run(self, rng: random.Random) -> KnapsackRunResult:
        B = self.instance.budget
        keep = [rng.random() < 0.125 for _ in range(self.instance.n)]
        outcomes: list[ItemOutcome] = [ItemOutcome("never-started")] * self.instance.n
        total = 0
        reward = 0.0
        for i in range(self.instance.n):
            if not keep[i]:
                continue
            row = self._plan[i]
            stopped = False
            for a, b, qsize, cum in row:
                u = rng.random()
                if u < a:
                    used = max(qsize - 1, 0)
                    outcomes[i] = ItemOutcome("canceled", used)
                    total += used
                    stopped = True
                    break
                if u < b:
                    size, r = qsize, 0.0
                    if len(cum) == 1:
                        _, size, r = cum[0]
                    elif cum:
                        w = rng.random()
                        for thr, size, r in cum:
                            if w < thr:
                                break
                    if total + size <= B:
                        reward += r
                    outcomes[i] = ItemOutcome("completed", size)
                    total += size
                    stopped = True
                    break
            if not stopped:
                used = max(row[-1][2] - 1, 0)
                outcomes[i] = ItemOutcome("canceled", used)
                total += used
        return KnapsackRunResult(reward, tuple(outcomes), total)

    def run_reward(self, rng: random.Random) -> float:
        return self.run(rng).total_reward


def solve_late(instance: StocKInstance) -> NoCancelPipeline:
    """The late-rewards reduction: cancellation does not help, so run the
    no-cancellation pipeline as-is."""
    return NoCancelPipeline(instance)


class FullPipeline:
    """Fair-coin combiner: early rewards via StocK-Small, late via StocK-NoCancel."""

    def __init__(self, instance: StocKInstance):
        self.instance = instance
        early, late = split_early_late(instance)
        self.early = SmallPipeline(early)
        self.late = solve_late(late)

    def run(self, rng: random.Random) -> KnapsackRunResult:
        if rng.random() < 0.5:
            return self.early.run(rng)
        return self.late.run(rng)

    def run_reward(self, rng: random.Random) -> float:
        if rng.random() < 0.5:
            return self.early.run_reward(rng)
        return self.late.run_reward(rng)


def solve_stock_full(instance: StocKInstance, rng: random.Random) -> KnapsackRunResult:
    return FullPipeline(instance).run(rng)
