"""Exact optimal adaptive policies by dynamic programming.

These are ground-truth evaluators for desk-scale instances; size guards fail
fast with a report instead of attempting exponential work. All values are
exact up to float rounding (no discretization, no sampling).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

from .model import MABInstance, StocKInstance

NOCANCEL_GUARD = (16, 64)  # max items, max budget
CANCEL_GUARD = (6, 16)
MAB_STATE_GUARD = 1_000_000


class InstanceTooLarge(ValueError):
    """Raised when an instance exceeds an oracle's size guard."""


@dataclass(frozen=True)
class OracleResult:
    value: float
    guard_report: str
    actions: Optional[dict] = None


def _stock_tables(instance: StocKInstance):
    """Per-item dense prob/reward arrays indexed by size."""
    B = instance.budget
    probs, rewards = [], []
    for item in instance.items:
        p = [0.0] * (B + 1)
        r = [0.0] * (B + 1)
        for s, q in item.probs.items():
            if 0 <= s <= B:
                p[s] = q
                r[s] = item.reward(s)
        probs.append(p)
        rewards.append(r)
    return probs, rewards


def opt_nocancel(instance: StocKInstance, want_actions: bool = False) -> OracleResult:
    """Optimal adaptive value when started items must run to completion."""
    n, B = instance.n, instance.budget
    if n > NOCANCEL_GUARD[0] or B > NOCANCEL_GUARD[1]:
        raise InstanceTooLarge(
            f"opt_nocancel guard: n={n} B={B} exceeds n<={NOCANCEL_GUARD[0]} B<={NOCANCEL_GUARD[1]}"
        )
    probs, rewards = _stock_tables(instance)
    actions: dict = {}

    @lru_cache(maxsize=None)
    def value(mask: int, b: int) -> float:
        best, best_act = 0.0, None
        for i in range(n):
            if not mask & (1 << i):
                continue
            total = 0.0
            for s in range(1, min(b, B) + 1):
                p = probs[i][s]
                if p:
                    total += p * (rewards[i][s] + value(mask & ~(1 << i), b - s))
            # sizes exceeding b overflow the knapsack and end the process
            if total > best:
                best, best_act = total, i
        if want_actions:
            actions[(mask, b)] = best_act
        return best

    v = value((1 << n) - 1, B)
    return OracleResult(v, f"opt_nocancel n={n} B={B}", actions if want_actions else None)


def opt_cancel(instance: StocKInstance) -> OracleResult:
    """Optimal adaptive value when the in-progress item may be abandoned."""
    n, B = instance.n, instance.budget
    if n > CANCEL_GUARD[0] or B > CANCEL_GUARD[1]:
        raise InstanceTooLarge(
            f"opt_cancel guard: n={n} B={B} exceeds n<={CANCEL_GUARD[0]} B<={CANCEL_GUARD[1]}"
        )
    probs, rewards = _stock_tables(instance)
    tails = []
    for i in range(n):
        t = [0.0] * (B + 2)
        for s in range(B, -1, -1):
            t[s] = t[s + 1] + probs[i][s]
        tails.append(t)

    @lru_cache(maxsize=None)
    def fresh(mask: int, b: int) -> float:
        best = 0.0
        for i in range(n):
            if mask & (1 << i):
                best = max(best, running(mask & ~(1 << i), b, i, 0))
        return best

    @lru_cache(maxsize=None)
    def running(mask: int, b: int, i: int, e: int) -> float:
        best = fresh(mask, b)  # abandon the in-progress item
        if b >= 1 and e + 1 <= B and tails[i][e + 1] > 0.0:
            hz = probs[i][e + 1] / tails[i][e + 1]
            cont = hz * (rewards[i][e + 1] + fresh(mask, b - 1))
            if hz < 1.0:
                cont += (1.0 - hz) * running(mask, b - 1, i, e + 1)
            best = max(best, cont)
        return best

    v = fresh((1 << n) - 1, B)
    return OracleResult(v, f"opt_cancel n={n} B={B}")


DEAD = "\x00dead"


def _mab_guard(instance: MABInstance, with_exploits: bool) -> int:
    count = 1
    for arm in instance.arms:
        count *= len(arm.states) + 1
    count *= instance.budget + 1
    if with_exploits and instance.exploit_budget is not None:
        count *= instance.exploit_budget + 1
    if count > MAB_STATE_GUARD:
        raise InstanceTooLarge(
            f"opt_mab guard: product state count {count} exceeds {MAB_STATE_GUARD}"
        )
    return count


def opt_mab(instance: MABInstance, want_actions: bool = False) -> OracleResult:
    """Optimal adaptive value over joint arm states.

    Without an exploit budget, each play of a state u collects its reward r_u.
    With exploit budget K, plays are pulls (no reward) or exploits (reward,
    arm retired); both consume the shared play budget B, exploits also K.
    """
    K = instance.exploit_budget
    _mab_guard(instance, K is not None)
    arms = instance.arms
    B = instance.budget
    actions: dict = {}

    @lru_cache(maxsize=None)
    def value(states: tuple, plays: int, exploits: int) -> float:
        if plays >= B:
            return 0.0
        best, best_act = 0.0, None
        for a, u in enumerate(states):
            if u == DEAD:
                continue
            arm = arms[a]
            if K is None:
                total = arm.reward(u)
                kids = arm.children(u)
                if kids:
                    for v, p in kids:
                        nxt = states[:a] + (v,) + states[a + 1 :]
                        total += p * value(nxt, plays + 1, exploits)
                else:
                    nxt = states[:a] + (DEAD,) + states[a + 1 :]
                    total += value(nxt, plays + 1, exploits)
                if total > best:
                    best, best_act = total, ("pull", a)
            else:
                kids = arm.children(u)
                total = 0.0
                for v, p in kids:
                    nxt = states[:a] + (v,) + states[a + 1 :]
                    total += p * value(nxt, plays + 1, exploits)
                if not kids:
                    nxt = states[:a] + (DEAD,) + states[a + 1 :]
                    total = value(nxt, plays + 1, exploits)
                if total > best:
                    best, best_act = total, ("pull", a)
                if exploits < K:
                    nxt = states[:a] + (DEAD,) + states[a + 1 :]
                    got = arm.reward(u) + value(nxt, plays + 1, exploits + 1)
                    if got > best:
                        best, best_act = got, ("exploit", a)
        if want_actions:
            actions[(states, plays, exploits)] = best_act
        return best

    v = value(tuple(arm.root for arm in arms), 0, 0)
    label = f"opt_mab arms={len(arms)} B={B}" + (f" K={K}" if K is not None else "")
    return OracleResult(v, label, actions if want_actions else None)


def opt_mab_nonpreempting(instance: MABInstance) -> OracleResult:
    """Optimal value over policies that never return to an abandoned arm."""
    if instance.exploit_budget is not None:
        raise ValueError("non-preempting oracle does not model exploit budgets")
    _mab_guard(instance, False)
    arms = instance.arms
    n = len(arms)
    B = instance.budget

    @lru_cache(maxsize=None)
    def value(cur_arm: int, cur_state: Optional[str], used: int, plays: int) -> float:
        if plays >= B:
            return 0.0
        best = 0.0
        if cur_arm >= 0 and cur_state is not None:
            arm = arms[cur_arm]
            total = arm.reward(cur_state)
            kids = arm.children(cur_state)
            if kids:
                for v, p in kids:
                    total += p * value(cur_arm, v, used, plays + 1)
            else:
                total += value(-1, None, used, plays + 1)
            best = max(best, total)
        for a in range(n):
            if used & (1 << a):
                continue
            arm = arms[a]
            total = arm.reward(arm.root)
            kids = arm.children(arm.root)
            new_used = used | (1 << a)
            if kids:
                for v, p in kids:
                    total += p * value(a, v, new_used, plays + 1)
            else:
                total += value(-1, None, new_used, plays + 1)
            best = max(best, total)
        return best

    v = value(-1, None, 0, 0)
    return OracleResult(v, f"opt_mab_nonpreempting arms={n} B={B}")
