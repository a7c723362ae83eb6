"""Monte Carlo evaluation, instance generators, and guarantee checks.

Per-trial randomness is derived as blake2b(master_seed, trial_index), so any
single trial can be replayed in isolation. Aggregation uses exact summation
(math.fsum) over the stored per-trial rewards, which makes the mean
independent of trial ordering and of the worker count when the trial loop is
parallelized (STOCPACK_THREADS).
"""

from __future__ import annotations

import hashlib
import math
import os
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

from .decomposition import decompose_dag, decompose_exploit, decompose_tree
from .knapsack_algs import (
    FullPipeline,
    NoCancelPipeline,
    PolyNoCancelPipeline,
    PolySmallPipeline,
    SmallPipeline,
)
from .lp import solve
from .mab_lp import build_lp4, build_lp_mab, build_lp_mabdag
from .model import Arm, ItemDist, MABInstance, StocKInstance, layer_dag
from .scheduler import (PlayableStrategy, _play_components, gap_fill, implicit_play,
                        prepare_groups)

DEFAULT_SEED = 2011
DEFAULT_TRIALS_STOCK = 100_000
DEFAULT_TRIALS_MAB = 200_000


def trial_seed(master_seed: int, trial_index: int) -> int:
    digest = hashlib.blake2b(f"{master_seed}:{trial_index}".encode(), digest_size=8)
    return int.from_bytes(digest.digest(), "big")


def trial_rng(master_seed: int, trial_index: int) -> random.Random:
    return random.Random(trial_seed(master_seed, trial_index))


@dataclass(frozen=True)
class CheckResult:
    label: str
    mean: float
    stderr: float
    reference: float
    ratio: float
    verdict: str  # "pass" | "fail" | "skip"


@dataclass
class SimReport:
    trials: int
    mean_reward: float
    stderr: float
    ci95: float
    comparisons: list[CheckResult] = field(default_factory=list)
    per_state_frequency: Optional[dict[str, float]] = None

    def add_check(self, label: str, reference: float, bound: float) -> CheckResult:
        """One-sided MC check: pass iff mean + 3*stderr >= bound * reference."""
        ratio = self.mean_reward / reference if reference > 0 else math.inf
        ok = self.mean_reward + 3.0 * self.stderr >= bound * reference - 1e-12
        res = CheckResult(label, self.mean_reward, self.stderr, bound * reference,
                          ratio, "pass" if ok else "fail")
        self.comparisons.append(res)
        return res

    @property
    def passed(self) -> bool:
        return all(c.verdict != "fail" for c in self.comparisons)


def _reward_of(result) -> float:
    if hasattr(result, "total_reward"):
        return result.total_reward
    if hasattr(result, "credited_reward"):
        return result.credited_reward
    return float(result)


def _run_chunk(pipeline, master_seed: int, start: int, count: int, want_freq: bool):
    rewards = []
    freq: dict[str, int] = {}
    fast = getattr(pipeline, "run_reward", None) if not want_freq else None
    for t in range(start, start + count):
        rng = trial_rng(master_seed, t)
        if fast is not None:
            rewards.append(fast(rng))
            continue
        result = pipeline.run(rng)
        rewards.append(_reward_of(result))
        if want_freq and hasattr(result, "state_frequencies"):
            for s, c in result.state_frequencies().items():
                freq[s] = freq.get(s, 0) + c
    return rewards, freq


def simulate(pipeline, trials: int, seed: int = DEFAULT_SEED,
             want_freq: bool = False) -> SimReport:
    """Run ``pipeline.run(rng)`` for each trial and aggregate credited reward."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    threads = int(os.environ.get("STOCPACK_THREADS", "1") or "1")
    if threads > 1 and trials >= 4 * threads:
        chunk = (trials + threads - 1) // threads
        spans = [(s, min(chunk, trials - s)) for s in range(0, trials, chunk)]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(
                _run_chunk, [pipeline] * len(spans), [seed] * len(spans),
                [a for a, _ in spans], [c for _, c in spans],
                [want_freq] * len(spans),
            ))
        rewards = [r for part, _ in parts for r in part]
        freq: dict[str, int] = {}
        for _, f in parts:
            for s, c in f.items():
                freq[s] = freq.get(s, 0) + c
    else:
        rewards, freq = _run_chunk(pipeline, seed, 0, trials, want_freq)

    mean = math.fsum(rewards) / trials
    var = math.fsum((r - mean) ** 2 for r in rewards) / max(trials - 1, 1)
    stderr = math.sqrt(var / trials)
    report = SimReport(trials=trials, mean_reward=mean, stderr=stderr, ci95=1.96 * stderr)
    if want_freq:
        report.per_state_frequency = {s: c / trials for s, c in sorted(freq.items())}
    return report


# ---------------------------------------------------------------------------
# MAB pipelines (LP -> decomposition -> GapFill -> scheduler), LP solved once
# ---------------------------------------------------------------------------


def _group_filled(instance: MABInstance, forests) -> list[list]:
    flat = list(forests)
    arms = [instance.arms[f.arm_index] for f in flat]
    filled = gap_fill(flat, arms, instance.budget)
    grouped: list[list] = [[] for _ in instance.arms]
    for f in filled:
        grouped[f.arm_index].append(f)
    return grouped


class MabTreePipeline:
    def __init__(self, instance: MABInstance):
        self.instance = instance
        self.lp, self.index = build_lp_mab(instance)
        self.solution = solve(self.lp)
        self.forests_by_arm = [
            decompose_tree(self.solution.values, self.index, instance, ai)
            for ai in range(len(instance.arms))
        ]
        self.filled_by_arm = _group_filled(
            instance, (f for fs in self.forests_by_arm for f in fs))
        self._prepared = prepare_groups([
            [PlayableStrategy(f, instance.arms[i]) for f in self.filled_by_arm[i]]
            for i in range(len(instance.arms))
        ])

    @property
    def lp_opt(self) -> float:
        return self.solution.objective_value

    def run(self, rng: random.Random):
        return _play_components((), self.instance.budget, rng, None,
                                pull_rewards=True, prepared=self._prepared)

    def run_reward(self, rng: random.Random) -> float:
        return _play_components((), self.instance.budget, rng, None, pull_rewards=True,
                                collect_trace=False, prepared=self._prepared).credited_reward


class MabDagPipeline:
    """LP on layered arms, strategy-dag decomposition, implicit gap-filled play."""

    def __init__(self, instance: MABInstance):
        arms = [
            arm if arm.shape == "layered-dag" else layer_dag(arm, instance.budget)
            for arm in instance.arms
        ]
        self.instance = MABInstance(instance.budget, arms, instance.exploit_budget)
        self.lp, self.index = build_lp_mabdag(self.instance)
        self.solution = solve(self.lp)
        self.dags_by_arm = [
            decompose_dag(self.solution.values, self.index, self.instance, ai)
            for ai in range(len(arms))
        ]

    @property
    def lp_opt(self) -> float:
        return self.solution.objective_value

    def run(self, rng: random.Random):
        return implicit_play(self.instance, self.dags_by_arm, rng)

    def run_reward(self, rng: random.Random) -> float:
        return implicit_play(self.instance, self.dags_by_arm, rng,
                             collect_trace=False).credited_reward


class MabExploitPipeline:
    def __init__(self, instance: MABInstance):
        if instance.exploit_budget is None:
            raise ValueError("mab-exploit pipeline requires an exploit budget K")
        self.instance = instance
        self.lp, self.index = build_lp4(instance)
        self.solution = solve(self.lp)
        self.forests_by_arm = [
            decompose_exploit(self.solution.values, self.index, instance, ai)
            for ai in range(len(instance.arms))
        ]
        self.filled_by_arm = _group_filled(
            instance, (f for fs in self.forests_by_arm for f in fs))
        self._prepared = prepare_groups([
            [PlayableStrategy(f, instance.arms[i]) for f in self.filled_by_arm[i]]
            for i in range(len(instance.arms))
        ])

    @property
    def lp_opt(self) -> float:
        return self.solution.objective_value

    def run(self, rng: random.Random):
        return _play_components((), self.instance.budget, rng, self.instance.exploit_budget,
                                pull_rewards=False, prepared=self._prepared)

    def run_reward(self, rng: random.Random) -> float:
        return _play_components((), self.instance.budget, rng, self.instance.exploit_budget,
                                pull_rewards=False, collect_trace=False,
                                prepared=self._prepared).credited_reward


# ---------------------------------------------------------------------------
# Instance generators
# ---------------------------------------------------------------------------


def gen_cancel_benefit(n: int) -> StocKInstance:
    """n items of size 1 or n/2 (fair coin), reward 1 at every size, B = n."""
    if n < 4 or n % 2:
        raise ValueError("cancel-benefit family needs even n >= 4 (n/2 must exceed 1)")
    item = ItemDist({1: 0.5, n // 2: 0.5}, {1: 1.0, n // 2: 1.0})
    return StocKInstance(n, [item] * n)


def gen_correlated_gap(n: int) -> StocKInstance:
    """n items, size 1 w.p. 1-1/n else n; reward 1 only at size n; B = n."""
    if n < 2:
        raise ValueError("correlated-gap family needs n >= 2")
    item = ItemDist({1: 1.0 - 1.0 / n, n: 1.0 / n}, {1: 0.0, n: 1.0})
    return StocKInstance(n, [item] * n)


def gen_preemption_gap(n: int, L: int, m: int, budget: Optional[int] = None) -> MABInstance:
    """n identical arms of the recursive rho(j) construction.

    rho(j) (j < m) goes right w.p. 1/(n*n^(m-j)) into a chain of
    B - n*sum(L^k, k<=j) zero-reward states ending in reward n^(m-j), else
    left along L^(j+1)-1 states to rho(j+1); rho(m) is a Bernoulli(1/n)
    lottery for reward 1. Budget defaults to the smallest comfortable value
    n*sum(L^k, k<=m) + 1 (right-chain lengths must stay positive).
    """
    if not (L > n >= 2) or m < 0:
        raise ValueError("preemption-gap family needs L > n >= 2 and m >= 0")
    if budget is None:
        budget = n * sum(L**k for k in range(m + 1)) + 1
    for j in range(m):
        if budget - n * sum(L**k for k in range(j + 1)) < 1:
            raise ValueError(f"budget {budget} leaves no room for the level-{j} right chain")

    arms = []
    for i in range(n):
        states: list[str] = []
        edges: list[tuple[str, str, float]] = []
        rewards: dict[str, float] = {}

        def build(j: int) -> str:
            root = f"m{i}r{j}"
            states.append(root)
            if j < m:
                p_right = 1.0 / (n * n ** (m - j))
                chain_len = budget - n * sum(L**k for k in range(j + 1))
                prev = root
                for s in range(chain_len):
                    node = f"m{i}c{j}x{s:04d}"
                    states.append(node)
                    edges.append((prev, node, p_right if s == 0 else 1.0))
                    prev = node
                rewards[prev] = float(n ** (m - j))
                prev = root
                for s in range(L ** (j + 1) - 1):
                    node = f"m{i}l{j}x{s:04d}"
                    states.append(node)
                    edges.append((prev, node, (1.0 - p_right) if s == 0 else 1.0))
                    prev = node
                nxt = build(j + 1)
                edges.append((prev, nxt, (1.0 - p_right) if L ** (j + 1) - 1 == 0 else 1.0))
                return root
            win, lose = f"m{i}w", f"m{i}z"
            states.extend([win, lose])
            edges.append((root, win, 1.0 / n))
            edges.append((root, lose, 1.0 - 1.0 / n))
            rewards[win] = 1.0
            return root

        root = build(0)
        arms.append(Arm(states=states, root=root, edges=edges, rewards=rewards, shape="tree"))
    return MABInstance(budget, arms)


def gen_random_stock(n: int, budget: int, support_size: int, seed: int) -> StocKInstance:
    """Seeded random items: random size support, normalized probabilities,
    uniform [0,1] rewards."""
    if n < 1 or budget < 1 or support_size < 1:
        raise ValueError("n, budget, and support_size must be positive")
    rng = random.Random(seed)
    items = []
    for _ in range(n):
        support = sorted(rng.sample(range(1, budget + 1), min(support_size, budget)))
        weights = [rng.random() + 0.05 for _ in support]
        total = sum(weights)
        probs = {s: w / total for s, w in zip(support, weights)}
        rewards = {s: rng.random() for s in support}
        items.append(ItemDist(probs, rewards))
    return StocKInstance(budget, items)


def gen_random_mab(arms: int, states_per_arm: int, budget: int, seed: int) -> MABInstance:
    """Seeded random tree arms (uniform random arborescences, rewards in [0,1])."""
    if arms < 1 or states_per_arm < 1 or budget < 1:
        raise ValueError("arms, states_per_arm, and budget must be positive")
    rng = random.Random(seed)
    out = []
    for a in range(arms):
        states = [f"a{a}s{idx}" for idx in range(states_per_arm)]
        kids: dict[str, list[str]] = {s: [] for s in states}
        for idx in range(1, states_per_arm):
            kids[states[rng.randrange(idx)]].append(states[idx])
        edges = []
        for u, children in kids.items():
            if children:
                weights = [rng.random() + 0.1 for _ in children]
                total = sum(weights)
                edges.extend((u, v, w / total) for v, w in zip(children, weights))
        rewards = {s: rng.random() for s in states}
        out.append(Arm(states=states, root=states[0], edges=edges, rewards=rewards,
                       shape="tree"))
    return MABInstance(budget, out)
