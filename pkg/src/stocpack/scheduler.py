"""Phases II and III: gap filling and the randomized component scheduler.

GapFill scans times from the horizon downward; any component head played at
time tau < 2*depth(head) is advanced to be contiguous with its parent,
merging the two components. Heads only ever become non-heads, probabilities
never change, and surviving heads keep their original times.

The scheduler samples at most one strategy per arm (probability
prob(root)/24), then repeatedly plays the arm whose current state has the
earliest strategy time, running each connected component contiguously. Runs
continue past the budget; only the first B plays are credited. The rng
consumption order is fixed: one uniform per arm in index order for sampling,
then one uniform per played non-leaf state for its transition, which makes
traces of different execution routes comparable draw for draw.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

from .decomposition import ExploitForest, StrategyDag, StrategyForest
from .model import Arm, MABInstance

INF = math.inf
SAMPLE_DIVISOR = 24.0
DT_NODE_CAP = 10_000


@dataclass
class GapFilledForest:
    """A strategy forest after GapFill; original times kept for audit."""

    arm_index: int
    peel_index: int
    time: dict[str, int]
    original_time: dict[str, int]
    prob: dict[str, float]
    pull: dict[str, float] = field(default_factory=dict)
    exploit: dict[str, float] = field(default_factory=dict)

    def time_of(self, u: Optional[str]) -> float:
        if u is None:
            return INF
        return self.time.get(u, INF)

    def prob_of(self, u: str) -> float:
        return self.prob.get(u, 0.0)

    def root_prob(self, root: str) -> float:
        return self.prob.get(root, 0.0)

    def is_exploit(self, u: str) -> bool:
        return self.exploit.get(u, 0.0) > 0.0


def _as_filled(forest: Union[StrategyForest, ExploitForest]) -> GapFilledForest:
    if isinstance(forest, ExploitForest):
        prob = {u: forest.prob_of(u) for u in forest.time}
        return GapFilledForest(forest.arm_index, forest.peel_index, dict(forest.time),
                               dict(forest.time), prob, dict(forest.pull), dict(forest.exploit))
    return GapFilledForest(forest.arm_index, forest.peel_index, dict(forest.time),
                           dict(forest.time), dict(forest.prob))


def _component(forest: GapFilledForest, arm: Arm, head: str) -> list[str]:
    comp = [head]
    stack = [head]
    while stack:
        u = stack.pop()
        for v, _ in arm.children(u):
            if forest.time.get(v, INF) == forest.time[u] + 1:
                comp.append(v)
                stack.append(v)
    return comp


def gap_fill(forests: Sequence[Union[StrategyForest, ExploitForest]], arms: Sequence[Arm],
             budget: int) -> list[GapFilledForest]:
    """Advance early-deep components until every head has time >= 2*depth."""
    filled = [_as_filled(f) for f in forests]
    parents = [{v: u for u, v, _ in arm.edges} for arm in arms]
    depths = [arm.depths() for arm in arms]

    def heads_at(tau: int) -> list[tuple[int, int, str, int]]:
        found = []
        for fi, forest in enumerate(filled):
            par = parents[fi]
            for u, t in forest.time.items():
                if t != tau:
                    continue
                pu = par.get(u)
                if pu is not None and forest.time.get(pu, INF) + 1 == t:
                    continue  # not a head
                if tau < 2 * depths[fi].get(u, 0):
                    found.append((forest.arm_index, forest.peel_index, u, fi))
        return sorted(found)

    for tau in range(budget, 0, -1):
        guard = 0
        while True:
            violating = heads_at(tau)
            if not violating:
                break
            guard += 1
            if guard > budget * sum(len(f.time) for f in filled) + 8:
                raise RuntimeError("gap fill failed to terminate")
            for _, _, v, fi in violating:
                forest = filled[fi]
                pu = parents[fi].get(v)
                if pu is None:
                    continue  # roots have depth 0 and can never violate
                delta = forest.time[pu] + 1 - forest.time[v]
                for w in _component(forest, arms[fi], v):
                    forest.time[w] += delta
    return filled


@dataclass(frozen=True)
class PlayEntry:
    counter: int
    arm: int
    state: str
    action: str  # "pull" | "exploit"
    next_state: Optional[str]
    credited: bool


@dataclass
class PlayTrace:
    entries: list[PlayEntry]
    credited_reward: float
    pulls: int
    exploits: int

    def to_jsonl(self) -> str:
        lines = [
            json.dumps(
                {
                    "counter": e.counter,
                    "arm": e.arm,
                    "state": e.state,
                    "action": e.action,
                    "next": e.next_state,
                    "credited": e.credited,
                },
                sort_keys=True,
            )
            for e in self.entries
        ]
        lines.append(json.dumps(
            {"reward": self.credited_reward, "pulls": self.pulls, "exploits": self.exploits},
            sort_keys=True,
        ))
        return "\n".join(lines) + "\n"

    def state_frequencies(self) -> dict[str, int]:
        freq: dict[str, int] = {}
        for e in self.entries:
            freq[e.state] = freq.get(e.state, 0) + 1
        return freq


@dataclass
class PlayableStrategy:
    """A sampled-strategy candidate: the forest, the graph it plays, and an
    optional relabeling for trace output (used by the blown-up-tree oracle)."""

    forest: GapFilledForest
    arm: Arm
    label: Optional[dict[str, str]] = None
    reward: Optional[dict[str, float]] = None

    def name_of(self, u: Optional[str]) -> Optional[str]:
        if u is None or self.label is None:
            return u
        return self.label.get(u, u)

    def reward_of(self, u: str) -> float:
        if self.reward is not None:
            return self.reward.get(u, 0.0)
        return self.arm.reward(u)


def _draw_child(arm: Arm, u: str, rng: random.Random) -> Optional[str]:
    kids = arm.children(u)
    if not kids:
        return None
    r = rng.random()
    acc = 0.0
    for v, p in kids:
        acc += p
        if r < acc:
            return v
    return kids[-1][0]


def prepare_groups(groups: Sequence[Sequence[PlayableStrategy]]):
    """Precompute each arm's cumulative sampling thresholds (prob(root)/24)."""
    prepared = []
    for group in groups:
        acc = 0.0
        rows = []
        for strat in group:
            acc += strat.forest.root_prob(strat.arm.root) / SAMPLE_DIVISOR
            rows.append((acc, strat))
        prepared.append(rows)
    return prepared


def _play_components(groups: Sequence[Sequence[PlayableStrategy]], budget: int,
                     rng: random.Random, exploit_budget: Optional[int],
                     pull_rewards: bool, collect_trace: bool = True,
                     prepared=None) -> PlayTrace:
    if prepared is None:
        prepared = prepare_groups(groups)
    active: dict[int, list] = {}
    for i, rows in enumerate(prepared):
        u = rng.random()
        for thr, strat in rows:
            if u < thr:
                active[i] = [strat, strat.arm.root]
                break

    entries: list[PlayEntry] = []
    counter = pulls = exploits = 0
    reward = 0.0
    while active:
        i_star = min(active, key=lambda i: (active[i][0].forest.time_of(active[i][1]), i))
        strat, cur = active[i_star]
        forest, arm = strat.forest, strat.arm
        tau = forest.time_of(cur)
        dropped = False
        while cur is not None and forest.time_of(cur) == tau and tau != INF:
            counter += 1
            if forest.is_exploit(cur):
                exploits += 1
                credited = pulls <= budget and exploits <= (exploit_budget or 0)
                if credited:
                    reward += strat.reward_of(cur)
                if collect_trace:
                    entries.append(PlayEntry(counter, forest.arm_index, strat.name_of(cur),
                                             "exploit", None, credited))
                dropped = True
                break
            pulls += 1
            credited = pull_rewards and counter <= budget
            if credited:
                reward += strat.reward_of(cur)
            nxt = _draw_child(arm, cur, rng)
            if collect_trace:
                entries.append(PlayEntry(counter, forest.arm_index, strat.name_of(cur),
                                         "pull", strat.name_of(nxt), credited))
            cur = nxt
            tau += 1
        if dropped or cur is None or forest.time_of(cur) == INF:
            del active[i_star]
        else:
            active[i_star][1] = cur
    return PlayTrace(entries, reward, pulls, exploits)


def alg_mab(instance: MABInstance, forests_by_arm: Sequence[Sequence[GapFilledForest]],
            rng: random.Random, collect_trace: bool = True) -> PlayTrace:
    """Phase III on gap-filled tree forests; rewards accrue on each credited pull."""
    groups = [
        [PlayableStrategy(f, instance.arms[i]) for f in forests_by_arm[i]]
        for i in range(len(instance.arms))
    ]
    return _play_components(groups, instance.budget, rng, None, pull_rewards=True,
                            collect_trace=collect_trace)


def alg_mab_exploit(instance: MABInstance,
                    forests_by_arm: Sequence[Sequence[GapFilledForest]],
                    rng: random.Random, collect_trace: bool = True) -> PlayTrace:
    """Exploit-aware Phase III: pulls earn nothing, exploits end the arm and are
    credited while the pull count is within B and the exploit count within K."""
    groups = [
        [PlayableStrategy(f, instance.arms[i]) for f in forests_by_arm[i]]
        for i in range(len(instance.arms))
    ]
    return _play_components(groups, instance.budget, rng, instance.exploit_budget,
                            pull_rewards=False, collect_trace=collect_trace)


def implicit_play(instance: MABInstance, dags_by_arm: Sequence[Sequence[StrategyDag]],
                  rng: random.Random, collect_trace: bool = True) -> PlayTrace:
    """Play strategy dags directly, inferring GapFill advances on the fly.

    A burst continues while the next node is time-contiguous or satisfies the
    advance test 2*depth(node) > time(node); the blown-up tree is never built.
    """
    budget = instance.budget
    depths = [arm.depths() for arm in instance.arms]
    active: dict[int, list] = {}
    for i, group in enumerate(dags_by_arm):
        u = rng.random()
        acc = 0.0
        for dag in group:
            acc += dag.root_prob() / SAMPLE_DIVISOR
            if u < acc:
                active[i] = [dag, dag.root]
                break

    entries: list[PlayEntry] = []
    counter = pulls = 0
    reward = 0.0
    while active:
        i_star = min(
            active,
            key=lambda i: (active[i][1][1] if active[i][1] is not None else INF, i),
        )
        dag, node = active[i_star]
        arm = instance.arms[i_star]
        tau = node[1] if node is not None else INF
        while node is not None:
            u, t = node
            if t == INF or not (t == tau or 2 * depths[i_star].get(u, 0) > t):
                break
            counter += 1
            pulls += 1
            credited = counter <= budget
            if credited:
                reward += arm.reward(u)
            nxt = _draw_child(arm, u, rng)
            if collect_trace:
                entries.append(PlayEntry(counter, dag.arm_index, u, "pull", nxt, credited))
            node = None if nxt is None else (nxt, dag.successor((u, t), nxt))
            tau += 1
        if node is None or node[1] == INF:
            del active[i_star]
        else:
            active[i_star][1] = node
    return PlayTrace(entries, reward, pulls, 0)


def blow_up_dag(dag: StrategyDag, arm: Arm, cap: int = DT_NODE_CAP
                ) -> tuple[Arm, StrategyForest, dict[str, str]]:
    """Materialize the blown-up tree of a strategy dag (test oracle only).

    Tree nodes are root paths of the dag. Synthetic ids are built so that
    sorting them reproduces the real arm's child order, which keeps the rng
    transition draws aligned with the implicit player. Raises when the tree
    would exceed ``cap`` nodes.
    """
    child_rank = {
        u: {v: k for k, (v, _) in enumerate(arm.children(u))} for u in arm.states
    }
    root_id = "P"
    label = {root_id: dag.root[0]}
    times: dict[str, int] = {root_id: int(dag.root[1])}
    probs: dict[str, float] = {root_id: dag.root_prob()}
    states = [root_id]
    edges: list[tuple[str, str, float]] = []
    rewards: dict[str, float] = {}
    if arm.reward(dag.root[0]) != 0.0:
        rewards[root_id] = arm.reward(dag.root[0])
    queue: list[tuple[str, tuple[str, float], float]] = [(root_id, dag.root, probs[root_id])]
    while queue:
        pid, node, pprob = queue.pop()
        u, t = node
        if t == INF:
            continue  # infinite-time nodes are never played; leave them leaves
        for v, p in arm.children(u):
            cid = f"{pid}.{child_rank[u][v]:03d}"
            if len(states) >= cap:
                raise ValueError(f"blown-up tree exceeds {cap} nodes")
            states.append(cid)
            label[cid] = v
            edges.append((pid, cid, p))
            if arm.reward(v) != 0.0:
                rewards[cid] = arm.reward(v)
            tp = dag.successor((u, t), v)
            cprob = pprob * p
            if tp != INF:
                times[cid] = int(tp)
                probs[cid] = cprob
                queue.append((cid, (v, tp), cprob))
    synthetic = Arm(states=states, root=root_id, edges=edges, rewards=rewards, shape="tree")
    forest = StrategyForest(dag.arm_index, dag.peel_index, times, probs)
    return synthetic, forest, label


def alg_mab_on_blowups(budget: int,
                       groups: Sequence[Sequence[tuple[GapFilledForest, Arm, dict[str, str]]]],
                       rng: random.Random) -> PlayTrace:
    """AlgMAB over materialized blown-up trees, reporting real state ids."""
    playable = [
        [PlayableStrategy(f, a, label=lbl) for (f, a, lbl) in group] for group in groups
    ]
    return _play_components(playable, budget, rng, None, pull_rewards=True)
