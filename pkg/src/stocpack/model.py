"""In-memory instance representations: stochastic knapsack items and bandit arms.

Instances are immutable after construction and safe to share across threads.
Validation reports violations instead of raising, so callers can surface every
problem in an input file at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

PROB_TOL = 1e-9  # absolute tolerance on probability-mass sums


@dataclass(frozen=True)
class ItemDist:
    """Distribution of one knapsack item over (size, reward) pairs.

    ``probs[s]`` is the probability the item instantiates to integer size s,
    ``rewards[s]`` the reward collected if it completes at that size.
    """

    probs: dict[int, float]
    rewards: dict[int, float]

    def support(self) -> list[int]:
        return sorted(s for s, p in self.probs.items() if p > 0.0)

    def max_size(self) -> int:
        sup = self.support()
        return sup[-1] if sup else 0

    def prob(self, s: int) -> float:
        return self.probs.get(s, 0.0)

    def reward(self, s: int) -> float:
        return self.rewards.get(s, 0.0)

    def tail(self, t: int) -> float:
        """P(size >= t)."""
        return sum(p for s, p in self.probs.items() if s >= t)

    def hazard(self, t: int) -> float:
        """P(size = t | size >= t); 0 when no mass remains at or beyond t."""
        tail = self.tail(t)
        if tail <= 0.0:
            return 0.0
        return self.prob(t) / tail

    def mean_size(self) -> float:
        return sum(s * p for s, p in self.probs.items())


@dataclass(frozen=True)
class StocKInstance:
    """Knapsack budget plus one ItemDist per item."""

    budget: int
    items: tuple[ItemDist, ...]

    def __init__(self, budget: int, items) -> None:
        object.__setattr__(self, "budget", int(budget))
        object.__setattr__(self, "items", tuple(items))

    @property
    def n(self) -> int:
        return len(self.items)


def validate_stock(instance: StocKInstance) -> list[str]:
    """Return a list of invariant violations (empty iff the instance is valid)."""
    out = []
    if instance.budget < 1:
        out.append(f"budget {instance.budget} is not a positive integer")
    for i, item in enumerate(instance.items):
        mass = 0.0
        for s, p in item.probs.items():
            if s == 0 and p > 0.0:
                out.append(f"item {i}: size 0 has positive mass")
            if s < 0:
                out.append(f"item {i}: negative size {s}")
            if s > instance.budget:
                out.append(f"item {i}: size {s} exceeds budget {instance.budget}")
            if not (0.0 <= p <= 1.0 + PROB_TOL):
                out.append(f"item {i}: probability {p} at size {s} outside [0,1]")
            mass += p
        if abs(mass - 1.0) > PROB_TOL:
            out.append(f"item {i}: probability mass {mass} != 1")
        for s, r in item.rewards.items():
            if s not in item.probs:
                out.append(f"item {i}: reward at size {s} without probability entry")
            if not math.isfinite(r) or r < 0.0:
                out.append(f"item {i}: reward {r} at size {s} is not finite and >= 0")
    return out


@dataclass(frozen=True)
class Arm:
    """One bandit arm: a rooted weighted transition graph over opaque state ids.

    ``shape`` is "tree" for out-arborescences, "layered-dag" for graphs whose
    in-edges always come from the previous depth layer, and "graph" for
    arbitrary digraphs (accepted only as input to :func:`layer_dag`).
    """

    states: tuple[str, ...]
    root: str
    edges: tuple[tuple[str, str, float], ...]
    rewards: dict[str, float]
    shape: str = "tree"
    # children lists sorted by child id; fixed order drives every rng draw
    _children: dict[str, list[tuple[str, float]]] = field(repr=False, compare=False, default=None)

    def __init__(self, states, root, edges, rewards, shape="tree") -> None:
        object.__setattr__(self, "states", tuple(sorted(states)))
        object.__setattr__(self, "root", root)
        object.__setattr__(self, "edges", tuple(edges))
        object.__setattr__(self, "rewards", dict(rewards))
        object.__setattr__(self, "shape", shape)
        children: dict[str, list[tuple[str, float]]] = {u: [] for u in self.states}
        for u, v, p in self.edges:
            children.setdefault(u, []).append((v, p))
        for u in children:
            children[u].sort(key=lambda vp: vp[0])
        object.__setattr__(self, "_children", children)

    def children(self, u: str) -> list[tuple[str, float]]:
        return self._children.get(u, [])

    def reward(self, u: str) -> float:
        return self.rewards.get(u, 0.0)

    def parents(self) -> dict[str, list[tuple[str, float]]]:
        par: dict[str, list[tuple[str, float]]] = {u: [] for u in self.states}
        for u, v, p in self.edges:
            par[v].append((u, p))
        return par

    def depths(self) -> dict[str, int]:
        """Shortest-hop distance from the root (unreachable states omitted)."""
        depth = {self.root: 0}
        frontier = [self.root]
        while frontier:
            nxt = []
            for u in frontier:
                for v, _ in self.children(u):
                    if v not in depth:
                        depth[v] = depth[u] + 1
                        nxt.append(v)
            frontier = nxt
        return depth


@dataclass(frozen=True)
class MABInstance:
    """Bandit instance: pull budget, optional exploit budget K, and the arms."""

    budget: int
    arms: tuple[Arm, ...]
    exploit_budget: Optional[int] = None

    def __init__(self, budget, arms, exploit_budget=None) -> None:
        object.__setattr__(self, "budget", int(budget))
        object.__setattr__(self, "arms", tuple(arms))
        object.__setattr__(self, "exploit_budget", exploit_budget)


def _validate_arm(arm: Arm, idx: int) -> list[str]:
    out = []
    states = set(arm.states)
    if arm.root not in states:
        out.append(f"arm {idx}: root {arm.root!r} not among states")
        return out
    for u, v, p in arm.edges:
        if u not in states or v not in states:
            out.append(f"arm {idx}: edge ({u!r},{v!r}) references unknown state")
        if not (0.0 < p <= 1.0 + PROB_TOL):
            out.append(f"arm {idx}: edge ({u!r},{v!r}) has probability {p} outside (0,1]")
    for u in arm.states:
        kids = arm.children(u)
        if kids:
            mass = sum(p for _, p in kids)
            if abs(mass - 1.0) > PROB_TOL:
                out.append(f"arm {idx}: out-probabilities of {u!r} sum to {mass} != 1")
    for u, r in arm.rewards.items():
        if u not in states:
            out.append(f"arm {idx}: reward for unknown state {u!r}")
        if not math.isfinite(r) or r < 0.0:
            out.append(f"arm {idx}: reward {r} at state {u!r} is not finite and >= 0")

    indeg: dict[str, int] = {u: 0 for u in arm.states}
    for _, v, _ in arm.edges:
        indeg[v] += 1
    depth = arm.depths()

    if arm.shape == "tree":
        if indeg[arm.root] != 0:
            out.append(f"arm {idx}: tree root {arm.root!r} has incoming edges")
        for u in arm.states:
            if u != arm.root and indeg[u] != 1:
                out.append(f"arm {idx}: tree state {u!r} has in-degree {indeg[u]} != 1")
        unreachable = states - set(depth)
        if unreachable:
            out.append(f"arm {idx}: states unreachable from root: {sorted(unreachable)}")
    elif arm.shape == "layered-dag":
        unreachable = states - set(depth)
        if unreachable:
            out.append(f"arm {idx}: states unreachable from root: {sorted(unreachable)}")
        for u, v, _ in arm.edges:
            if u in depth and v in depth and depth[v] != depth[u] + 1:
                out.append(
                    f"arm {idx}: edge ({u!r},{v!r}) does not go to the next layer "
                    f"({depth.get(u)} -> {depth.get(v)})"
                )
    elif arm.shape == "graph":
        pass  # arbitrary digraph, accepted only as layer_dag input
    else:
        out.append(f"arm {idx}: unknown shape {arm.shape!r}")
    return out


def validate_mab(instance: MABInstance) -> list[str]:
    """Return a list of invariant violations (empty iff the instance is valid)."""
    out = []
    if instance.budget < 1:
        out.append(f"budget {instance.budget} is not a positive integer")
    if instance.exploit_budget is not None and instance.exploit_budget < 0:
        out.append(f"exploit budget {instance.exploit_budget} is negative")
    seen: dict[str, int] = {}
    for i, arm in enumerate(instance.arms):
        out.extend(_validate_arm(arm, i))
        for u in arm.states:
            if u in seen:
                out.append(f"arms {seen[u]} and {i} share state id {u!r}")
            else:
                seen[u] = i
    return out


def layer_dag(arm: Arm, budget: int) -> Arm:
    """Unroll a transition graph into its layered horizon-B copy.

    State (v, t) means "v reached after t-1 transitions"; ids become "v@t".
    Only pairs reachable from (root, 1) within the horizon are kept, and each
    copy inherits the original state's reward.
    """
    if budget <= 0:
        raise ValueError(f"budget must be positive, got {budget}")
    root_id = f"{arm.root}@1"
    reached = {(arm.root, 1)}
    frontier = [(arm.root, 1)]
    edges = []
    while frontier:
        nxt = []
        for u, t in frontier:
            if t >= budget:
                continue
            for v, p in arm.children(u):
                if (v, t + 1) not in reached:
                    reached.add((v, t + 1))
                    nxt.append((v, t + 1))
                edges.append((f"{u}@{t}", f"{v}@{t+1}", p))
        frontier = nxt
    states = [f"{v}@{t}" for v, t in reached]
    rewards = {f"{v}@{t}": arm.reward(v) for v, t in reached if arm.reward(v) != 0.0}
    return Arm(states=states, root=root_id, edges=edges, rewards=rewards, shape="layered-dag")

