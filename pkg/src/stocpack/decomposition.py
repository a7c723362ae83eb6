"""Phase I: peel LP solutions into convex combinations of strategies.

Tree arms yield strategy forests (per-state play time and probability), layered
DAG arms yield strategy dags (per-(state, time) node probabilities plus a
successor-time relation), and exploitation LPs yield pull/exploit forests.

Each peel removes the earliest remaining mass of every live state at once,
scaled so that at least one residual entry drops to zero; the residual solution
stays feasible for the LP, which is what makes the iteration sound. Peels are
deterministic: arms ascending, states in sorted-id order, earliest slots first.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from typing import Optional

from .mab_lp import MabLPIndex
from .model import Arm, MABInstance

INF = math.inf
MASS_TOL = 1e-9  # residual mass below this counts as zero
NEG_TOL = 1e-6  # residuals below -NEG_TOL mean the input was infeasible


@dataclass
class StrategyForest:
    """One peeled strategy for a tree arm: play times and probabilities.

    States absent from ``time`` are never played (time infinity, probability
    zero). ``prob[u] = prob[parent(u)] * p(parent(u), u)`` for finite times.
    """

    arm_index: int
    peel_index: int
    time: dict[str, int]
    prob: dict[str, float]

    def time_of(self, u: Optional[str]) -> float:
        if u is None:
            return INF
        return self.time.get(u, INF)

    def prob_of(self, u: str) -> float:
        return self.prob.get(u, 0.0)

    def root_prob(self, root: str) -> float:
        return self.prob.get(root, 0.0)

    def to_json(self) -> dict:
        return {
            "arm": self.arm_index,
            "peel": self.peel_index,
            "time": dict(sorted(self.time.items())),
            "prob": dict(sorted(self.prob.items())),
        }


@dataclass
class StrategyDag:
    """One peeled strategy for a layered arm.

    Nodes are (state, time) pairs; ``relation[(u,t)][v]`` is the unique time
    >= t+1 at which v is played if the arm transitions u -> v from this node
    (math.inf when the strategy abandons the arm there).
    """

    arm_index: int
    peel_index: int
    root: tuple[str, int]
    prob: dict[tuple[str, int], float]
    relation: dict[tuple[str, int], dict[str, float]]

    def root_prob(self) -> float:
        return self.prob.get(self.root, 0.0)

    def successor(self, node: tuple[str, int], child_state: str) -> float:
        return self.relation.get(node, {}).get(child_state, INF)

    def to_json(self) -> dict:
        return {
            "arm": self.arm_index,
            "peel": self.peel_index,
            "root": list(self.root),
            "prob": {f"{u}|{t}": p for (u, t), p in sorted(self.prob.items())},
            "relation": {
                f"{u}|{t}": {v: (tp if tp != INF else "inf") for v, tp in sorted(rel.items())}
                for (u, t), rel in sorted(self.relation.items())
            },
        }


@dataclass
class ExploitForest:
    """Strategy forest with pull/exploit labels; exploit states are leaves."""

    arm_index: int
    peel_index: int
    time: dict[str, int]
    pull: dict[str, float]
    exploit: dict[str, float]

    def time_of(self, u: Optional[str]) -> float:
        if u is None:
            return INF
        return self.time.get(u, INF)

    def prob_of(self, u: str) -> float:
        return self.pull.get(u, 0.0) + self.exploit.get(u, 0.0)

    def root_prob(self, root: str) -> float:
        return self.prob_of(root)

    def is_exploit(self, u: str) -> bool:
        return self.exploit.get(u, 0.0) > 0.0

    def to_json(self) -> dict:
        return {
            "arm": self.arm_index,
            "peel": self.peel_index,
            "time": dict(sorted(self.time.items())),
            "pull": dict(sorted(self.pull.items())),
            "exploit": dict(sorted(self.exploit.items())),
        }


def forests_to_jsonl(objs) -> str:
    return "\n".join(json.dumps(o.to_json(), sort_keys=True) for o in objs) + "\n"


def _path_products(arm: Arm) -> dict[str, float]:
    """pi[u]: probability of reaching u from the root along tree edges."""
    pi = {arm.root: 1.0}
    stack = [arm.root]
    while stack:
        u = stack.pop()
        for v, p in arm.children(u):
            pi[v] = pi[u] * p
            stack.append(v)
    return pi


def _residual(values: dict[str, float], varmap: dict, keys) -> dict:
    res = {}
    for key in keys:
        name = varmap.get(key)
        val = values[name] if name else 0.0
        if val < -NEG_TOL:
            raise ValueError(f"infeasible input solution: {key} = {val}")
        res[key] = max(val, 0.0)
    return res


def decompose_tree(values: dict[str, float], index: MabLPIndex, instance: MABInstance,
                   arm_index: int) -> list[StrategyForest]:
    """Peel the z-mass of one tree arm into strategy forests."""
    arm = instance.arms[arm_index]
    B = index.budget
    pi = _path_products(arm)
    z = _residual(values, index.z, ((u, t) for u in arm.states for t in range(1, B + 1)))

    forests: list[StrategyForest] = []
    max_iters = B * len(arm.states) + 8
    parent = {v: u for u, v, _ in arm.edges}
    for j in range(max_iters + 1):
        live: dict[str, int] = {}
        for u in arm.states:
            for t in range(1, B + 1):
                if z[(u, t)] > MASS_TOL:
                    live[u] = t
                    break
        if not live:
            break
        if j == max_iters:
            raise RuntimeError("tree decomposition failed to terminate")
        for u, t in live.items():
            pu = parent.get(u)
            if pu is not None and t < live.get(pu, INF) + 1:
                raise ValueError(
                    f"arm {arm_index}: residual mass at ({u},{t}) precedes its parent; "
                    "input solution violates the arrival constraints"
                )
        eps = min(
            z[(u, t)] / pi[u] for u, t in live.items() if pi.get(u, 0.0) > 0.0
        )
        prob = {u: eps * pi[u] for u in live}
        for u, t in live.items():
            z[(u, t)] = max(z[(u, t)] - prob[u], 0.0)
        forests.append(StrategyForest(arm_index, j, dict(live), prob))
    return forests


def peel_strat(z: dict[tuple[str, int], float], arm: Arm, budget: int
               ) -> tuple[dict[tuple[str, int], float], dict[tuple[str, int], dict[str, float]],
                          tuple[str, int]]:
    """Extract one strategy-dag skeleton from the residual z of a layered arm.

    Returns (peelProb per marked node, successor relation, root node). A
    child's successor slot is the earliest z-positive slot at or after t+1, so
    play times strictly increase along the relation.
    """
    depth = arm.depths()
    t_root = next((t for t in range(1, budget + 1) if z.get((arm.root, t), 0.0) > MASS_TOL), None)
    if t_root is None:
        raise ValueError(
            "residual mass is unreachable from the root; "
            "input solution violates the arrival constraints"
        )
    root = (arm.root, t_root)
    peel_prob: dict[tuple[str, int], float] = {root: 1.0}
    relation: dict[tuple[str, int], dict[str, float]] = {}
    heap: list[tuple[int, int, str]] = [(depth[arm.root], t_root, arm.root)]
    visited: set[tuple[str, int]] = set()
    while heap:
        d, t, u = heapq.heappop(heap)
        if (u, t) in visited:
            continue
        visited.add((u, t))
        rel: dict[str, float] = {}
        for v, p in arm.children(u):
            tp = next(
                (s for s in range(t + 1, budget + 1) if z.get((v, s), 0.0) > MASS_TOL), None
            )
            if tp is None:
                rel[v] = INF
                continue
            rel[v] = tp
            node = (v, tp)
            if node not in peel_prob:
                peel_prob[node] = 0.0
                heapq.heappush(heap, (depth[v], tp, v))
            peel_prob[node] += peel_prob[(u, t)] * p
        relation[(u, t)] = rel
    return peel_prob, relation, root


def decompose_dag(values: dict[str, float], index: MabLPIndex, instance: MABInstance,
                  arm_index: int) -> list[StrategyDag]:
    """Peel the z-mass of one layered arm into strategy dags."""
    arm = instance.arms[arm_index]
    B = index.budget
    z = _residual(values, index.z, ((u, t) for u in arm.states for t in range(1, B + 1)))

    dags: list[StrategyDag] = []
    max_iters = B * B * len(arm.states) + 8
    for j in range(max_iters + 1):
        if not any(v > MASS_TOL for v in z.values()):
            break
        if j == max_iters:
            raise RuntimeError("dag decomposition failed to terminate")
        peel_prob, relation, root = peel_strat(z, arm, B)
        eps = min(z[node] / pp for node, pp in peel_prob.items())
        prob = {node: eps * pp for node, pp in peel_prob.items()}
        for node, pr in prob.items():
            z[node] = max(z[node] - pr, 0.0)
        dags.append(StrategyDag(arm_index, j, root, prob, relation))
    return dags


def decompose_exploit(values: dict[str, float], index: MabLPIndex, instance: MABInstance,
                      arm_index: int) -> list[ExploitForest]:
    """Peel z- and x-mass of one tree arm into pull/exploit forests.

    A state whose earliest remaining slot carries x-mass becomes an exploit
    leaf; its descendants are left for later peels.
    """
    arm = instance.arms[arm_index]
    B = index.budget
    z = _residual(values, index.z, ((u, t) for u in arm.states for t in range(1, B + 1)))
    x = _residual(values, index.x, ((u, t) for u in arm.states for t in range(1, B + 1)))
    pi = _path_products(arm)

    forests: list[ExploitForest] = []
    max_iters = 2 * B * len(arm.states) + 8
    for j in range(max_iters + 1):
        live: dict[str, tuple[int, bool]] = {}  # state -> (slot, is_exploit)
        for u in arm.states:
            for t in range(1, B + 1):
                if z[(u, t)] > MASS_TOL or x[(u, t)] > MASS_TOL:
                    live[u] = (t, x[(u, t)] > MASS_TOL)
                    break
        if not live:
            break
        if j == max_iters:
            raise RuntimeError("exploit decomposition failed to terminate")

        # keep only states whose ancestors are live pull states
        included: dict[str, tuple[int, bool]] = {}
        if arm.root in live:
            included[arm.root] = live[arm.root]
            stack = [arm.root]
            while stack:
                u = stack.pop()
                if included[u][1]:
                    continue  # exploit leaf: descendants excluded
                for v, _ in arm.children(u):
                    if v in live:
                        if live[v][0] < included[u][0] + 1:
                            raise ValueError(
                                f"arm {arm_index}: residual mass at {v} precedes its "
                                "parent; input solution violates the arrival constraints"
                            )
                        included[v] = live[v]
                        stack.append(v)
        if not included:
            raise ValueError(
                f"arm {arm_index}: residual mass is unreachable from the root; "
                "input solution violates the arrival constraints"
            )

        eps = INF
        for u, (t, is_x) in included.items():
            if pi.get(u, 0.0) > 0.0:
                mass = x[(u, t)] if is_x else z[(u, t)]
                eps = min(eps, mass / pi[u])
        time: dict[str, int] = {}
        pull: dict[str, float] = {}
        exploit: dict[str, float] = {}
        for u, (t, is_x) in included.items():
            amount = eps * pi[u]
            time[u] = t
            if is_x:
                exploit[u] = amount
                x[(u, t)] = max(x[(u, t)] - amount, 0.0)
            else:
                pull[u] = amount
                z[(u, t)] = max(z[(u, t)] - amount, 0.0)
        forests.append(ExploitForest(arm_index, j, time, pull, exploit))
    return forests
