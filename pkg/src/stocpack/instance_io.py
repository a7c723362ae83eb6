"""JSON instance files.

Top-level "kind" selects the schema:

stock: {"kind": "stock", "budget": B,
        "items": [[{"size": 1, "prob": 0.5, "reward": 1.0}, ...], ...]}

mab:   {"kind": "mab", "budget": B, "exploit_budget": K (optional),
        "arms": [{"states": [...], "root": "r0",
                  "edges": [{"from": "r0", "to": "u1", "p": 0.5}, ...],
                  "rewards": {"u1": 1.0}, "shape": "tree"}, ...]}

Three annotated examples live in docs/instances/.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Union

from .model import Arm, ItemDist, MABInstance, StocKInstance

Instance = Union[StocKInstance, MABInstance]


def instance_to_json(instance: Instance) -> dict:
    if isinstance(instance, StocKInstance):
        return {
            "kind": "stock",
            "budget": instance.budget,
            "items": [
                [
                    {"size": s, "prob": item.probs[s], "reward": item.reward(s)}
                    for s in sorted(item.probs)
                ]
                for item in instance.items
            ],
        }
    out = {
        "kind": "mab",
        "budget": instance.budget,
        "arms": [
            {
                "states": list(arm.states),
                "root": arm.root,
                "edges": [{"from": u, "to": v, "p": p} for u, v, p in arm.edges],
                "rewards": {u: r for u, r in sorted(arm.rewards.items())},
                "shape": arm.shape,
            }
            for arm in instance.arms
        ],
    }
    if instance.exploit_budget is not None:
        out["exploit_budget"] = instance.exploit_budget
    return out


def instance_from_json(data: dict) -> Instance:
    kind = data.get("kind")
    if kind == "stock":
        items = []
        for entries in data["items"]:
            probs = {int(e["size"]): float(e["prob"]) for e in entries}
            rewards = {int(e["size"]): float(e.get("reward", 0.0)) for e in entries}
            items.append(ItemDist(probs, rewards))
        return StocKInstance(int(data["budget"]), items)
    if kind == "mab":
        arms = [
            Arm(
                states=arm["states"],
                root=arm["root"],
                edges=[(e["from"], e["to"], float(e["p"])) for e in arm["edges"]],
                rewards={u: float(r) for u, r in arm.get("rewards", {}).items()},
                shape=arm.get("shape", "tree"),
            )
            for arm in data["arms"]
        ]
        k = data.get("exploit_budget")
        return MABInstance(int(data["budget"]), arms, None if k is None else int(k))
    raise ValueError(f"unknown instance kind {kind!r} (expected 'stock' or 'mab')")


def save_instance(instance: Instance, path) -> None:
    Path(path).write_text(json.dumps(instance_to_json(instance), indent=2, sort_keys=True) + "\n")


def load_instance(path) -> Instance:
    return instance_from_json(json.loads(Path(path).read_text()))
