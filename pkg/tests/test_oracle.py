import pytest

from stocpack.harness import (
    gen_cancel_benefit,
    gen_correlated_gap,
    gen_preemption_gap,
    gen_random_mab,
    gen_random_stock,
)
from stocpack.knapsack_algs import split_early_late
from stocpack.model import Arm, ItemDist, MABInstance, StocKInstance
from stocpack.oracle import (
    InstanceTooLarge,
    opt_cancel,
    opt_mab,
    opt_mab_nonpreempting,
    opt_nocancel,
)


def test_opt_nocancel_empty():
    assert opt_nocancel(StocKInstance(3, [])).value == 0.0


def test_opt_nocancel_single_item():
    inst = StocKInstance(1, [ItemDist({1: 1.0}, {1: 5.0})])
    assert opt_nocancel(inst).value == pytest.approx(5.0)


def test_opt_nocancel_correlated_gap():
    assert opt_nocancel(gen_correlated_gap(4)).value == pytest.approx(0.25, abs=1e-12)


def test_opt_cancel_single_item_equals_nocancel():
    inst = StocKInstance(3, [ItemDist({1: 0.5, 2: 0.5}, {1: 1.0, 2: 3.0})])
    assert opt_cancel(inst).value == pytest.approx(opt_nocancel(inst).value)


def test_opt_cancel_cancel_benefit():
    inst = gen_cancel_benefit(6)
    assert opt_cancel(inst).value == pytest.approx(3.0, abs=1e-9)


def test_late_instances_cancellation_useless():
    for seed in range(5):
        inst = gen_random_stock(3, 8, 3, seed=300 + seed)
        _, late = split_early_late(inst)
        assert opt_cancel(late).value == pytest.approx(opt_nocancel(late).value, abs=1e-9)


def test_monotonic_in_budget():
    base = gen_random_stock(3, 6, 3, seed=11)
    bigger = StocKInstance(8, base.items)
    small6 = StocKInstance(6, base.items)
    assert opt_nocancel(bigger).value >= opt_nocancel(small6).value - 1e-12
    assert opt_cancel(bigger).value >= opt_cancel(small6).value - 1e-12


def test_cancel_dominates_nocancel():
    for seed in range(5):
        inst = gen_random_stock(3, 7, 3, seed=400 + seed)
        assert opt_cancel(inst).value >= opt_nocancel(inst).value - 1e-9


def test_guards():
    with pytest.raises(InstanceTooLarge):
        opt_cancel(gen_random_stock(7, 8, 2, seed=0))
    with pytest.raises(InstanceTooLarge):
        opt_nocancel(gen_random_stock(17, 8, 2, seed=0))


def test_opt_mab_single_root():
    arm = Arm(states=["r"], root="r", edges=[], rewards={"r": 1.0})
    assert opt_mab(MABInstance(1, [arm])).value == pytest.approx(1.0)


def test_opt_mab_budget_forces_commitment():
    # two identical chains, rewards only at depth 2, B=2: play one chain fully
    def chain(p):
        states = [f"{p}0", f"{p}1", f"{p}2"]
        edges = [(states[0], states[1], 1.0), (states[1], states[2], 1.0)]
        return Arm(states=states, root=states[0], edges=edges, rewards={states[2]: 1.0})

    inst = MABInstance(2, [chain("a"), chain("b")])
    # reward-on-play at depth-2 state requires 3 plays; with B=2 nothing pays
    assert opt_mab(inst).value == pytest.approx(0.0)
    inst3 = MABInstance(3, [chain("a"), chain("b")])
    assert opt_mab(inst3).value == pytest.approx(1.0)


def test_opt_mab_exploit_basics():
    arm = Arm(states=["r"], root="r", edges=[], rewards={"r": 5.0})
    inst = MABInstance(1, [arm], exploit_budget=1)
    assert opt_mab(inst).value == pytest.approx(5.0)
    inst0 = MABInstance(1, [arm], exploit_budget=0)
    assert opt_mab(inst0).value == pytest.approx(0.0)


def test_nonpreempting_single_arm_equals_opt():
    inst = gen_random_mab(1, 5, 6, seed=9)
    assert opt_mab_nonpreempting(inst).value == pytest.approx(opt_mab(inst).value, abs=1e-9)


def test_nonpreempting_never_exceeds_opt():
    for seed in range(4):
        inst = gen_random_mab(2, 4, 6, seed=500 + seed)
        assert opt_mab_nonpreempting(inst).value <= opt_mab(inst).value + 1e-9


def test_preemption_gap_strict():
    inst = gen_preemption_gap(2, 3, 1)
    full = opt_mab(inst).value
    nonpre = opt_mab_nonpreempting(inst).value
    assert full > nonpre + 1e-6


def test_mab_monotone_in_budget_and_k():
    inst = gen_random_mab(2, 4, 5, seed=77)
    bigger = MABInstance(7, inst.arms)
    assert opt_mab(bigger).value >= opt_mab(inst).value - 1e-12
    k1 = MABInstance(5, inst.arms, exploit_budget=1)
    k2 = MABInstance(5, inst.arms, exploit_budget=2)
    assert opt_mab(k2).value >= opt_mab(k1).value - 1e-12


def martingale_arm(prefix, leaf_rewards):
    """Binary depth-2 arm whose rewards satisfy r_u = sum_v p(u,v) r_v."""
    s = {n: f"{prefix}{n}" for n in ["r", "a", "b", "aa", "ab", "ba", "bb"]}
    edges = [(s["r"], s["a"], 0.5), (s["r"], s["b"], 0.5),
             (s["a"], s["aa"], 0.5), (s["a"], s["ab"], 0.5),
             (s["b"], s["ba"], 0.5), (s["b"], s["bb"], 0.5)]
    r = dict(zip([s["aa"], s["ab"], s["ba"], s["bb"]], leaf_rewards))
    r[s["a"]] = 0.5 * (r[s["aa"]] + r[s["ab"]])
    r[s["b"]] = 0.5 * (r[s["ba"]] + r[s["bb"]])
    r[s["r"]] = 0.5 * (r[s["a"]] + r[s["b"]])
    return Arm(states=list(s.values()), root=s["r"], edges=edges, rewards=r)


def test_martingale_rewards_no_preemption_gap_where_dp_confirms():
    arms = [martingale_arm("x", (2, 0, 1, 1)), martingale_arm("y", (3, 1, 0, 2))]
    for budget in (2, 3, 4):
        inst = MABInstance(budget, arms)
        assert opt_mab_nonpreempting(inst).value == pytest.approx(
            opt_mab(inst).value, abs=1e-9)
