import json

import pytest

from stocpack.cli import main
from stocpack.instance_io import load_instance, save_instance
from stocpack.model import ItemDist, StocKInstance


def run_cli(*argv) -> int:
    try:
        return main(list(argv))
    except SystemExit as exc:  # argparse/_fail paths
        return int(exc.code or 0)


def test_gen_families(tmp_path):
    for family, extra in [
        ("cancel-benefit", ["--n", "6"]),
        ("correlated-gap", ["--n", "4"]),
        ("preemption-gap", ["--n", "2", "--L", "3", "--m", "1"]),
        ("random-stock", ["--n", "3", "--B", "8", "--support", "3", "--seed", "1"]),
        ("random-mab", ["--arms", "2", "--states", "4", "--B", "6", "--seed", "1"]),
    ]:
        out = tmp_path / f"{family}.json"
        assert run_cli("gen", "--family", family, *extra, "--out", str(out)) == 0
        assert out.exists()
        load_instance(out)


def test_gen_bad_parameters(tmp_path):
    code = run_cli("gen", "--family", "cancel-benefit", "--n", "2",
                   "--out", str(tmp_path / "x.json"))
    assert code == 2


def test_solve_single_item(tmp_path):
    inst = StocKInstance(1, [ItemDist({1: 1.0}, {1: 5.0})])
    path = tmp_path / "inst.json"
    save_instance(inst, path)
    out = tmp_path / "sol.json"
    assert run_cli("solve", "--instance", str(path), "--pipeline", "nocancel",
                   "--out", str(out)) == 0
    payload = json.loads(out.read_text())
    assert payload["objective"] == pytest.approx(5.0, abs=1e-9)
    assert payload["status"] == "optimal"


def test_solve_invalid_instance_exits_nonzero(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({
        "kind": "stock", "budget": 2,
        "items": [[{"size": 1, "prob": 0.6, "reward": 1.0},
                   {"size": 2, "prob": 0.6, "reward": 1.0}]],
    }))
    assert run_cli("solve", "--instance", str(path), "--pipeline", "nocancel") == 2


def test_solve_lp_dump(tmp_path):
    inst = StocKInstance(2, [ItemDist({1: 1.0}, {1: 2.0})])
    path = tmp_path / "inst.json"
    save_instance(inst, path)
    dump = tmp_path / "model.lp"
    assert run_cli("solve", "--instance", str(path), "--pipeline", "nocancel",
                   "--out", str(tmp_path / "s.json"), "--lp-dump", str(dump)) == 0
    assert dump.read_text().startswith("Maximize")


def test_run_writes_report_figure_and_is_deterministic(tmp_path):
    assert run_cli("gen", "--family", "correlated-gap", "--n", "4",
                   "--out", str(tmp_path / "cg.json")) == 0
    out1 = tmp_path / "r1.csv"
    out2 = tmp_path / "r2.csv"
    trace1 = tmp_path / "t1.jsonl"
    trace2 = tmp_path / "t2.jsonl"
    for out, trace in [(out1, trace1), (out2, trace2)]:
        code = run_cli("run", "--instance", str(tmp_path / "cg.json"),
                       "--pipeline", "nocancel", "--trials", "3000", "--seed", "7",
                       "--out", str(out), "--trace", str(trace))
        assert code == 0
    assert out1.read_bytes() == out2.read_bytes()
    assert trace1.read_bytes() == trace2.read_bytes()
    assert (tmp_path / "r1.png").exists()  # figure alongside the CSV
    header = out1.read_text().splitlines()[0]
    assert header == "check,mean,stderr,reference,ratio,verdict"


def test_run_single_trial_trace(tmp_path):
    assert run_cli("gen", "--family", "random-mab", "--arms", "2", "--states", "4",
                   "--B", "6", "--seed", "3", "--out", str(tmp_path / "m.json")) == 0
    trace = tmp_path / "trace.jsonl"
    code = run_cli("run", "--instance", str(tmp_path / "m.json"), "--pipeline", "mab-tree",
                   "--trials", "1", "--seed", "7", "--out", str(tmp_path / "m.csv"),
                   "--trace", str(trace), "--no-figure")
    assert code in (0, 1)  # a single trial may fail the one-sided MC check
    payload = json.loads(trace.read_text().splitlines()[0])
    assert payload["trial"] == 0 and "plays" in payload


def test_run_mab_exploit_k0_zero_mean(tmp_path):
    assert run_cli("gen", "--family", "random-mab", "--arms", "2", "--states", "4",
                   "--B", "6", "--seed", "4", "--out", str(tmp_path / "m.json")) == 0
    data = json.loads((tmp_path / "m.json").read_text())
    data["exploit_budget"] = 0
    (tmp_path / "m0.json").write_text(json.dumps(data))
    out = tmp_path / "k0.csv"
    run_cli("run", "--instance", str(tmp_path / "m0.json"), "--pipeline", "mab-exploit",
            "--trials", "500", "--out", str(out), "--no-figure")
    row = out.read_text().splitlines()[1].split(",")
    assert float(row[1]) == 0.0  # mean reward


def test_certify_correlated_gap_all_pass(tmp_path):
    assert run_cli("gen", "--family", "correlated-gap", "--n", "4",
                   "--out", str(tmp_path / "cg.json")) == 0
    out = tmp_path / "cert.csv"
    code = run_cli("certify", "--instance", str(tmp_path / "cg.json"),
                   "--pipeline", "nocancel", "--trials", "20000",
                   "--out", str(out), "--no-figure")
    assert code == 0
    rows = out.read_text().splitlines()[1:]
    assert all(r.rsplit(",", 1)[1] in ("pass", "skip") for r in rows)


def test_certify_mab_tree(tmp_path):
    assert run_cli("gen", "--family", "random-mab", "--arms", "2", "--states", "4",
                   "--B", "6", "--seed", "5", "--out", str(tmp_path / "m.json")) == 0
    code = run_cli("certify", "--instance", str(tmp_path / "m.json"),
                   "--pipeline", "mab-tree", "--trials", "20000",
                   "--out", str(tmp_path / "c.csv"), "--no-figure")
    assert code == 0
    body = (tmp_path / "c.csv").read_text()
    assert "gapfill head rule + extent<=3" in body


def test_certify_oversized_instance_skips_oracle(tmp_path):
    # 17 items exceed the no-cancel oracle guard (n <= 16); LP checks still run
    assert run_cli("gen", "--family", "random-stock", "--n", "17", "--B", "10",
                   "--support", "3", "--seed", "6", "--out", str(tmp_path / "big.json")) == 0
    out = tmp_path / "cert.csv"
    code = run_cli("certify", "--instance", str(tmp_path / "big.json"),
                   "--pipeline", "nocancel", "--trials", "5000",
                   "--out", str(out), "--no-figure")
    assert code == 0  # oracle row skipped, everything else still runs
    text = out.read_text()
    assert ",skip" in text and ",pass" in text


def test_pipeline_kind_mismatch(tmp_path):
    assert run_cli("gen", "--family", "correlated-gap", "--n", "4",
                   "--out", str(tmp_path / "cg.json")) == 0
    assert run_cli("run", "--instance", str(tmp_path / "cg.json"),
                   "--pipeline", "mab-tree", "--trials", "10",
                   "--out", str(tmp_path / "x.csv")) == 2


def test_exploit_pipeline_requires_k(tmp_path):
    assert run_cli("gen", "--family", "random-mab", "--arms", "1", "--states", "3",
                   "--B", "4", "--seed", "8", "--out", str(tmp_path / "m.json")) == 0
    assert run_cli("run", "--instance", str(tmp_path / "m.json"),
                   "--pipeline", "mab-exploit", "--trials", "10",
                   "--out", str(tmp_path / "x.csv")) == 2


def test_corrupt_instance_file(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run_cli("solve", "--instance", str(bad), "--pipeline", "nocancel") == 2
    missing = tmp_path / "missing.json"
    assert run_cli("solve", "--instance", str(missing), "--pipeline", "nocancel") == 2


def test_run_freq_csv(tmp_path):
    assert run_cli("gen", "--family", "random-mab", "--arms", "2", "--states", "4",
                   "--B", "6", "--seed", "9", "--out", str(tmp_path / "m.json")) == 0
    out = tmp_path / "r.csv"
    run_cli("run", "--instance", str(tmp_path / "m.json"), "--pipeline", "mab-tree",
            "--trials", "2000", "--seed", "4", "--out", str(out), "--freq", "--no-figure")
    freq = out.with_suffix(".freq.csv")
    lines = freq.read_text().splitlines()
    assert lines[0] == "state,plays_per_trial"
    assert len(lines) > 1


def test_solve_mab_tree_objective_at_least_oracle(tmp_path):
    from stocpack.instance_io import load_instance
    from stocpack.oracle import opt_mab

    assert run_cli("gen", "--family", "random-mab", "--arms", "2", "--states", "4",
                   "--B", "5", "--seed", "10", "--out", str(tmp_path / "m.json")) == 0
    out = tmp_path / "sol.json"
    assert run_cli("solve", "--instance", str(tmp_path / "m.json"),
                   "--pipeline", "mab-tree", "--out", str(out)) == 0
    payload = json.loads(out.read_text())
    oracle = opt_mab(load_instance(tmp_path / "m.json")).value
    assert payload["objective"] >= oracle - 1e-6
