import math

import numpy as np
import pytest

from blcs.errors import ConfigError
from blcs.routing import REASONS
from blcs.sim_engine import (CSV_HEADER, MetricsReport, Scenario, SweepSpec, aggregate, compute_metrics, csv_text,
                             inject_malicious, load_scenario, model_for, read_csv, run, scenario_from_dict, sweep)

FAST = dict(epochs=40, train_episodes=3, train_per_episode=30)

TWO_DOMAINS = {"slots": 8,
               "domains": [{"id": "A", "kind": "wireless", "controller": "SC-A", "nodes": ["a1", "a2"]},
                           {"id": "C", "kind": "computing", "controller": "SC-C", "nodes": ["c1", "c2"]}],
               "links": [{"a": "a1", "b": "a2"}, {"a": "c1", "b": "c2"}, {"a": "a1", "b": "c1"},
                         {"a": "a2", "b": "c2"}]}


@pytest.fixture(scope="module")
def fast():
    sc = Scenario(duration=400, **FAST)
    return sc, model_for(sc)


def test_same_seed_gives_identical_trace_and_report(fast):
    sc, model = fast
    a = run(sc.replace(seed=3), model)
    b = run(sc.replace(seed=3), model)
    assert a.trace_lines() == b.trace_lines()
    assert a.report == b.report
    c = run(sc.replace(seed=4), model)
    assert c.trace_lines() != a.trace_lines()


def test_zero_load_reports_empty_values_with_flags(fast):
    sc, model = fast
    rep = run(sc.replace(load=0.0), model).report
    assert rep.requests == 0 and rep.blocking == 0.0 and rep.mistrust_rate == 0.0
    assert "no_requests" in rep.flags


@pytest.mark.parametrize("blcs", [True, False])
def test_conservation_and_every_admission_released(fast, blcs):
    sc, model = fast
    res = run(sc.replace(seed=1, blcs=blcs, load=40.0), model)
    reqs = [r for r in res.trace if r["ev"] == "request"]
    for r in reqs:
        assert (r["latency"] is not None) == r["admitted"]
        assert (r["reason"] in REASONS) != r["admitted"]
    rep = res.report
    assert rep.admitted + rep.blocked == rep.requests
    plans = {r["id"] for r in res.trace if r["ev"] == "plan"}
    admitted = {r["id"] for r in reqs if r["admitted"]}
    released = {r["id"] for r in res.trace if r["ev"] == "release"}
    assert admitted <= released
    assert plans >= admitted
    res.topology.audit()
    assert not res.topology.lightpaths


def test_tiny_baseline_mistrust_matches_hand_count():
    sc = Scenario(topology=TWO_DOMAINS, requester_domains=("A",), leader_domain="C", malicious_ratio=0.5,
                  blcs=False, load=5.0, duration=220.0, **FAST)
    res = run(sc)
    malicious = res.assignment.malicious
    total = bad = 0
    for rec in res.trace:
        if rec["ev"] == "request" and rec["t"] >= sc.warmup:
            for peer, _ in rec["interactions"]:
                total += 1
                bad += peer in malicious
    assert 40 <= sum(1 for r in res.trace if r["ev"] == "request") <= 80
    assert total > 0
    assert res.report.mistrust_rate == bad / total


def test_ratio_zero_means_nobody_malicious_and_no_mistrust(fast):
    sc, model = fast
    res = run(sc.replace(malicious_ratio=0.0), model)
    assert not res.assignment.malicious
    assert res.report.mistrust_rate == 0.0


def test_ratio_one_makes_every_eligible_target_malicious(fast):
    sc, model = fast
    res = run(sc.replace(malicious_ratio=1.0, blcs=False), model)
    assert res.assignment.malicious == {"SC-OPT", "SC-C1", "SC-C2"}
    requesters = {"SC-W1", "SC-W2"}
    peers = [p for r in res.trace if r["ev"] == "request" for p, _ in r["interactions"]]
    assert peers and all(p in res.assignment.malicious for p in peers if p not in requesters)


def test_injection_count_and_uniformity_chi_square():
    names = [f"SC{k}" for k in range(10)]
    counts = dict.fromkeys(names, 0)
    for seed in range(1000):
        a = inject_malicious(names, 0.3, seed=seed)
        assert len(a.malicious) == 3
        for c in a.malicious:
            counts[c] += 1
    expected = 1000 * 3 / 10
    chi2 = sum((v - expected) ** 2 / expected for v in counts.values())
    # 99.9% quantile of chi-square with 9 degrees of freedom
    assert chi2 < 27.88


def test_injection_is_nested_in_ratio():
    names = ["a", "b", "c", "d", "e"]
    for seed in range(20):
        prev = frozenset()
        for r in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0):
            cur = inject_malicious(names, r, seed=seed).malicious
            assert prev <= cur
            prev = cur


def scripted(n, blocked=0, bad=0, interactions=0, t=1000.0):
    out = []
    for k in range(n):
        inter = [["SC-X", k < bad]] if k < interactions else []
        adm = k >= blocked
        out.append({"ev": "request", "t": t, "interactions": inter, "rounds": 0, "admitted": adm,
                    "reason": None if adm else "NoSpectrum", "latency": 10.0 if adm else None,
                    "units": 4 if adm else 0, "lost": 0})
    return out


def test_scripted_metric_counts():
    sc = Scenario()
    assert compute_metrics(scripted(12, bad=3, interactions=12), sc).mistrust_rate == 0.25
    assert compute_metrics(scripted(100, blocked=10), sc).blocking == 0.10
    assert compute_metrics(scripted(5, interactions=5), sc).mistrust_rate == 0.0
    early = scripted(5, blocked=5, t=1.0)
    assert compute_metrics(early, sc).requests == 0


def test_aggregate_mean_and_normal_ci():
    reps = [MetricsReport(blocking=x) for x in (0.1, 0.2, 0.3, 0.4)]
    agg = aggregate(reps)
    xs = np.array([0.1, 0.2, 0.3, 0.4])
    assert agg.blocking == pytest.approx(xs.mean())
    assert agg.ci["blocking"] == pytest.approx(1.96 * xs.std(ddof=1) / math.sqrt(4))


def test_sweep_rows_sorted_and_csv_round_trip(fast):
    sc, model = fast
    rows = sweep(sc.replace(duration=200.0), SweepSpec("load", (10.0, 20.0), seeds=2), model)
    assert [(r.value, r.variant) for r in rows] == [(10.0, "BLCS"), (10.0, "baseline"), (20.0, "BLCS"),
                                                    (20.0, "baseline")]
    text = csv_text(rows)
    assert text.splitlines()[0] == ",".join(CSV_HEADER)
    back = read_csv(text)
    assert back[1]["blocking"] == rows[1].report.blocking


def test_sweep_spec_validation():
    with pytest.raises(ConfigError):
        SweepSpec("holding", (1.0,))
    with pytest.raises(ConfigError):
        SweepSpec("load", (20.0, 10.0))
    with pytest.raises(ConfigError):
        SweepSpec("load", ())
    with pytest.raises(ConfigError):
        SweepSpec("load", (1.0,), seeds=0)


def test_config_errors_name_field(tmp_path):
    with pytest.raises(ConfigError) as e:
        scenario_from_dict({"load": 10})
    assert e.value.field == "topology"
    with pytest.raises(ConfigError) as e:
        scenario_from_dict({"topology": "default", "load": -1})
    assert e.value.field == "load"
    with pytest.raises(ConfigError) as e:
        scenario_from_dict({"topology": "default", "bogus": 1})
    assert e.value.field == "bogus"
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_scenario(p)
