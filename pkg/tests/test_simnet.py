import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from aacons.simnet import parse_scenario, run
from aacons.simnet.adversary import ClassViolation, make_behavior
from aacons.simnet.network import Simulation
from aacons.simnet.scenario import ScenarioError
from aacons.simnet.trace import report, trace_digest, trace_lines


def base(**kw):
    data = {"n": 4, "h0": 3, "pre_gst_pattern": "none"}
    data.update(kw)
    return data


def test_schema_error_paths():
    with pytest.raises(ScenarioError) as exc:
        parse_scenario({"n": 4})
    assert "exactly one of h0 and h0_fraction" in str(exc.value)
    with pytest.raises(ScenarioError) as exc:
        parse_scenario(base(roster={"1": {"class": "wizard", "script": "x"}}))
    assert "roster.1" in str(exc.value)
    with pytest.raises(ScenarioError):
        parse_scenario(base(unknown=1))
    with pytest.raises(ScenarioError):
        parse_scenario(base(inputs=[0, 1, 2, 0], mode="aabc"))
    with pytest.raises(ScenarioError):
        parse_scenario(base(roster={"7": {"class": "benign", "script": "crash"}}))


def test_verdict_roster_mismatch():
    sc = parse_scenario(base(t=1))
    v = sc.verdict()
    assert not v and "roster has 0 byzantine" in v.reasons[0]


def test_verdict_allow_unsafe_skips_bounds_only():
    sc = parse_scenario(base(d=2, allow_unsafe=True, roster={"0": {"class": "deceitful", "script": "split"},
                                                              "1": {"class": "deceitful", "script": "split"}}))
    assert sc.verdict()
    assert not parse_scenario(base(d=2, allow_unsafe=True)).verdict()


def test_unknown_script_rejected():
    with pytest.raises(ClassViolation):
        make_behavior("benign", "split", {})


def test_benign_cannot_equivocate():
    # a benign entry pointed at an equivocating route must be caught by the confinement check
    sim = Simulation(parse_scenario(base(q=1, roster={"2": {"class": "benign", "script": "omit"}})))
    from aacons.simnet.adversary import DeceitfulSplit
    bad = DeceitfulSplit(tags=["INIT"], group_b=[3])
    bad.attach(sim.nodes[2], 4, 1)
    bad.fault_class = "benign"
    sim.behaviors[2] = bad
    with pytest.raises(ClassViolation):
        sim.run()


def test_failure_free_quiescent_with_counters():
    sim = run(parse_scenario(base()))
    assert sim.status == "quiescent" and sim.agreement()
    rep = report(sim)
    assert rep["counters"]["messages"]["total"] == sum(v for k, v in rep["counters"]["messages"].items()
                                                       if k != "total")
    assert set(rep["counters"]["messages"]) >= {"aarb", "aabc", "total"}
    assert rep["a"] == 0 and rep["max_latency_after_gst"] <= 100


def test_crash_stops_sending():
    sim = run(parse_scenario(base(q=1, roster={"3": {"class": "benign", "script": "crash", "params": {"at": 0}}})))
    assert sim.status == "quiescent"
    assert sim.nodes[3].decision() is None
    assert len(set(sim.nonfaulty_decisions().values())) == 1


def test_post_gst_latency_bounded():
    sim = run(parse_scenario(base(gst=700, pre_gst_pattern="random", seed=5)))
    assert sim.max_latency_after_gst <= sim.delta


def test_trickle_inflates_expiries():
    quick = run(parse_scenario(base(mode="aabc")), record=False)
    slow = run(parse_scenario(base(mode="aabc", gst=600, pre_gst_pattern="trickle")), record=False)
    assert quick.a() == 0 and slow.a() > 0
    assert slow.counters.total_messages() > quick.counters.total_messages()


def test_same_seed_same_trace():
    sc = parse_scenario(base(gst=500, pre_gst_pattern="random", seed=11))
    assert trace_digest(run(sc)) == trace_digest(run(sc))


def test_different_seed_same_decision():
    digests, decisions = set(), set()
    for seed in range(4):
        sim = run(parse_scenario(base(gst=500, pre_gst_pattern="random", seed=seed)))
        digests.add(trace_digest(sim))
        decisions.update(sim.nonfaulty_decisions().values())
    assert len(digests) > 1 and len(decisions) == 1


def test_trace_header_and_end():
    import json
    lines = list(trace_lines(run(parse_scenario(base()))))
    head, end = json.loads(lines[0]), json.loads(lines[-1])
    assert head["format"] == "aacons-trace" and head["config"]["h0"] == 3
    assert end["ev"] == "end" and end["status"] == "quiescent"
    assert all(json.loads(x)["i"] == i for i, x in enumerate(lines[1:]))


def test_unrecorded_run_has_no_trace():
    with pytest.raises(ValueError):
        list(trace_lines(run(parse_scenario(base()), record=False)))


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(seed=st.integers(0, 10_000), gst=st.sampled_from([0, 300, 800]),
       pattern=st.sampled_from(["random", "trickle", "partition", "coordinator_starve"]))
def test_agreement_and_termination_random_schedules(seed, gst, pattern):
    sim = run(parse_scenario(base(n=4, h0=3, seed=seed, gst=gst, pre_gst_pattern=pattern)), record=False)
    assert sim.status == "quiescent"
    assert sim.agreement()
    proposed = {100 + i for i in range(4)}
    assert set(sim.nonfaulty_decisions().values()) <= proposed


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_aabc_agreement_with_equivocator(seed):
    sim = run(parse_scenario(base(n=7, h0=6, d=2, mode="aabc", seed=seed, gst=400, pre_gst_pattern="random",
                                  roster={"1": {"class": "deceitful", "script": "split"},
                                          "4": {"class": "deceitful", "script": "split"}})), record=False)
    assert sim.status == "quiescent" and sim.agreement()
    for p in sim.nonfaulty:
        assert sim.nodes[p].view.removed <= {1, 4}
