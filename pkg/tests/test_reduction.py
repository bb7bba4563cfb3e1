from dataclasses import dataclass, field

import pytest
from hypothesis import given, strategies as st

from aacons.model import CommitteeView, FaultConfig
from aacons.reduction import EventualConsensus, GeneralProtocol, stabilization_index
from aacons.simnet import parse_scenario, run


@dataclass
class _Inst:
    proposed: list = field(default_factory=list)
    decided: tuple | None = None
    delivered: object = None
    ready_msg: object = None
    decide_msg: object = None

    def start(self):
        pass

    def broadcast(self, v):
        self.proposed.append(("rb", v))

    def propose(self, v):
        self.proposed.append(v)


class StubNode:
    def __init__(self, n=4, h0=3, pid=0):
        self.pid = pid
        self.cfg = FaultConfig(n=n, h0=h0)
        self.view = CommitteeView(n, h0)
        self.rb = {k: _Inst() for k in range(n)}
        self.bc = {k: _Inst() for k in range(n)}
        self.logs, self.sent, self.general = [], [], []
        self.timers = 0

    def aarb_instance(self, k):
        return self.rb[k]

    def aabc_instance(self, k):
        return self.bc[k]

    def log(self, kind, **f):
        self.logs.append((kind, f))

    def on_general_decide(self, v):
        self.general.append(v)

    def broadcast(self, m):
        self.sent.append(m)

    def arm_timer(self, key):
        self.timers += 1


def test_min_index_decision():
    node = StubNode()
    gen = GeneralProtocol(node)
    for k, v in enumerate([40, 10, 30, 20]):
        gen.on_rb_deliver(k, v)
    assert [b.proposed for b in node.bc.values()] == [[1]] * 4
    for k, bit in enumerate([1, 0, 1, 0]):
        gen.on_bc_decide(k, bit)
    assert gen.decided == 40 and node.general == [40]


def test_zero_inputs_after_h_ones():
    node = StubNode()
    gen = GeneralProtocol(node)
    gen.on_rb_deliver(1, 5)
    gen.on_rb_deliver(2, 6)
    gen.on_rb_deliver(3, 7)
    for k in (1, 2):
        gen.on_bc_decide(k, 1)
    assert node.bc[0].proposed == []
    gen.on_bc_decide(3, 1)
    assert node.bc[0].proposed == [0]
    gen.on_bc_decide(0, 0)
    assert gen.decided == 5


def test_waits_for_missing_proposal():
    node = StubNode()
    gen = GeneralProtocol(node)
    for k in (1, 2, 3):
        gen.on_rb_deliver(k, 10 + k)
    for k, bit in enumerate([1, 1, 1, 1]):
        gen.on_bc_decide(k, bit)
    assert gen.decided is None
    gen.on_rb_deliver(0, 99)
    assert gen.decided == 99


def test_validity_same_proposal():
    sim = run(parse_scenario({"n": 4, "h0": 3, "proposals": [5, 5, 5, 5], "pre_gst_pattern": "none"}))
    assert sim.status == "quiescent"
    assert set(sim.nonfaulty_decisions().values()) == {5}


class _Msg:
    def __init__(self, value, signature=b"x"):
        self.value, self.signature = value, signature


def test_ec_aarb_disagreement_adopts_minimum():
    node = StubNode()
    node.gen = GeneralProtocol(node)
    node.gen.proposals = [150, 11, 12, 13]
    node.gen.bin_decisions = [1, 0, 0, 0]
    node.rb[0].ready_msg = _Msg(150, b"own")
    ec = EventualConsensus(node, epochs=5)
    ec.on_general_decide(150)
    ec.on_rb_disagreement(0, _Msg(100, b"other"))
    ec.on_epoch()
    assert ec.outputs == [150, 100]
    assert [m.signature for m in node.sent] == [b"other", b"own"]
    ec.on_rb_disagreement(0, _Msg(100, b"other"))   # already known: nothing re-sent
    assert len(node.sent) == 2


def test_ec_aabc_disagreement_switches_index():
    node = StubNode()
    node.gen = GeneralProtocol(node)
    node.gen.proposals = [20, 30, 40, 50]
    node.gen.bin_decisions = [0, 0, 1, 1]
    node.bc[1].decided = (0, 2)
    ec = EventualConsensus(node, epochs=4)
    ec.on_general_decide(node.gen.current())
    ec.on_bc_disagreement(1, _Msg(1, b"d"))
    ec.on_epoch()
    ec.on_epoch()
    assert ec.outputs == [40, 30, 30]
    ec.on_epoch()
    ec.on_epoch()
    assert ec.done and len(ec.outputs) == 4


def test_stabilization_index():
    assert stabilization_index({0: [1, 2, 3], 1: [0, 2, 3]}) == 1
    assert stabilization_index({0: [1, 1], 1: [1, 1]}) == 0
    assert stabilization_index({0: [1, 2], 1: [1, 3]}) is None
    assert stabilization_index({}) is None
    assert stabilization_index({0: []}) is None


@given(st.lists(st.integers(0, 3), min_size=1, max_size=8), st.integers(2, 4))
def test_stabilization_index_suffix(history, procs):
    outs = {p: list(history) for p in range(procs)}
    assert stabilization_index(outs) == 0
    outs = {p: [9 if p == 0 else 8] + list(history) for p in range(procs)}
    assert stabilization_index(outs) == 1


@pytest.mark.parametrize("seed", [0, 1])
def test_ec_converges_to_minimum(seed):
    tf = {"class": "deceitful", "script": "two_faced", "params": {"group_b": [8, 9]}}
    sc = parse_scenario({
        "mode": "ec", "n": 10, "h0": 6, "d": 5, "gst": 1500, "ec_epochs": 20, "seed": seed,
        "pre_gst_pattern": {"kind": "partition", "groups": [[0, 1, 2, 3, 4, 5, 6, 7], [0, 1, 2, 3, 4, 8, 9]]},
        "roster": {str(p): tf for p in range(5)},
    })
    assert sc.verdict()
    sim = run(sc, record=False)
    outs = {p: sim.nodes[p].ec.outputs for p in sim.nonfaulty}
    assert {o[-1] for o in outs.values()} == {100}
    assert {o[0] for o in outs.values()} == {100, 150}   # the run really disagreed first
    assert stabilization_index(outs) is not None
