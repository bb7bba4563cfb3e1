import pytest

from aacons.aarb import NotSource
from aacons.evidence import Certificate, ProofOfFraud, Tag
from aacons.model import FaultConfig
from aacons.simnet import parse_scenario, run

from conftest import Cluster


def rb_cluster():
    return Cluster(FaultConfig(n=4, h0=3), mode="aarb")


def sent(c, pid, tag):
    return list({m.signature: m for s, d, m in c.queue if s == pid and m.tag == tag}.values())


def test_source_broadcasts_init():
    c = rb_cluster()
    c.nodes[0].start((0, 7))
    (init,) = sent(c, 0, Tag.INIT)
    assert init.value == 7 and init.signer == 0 and init.instance == "RB0"


def test_non_source_cannot_broadcast():
    c = rb_cluster()
    inst = c.nodes[1].aarb_instance(0)
    with pytest.raises(NotSource):
        inst.broadcast(7)


def test_third_echo_readies_and_delivers():
    c = rb_cluster()
    node = c.nodes[3]
    node.start((0, 7))
    for p in (0, 1, 2):
        node.deliver(c.signer(p).sign(Tag.ECHO_RB, "RB0", 0, 7))
    assert node.aarb[0].delivered == 7
    (ready,) = sent(c, 3, Tag.READY_RB)
    assert len(ready.cert.votes) == 3


def _ready_msg(c, signer, value, voters):
    votes = tuple(c.signer(p).sign(Tag.ECHO_RB, "RB0", 0, value) for p in voters)
    return c.signer(signer).sign(Tag.READY_RB, "RB0", 0, value, cert=Certificate(Tag.ECHO_RB, "RB0", 0, value, votes))


def test_single_ready_delivers():
    c = rb_cluster()
    node = c.nodes[3]
    node.start((0, 7))
    node.deliver(_ready_msg(c, 1, 7, [0, 1, 2]))
    assert node.aarb[0].delivered == 7
    assert len(sent(c, 3, Tag.READY_RB)) == 1


def test_ready_with_short_certificate_discarded():
    c = rb_cluster()
    node = c.nodes[3]
    node.start((0, 7))
    node.deliver(_ready_msg(c, 1, 7, [0, 1]))
    assert node.aarb[0].delivered is None


def test_removal_makes_stored_echoes_sufficient():
    c = rb_cluster()
    node = c.nodes[3]
    node.start((0, 7))
    for p in (0, 1):
        node.deliver(c.signer(p).sign(Tag.ECHO_RB, "RB0", 0, 7))
    assert node.aarb[0].delivered is None
    s2 = c.signer(2)
    node.update_committee([ProofOfFraud.of(s2.sign(Tag.ECHO_RB, "RB1", 0, 1), s2.sign(Tag.ECHO_RB, "RB1", 0, 2))])
    assert node.aarb[0].delivered == 7
    assert {"instance": "RB0", "completed": True} in c.events_of("recheck", 3)


def test_timer_relays_until_delivery():
    c = rb_cluster()
    node = c.nodes[1]
    node.start((0, 7))
    node.deliver(c.signer(0).sign(Tag.INIT, "RB0", 0, 7))
    c.fire(1, ("RB", 0))
    (relay,) = sent(c, 1, Tag.RELAY)
    assert {m.tag for m in relay.bundle} == {Tag.INIT, Tag.ECHO_RB}
    for p in (0, 2):
        node.deliver(c.signer(p).sign(Tag.ECHO_RB, "RB0", 0, 7))
    assert node.aarb[0].delivered == 7
    c.fire(1, ("RB", 0))
    assert len(sent(c, 1, Tag.RELAY)) == 1


def _split_source(seed, group_b):
    return parse_scenario({
        "mode": "aarb", "n": 4, "h0": 3, "d": 1, "source": 0, "seed": seed, "allow_unsafe": True,
        "pre_gst_pattern": "none",
        "roster": {"0": {"class": "deceitful", "script": "split", "params": {"tags": ["INIT"], "group_b": group_b}}},
    })


@pytest.mark.parametrize("seed", range(5))
def test_split_source_exposed_everywhere(seed):
    # 2/2 split: p0 and p1 see INIT(v), p2 and p3 see the twin
    sim = run(_split_source(seed, [2, 3]))
    for p in sim.nonfaulty:
        assert 0 in sim.nodes[p].view.proven()
    delivered = {sim.nodes[p].aarb[0].delivered for p in sim.nonfaulty}
    assert len(delivered - {None}) <= 1


def test_silent_source_never_delivers():
    sim = run(parse_scenario({"mode": "aarb", "n": 4, "h0": 3, "t": 1, "source": 0, "horizon": 2000,
                              "pre_gst_pattern": "none",
                              "roster": {"0": {"class": "byzantine", "script": "silent"}}}))
    assert sim.status == "horizon"
    assert all(sim.nodes[p].aarb[0].delivered is None for p in sim.nonfaulty)
    assert sim.expiry_total > 0
