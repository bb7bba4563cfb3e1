"""Trace and report serialisation.

Trace: JSON lines. The first line is a header, the last an ``end`` record;
every other line is one event::

    {"i": 0, "t": 0, "ev": "round_start", "pid": 3, ...fields}
    {"i": 7, "t": 41, "ev": "deliver", "pid": 2, "src": 0, "sent": 12, "msg": MSG}

``MSG`` is ``{"s", "tag", "inst", "r", "v", "id"}`` plus optional ``cert``,
``bv_cert`` (``{"tag", "inst", "r", "v", "votes": [MSG...]}``), ``bundle``
(list of ``MSG``) and ``pofs`` (list of ``[MSG, MSG]``). ``v`` is an integer
or a sorted list for a set of bits; ``id`` is the first 8 bytes of the
signature in hex.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

from ..evidence import Certificate, ProofOfFraud, SignedMessage
from ..reduction import stabilization_index

TRACE_FORMAT = "aacons-trace"
REPORT_FORMAT = "aacons-report"
VERSION = 1


def _value(v):
    return sorted(v) if isinstance(v, frozenset) else v


def _plain(obj):
    if isinstance(obj, frozenset | set):
        return sorted(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def encode_cert(c: Certificate) -> dict:
    return {"tag": c.tag.value, "inst": c.instance, "r": c.round, "v": _value(c.value),
            "votes": [encode_message(v) for v in c.votes]}


def encode_message(m: SignedMessage) -> dict:
    out = {"s": m.signer, "tag": m.tag.value, "inst": m.instance, "r": m.round, "v": _value(m.value),
           "id": m.signature[:8].hex()}
    if m.cert is not None:
        out["cert"] = encode_cert(m.cert)
    if m.bv_cert is not None:
        out["bv_cert"] = encode_cert(m.bv_cert)
    if m.bundle:
        msgs = [encode_message(x) for x in m.bundle if isinstance(x, SignedMessage)]
        pofs = [[encode_message(p.msg_a), encode_message(p.msg_b)] for p in m.bundle if isinstance(p, ProofOfFraud)]
        if msgs:
            out["bundle"] = msgs
        if pofs:
            out["pofs"] = pofs
    return out


def header(sim) -> dict:
    sc = sim.scenario
    return {
        "format": TRACE_FORMAT, "version": VERSION,
        "scenario": sc.model_dump(mode="json", by_alias=True),
        "config": {"n": sim.cfg.n, "t": sim.cfg.t, "d": sim.cfg.d, "q": sim.cfg.q, "h0": sim.cfg.h0},
        "nonfaulty": sim.nonfaulty,
        "roster": {str(p): b.fault_class for p, b in sorted(sim.behaviors.items())},
        "proposals": {str(p): sc.proposal_for(p) for p in range(sim.n)},
    }


def trace_lines(sim):
    if not sim.record:
        raise ValueError("simulation was run without recording")
    dumps = json.dumps
    yield dumps(header(sim), sort_keys=True, default=_plain)
    for i, (t, kind, pid, fields) in enumerate(sim.events):
        if kind == "deliver":
            src, sent, msg = fields
            rec = {"i": i, "t": t, "ev": "deliver", "pid": pid, "src": src, "sent": sent, "msg": encode_message(msg)}
        else:
            rec = {"i": i, "t": t, "ev": kind, "pid": pid, **fields}
        yield dumps(rec, sort_keys=True, default=_plain)
    yield dumps({"i": len(sim.events), "t": sim.now, "ev": "end", "status": sim.status}, sort_keys=True)


def trace_digest(sim) -> str:
    h = hashlib.sha256()
    for line in trace_lines(sim):
        h.update(line.encode())
        h.update(b"\n")
    return h.hexdigest()


def write_trace(sim, path: str | Path) -> None:
    with open(path, "w") as fh:
        for line in trace_lines(sim):
            fh.write(line)
            fh.write("\n")


def report(sim) -> dict:
    decisions = {}
    for p, node in enumerate(sim.nodes):
        decisions[str(p)] = {"value": node.decision(), "nonfaulty": p in sim.nonfaulty}
    rep = {
        "format": REPORT_FORMAT, "version": VERSION,
        "scenario": sim.scenario.name, "seed": sim.scenario.seed, "mode": sim.scenario.mode,
        "status": sim.status, "end_time": sim.now,
        "decisions": decisions,
        "agreement": sim.agreement(),
        "disagreement": not sim.agreement(),
        "pofs_held": {str(p): sorted(n.view.proven()) for p, n in enumerate(sim.nodes)},
        "removed": {str(p): sorted(n.view.removed) for p, n in enumerate(sim.nodes)},
        "counters": sim.counters.as_dict(),
        "rounds": sim.max_round(),
        "a": sim.a(),
        "timer_expiries": sim.expiry_total,
        "max_latency_after_gst": sim.max_latency_after_gst,
    }
    if sim.scenario.mode == "ec":
        outputs = {p: sim.nodes[p].ec.outputs for p in sim.nonfaulty}
        rep["ec"] = {"outputs": {str(p): o for p, o in outputs.items()}, "k": stabilization_index(outputs)}
    return rep


def write_report(sim, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report(sim), indent=2, sort_keys=True, default=_plain) + "\n")
