"""Property checks over a recorded trace.

Works from the JSON lines alone and does not import the protocol code, so its
verdicts are an independent second opinion on what the simulator asserts
in-process. Proofs of fraud are re-derived from delivered message contents.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

TRACE_FORMAT = "aacons-trace"
VERSION = 1

PROPERTIES = ("agreement", "termination", "validity", "accountability", "active-accountability",
              "ec-agreement", "abv-suite", "aarb-suite")

# tag -> whether the round is part of the conflict slot
_SLOTS = {"INIT": False, "ECHO_RB": False, "READY_RB": False, "ECHO_BC": True, "EST": True,
          "COORD": True, "DECIDE": False}


class TraceError(ValueError):
    pass


@dataclass
class CheckResult:
    prop: str
    ok: bool
    detail: str = ""
    event: int | None = None

    def line(self) -> str:
        status = "PASS" if self.ok else "FAIL"
        where = f" (event {self.event})" if self.event is not None else ""
        return f"{status} {self.prop}{where}: {self.detail}"


@dataclass
class Trace:
    header: dict
    events: list[dict]
    end: dict
    _culprits: dict[int, dict[int, int]] | None = field(default=None, repr=False)

    @property
    def config(self) -> dict:
        return self.header["config"]

    @property
    def nonfaulty(self) -> list[int]:
        return self.header["nonfaulty"]

    @property
    def mode(self) -> str:
        return self.header["scenario"]["mode"]

    def within_bounds(self) -> bool:
        c = self.config
        n, t, d, q, h0 = c["n"], c["t"], c["d"], c["q"], c["h0"]
        return n / 2 < h0 <= n and d + t < 2 * h0 - n and q + t <= n - h0

    def culprits(self) -> dict[int, dict[int, int]]:
        """Per process, culprit -> index of the event that first proved it."""
        if self._culprits is None:
            self._culprits = _derive_culprits(self)
        return self._culprits


def load_trace(path: str | Path) -> Trace:
    lines = Path(path).read_text().splitlines()
    return parse_trace(lines)


def parse_trace(lines) -> Trace:
    records = [json.loads(x) for x in lines if x.strip()]
    if not records:
        raise TraceError("empty trace")
    head = records[0]
    if head.get("format") != TRACE_FORMAT:
        raise TraceError("not a trace file")
    if head.get("version") != VERSION:
        raise TraceError(f"trace version {head.get('version')} is not supported (expected {VERSION})")
    end = records[-1] if records[-1].get("ev") == "end" else {"ev": "end", "status": "truncated"}
    body = records[1:-1] if records[-1].get("ev") == "end" else records[1:]
    return Trace(head, body, end)


# ----------------------------------------------------------------- helpers


def _value_key(v):
    return tuple(v) if isinstance(v, list) else v


def _walk(msg: dict):
    """Every signed message reachable from a delivered one, including the message itself."""
    yield msg
    for key in ("cert", "bv_cert"):
        c = msg.get(key)
        if c:
            for vote in c["votes"]:
                yield vote
    for inner in msg.get("bundle", ()):
        yield from _walk(inner)
    for a, b in msg.get("pofs", ()):
        yield a
        yield b


def _derive_culprits(trace: Trace) -> dict[int, dict[int, int]]:
    seen: dict[int, dict[tuple, set]] = {}
    found: dict[int, dict[int, int]] = {p: {} for p in trace.nonfaulty}
    for ev in trace.events:
        if ev["ev"] != "deliver":
            continue
        dst = ev["pid"]
        if dst not in found:
            continue
        slots = seen.setdefault(dst, {})
        for m in _walk(ev["msg"]):
            with_round = _SLOTS.get(m["tag"])
            if with_round is None:
                continue
            key = (m["s"], m["tag"], m["inst"], m["r"] if with_round else None)
            values = slots.setdefault(key, set())
            values.add(_value_key(m["v"]))
            if len(values) > 1 and m["s"] not in found[dst]:
                found[dst][m["s"]] = ev["i"]
    return found


def _decisions(trace: Trace) -> dict[int, tuple[object, int]]:
    """First decision per non-faulty process, for the layer the scenario runs."""
    out = {}
    nonfaulty = set(trace.nonfaulty)
    mode = trace.mode
    for ev in trace.events:
        pid = ev["pid"]
        if pid not in nonfaulty or pid in out or ev.get("face"):
            continue
        kind = ev["ev"]
        if mode in ("general", "ec") and kind == "decide" and ev["layer"] == "general":
            out[pid] = (ev["value"], ev["i"])
        elif mode == "aabc" and kind == "decide" and ev["layer"] == "aabc":
            out[pid] = (ev["value"], ev["i"])
        elif mode == "aarb" and kind == "aarb_deliver":
            out[pid] = (ev["value"], ev["i"])
    return out


# ------------------------------------------------------------- properties


def check_agreement(trace: Trace) -> CheckResult:
    first = None
    for pid, (value, idx) in sorted(_decisions(trace).items(), key=lambda kv: kv[1][1]):
        if first is None:
            first = (pid, value, idx)
        elif value != first[1]:
            return CheckResult("agreement", False,
                               f"p{first[0]} decided {first[1]} at event {first[2]}, p{pid} decided {value}", idx)
    return CheckResult("agreement", True, "no two non-faulty processes decided differently")


def check_termination(trace: Trace) -> CheckResult:
    decided = _decisions(trace)
    missing = [p for p in trace.nonfaulty if p not in decided]
    if missing:
        return CheckResult("termination", False, f"no decision at {missing}; run ended {trace.end['status']}",
                           trace.end.get("i"))
    return CheckResult("termination", True, f"all {len(decided)} non-faulty processes decided")


def _broadcast_values(trace: Trace) -> set:
    """Values some process signed as an INIT, as seen by any recipient."""
    values = {_value_key(v) for v in trace.header["proposals"].values() if not isinstance(v, list)}
    for ev in trace.events:
        if ev["ev"] == "deliver":
            for m in _walk(ev["msg"]):
                if m["tag"] == "INIT":
                    values.add(_value_key(m["v"]))
    return values


def check_validity(trace: Trace) -> CheckResult:
    decided = _decisions(trace)
    if trace.mode == "aabc":
        props = trace.header["proposals"]
        allowed = {props[str(p)] for p in trace.nonfaulty}
    else:
        allowed = _broadcast_values(trace)
    for pid, (value, idx) in sorted(decided.items(), key=lambda kv: kv[1][1]):
        if _value_key(value) not in allowed:
            return CheckResult("validity", False, f"p{pid} decided {value}, never proposed", idx)
    return CheckResult("validity", True, "every decided value was proposed")


def check_accountability(trace: Trace) -> CheckResult:
    faulty = {int(p) for p, cls in trace.header["roster"].items() if cls in ("deceitful", "byzantine")}
    culprits = trace.culprits()
    for pid, found in culprits.items():
        wrong = set(found) - faulty
        if wrong:
            idx = min(found[w] for w in wrong)
            return CheckResult("accountability", False, f"p{pid} holds proof against non-equivocators {sorted(wrong)}",
                               idx)
    decided = _decisions(trace)
    if len({repr(v) for v, _ in decided.values()}) <= 1:
        return CheckResult("accountability", True, "no disagreement; all derived proofs name equivocators")
    c = trace.config
    need = 2 * c["h0"] - c["n"]
    short = {p: len(f) for p, f in culprits.items() if len(f) < need}
    if short:
        return CheckResult("accountability", False, f"disagreement but culprit counts {short} < {need}",
                           trace.end.get("i"))
    counts = sorted({len(f) for f in culprits.values()})
    return CheckResult("accountability", True, f"disagreement with culprit counts {counts} >= {need}")


def check_active_accountability(trace: Trace) -> CheckResult:
    term = check_termination(trace)
    if not term.ok:
        return CheckResult("active-accountability", False, term.detail, term.event)
    culprits = trace.culprits()
    union = set().union(*(set(f) for f in culprits.values())) if culprits else set()
    for pid, found in culprits.items():
        lacking = union - set(found)
        if lacking:
            return CheckResult("active-accountability", False,
                               f"p{pid} never learned of equivocators {sorted(lacking)}", trace.end.get("i"))
    return CheckResult("active-accountability", True,
                       f"terminated; every non-faulty process proved {sorted(union)}")


def check_ec_agreement(trace: Trace) -> CheckResult:
    if trace.mode != "ec":
        return CheckResult("ec-agreement", True, f"not applicable to a {trace.mode} run")
    outputs: dict[int, list] = {p: [] for p in trace.nonfaulty}
    for ev in trace.events:
        if ev["ev"] == "ec_output" and ev["pid"] in outputs and not ev.get("face"):
            outputs[ev["pid"]].append(ev["value"])
    length = min((len(o) for o in outputs.values()), default=0)
    if length == 0:
        return CheckResult("ec-agreement", False, "no epoch outputs", trace.end.get("i"))
    k = None
    for j in range(length - 1, -1, -1):
        if len({repr(o[j]) for o in outputs.values()}) == 1:
            k = j
        else:
            break
    if k is None:
        return CheckResult("ec-agreement", False, f"outputs still differ at epoch {length - 1}", trace.end.get("i"))
    return CheckResult("ec-agreement", True, f"outputs agree from epoch {k} of {length}")


def check_abv_suite(trace: Trace) -> CheckResult:
    nonfaulty = set(trace.nonfaulty)
    estimates: dict[tuple, set] = {}
    delivered: dict[tuple, dict[int, set]] = {}
    started: dict[str, dict[int, int]] = {}
    for ev in trace.events:
        pid = ev["pid"]
        if pid not in nonfaulty:
            continue
        if ev["ev"] == "round_start":
            estimates.setdefault((ev["instance"], ev["round"]), set()).add(ev["est"])
            started.setdefault(ev["instance"], {})[pid] = ev["round"]
        elif ev["ev"] == "abv_deliver":
            key = (ev["instance"], ev["round"])
            if ev["value"] not in estimates.get(key, set()):
                return CheckResult("abv-suite", False,
                                   f"justification: p{pid} delivered {ev['value']} in {key} with no correct estimate",
                                   ev["i"])
            delivered.setdefault(key, {}).setdefault(pid, set()).add(ev["value"])
    if trace.end["status"] == "quiescent":
        for (inst, rnd), per in delivered.items():
            last = started.get(inst, {})
            if any(last.get(p, 0) < rnd for p in nonfaulty):
                continue
            sets = {frozenset(per.get(p, set())) for p in nonfaulty}
            if len(sets) > 1:
                return CheckResult("abv-suite", False, f"uniformity: {inst} round {rnd} delivered sets differ",
                                   trace.end.get("i"))
    return CheckResult("abv-suite", True, f"{len(delivered)} (instance, round) pairs justified and uniform")


def check_aarb_suite(trace: Trace) -> CheckResult:
    nonfaulty = set(trace.nonfaulty)
    per: dict[str, dict[int, list]] = {}
    inits: dict[str, set] = {}
    props = trace.header["proposals"]
    for ev in trace.events:
        if ev["ev"] == "deliver":
            for m in _walk(ev["msg"]):
                if m["tag"] == "INIT":
                    inits.setdefault(m["inst"], set()).add(_value_key(m["v"]))
        elif ev["ev"] == "aarb_deliver" and ev["pid"] in nonfaulty and not ev.get("face"):
            per.setdefault(ev["instance"], {}).setdefault(ev["pid"], []).append((ev["value"], ev["i"]))
    for inst, by_pid in per.items():
        src = int(inst[2:])
        own = props[str(src)]
        own = own[1] if isinstance(own, list) else own
        for pid, got in by_pid.items():
            if len(got) > 1:
                return CheckResult("aarb-suite", False, f"unicity: p{pid} delivered {inst} twice", got[1][1])
            value, idx = got[0]
            legit = inits.get(inst, set()) | ({own} if src in nonfaulty else set())
            if _value_key(value) not in legit:
                return CheckResult("aarb-suite", False, f"validity: p{pid} delivered {value} for {inst}", idx)
            if src in nonfaulty and value != own:
                return CheckResult("aarb-suite", False, f"validity: correct source {src} sent {own}", idx)
        if trace.end["status"] == "quiescent" and trace.within_bounds():
            missing = nonfaulty - set(by_pid)
            if missing:
                return CheckResult("aarb-suite", False, f"receive: {inst} never delivered at {sorted(missing)}",
                                   trace.end.get("i"))
    return CheckResult("aarb-suite", True, f"{len(per)} broadcast instances unique, valid and received")


CHECKS = {
    "agreement": check_agreement,
    "termination": check_termination,
    "validity": check_validity,
    "accountability": check_accountability,
    "active-accountability": check_active_accountability,
    "ec-agreement": check_ec_agreement,
    "abv-suite": check_abv_suite,
    "aarb-suite": check_aarb_suite,
}


def check(trace: Trace, prop: str) -> CheckResult:
    if prop not in CHECKS:
        raise ValueError(f"unknown property {prop!r}; choose from {', '.join(PROPERTIES)}")
    return CHECKS[prop](trace)
