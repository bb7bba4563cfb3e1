"""Accountable binary consensus with a rotating coordinator and parity decisions."""
from __future__ import annotations

from typing import Iterable

from .abv import AbvInstance, echo_cert_valid
from .evidence import Certificate, SignedMessage, Tag
from .model import Phase, coordinator

PHASE1_TAGS = (Tag.EST, Tag.BVECHO, Tag.BVREADY, Tag.COORD)


def comp_vals(echoes: dict[int, list[SignedMessage]], bin_vals: Iterable[int], aux: frozenset,
              h: int, removed: set) -> frozenset:
    """Values that may end phase 2, or an empty set if nothing is justified yet.

    ``echoes`` maps a signer to its ECHO_BC messages of the round in arrival
    order. First h signers who echoed exactly ``aux``; failing that, the union
    of the first echo of every signer whose echoed set lies within
    ``bin_vals``, provided at least h signers qualify.
    """
    allowed = frozenset(bin_vals)
    same = 0
    subset = []
    for signer, msgs in echoes.items():
        if signer in removed:
            continue
        if any(m.value == aux for m in msgs):
            same += 1
        first = next((m.value for m in msgs if m.value <= allowed), None)
        if first is not None:
            subset.append(first)
    if same >= h:
        return aux
    if len(subset) >= h:
        return frozenset().union(*subset)
    return frozenset()


class AabcInstance:
    """One binary consensus instance at one process."""

    def __init__(self, node, k: int):
        self.node = node
        self.k = k
        self.instance = f"BC{k}"
        self.timer_key = ("BC", k)
        self.abvs: dict[int, AbvInstance] = {}
        self.echoes: dict[int, dict[int, list[SignedMessage]]] = {}
        self.coords: dict[int, SignedMessage] = {}
        self.phase1_log: dict[int, list[SignedMessage]] = {}
        self.phase2_log: dict[int, list[SignedMessage]] = {}
        self.started = False
        self.halted = False
        self.est: int | None = None
        self.cert: Certificate | None = None
        self.r = 0
        self.phase: Phase | None = None
        self.expired = False
        self.aux: frozenset | None = None
        self.decided: tuple[int, int] | None = None
        self.coord_sent: set[int] = set()
        self.decide_relayed = False
        self.decide_msg: SignedMessage | None = None
        self.expiries = 0
        self._last_relay: dict[tuple, tuple] = {}
        self.deferred_decides: list[SignedMessage] = []

    # -- round loop

    def abv(self, rnd: int) -> AbvInstance:
        abv = self.abvs.get(rnd)
        if abv is None:
            abv = self.abvs[rnd] = AbvInstance(self.node, self.instance, rnd, self._on_bin_val)
        return abv

    def propose(self, value: int) -> None:
        if self.started:
            return
        self.started = True
        self.est = value
        self.node.log("bc_propose", instance=self.instance, value=value)
        self._start_round(1)

    def _start_round(self, rnd: int) -> None:
        if self.decided is not None and rnd > self.decided[1] + 1:
            # one extra round after deciding lets laggards collect our votes
            self.halted = True
            self.phase = None
            self.node.cancel_timer(self.timer_key)
            return
        self.r = rnd
        self.phase = Phase.PHASE1
        self.expired = False
        self.aux = None
        self.node.arm_timer(self.timer_key)
        self.node.log("round_start", instance=self.instance, round=rnd, est=self.est)
        self.abv(rnd).broadcast(self.est, self.cert)
        self._maybe_coord()

    def _on_bin_val(self, abv: AbvInstance, value: int) -> None:
        self.node.log("abv_deliver", instance=self.instance, round=abv.round, value=value)
        if abv.round == self.r and self.phase is Phase.PHASE1:
            self._maybe_coord()
            self._progress()

    def _maybe_coord(self) -> None:
        r = self.r
        if r in self.coord_sent or self.node.pid != coordinator(r, self.node.cfg.n):
            return
        bin_vals = self.abv(r).bin_vals
        if len(bin_vals) == 1:
            self.coord_sent.add(r)
            (w,) = bin_vals
            self.node.broadcast(self.node.signer.sign(Tag.COORD, self.instance, r, w))

    def _progress(self) -> None:
        while self.started and not self.halted and self.expired:
            if self.phase is Phase.PHASE1:
                if not self.abv(self.r).bin_vals:
                    return
                self._end_phase1()
            elif self.phase is Phase.PHASE2:
                vals = self.comp_vals()
                if not vals:
                    return
                self._decision_step(vals)
            else:
                return

    def _end_phase1(self) -> None:
        bin_vals = self.abv(self.r).bin_vals
        c = self.coords.get(self.r)
        self.aux = frozenset((c.value,)) if c is not None and c.value in bin_vals else frozenset(bin_vals)
        self.phase = Phase.PHASE2
        self.expired = False
        self.node.arm_timer(self.timer_key)
        self.node.broadcast(self.node.signer.sign(Tag.ECHO_BC, self.instance, self.r, self.aux))

    def comp_vals(self) -> frozenset:
        view = self.node.view
        return comp_vals(self.echoes.get(self.r, {}), self.abv(self.r).bin_vals, self.aux, view.h, view.removed)

    def echo_cert(self, rnd: int, value: int) -> Certificate:
        want = frozenset((value,))
        removed, h = self.node.view.removed, self.node.view.h
        votes = []
        for signer, msgs in self.echoes.get(rnd, {}).items():
            if signer in removed:
                continue
            m = next((m for m in msgs if m.value == want), None)
            if m is not None:
                votes.append(m.stripped())
                if len(votes) == h:
                    break
        return Certificate(Tag.ECHO_BC, self.instance, rnd, want, tuple(votes))

    def _decision_step(self, vals: frozenset) -> None:
        r = self.r
        parity = r % 2
        if len(vals) == 1:
            (v,) = vals
            self.est = v
            if v == parity and self.decided is None:
                self._decide(v, r, "vals")
                self.decide_relayed = True
                self.decide_msg = self.node.signer.sign(Tag.DECIDE, self.instance, r, v, cert=self.echo_cert(r, v))
                self.node.broadcast(self.decide_msg)
        else:
            self.est = parity
        self.cert = self._compute_cert(r)
        self._start_round(r + 1)

    def _compute_cert(self, r: int) -> Certificate | None:
        if self.est == r % 2:
            if r == 1:
                return None
            entry = self.abv(r).bin_vals.get(self.est)
            if entry is not None:
                return entry[0]
        return self.echo_cert(r, self.est)

    def _decide(self, value: int, rnd: int, via: str) -> None:
        self.decided = (value, rnd)
        self.node.log("decide", layer="aabc", instance=self.instance, value=value, round=rnd, via=via)
        self.node.on_bc_decide(self.k, value)

    # -- messages

    def on_message(self, msg: SignedMessage) -> None:
        tag, rnd = msg.tag, msg.round
        if rnd < 1:
            return
        if tag in PHASE1_TAGS:
            self.phase1_log.setdefault(rnd, []).append(msg)
            if tag == Tag.COORD:
                self._on_coord(msg)
            else:
                self.abv(rnd).on_message(msg)
        elif tag == Tag.ECHO_BC:
            self._on_echo(msg)
        elif tag == Tag.DECIDE:
            self.on_decide_msg(msg)

    def _on_coord(self, msg: SignedMessage) -> None:
        if msg.value in (0, 1) and msg.signer == coordinator(msg.round, self.node.cfg.n):
            self.coords.setdefault(msg.round, msg)

    def _on_echo(self, msg: SignedMessage) -> None:
        value = msg.value
        if not isinstance(value, frozenset) or not value or not value <= {0, 1}:
            return
        self.phase2_log.setdefault(msg.round, []).append(msg)
        per = self.echoes.setdefault(msg.round, {}).setdefault(msg.signer, [])
        if all(m.value != value for m in per):
            per.append(msg)
        if msg.round == self.r and self.phase is Phase.PHASE2:
            self._progress()

    def on_decide_msg(self, msg: SignedMessage) -> None:
        v, r = msg.value, msg.round
        if msg.signer == self.node.pid:
            return
        if v != r % 2:
            return
        if not echo_cert_valid(self.instance, r, v, msg.cert, self.node.view, self.node.keyring):
            self.deferred_decides.append(msg)
            return
        if not self.decide_relayed:
            self.decide_relayed = True
            self.node.broadcast(msg)
        if self.decided is None:
            self.decide_msg = msg
            self._decide(v, r, "msg")
        elif self.decided[0] != v:
            self.node.on_bc_disagreement(self.k, msg)

    # -- timers and committee changes

    def on_timer(self) -> None:
        if not self.started or self.halted:
            return
        self.expired = True
        before = (self.r, self.phase)
        self._progress()
        if (self.r, self.phase) == before and not self.halted:
            self.expiries += 1
            self.node.count_expiry(self.instance)
            self._relay()
            self.node.arm_timer(self.timer_key)

    def _relay(self) -> None:
        r = self.r
        bundle = []
        if self.phase is Phase.PHASE1:
            bundle.extend(self.phase1_log.get(r, ()))
        bundle.extend(self.phase2_log.get(r, ()))
        for later in sorted(set(self.phase1_log) | set(self.phase2_log)):
            if later > r:
                bundle.extend(self.phase1_log.get(later, ()))
                bundle.extend(self.phase2_log.get(later, ()))
        key = (r, self.phase)
        sigs = tuple(m.signature for m in bundle)
        if not bundle or self._last_relay.get(key) == sigs:
            return
        self._last_relay[key] = sigs
        self.node.broadcast(self.node.signer.sign(Tag.RELAY, self.instance, r, 0, bundle=tuple(bundle)))

    def recheck(self) -> bool:
        """Re-evaluate after removals; returns True if the current phase completed."""
        for abv in self.abvs.values():
            abv.recheck()
        retry, self.deferred_decides = self.deferred_decides, []
        for msg in retry:
            self.on_decide_msg(msg)
        if not self.started or self.halted:
            return False
        before = (self.r, self.phase)
        self._maybe_coord()
        self._progress()
        completed = (self.r, self.phase) != before
        if not self.halted:
            self.node.arm_timer(self.timer_key)
        return completed
