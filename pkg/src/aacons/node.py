"""Per-process glue: verification, conflict detection, committee updates and dispatch."""
from __future__ import annotations

from collections import deque

from .aabc import AabcInstance
from .aarb import AarbInstance
from .evidence import KeyRing, MessageStore, ProofOfFraud, SignedMessage, Tag, verify_pofs
from .model import CommitteeCollapse, CommitteeView, FaultConfig, threshold
from .reduction import EventualConsensus, GeneralProtocol


class Node:
    """One simulated process.

    ``net`` is the simulator facade: ``now``, ``delta``, ``send(src, msg)``,
    ``set_timer(pid, key, gen)`` and ``log(pid, kind, fields)``.
    """

    def __init__(self, pid: int, cfg: FaultConfig, keyring: KeyRing, net, mode: str = "general",
                 ec_epochs: int = 0, amp_rule: str = "balanced"):
        self.pid = pid
        self.cfg = cfg
        self.keyring = keyring
        self.signer = keyring.signer(pid)
        self.net = net
        self.mode = mode
        self.view = CommitteeView(cfg.n, cfg.h0)
        self.store = MessageStore()
        self.aarb: dict[int, AarbInstance] = {}
        self.aabc: dict[int, AabcInstance] = {}
        self.gen = GeneralProtocol(self) if mode in ("general", "ec") else None
        self.ec = EventualConsensus(self, ec_epochs) if mode == "ec" else None
        self.amp_rule = amp_rule
        self.amp_override: int | None = None
        self.expiries: dict[str, int] = {}
        self.pofs_sent: set[int] = set()
        self._timers: dict[tuple, int] = {}
        self._handled: set[bytes] = set()
        self._local: deque[SignedMessage] = deque()
        self._busy = False

    # -- instances

    def aarb_instance(self, k: int) -> AarbInstance:
        inst = self.aarb.get(k)
        if inst is None:
            inst = self.aarb[k] = AarbInstance(self, k)
        return inst

    def aabc_instance(self, k: int) -> AabcInstance:
        inst = self.aabc.get(k)
        if inst is None:
            inst = self.aabc[k] = AabcInstance(self, k)
        return inst

    # -- entry points used by the simulator

    def start(self, proposal) -> None:
        with_drain = self._enter()
        if self.mode in ("general", "ec"):
            self.gen.propose(proposal)
        elif self.mode == "aabc":
            self.aabc_instance(0).propose(proposal)
        elif self.mode == "aarb":
            src, value = proposal
            inst = self.aarb_instance(src)
            inst.start()
            if src == self.pid:
                inst.broadcast(value)
        else:
            raise ValueError(f"unknown mode {self.mode!r}")
        self._leave(with_drain)

    def deliver(self, msg: SignedMessage) -> None:
        with_drain = self._enter()
        self._local.append(msg)
        self._leave(with_drain)

    def fire(self, key: tuple, gen: int) -> None:
        if self._timers.get(key) != gen:
            return
        with_drain = self._enter()
        kind = key[0]
        if kind == "BC":
            self.aabc[key[1]].on_timer()
        elif kind == "RB":
            self.aarb[key[1]].on_timer()
        elif kind == "EC":
            self.ec.on_epoch()
        self._leave(with_drain)

    def enqueue_local(self, msg: SignedMessage) -> None:
        self._local.append(msg)

    def _enter(self) -> bool:
        if self._busy:
            return False
        self._busy = True
        return True

    def _leave(self, owner: bool) -> None:
        if not owner:
            return
        try:
            while self._local:
                self._receive(self._local.popleft())
        finally:
            self._busy = False

    # -- services used by protocol instances

    def broadcast(self, msg: SignedMessage) -> None:
        self.net.send(self.pid, msg)

    def arm_timer(self, key: tuple) -> None:
        gen = self._timers.get(key, 0) + 1
        self._timers[key] = gen
        self.net.set_timer(self.pid, key, gen)

    def cancel_timer(self, key: tuple) -> None:
        self._timers[key] = self._timers.get(key, 0) + 1

    def count_expiry(self, instance: str) -> None:
        self.expiries[instance] = self.expiries.get(instance, 0) + 1
        self.net.on_expiry(self.pid, instance)

    def log(self, kind: str, **fields) -> None:
        self.net.log(self.pid, kind, fields)

    # -- receive path

    def _receive(self, msg: SignedMessage) -> None:
        if not self.keyring.verify_full(msg):
            return
        tag = msg.tag
        if tag == Tag.RELAY:
            for inner in msg.bundle:
                if isinstance(inner, SignedMessage) and inner.tag not in (Tag.RELAY, Tag.POFS):
                    self._receive(inner)
            return
        if tag == Tag.POFS:
            pofs = [p for p in msg.bundle if isinstance(p, ProofOfFraud)]
            if pofs and verify_pofs(pofs, self.keyring):
                self.update_committee(pofs)
            return
        if msg.signature in self._handled:
            return
        self._handled.add(msg.signature)
        incoming = [msg.stripped()]
        for cert in (msg.cert, msg.bv_cert):
            if cert is not None:
                incoming.extend(v for v in cert.votes if self.keyring.verify(v))
        pofs = self.store.check_conflicts(incoming)
        if pofs:
            self.update_committee(pofs)
        inst = msg.instance
        if inst.startswith("RB"):
            self.aarb_instance(int(inst[2:])).on_message(msg)
        elif inst.startswith("BC"):
            self.aabc_instance(int(inst[2:])).on_message(msg)

    def update_committee(self, pofs: list[ProofOfFraud]) -> None:
        view = self.view
        fresh, seen = [], set()
        for p in pofs:
            if p.culprit in view.local_pofs or p.culprit in seen:
                continue
            seen.add(p.culprit)
            fresh.append(p)
        if not fresh:
            return
        removable = []
        for p in fresh:
            if self._removal_keeps_thresholds(view.d_r + len(removable) + 1):
                removable.append(p)
            else:
                # keep the proof but do not shrink the committee any further
                view.local_pofs[p.culprit] = p
                self.log("collapse", culprit=p.culprit, d_r=view.d_r)
        removed = view.remove(removable)
        for culprit in removed:
            self.log("remove", culprit=culprit, d_r=view.d_r, h=view.h)
        new = [p for p in fresh if p.culprit not in self.pofs_sent]
        if new:
            self.pofs_sent.update(p.culprit for p in new)
            self.broadcast(self.signer.sign(Tag.POFS, "EV", 0, 0, bundle=tuple(new)))
        for k in sorted(self.aarb):
            if self.aarb[k].recheck():
                self.log("recheck", instance=self.aarb[k].instance, completed=True)
        for k in sorted(self.aabc):
            bc = self.aabc[k]
            completed = bc.recheck()
            if completed:
                self.log("recheck", instance=bc.instance, completed=True, round=bc.r)
        if self.gen is not None:
            self.gen.check()

    def _removal_keeps_thresholds(self, d_r: int) -> bool:
        try:
            threshold(self.cfg.h0, d_r)
        except CommitteeCollapse:
            return False
        return True

    # -- upcalls from instances

    def on_rb_deliver(self, k: int, value) -> None:
        if self.gen is not None:
            self.gen.on_rb_deliver(k, value)

    def on_bc_decide(self, k: int, bit: int) -> None:
        if self.gen is not None:
            self.gen.on_bc_decide(k, bit)

    def on_general_decide(self, value) -> None:
        if self.ec is not None:
            self.ec.on_general_decide(value)

    def on_rb_disagreement(self, k: int, ready: SignedMessage) -> None:
        self.log("conflicting_delivery", layer="aarb", instance=ready.instance, other=ready.value)
        if self.ec is not None:
            self.ec.on_rb_disagreement(k, ready)

    def on_bc_disagreement(self, k: int, decide: SignedMessage) -> None:
        self.log("conflicting_delivery", layer="aabc", instance=decide.instance, other=decide.value)
        if self.ec is not None:
            self.ec.on_bc_disagreement(k, decide)

    # -- outcome

    @property
    def done(self) -> bool:
        if self.mode == "general":
            return self.gen.decided is not None
        if self.mode == "ec":
            return self.ec.done
        if self.mode == "aabc":
            bc = self.aabc.get(0)
            return bc is not None and bc.decided is not None
        if self.mode == "aarb":
            return any(i.delivered is not None for i in self.aarb.values())
        return False

    def decision(self):
        if self.mode in ("general", "ec"):
            return self.gen.decided
        if self.mode == "aabc":
            bc = self.aabc.get(0)
            return bc.decided[0] if bc is not None and bc.decided else None
        inst = next((i for i in self.aarb.values() if i.delivered is not None), None)
        return inst.delivered if inst else None
