"""Accountable reliable broadcast, one instance per source process."""
from __future__ import annotations

from .evidence import Certificate, SignedMessage, Tag, certificate_valid


class NotSource(RuntimeError):
    pass


class AarbInstance:
    def __init__(self, node, source: int):
        self.node = node
        self.source = source
        self.instance = f"RB{source}"
        self.timer_key = ("RB", source)
        self.sent = False
        self.echoed = False
        self.readied = False
        self.delivered = None
        self.cert: Certificate | None = None
        self.ready_msg: SignedMessage | None = None
        self.echo_tally: dict[object, dict[int, SignedMessage]] = {}
        self.log: list[SignedMessage] = []
        self.expiries = 0
        self._last_relay: tuple | None = None
        self.armed = False
        self.deferred: list[SignedMessage] = []

    def start(self) -> None:
        """Arm the evidence timer; called when the process joins the broadcast."""
        if not self.armed and self.delivered is None:
            self.armed = True
            self.node.arm_timer(self.timer_key)

    def broadcast(self, value) -> SignedMessage:
        if self.node.pid != self.source:
            raise NotSource(f"p{self.node.pid} is not the source of {self.instance}")
        if self.sent:
            raise RuntimeError(f"{self.instance} already broadcast")
        self.sent = True
        self.start()
        msg = self.node.signer.sign(Tag.INIT, self.instance, 0, value)
        self.node.broadcast(msg)
        return msg

    def on_message(self, msg: SignedMessage) -> None:
        if msg.tag == Tag.INIT:
            if msg.signer != self.source:
                return
            self.log.append(msg)
            self.start()
            if not self.echoed:
                self.echoed = True
                self.node.broadcast(self.node.signer.sign(Tag.ECHO_RB, self.instance, 0, msg.value))
        elif msg.tag == Tag.ECHO_RB:
            self.log.append(msg)
            self.start()
            self.echo_tally.setdefault(msg.value, {}).setdefault(msg.signer, msg)
            self._check(msg.value)
        elif msg.tag == Tag.READY_RB:
            self._on_ready(msg)

    def _on_ready(self, msg: SignedMessage) -> None:
        cert = msg.cert
        if cert is None or not (cert.tag == Tag.ECHO_RB and cert.instance == self.instance
                                and cert.value == msg.value):
            return
        if not certificate_valid(cert, self.node.view, self.node.keyring):
            self.deferred.append(msg)
            return
        if self.delivered is not None and self.delivered != msg.value:
            self.node.on_rb_disagreement(self.source, msg)
        if not self.readied:
            self.readied = True
            self.cert = cert
            self.ready_msg = self.node.signer.sign(Tag.READY_RB, self.instance, 0, msg.value, cert=cert)
            self.node.broadcast(self.ready_msg)
            self._deliver(msg.value)

    def _check(self, value) -> None:
        if self.readied:
            return
        view = self.node.view
        usable = [m for s, m in self.echo_tally.get(value, {}).items() if s not in view.removed]
        if len(usable) >= view.h:
            self.readied = True
            self.cert = Certificate(Tag.ECHO_RB, self.instance, 0, value,
                                    tuple(m.stripped() for m in usable[:view.h]))
            self.ready_msg = self.node.signer.sign(Tag.READY_RB, self.instance, 0, value, cert=self.cert)
            self.node.broadcast(self.ready_msg)
            self._deliver(value)

    def _deliver(self, value) -> None:
        if self.delivered is not None:
            return
        self.delivered = value
        self.node.cancel_timer(self.timer_key)
        self.node.log("aarb_deliver", instance=self.instance, value=value)
        self.node.on_rb_deliver(self.source, value)

    def recheck(self) -> bool:
        was = self.readied
        retry, self.deferred = self.deferred, []
        for msg in retry:
            self._on_ready(msg)
        for value in list(self.echo_tally):
            self._check(value)
        if self.readied:
            return not was
        if self.armed:
            self.node.arm_timer(self.timer_key)
        return False

    def on_timer(self) -> None:
        if self.delivered is not None:
            return
        self.expiries += 1
        self.node.count_expiry(self.instance)
        sigs = tuple(m.signature for m in self.log)
        if self.log and sigs != self._last_relay:
            self._last_relay = sigs
            self.node.broadcast(self.node.signer.sign(Tag.RELAY, self.instance, 0, 0, bundle=tuple(self.log)))
        self.node.arm_timer(self.timer_key)
