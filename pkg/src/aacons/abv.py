"""Accountable binary-value broadcast, one state machine per (instance, round)."""
from __future__ import annotations

from typing import Callable

from .evidence import Certificate, KeyRing, SignedMessage, Tag, certificate_valid
from .model import AMPLIFICATION_RULES, CommitteeView


class DoubleBroadcast(RuntimeError):
    pass


def echo_cert_valid(instance: str, rnd: int, value: int, cert, view: CommitteeView, keyring: KeyRing) -> bool:
    return (cert is not None and cert.tag == Tag.ECHO_BC and cert.instance == instance and cert.round == rnd
            and cert.value == frozenset((value,)) and certificate_valid(cert, view, keyring))


def estimate_cert_valid(instance: str, rnd: int, value: int, cert: Certificate | None,
                        view: CommitteeView, keyring: KeyRing) -> bool:
    """Justification rule for an estimate ``value`` broadcast in round ``rnd``.

    Round 1 needs nothing and value 1 in round 2 is exempt. Otherwise the
    certificate holds h ECHO_BC votes for exactly ``{value}``, either from the
    previous round, or from two rounds back when ``value`` is the parity bit of
    the previous round (the estimate was adopted from the round parity).
    """
    if rnd == 1 or (rnd == 2 and value == 1):
        return True
    if cert is None:
        return False
    if echo_cert_valid(instance, rnd - 1, value, cert, view, keyring):
        return True
    return value == (rnd - 1) % 2 and echo_cert_valid(instance, rnd - 2, value, cert, view, keyring)


class AbvInstance:
    """ABV-broadcast state for one round.

    ``host`` supplies ``view``, ``keyring``, ``signer``, ``cfg``, ``broadcast``,
    and optionally ``amp_rule`` and ``amp_override``. ``on_deliver(abv, value)`` is called each
    time a value enters ``bin_vals``.
    """

    def __init__(self, host, instance: str, rnd: int, on_deliver: Callable | None = None):
        self.host = host
        self.instance = instance
        self.round = rnd
        self.on_deliver = on_deliver
        self.support: dict[int, dict[int, SignedMessage]] = {0: {}, 1: {}}
        self.bin_vals: dict[int, tuple[Certificate | None, Certificate]] = {}
        self.echoed: set[int] = set()
        self.readied: set[int] = set()
        self.initial: int | None = None
        self.active = False
        self._pending: list[SignedMessage] = []
        # certificate checks only get easier as the committee shrinks, so rejects are retried
        self._deferred: list[SignedMessage] = []

    # -- thresholds

    def amplification(self) -> int:
        override = getattr(self.host, "amp_override", None)
        if override is not None:
            return override
        cfg, view = self.host.cfg, self.host.view
        rule = AMPLIFICATION_RULES[getattr(self.host, "amp_rule", "balanced")]
        return rule(cfg.n, cfg.q, cfg.t, view.d_r)

    def usable(self, value: int) -> list[SignedMessage]:
        removed = self.host.view.removed
        return [m for s, m in self.support[value].items() if s not in removed]

    # -- operations

    def activate(self) -> None:
        if self.active:
            return
        self.active = True
        pending, self._pending = self._pending, []
        for msg in pending:
            self.on_message(msg)
        self.recheck()

    def broadcast(self, value: int, cert: Certificate | None) -> SignedMessage:
        if self.initial is not None:
            raise DoubleBroadcast(f"{self.instance} round {self.round} already broadcast {self.initial}")
        self.initial = value
        self.echoed.add(value)
        self.activate()
        msg = self.host.signer.sign(Tag.EST, self.instance, self.round, value, cert=cert)
        self.host.broadcast(msg)
        return msg

    def on_message(self, msg: SignedMessage) -> None:
        if not self.active:
            self._pending.append(msg)
            return
        if msg.tag == Tag.BVREADY:
            self.on_bvready(msg)
        else:
            self.on_bvecho(msg)

    def on_bvecho(self, msg: SignedMessage) -> None:
        """EST and BVECHO both count towards the per-value distinct-signer tally."""
        value = msg.value
        if value not in (0, 1) or msg.signer in self.support[value]:
            return
        view, keyring = self.host.view, self.host.keyring
        if not estimate_cert_valid(self.instance, self.round, value, msg.cert, view, keyring):
            self._deferred.append(msg)
            return
        self.support[value][msg.signer] = msg
        self._check(value)

    def on_bvready(self, msg: SignedMessage) -> None:
        value = msg.value
        if value not in (0, 1):
            return
        view, keyring = self.host.view, self.host.keyring
        bv = msg.bv_cert
        if bv is None or not (bv.tag == Tag.BVECHO and bv.instance == self.instance and bv.round == self.round
                              and bv.value == value):
            return
        if not (certificate_valid(bv, view, keyring)
                and estimate_cert_valid(self.instance, self.round, value, msg.cert, view, keyring)):
            self._deferred.append(msg)
            return
        self._deliver(value, msg.cert, bv)
        if value not in self.readied:
            self.readied.add(value)
            self.host.broadcast(self.host.signer.sign(Tag.BVREADY, self.instance, self.round, value,
                                                      cert=msg.cert, bv_cert=bv))

    def recheck(self) -> None:
        if self.active:
            retry, self._deferred = self._deferred, []
            for msg in retry:
                self.on_message(msg)
            for value in (0, 1):
                self._check(value)

    def _check(self, value: int) -> None:
        usable = self.usable(value)
        if value not in self.echoed and len(usable) >= self.amplification():
            self.echoed.add(value)
            cert = next((m.cert for m in usable if m.cert is not None), None)
            self.host.broadcast(self.host.signer.sign(Tag.BVECHO, self.instance, self.round, value, cert=cert))
        h = self.host.view.h
        if value not in self.readied and len(usable) >= h:
            self.readied.add(value)
            cert = next((m.cert for m in usable if m.cert is not None), None)
            bv = Certificate(Tag.BVECHO, self.instance, self.round, value,
                             tuple(m.stripped() for m in usable[:h]))
            self._deliver(value, cert, bv)
            self.host.broadcast(self.host.signer.sign(Tag.BVREADY, self.instance, self.round, value,
                                                      cert=cert, bv_cert=bv))

    def _deliver(self, value: int, cert, bv_cert) -> None:
        if value in self.bin_vals:
            return
        self.bin_vals[value] = (cert, bv_cert)
        if self.on_deliver is not None:
            self.on_deliver(self, value)
