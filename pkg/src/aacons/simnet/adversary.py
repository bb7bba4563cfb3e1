"""Behaviour library for faulty processes.

A behaviour sits between a process's protocol logic and the network: every
outgoing message passes through :meth:`Behavior.route`, which returns
``(recipient, message, extra_delay)`` triples. Benign behaviours may only drop
or delay the message they were handed. Deceitful ones may additionally sign a
conflicting twin of an equivocable message. Byzantine ones may sign anything
with their own key.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field

from ..evidence import SignedMessage, Tag
from ..model import coordinator


class ClassViolation(RuntimeError):
    """A script produced a message its fault class may not produce."""


class Behavior:
    fault_class = "nonfaulty"

    def attach(self, node, n: int, seed: int) -> None:
        self.node = node
        self.n = n
        self.rng = random.Random(seed * 7919 + node.pid)

    def alive(self, now: int) -> bool:
        return True

    def route(self, msg: SignedMessage, now: int) -> list[tuple[int, SignedMessage, int]]:
        return [(dst, msg, 0) for dst in range(self.n)]


# ------------------------------------------------------------------ benign


class Benign(Behavior):
    fault_class = "benign"


@dataclass
class Crash(Benign):
    at: int = 0

    def alive(self, now: int) -> bool:
        return now < self.at

    def route(self, msg, now):
        return [] if now >= self.at else super().route(msg, now)


@dataclass
class Omit(Benign):
    targets: list[int] = field(default_factory=list)

    def route(self, msg, now):
        return [(d, m, x) for d, m, x in super().route(msg, now) if d not in self.targets]


@dataclass
class Stale(Benign):
    delay: int = 500

    def route(self, msg, now):
        return [(d, m, self.delay if d != self.node.pid else 0) for d, m, x in super().route(msg, now)]


# --------------------------------------------------------------- deceitful


def twin_value(value):
    """A different value for the same slot."""
    if isinstance(value, frozenset):
        return frozenset({1}) if value == frozenset({0}) else frozenset({0})
    if value in (0, 1):
        return 1 - value
    return value + 1


@dataclass
class DeceitfulSplit(Behavior):
    """Sends a conflicting twin of selected messages to ``group_b``.

    ``persistence`` is ``"once"`` (first message of each tag) or
    ``"every_round"``. EST is only split in round 1, where it needs no
    justification, so the twin stays protocol-conformant.
    """

    fault_class = "deceitful"
    tags: list[str] = field(default_factory=lambda: ["INIT", "ECHO_RB", "ECHO_BC", "COORD", "EST"])
    group_b: list[int] | None = None
    persistence: str = "every_round"
    value_map: dict = field(default_factory=dict)

    def attach(self, node, n, seed):
        super().attach(node, n, seed)
        if self.group_b is None:
            self.group_b = [p for p in range(n) if p % 2 == 1 and p != node.pid]
        self._split_tags = {Tag(t) for t in self.tags}
        self._done: set[str] = set()

    def _twin(self, msg: SignedMessage) -> SignedMessage | None:
        if msg.tag not in self._split_tags:
            return None
        if msg.tag == Tag.EST and msg.round != 1:
            return None
        if self.persistence == "once":
            if msg.tag.value in self._done:
                return None
            self._done.add(msg.tag.value)
        value = self.value_map.get(str(msg.value), twin_value(msg.value)) if self.value_map else twin_value(msg.value)
        return self.node.signer.sign(msg.tag, msg.instance, msg.round, value)

    def route(self, msg, now):
        twin = self._twin(msg)
        if twin is None:
            return super().route(msg, now)
        return [(d, twin if d in self.group_b else msg, 0) for d in range(self.n)]


@dataclass
class TwoFaced(Behavior):
    """Runs a second, independent copy of the protocol towards ``group_b``.

    Each copy behaves correctly inside its own execution; together they sign
    conflicting messages wherever the two executions diverge. The simulator
    owns the second copy and routes by face.
    """

    fault_class = "deceitful"
    group_b: list[int] = field(default_factory=list)
    offset: int = 50

    def route(self, msg, now):
        return [(d, msg, 0) for d in range(self.n) if d not in self.group_b]


# --------------------------------------------------------------- byzantine


class Byzantine(Behavior):
    fault_class = "byzantine"


class Silent(Byzantine):
    def route(self, msg, now):
        return []


@dataclass
class RandomByzantine(Byzantine):
    """Per recipient: drop, flip to a conflicting twin, or deliver, chosen at random."""

    p_drop: float = 0.2
    p_flip: float = 0.3

    def route(self, msg, now):
        out = []
        twin = None
        for d in range(self.n):
            u = self.rng.random()
            if d == self.node.pid:
                out.append((d, msg, 0))
            elif u < self.p_drop:
                continue
            elif u < self.p_drop + self.p_flip and msg.tag not in (Tag.RELAY, Tag.POFS):
                if twin is None:
                    twin = self.node.signer.sign(msg.tag, msg.instance, msg.round, twin_value(msg.value),
                                                 cert=msg.cert, bv_cert=msg.bv_cert, bundle=msg.bundle)
                out.append((d, twin, 0))
            else:
                out.append((d, msg, 0))
        return out


@dataclass
class EquivocateAll(Byzantine):
    """Every message goes out in two versions, split by recipient parity."""

    def route(self, msg, now):
        if msg.tag in (Tag.RELAY, Tag.POFS):
            return super().route(msg, now)
        twin = self.node.signer.sign(msg.tag, msg.instance, msg.round, twin_value(msg.value),
                                     cert=msg.cert, bv_cert=msg.bv_cert)
        return [(d, twin if d % 2 else msg, 0) for d in range(self.n)]


@dataclass
class CoordinatorSplit(Byzantine):
    """Abuses the coordinator slot to keep non-faulty estimates apart.

    When coordinating round r it tells everyone but ``target`` to prefer the
    value opposite to the round parity and tells ``target`` the parity value.
    It echoes both values eagerly so that both enter every ``bin_vals``.
    """

    target: int | None = None

    def attach(self, node, n, seed):
        super().attach(node, n, seed)
        node.amp_override = 1
        if self.target is None:
            self.target = n - 1

    def route(self, msg, now):
        node = self.node
        if msg.tag == Tag.COORD:
            return []
        if msg.tag == Tag.EST and coordinator(msg.round, self.n) == node.pid:
            r = msg.round
            w = 1 - r % 2
            a = node.signer.sign(Tag.COORD, msg.instance, r, w)
            b = node.signer.sign(Tag.COORD, msg.instance, r, 1 - w)
            out = [(d, msg, 0) for d in range(self.n)]
            out += [(d, b if d == self.target else a, 0) for d in range(self.n) if d != node.pid]
            return out
        if msg.tag == Tag.ECHO_BC:
            w = 1 - msg.round % 2
            return [(d, node.signer.sign(Tag.ECHO_BC, msg.instance, msg.round, frozenset({w})), 0)
                    for d in range(self.n)]
        return super().route(msg, now)


LIBRARY = {
    "benign": {"crash": Crash, "omit": Omit, "stale": Stale},
    "deceitful": {"split": DeceitfulSplit, "two_faced": TwoFaced},
    "byzantine": {"silent": Silent, "random": RandomByzantine, "equivocate_all": EquivocateAll,
                  "coordinator_split": CoordinatorSplit},
}


def make_behavior(fault_class: str, script: str, params: dict) -> Behavior:
    scripts = LIBRARY.get(fault_class, {})
    if script not in scripts:
        allowed = ", ".join(sorted(scripts)) or "none"
        raise ClassViolation(f"script {script!r} is not available to class {fault_class!r} (allowed: {allowed})")
    return scripts[script](**params)
