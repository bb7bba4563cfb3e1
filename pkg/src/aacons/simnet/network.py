"""Deterministic discrete-event simulation of a partially synchronous network."""
from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field

from ..evidence import CONFLICT_TABLE, KeyRing, SignedMessage, make_scheme
from ..model import CommitteeCollapse
from ..node import Node
from .adversary import Behavior, ClassViolation, TwoFaced, make_behavior
from .scenario import PatternSpec, Scenario

HEADER_BYTES = 16

START, DELIVER, TIMER, EMIT = 0, 1, 2, 3


def layer_of(msg: SignedMessage) -> str:
    inst = msg.instance
    if inst.startswith("RB"):
        return "aarb"
    if inst.startswith("BC"):
        return "aabc"
    return "evidence"


@dataclass
class Counters:
    lam: int
    messages: dict[str, int] = field(default_factory=dict)
    signatures: dict[str, int] = field(default_factory=dict)

    def add(self, msg: SignedMessage) -> None:
        layer = layer_of(msg)
        self.messages[layer] = self.messages.get(layer, 0) + 1
        self.signatures[layer] = self.signatures.get(layer, 0) + msg.signature_count()

    def bits(self, layer: str | None = None) -> int:
        layers = [layer] if layer else list(self.messages)
        return sum(8 * (self.signatures.get(x, 0) * self.lam + self.messages.get(x, 0) * HEADER_BYTES)
                   for x in layers)

    def total_messages(self) -> int:
        return sum(self.messages.values())

    def as_dict(self) -> dict:
        layers = sorted(self.messages)
        return {
            "messages": {x: self.messages[x] for x in layers} | {"total": self.total_messages()},
            "signatures": {x: self.signatures.get(x, 0) for x in layers},
            "bits": {x: self.bits(x) for x in layers} | {"total": self.bits()},
        }


class _Face:
    """Network facade for the second copy of a two-faced process."""

    def __init__(self, sim: "Simulation"):
        self.sim = sim

    def send(self, src, msg):
        self.sim.send(src, msg, "B")

    def set_timer(self, pid, key, gen):
        self.sim.set_timer(pid, key, gen, "B")

    def log(self, pid, kind, fields):
        self.sim.log(pid, kind, dict(fields, face="B"))

    def on_expiry(self, pid, instance):
        pass


class Simulation:
    def __init__(self, scenario: Scenario, record: bool = True):
        self.scenario = scenario
        self.record = record
        self.cfg = scenario.fault_config()
        self.n = scenario.n
        self.delta = scenario.delta
        self.gst = scenario.gst
        self.pattern: PatternSpec = scenario.pre_gst_pattern
        self.rng = random.Random(scenario.seed)
        self.keyring = KeyRing(self.n, make_scheme(scenario.scheme, scenario.lambda_bytes),
                               seed=str(scenario.seed).encode())
        self.counters = Counters(self.keyring.lam)
        self.now = 0
        self.events: list[tuple] = []
        self.pre_gst_expiries: dict[int, dict[str, int]] = {}
        self.expiry_total = 0
        self.status = "running"
        self.max_latency_after_gst = 0
        self._heap: list[tuple] = []
        self._seq = 0
        self._in_flight = 0

        self.behaviors: dict[int, Behavior] = {}
        self.nodes: list[Node] = []
        for pid in range(self.n):
            node = Node(pid, self.cfg, self.keyring, self, scenario.mode, scenario.ec_epochs, scenario.amplification)
            self.nodes.append(node)
            entry = scenario.roster.get(pid)
            if entry is not None:
                behavior = make_behavior(entry.fault_class, entry.script, entry.params)
                behavior.attach(node, self.n, scenario.seed)
                self.behaviors[pid] = behavior
        self.shadows: dict[int, Node] = {}
        self.group_b: set[int] = set()
        for pid, behavior in self.behaviors.items():
            if isinstance(behavior, TwoFaced):
                self.shadows[pid] = Node(pid, self.cfg, self.keyring, _Face(self), scenario.mode,
                                         scenario.ec_epochs, scenario.amplification)
                self.group_b.update(behavior.group_b)
        self.nonfaulty = [p for p in range(self.n) if p not in self.behaviors]
        self._waiting = set(self.nonfaulty)

    # -- facade used by nodes

    def send(self, src: int, msg: SignedMessage, face: str = "A") -> None:
        if src in self.shadows:
            self._send_faced(src, msg, face)
            return
        behavior = self.behaviors.get(src)
        if behavior is None:
            routes = [(d, msg, 0) for d in range(self.n)]
        else:
            routes = behavior.route(msg, self.now)
            self._confine(behavior, msg, routes)
        node = self.nodes[src]
        for dst, m, extra in routes:
            if dst == src:
                node.enqueue_local(m)
                continue
            face_dst = "B" if src in self.group_b and dst in self.shadows else "A"
            if extra:
                self._push(self.now + extra, EMIT, src, (dst, m, face_dst))
            else:
                self._transmit(src, dst, m, face_dst)

    def _send_faced(self, src: int, msg: SignedMessage, face: str) -> None:
        (self.shadows[src] if face == "B" else self.nodes[src]).enqueue_local(msg)
        for dst in range(self.n):
            if dst == src:
                continue
            if dst in self.shadows:
                self._transmit(src, dst, msg, face)
            elif (dst in self.group_b) == (face == "B"):
                self._transmit(src, dst, msg, "A")

    def set_timer(self, pid: int, key: tuple, gen: int, face: str = "A") -> None:
        self._push(self.now + self.delta, TIMER, pid, (key, gen, face))

    def log(self, pid: int, kind: str, fields: dict) -> None:
        if self.record:
            self.events.append((self.now, kind, pid, fields))

    def on_expiry(self, pid: int, instance: str) -> None:
        self.expiry_total += 1
        if self.now < self.gst:
            per = self.pre_gst_expiries.setdefault(pid, {})
            per[instance] = per.get(instance, 0) + 1

    # -- internals

    def _confine(self, behavior: Behavior, msg: SignedMessage, routes) -> None:
        cls = behavior.fault_class
        if cls == "byzantine":
            return
        for _, m, _ in routes:
            if m is msg:
                continue
            if cls == "benign":
                raise ClassViolation("benign behaviour altered a message")
            if (m.signer != msg.signer or m.tag != msg.tag or m.tag not in CONFLICT_TABLE
                    or m.cert is not None or m.bundle):
                raise ClassViolation("deceitful behaviour may only equivocate on a conflict slot")

    def _push(self, time: int, kind: int, pid: int, payload) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (time, self._seq, kind, pid, payload))

    def _delay(self, src: int, dst: int) -> int:
        now, delta, gst = self.now, self.delta, self.gst
        if now >= gst:
            return self.rng.randint(1, delta)
        kind = self.pattern.kind
        cap = gst + delta - now
        if kind == "none":
            return self.rng.randint(1, delta)
        if kind == "random":
            d = self.rng.randint(1, 3 * delta)
        elif kind == "trickle":
            d = self.rng.randint(delta + 1, 2 * delta)
        elif kind == "partition":
            groups = self.pattern.groups or [list(range(self.n // 2)), list(range(self.n // 2, self.n))]
            same = any(src in g and dst in g for g in groups)
            d = self.rng.randint(1, delta) if same else gst - now + self.rng.randint(1, delta)
        elif kind == "coordinator_starve":
            targets = self.pattern.targets if self.pattern.targets is not None else [1]
            d = gst - now + self.rng.randint(1, delta) if src in targets else self.rng.randint(1, delta)
        else:
            raise ValueError(f"unknown pattern {kind!r}")
        return max(1, min(d, cap))

    def _transmit(self, src: int, dst: int, msg: SignedMessage, face: str = "A") -> None:
        delay = self._delay(src, dst)
        if self.now >= self.gst and delay > self.max_latency_after_gst:
            self.max_latency_after_gst = delay
        self.counters.add(msg)
        self._in_flight += 1
        self._push(self.now + delay, DELIVER, dst, (src, msg, self.now, face))

    def run(self) -> "Simulation":
        for pid in range(self.n):
            self._push(0, START, pid, "A")
        for pid in self.shadows:
            self._push(0, START, pid, "B")
        horizon = self.scenario.horizon
        heap = self._heap
        try:
            while heap:
                time, _, kind, pid, payload = heapq.heappop(heap)
                if time > horizon:
                    self.status = "horizon"
                    break
                self.now = time
                node = self.nodes[pid]
                behavior = self.behaviors.get(pid)
                alive = behavior is None or behavior.alive(time)
                if kind == DELIVER:
                    self._in_flight -= 1
                    src, msg, sent, face = payload
                    if self.record:
                        self.events.append((time, "deliver", pid, (src, sent, msg)))
                    if alive:
                        (self.shadows[pid] if face == "B" else node).deliver(msg)
                elif kind == TIMER:
                    key, gen, face = payload
                    if alive:
                        (self.shadows[pid] if face == "B" else node).fire(key, gen)
                elif kind == START:
                    if alive and payload == "B":
                        self.shadows[pid].start(self._shadow_proposal(pid))
                    elif alive:
                        node.start(self.scenario.proposal_for(pid))
                else:
                    dst, msg, face = payload
                    if alive:
                        self._transmit(pid, dst, msg, face)
                if pid in self._waiting and node.done:
                    self._waiting.discard(pid)
                if not self._waiting and self._in_flight == 0:
                    self.status = "quiescent"
                    break
            else:
                self.status = "quiescent" if not self._waiting else "stalled"
        except CommitteeCollapse:
            self.status = "collapse"
        return self

    def _shadow_proposal(self, pid: int):
        value = self.scenario.proposal_for(pid)
        offset = self.behaviors[pid].offset
        if self.scenario.mode == "aabc":
            return 1 - value
        if self.scenario.mode == "aarb":
            return (value[0], value[1] + offset)
        return value + offset

    # -- outcome

    @property
    def terminated(self) -> bool:
        return self.status == "quiescent"

    def decisions(self) -> dict[int, object]:
        return {p: self.nodes[p].decision() for p in range(self.n)}

    def nonfaulty_decisions(self) -> dict[int, object]:
        return {p: self.nodes[p].decision() for p in self.nonfaulty}

    def agreement(self) -> bool:
        values = [v for v in self.nonfaulty_decisions().values() if v is not None]
        return len({repr(v) for v in values}) <= 1

    def removed(self) -> dict[int, set[int]]:
        return {p: set(self.nodes[p].view.removed) for p in range(self.n)}

    def max_round(self, instance: int | None = None) -> int:
        rounds = [bc.r for p in self.nonfaulty for k, bc in self.nodes[p].aabc.items()
                  if instance is None or k == instance]
        return max(rounds, default=0)

    def a(self) -> int:
        """Largest number of pre-GST timer expiries one non-faulty process saw in one instance."""
        return max((c for p in self.nonfaulty for c in self.pre_gst_expiries.get(p, {}).values()), default=0)


def run(scenario: Scenario, record: bool = True) -> Simulation:
    return Simulation(scenario, record=record).run()
