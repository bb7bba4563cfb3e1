"""Multi-valued consensus from n reliable broadcasts and n binary consensus instances,
plus the eventual-consensus wrapper that keeps converging after disagreements."""
from __future__ import annotations

from .evidence import SignedMessage


class GeneralProtocol:
    def __init__(self, node):
        self.node = node
        n = node.cfg.n
        self.proposals: list = [None] * n
        self.bin_decisions: list[int | None] = [None] * n
        self.zeros_started = False
        self.decided = None

    def propose(self, value) -> None:
        node = self.node
        for k in range(node.cfg.n):
            node.aarb_instance(k).start()
        node.aarb_instance(node.pid).broadcast(value)

    def on_rb_deliver(self, k: int, value) -> None:
        if self.proposals[k] is None:
            self.proposals[k] = value
        if not self.zeros_started:
            self.node.aabc_instance(k).propose(1)
        self.check()

    def on_bc_decide(self, k: int, bit: int) -> None:
        if self.bin_decisions[k] is None:
            self.bin_decisions[k] = bit
        self.check()

    def check(self) -> None:
        node = self.node
        if not self.zeros_started and self.bin_decisions.count(1) >= node.view.h:
            self.zeros_started = True
            for k in range(node.cfg.n):
                node.aabc_instance(k).propose(0)
        if self.decided is None and None not in self.bin_decisions:
            value = self.current()
            if value is not None:
                self.decided = value
                node.log("decide", layer="general", instance="GEN", value=value, round=0, via="min-index")
                node.on_general_decide(value)

    def current(self):
        """Proposal of the lowest index whose binary instance decided 1, once delivered."""
        ones = [k for k, b in enumerate(self.bin_decisions) if b == 1]
        if not ones:
            return None
        return self.proposals[ones[0]]


class EventualConsensus:
    """Repeated outputs that may change after disagreements but stabilise.

    An AARB disagreement replaces the delivered value with the smaller of the
    two certified values. An AABC disagreement forces the bit to 1. Each
    newly learned piece of evidence is forwarded once along with our own.
    """

    def __init__(self, node, epochs: int):
        self.node = node
        self.epochs = epochs
        self.outputs: list = []
        self.forwarded: set[bytes] = set()
        self.disagreements: list[tuple[str, int, object]] = []

    @property
    def done(self) -> bool:
        return len(self.outputs) >= self.epochs

    def on_general_decide(self, value) -> None:
        self._output(value)

    def on_epoch(self) -> None:
        if self.done:
            return
        gen = self.node.gen
        value = gen.current()
        self._output(value if value is not None else self.outputs[-1])

    def _output(self, value) -> None:
        j = len(self.outputs)
        self.outputs.append(value)
        self.node.log("ec_output", epoch=j, value=value)
        if not self.done:
            self.node.arm_timer(("EC",))

    def _forward(self, *msgs: SignedMessage | None) -> None:
        for m in msgs:
            if m is not None and m.signature not in self.forwarded:
                self.forwarded.add(m.signature)
                self.node.broadcast(m)

    def on_rb_disagreement(self, k: int, ready: SignedMessage) -> None:
        gen = self.node.gen
        rb = self.node.aarb_instance(k)
        local = gen.proposals[k] if gen.proposals[k] is not None else rb.delivered
        y = min(local, ready.value)
        self.disagreements.append(("aarb", k, ready.value))
        self.node.log("disagreement", layer="aarb", index=k, local=local, other=ready.value, adopted=y)
        gen.proposals[k] = y
        self._forward(ready, rb.ready_msg)

    def on_bc_disagreement(self, k: int, decide: SignedMessage) -> None:
        gen = self.node.gen
        bc = self.node.aabc_instance(k)
        self.disagreements.append(("aabc", k, decide.value))
        self.node.log("disagreement", layer="aabc", index=k, local=bc.decided[0], other=decide.value, adopted=1)
        gen.bin_decisions[k] = 1
        self._forward(decide, bc.decide_msg)


def stabilization_index(outputs: dict[int, list]) -> int | None:
    """First epoch from which every process reports the same value, or None."""
    if not outputs:
        return None
    length = min(len(v) for v in outputs.values())
    if length == 0:
        return None
    k = None
    for j in range(length - 1, -1, -1):
        if len({repr(v[j]) for v in outputs.values()}) == 1:
            k = j
        else:
            break
    return k
