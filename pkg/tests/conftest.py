from __future__ import annotations

import pytest

from aacons.evidence import KeyRing
from aacons.model import FaultConfig
from aacons.node import Node


class Cluster:
    """Nodes wired to a hand-driven network: nothing moves until a test delivers it."""

    delta = 100

    def __init__(self, cfg: FaultConfig, mode: str = "aabc", amp_rule: str = "balanced"):
        self.cfg = cfg
        self.now = 0
        self.keyring = KeyRing(cfg.n)
        self.nodes = [Node(p, cfg, self.keyring, self, mode, amp_rule=amp_rule) for p in range(cfg.n)]
        self.queue: list[tuple[int, int, object]] = []   # (src, dst, msg)
        self.events: list[tuple[int, str, dict]] = []
        self.timers: list[tuple[int, tuple]] = []

    # facade expected by Node
    def send(self, src, msg):
        self.nodes[src].enqueue_local(msg)
        self.queue.extend((src, d, msg) for d in range(self.cfg.n) if d != src)

    def set_timer(self, pid, key, gen):
        self.timers.append((pid, key))

    def log(self, pid, kind, fields):
        self.events.append((pid, kind, dict(fields)))

    def on_expiry(self, pid, instance):
        pass

    # driving
    def signer(self, pid):
        return self.keyring.signer(pid)

    def take(self, pred=lambda src, dst, msg: True):
        out = [e for e in self.queue if pred(*e)]
        self.queue = [e for e in self.queue if not pred(*e)]
        return out

    def flush(self, pred=lambda src, dst, msg: True, limit: int = 100_000):
        steps = 0
        while True:
            batch = self.take(pred)
            if not batch:
                return steps
            for src, dst, msg in batch:
                self.nodes[dst].deliver(msg)
                steps += 1
            if steps > limit:
                raise RuntimeError("cluster did not settle")

    def fire(self, pid, key):
        node = self.nodes[pid]
        node.fire(key, node._timers[key])

    def settle(self, pids=None, rounds: int = 50):
        """Alternate full delivery with expiring every armed timer until all of ``pids`` are done."""
        pids = range(self.cfg.n) if pids is None else pids
        for _ in range(rounds):
            self.flush(lambda s, d, m: d in pids)
            if all(self.nodes[p].done for p in pids):
                return True
            for p in pids:
                for key in list(self.nodes[p]._timers):
                    self.fire(p, key)
        return False

    def events_of(self, kind, pid=None):
        return [f for p, k, f in self.events if k == kind and (pid is None or p == pid)]


@pytest.fixture
def cluster4():
    return Cluster(FaultConfig(n=4, h0=3))
