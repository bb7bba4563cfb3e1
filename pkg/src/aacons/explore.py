"""Exhaustive exploration of one ABV-broadcast instance at small n.

The search runs real :class:`AbvInstance` objects behind a stub host. It
fixes the order of deliveries (lowest pending message first) and branches
on adversary choices, on deliveries that carry news and on relay timing.
Every time it skips an alternative delivery to the same process it checks
that the two orders reach the same state, and explores the skipped
delivery as well when they do not. Setups that differ only by renaming
processes with the same role are explored once. States are merged on an
abstract key that keeps tallies, flags, pending messages and injections
but not certificate contents, which only ever affect validity.

Faulty behaviour is enumerated up front:

* benign processes send their estimate to a chosen subset and then crash;
* deceitful processes run the protocol but split their estimate per
  recipient into ``{0}``, ``{1}`` or both;
* Byzantine processes inject estimates for any value at any time, and a
  BVREADY as soon as enough signed votes for a value exist anywhere.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .abv import AbvInstance, estimate_cert_valid
from .evidence import Certificate, KeyRing, Tag, certificate_valid, make_scheme
from .model import AMPLIFICATION_RULES, CommitteeCollapse, CommitteeView, FaultConfig, threshold, validate_config

INSTANCE = "BC0"
ABV_PROPERTIES = ("termination", "uniformity", "obligation", "justification", "accountability")


@dataclass(frozen=True)
class Setup:
    """One fully determined starting point."""

    cfg: FaultConfig
    rnd: int
    certified: frozenset            # values with a prior-round certificate (round > 1)
    inputs: tuple                   # per pid; None for Byzantine
    roles: tuple                    # per pid: "ok", "benign", "deceitful", "byzantine"
    splits: tuple = ()              # per pid: recipient -> frozenset of values (deceitful)
    reach: tuple = ()               # per pid: recipients of a benign process's estimate


@dataclass
class Violation:
    prop: str
    setup: Setup
    detail: str


@dataclass
class ExploreStats:
    setups: int = 0
    states: int = 0
    terminals: int = 0
    commutations: int = 0
    reordered: int = 0                  # skipped deliveries that did not commute and were explored
    violations: list[Violation] = field(default_factory=list)


class _Host:
    def __init__(self, pid: int, cfg: FaultConfig, keyring: KeyRing, amp_rule: str):
        self.pid = pid
        self.cfg = cfg
        self.keyring = keyring
        self.signer = keyring.signer(pid)
        self.view = CommitteeView(cfg.n, cfg.h0)
        self.amp_rule = amp_rule
        self.outbox: list = []

    def broadcast(self, msg) -> None:
        self.outbox.append(msg)


def _clone(abv: AbvInstance, host: _Host) -> AbvInstance:
    c = AbvInstance.__new__(AbvInstance)
    c.host, c.instance, c.round, c.on_deliver = host, abv.instance, abv.round, None
    c.support = {0: dict(abv.support[0]), 1: dict(abv.support[1])}
    c.bin_vals = dict(abv.bin_vals)
    c.echoed, c.readied = set(abv.echoed), set(abv.readied)
    c.initial, c.active, c._pending = abv.initial, abv.active, list(abv._pending)
    c._deferred = list(abv._deferred)
    return c


def _abstract(abv: AbvInstance) -> tuple:
    return (frozenset(abv.support[0]), frozenset(abv.support[1]), frozenset(abv.echoed),
            frozenset(abv.readied), frozenset(abv.bin_vals),
            frozenset((m.signer, m.tag.value, m.value) for m in abv._deferred))


def _step(abv: AbvInstance, msg) -> list:
    """Deliver ``msg`` and the process's own resulting messages; return what it emitted."""
    abv.on_message(msg)
    out = []
    outbox = abv.host.outbox
    while outbox:
        own = outbox.pop(0)
        out.append(own)
        abv.on_message(own)
    return out


class _Proc:
    """A protocol-following process: its ABV instance plus what it has seen and proven."""

    def __init__(self, abv: AbvInstance):
        self.abv = abv
        self.held: dict[tuple, object] = {}
        self.proven: set[int] = set()
        self._relay = self._key = None        # caches, dropped on every step

    def clone(self) -> "_Proc":
        h = self.abv.host
        c = _Proc(_clone(self.abv, _Host(h.pid, h.cfg, h.keyring, h.amp_rule)))
        c.abv.host.view = CommitteeView(h.view.n0, h.view.h0, set(h.view.removed))
        c.held = dict(self.held)
        c.proven = set(self.proven)
        return c

    def relay_set(self) -> list:
        """One message per (signer, value) vote, preferring the estimate since it can expose a conflict."""
        if self._relay is None:
            out = {}
            for (signer, tag, value), msg in self.held.items():
                if tag == "EST" or (signer, value) not in out:
                    out[(signer, value)] = msg
            self._relay = [out[k] for k in sorted(out)]
        return self._relay

    def key(self) -> tuple:
        if self._key is None:
            relay = frozenset((m.signer, m.tag.value, m.value) for m in self.relay_set())
            self._key = _abstract(self.abv) + (relay, frozenset(self.proven))
        return self._key

    def prove(self, culprit: int) -> bool:
        """Record a culprit; remove it unless that would collapse a threshold. True if new."""
        if culprit in self.proven:
            return False
        self.proven.add(culprit)
        h = self.abv.host
        try:
            threshold(h.cfg.h0, len(h.view.removed) + 1)
        except CommitteeCollapse:
            return True
        h.view.removed.add(culprit)
        self.abv.recheck()
        return True

    def step(self, msg) -> tuple[list, list[int]]:
        """Deliver ``msg`` (a signed message or a culprit id); return own emissions and new culprits."""
        self._relay = self._key = None
        culprits = []
        if isinstance(msg, int):
            if self.prove(msg):
                culprits.append(msg)
        else:
            if msg.tag == Tag.EST and (msg.signer, "EST", 1 - msg.value) in self.held:
                if self.prove(msg.signer):
                    culprits.append(msg.signer)
            if msg.tag in (Tag.EST, Tag.BVECHO):
                self.held.setdefault((msg.signer, msg.tag.value, msg.value), msg)
            self.abv.on_message(msg)
        out = []
        outbox = self.abv.host.outbox
        while outbox:
            own = outbox.pop(0)
            out.append(own)
            if own.tag != Tag.BVREADY:
                self.held.setdefault((own.signer, own.tag.value, own.value), own)
            self.abv.on_message(own)
        return out, culprits

    def live(self, msg) -> bool:
        """False for deliveries that can never change this process."""
        if isinstance(msg, int):
            return msg not in self.proven
        abv = self.abv
        if msg.tag == Tag.BVREADY:
            return not (msg.value in abv.bin_vals and msg.value in abv.readied)
        if msg.tag == Tag.EST:
            return (msg.signer, "EST", msg.value) not in self.held
        return msg.signer not in abv.support[msg.value]


class _World:
    """Global state: running processes plus in-flight messages."""

    def __init__(self, setup: Setup, keyring: KeyRing, amp_rule: str, certs: dict):
        self.setup = setup
        self.keyring = keyring
        self.amp_rule = amp_rule
        self.certs = certs
        self.procs: dict[int, _Proc] = {}
        self.owned: set[int] = set()          # procs this world may mutate; the rest are shared with its parent
        self.pending: dict[tuple, object] = {}
        self.injected: frozenset = frozenset()
        self.votes: dict[int, dict[int, object]] = {0: {}, 1: {}}

    @property
    def nodes(self) -> dict[int, AbvInstance]:
        return {p: pr.abv for p, pr in self.procs.items()}

    def copy(self) -> "_World":
        w = _World.__new__(_World)
        w.setup, w.keyring, w.amp_rule, w.certs = self.setup, self.keyring, self.amp_rule, self.certs
        w.procs = dict(self.procs)
        w.owned = set()
        w.pending = dict(self.pending)
        w.injected = self.injected
        w.votes = {0: dict(self.votes[0]), 1: dict(self.votes[1])}
        return w

    def key(self) -> tuple:
        procs = tuple((p, pr.key()) for p, pr in sorted(self.procs.items()))
        return procs, frozenset(self.pending), self.injected

    # -- message plumbing

    def _post(self, msg, recipients, origin: int) -> None:
        culprit = isinstance(msg, int)
        if not culprit and msg.tag in (Tag.EST, Tag.BVECHO):
            self.votes[msg.value].setdefault(msg.signer, msg)
        for dst in recipients:
            if dst == origin or dst not in self.procs:
                continue
            k = (-1, dst, "POF", msg) if culprit else (msg.signer, dst, msg.tag.value, msg.value)
            if k not in self.pending and self.procs[dst].live(msg):
                self.pending[k] = msg

    def _deliver(self, pid: int, msg) -> None:
        if pid not in self.owned:
            self.procs[pid] = self.procs[pid].clone()
            self.owned.add(pid)
        emitted, culprits = self.procs[pid].step(msg)
        everyone = range(self.setup.cfg.n)
        for own in emitted:
            if own.tag == Tag.EST and self.setup.roles[pid] == "deceitful":
                self._split(pid, own)
            else:
                self._post(own, everyone, pid)
        for c in culprits:
            self._post(c, everyone, pid)
        self.pending = {k: m for k, m in self.pending.items() if self.procs[k[1]].live(m)}

    def _split(self, pid: int, own) -> None:
        signer = self.keyring.signer(pid)
        for dst, values in self.setup.splits[pid].items():
            for v in sorted(values):
                m = own if v == own.value else signer.sign(Tag.EST, INSTANCE, own.round, v, cert=self.certs.get(v))
                self._post(m, [dst], pid)

    # -- transitions

    def start(self) -> None:
        s = self.setup
        for pid, role in enumerate(s.roles):
            if role in ("ok", "deceitful"):
                self.procs[pid] = _Proc(AbvInstance(_Host(pid, s.cfg, self.keyring, self.amp_rule), INSTANCE, s.rnd))
                self.owned.add(pid)
        for pid, role in enumerate(s.roles):
            if role == "benign":
                v = s.inputs[pid]
                msg = self.keyring.signer(pid).sign(Tag.EST, INSTANCE, s.rnd, v, cert=self.certs.get(v))
                self._post(msg, s.reach[pid], pid)
        for pid in sorted(self.procs):
            v = s.inputs[pid]
            abv = self.procs[pid].abv
            abv.broadcast(v, self.certs.get(v))
            self._deliver_own(pid)

    def _deliver_own(self, pid: int) -> None:
        pr = self.procs[pid]
        first = pr.abv.host.outbox.pop(0)
        pr.held[(first.signer, first.tag.value, first.value)] = first
        pr._relay = pr._key = None
        rest, _ = pr.step(first)
        everyone = range(self.setup.cfg.n)
        for own in [first] + rest:
            if own.tag == Tag.EST and self.setup.roles[pid] == "deceitful":
                self._split(pid, own)
            else:
                self._post(own, everyone, pid)

    def _news(self, pid: int, msg) -> bool:
        """Some other process has neither received ``msg`` nor has it in flight."""
        return any(dst != pid and (msg.signer, dst, msg.tag.value, msg.value) not in self.pending and other.live(msg)
                   for dst, other in self.procs.items())

    def _relay_news(self, pid: int) -> bool:
        return any(self._news(pid, m) for m in self.procs[pid].relay_set())

    def stuck(self, pid: int) -> bool:
        """Timer expiry would relay something new: nothing delivered yet and a recipient lacks a held message."""
        return not self.procs[pid].abv.bin_vals and self._relay_news(pid)

    def moves(self) -> list[tuple]:
        """A persistent subset of the enabled transitions.

        Deliveries to different processes commute, and so, as checked
        wherever it is relied on, do deliveries to the same process. The only order that
        matters is when a process relays relative to deliveries that change
        what the relay carries, i.e. messages some other process was never
        sent; those get full branching. Injections are
        offered at quiescent states; a Byzantine message relayed by a
        correct process is one the sender could have injected directly.
        """
        if self.pending:
            q = min(self.pending)[1]
            if self.procs[q].abv.bin_vals:
                return [("deliver", min(self.pending))]
            first = min(self.pending)
            out = [("deliver", k) for k, m in sorted(self.pending.items())
                   if k == first or (k[1] == q and not isinstance(m, int) and self._news(q, m))]
            return out + ([("expire", q)] if self.stuck(q) else [])
        stuck = [p for p in sorted(self.procs) if self.stuck(p)]
        if stuck:
            return [("expire", stuck[0])]
        out = []
        s = self.setup
        for b, role in enumerate(s.roles):
            if role != "byzantine":
                continue
            for dst in sorted(self.procs):
                for v in (0, 1):
                    if ("est", b, dst, v) not in self.injected:
                        out.append(("inject", ("est", b, dst, v)))
                    if len(set(self.votes[v]) | {b}) >= s.cfg.h0 and ("ready", b, dst, v) not in self.injected:
                        out.append(("inject", ("ready", b, dst, v)))
        return out

    def apply(self, move: tuple) -> None:
        kind, k = move
        if kind == "deliver":
            msg = self.pending.pop(k)
            self._deliver(k[1], msg)
            return
        if kind == "expire":
            for msg in self.procs[k].relay_set():
                self._post(msg, range(self.setup.cfg.n), k)
            return
        self.injected = self.injected | {k}
        what, b, dst, v = k
        signer = self.keyring.signer(b)
        rnd = self.setup.rnd
        if what == "est":
            msg = signer.sign(Tag.EST, INSTANCE, rnd, v, cert=self.certs.get(v))
            self.votes[v].setdefault(b, msg)
        else:
            own = signer.sign(Tag.BVECHO, INSTANCE, rnd, v, cert=self.certs.get(v))
            pool = [own] + [m for s, m in sorted(self.votes[v].items()) if s != b]
            bv = Certificate(Tag.BVECHO, INSTANCE, rnd, v, tuple(m.stripped() for m in pool[:self.setup.cfg.h0]))
            msg = signer.sign(Tag.BVREADY, INSTANCE, rnd, v, cert=self.certs.get(v), bv_cert=bv)
        self._deliver(dst, msg)

    def quiescent(self) -> bool:
        return not self.pending and not any(self.stuck(p) for p in self.procs)


def _check(world: _World) -> list[tuple[str, str]]:
    s = world.setup
    honest = [p for p in world.procs if s.roles[p] == "ok"]
    found = []
    vals = {p: frozenset(world.procs[p].abv.bin_vals) for p in honest}
    for p, vs in vals.items():
        if not vs:
            found.append(("termination", f"p{p} delivered nothing"))
    if len(set(vals.values())) > 1:
        found.append(("uniformity", "bin_vals differ: " + str({p: sorted(v) for p, v in vals.items()})))
    amp = AMPLIFICATION_RULES[world.amp_rule](s.cfg.n, s.cfg.q, s.cfg.t, 0)
    broadcast = {s.inputs[p] for p in range(s.cfg.n) if s.roles[p] == "ok"}
    for v in (0, 1):
        if sum(1 for p in range(s.cfg.n) if s.roles[p] == "ok" and s.inputs[p] == v) >= amp:
            missing = [p for p in honest if v not in vals[p]]
            if missing:
                found.append(("obligation", f"{v} broadcast by >= {amp} correct processes, missing at {missing}"))
    for p in honest:
        abv = world.procs[p].abv
        view = abv.host.view
        for v, (cert, bv) in abv.bin_vals.items():
            if v not in broadcast:
                found.append(("justification", f"p{p} delivered {v}, broadcast by no correct process"))
            if not (estimate_cert_valid(INSTANCE, s.rnd, v, cert, view, world.keyring)
                    and certificate_valid(bv, view, world.keyring)):
                found.append(("accountability", f"p{p} holds {v} without a valid certificate pair"))
    return found


def prior_certificates(keyring: KeyRing, cfg: FaultConfig, rnd: int, values) -> dict:
    """Synthetic ECHO_BC certificates from round ``rnd - 1`` for each value in ``values``."""
    certs = {}
    for v in values:
        votes = tuple(keyring.signer(p).sign(Tag.ECHO_BC, INSTANCE, rnd - 1, frozenset({v})).stripped()
                      for p in range(cfg.h0))
        certs[v] = Certificate(Tag.ECHO_BC, INSTANCE, rnd - 1, frozenset({v}), votes)
    return certs


def small_configs(n: int = 4, max_faulty: int = 2) -> list[FaultConfig]:
    out = []
    for t, d, q in itertools.product(range(max_faulty + 1), repeat=3):
        if t + d + q > max_faulty:
            continue
        for h0 in range(n // 2 + 1, n + 1):
            cfg = FaultConfig(n=n, t=t, d=d, q=q, h0=h0)
            if validate_config(cfg):
                out.append(cfg)
    return out


def setups(cfg: FaultConfig, rnd: int, certified: frozenset):
    n = cfg.n
    roles = ["byzantine"] * cfg.t + ["deceitful"] * cfg.d + ["benign"] * cfg.q
    roles += ["ok"] * (n - len(roles))
    allowed = sorted(certified) if rnd > 1 else [0, 1]
    if rnd == 2:
        allowed = sorted(set(allowed) | {1})
    voters = [p for p in range(n) if roles[p] != "byzantine"]
    running = [p for p in range(n) if roles[p] in ("ok", "deceitful")]
    split_choices = [frozenset({0}), frozenset({1}), frozenset({0, 1})]
    for vals in itertools.product(allowed, repeat=len(voters)):
        inputs = [None] * n
        for p, v in zip(voters, vals):
            inputs[p] = v
        per_deceitful = []
        for p in range(n):
            if roles[p] != "deceitful":
                per_deceitful.append([None])
                continue
            others = [x for x in running if x != p]
            combos = []
            for choice in itertools.product(split_choices, repeat=len(others)):
                if all(c <= set(allowed) for c in choice):
                    combos.append(dict(zip(others, choice)))
            per_deceitful.append(combos)
        per_benign = []
        for p in range(n):
            if roles[p] != "benign":
                per_benign.append([()])
                continue
            per_benign.append([tuple(c) for r in range(len(running) + 1) for c in itertools.combinations(running, r)])
        for splits in itertools.product(*per_deceitful):
            for reach in itertools.product(*per_benign):
                yield Setup(cfg, rnd, certified, tuple(inputs), tuple(roles), tuple(splits), tuple(reach))


def _relabel(setup: Setup, perm: tuple) -> tuple:
    """Sortable form of ``setup`` with process p renamed to perm[p]."""
    n = len(perm)
    inputs, splits, reach = [None] * n, [None] * n, [()] * n
    for p in range(n):
        inputs[perm[p]] = setup.inputs[p]
        split = setup.splits[p] if setup.splits else None
        if split is not None:
            split = tuple(sorted((perm[r], tuple(sorted(v))) for r, v in split.items()))
        splits[perm[p]] = split
        if setup.reach:
            reach[perm[p]] = tuple(sorted(perm[r] for r in setup.reach[p]))
    return repr((inputs, splits, reach))


def symmetries(roles: tuple) -> list[tuple]:
    """Permutations of process ids that keep every role in place."""
    n = len(roles)
    return [perm for perm in itertools.permutations(range(n))
            if all(roles[perm[p]] == roles[p] for p in range(n))]


def canonical(setup: Setup, perms: list[tuple]) -> bool:
    """True if ``setup`` is the representative of its class under role-preserving renaming."""
    own = _relabel(setup, tuple(range(len(setup.roles))))
    return all(own <= _relabel(setup, perm) for perm in perms)


def _local_after(proc: _Proc, first, then) -> tuple:
    """One process's state and emissions after two deliveries, the second only if still relevant."""
    p = proc.clone()
    emitted = set()
    for m in (first, then):
        if m is then and not p.live(m):
            break
        out, culprits = p.step(m)
        emitted.update((o.tag.value, o.value) for o in out)
        emitted.update(("POF", c) for c in culprits)
    return p.key(), frozenset(emitted)


def _check_skipped(w: _World, moves: list, stats: ExploreStats, memo: dict) -> list:
    """Where the reduction skips a delivery to the same process, confirm both orders meet.

    Other processes and in-flight messages to them are untouched by deliveries
    to this one, so comparing its own state and emissions settles the question;
    results are memoised on its abstract key. Deliveries that fail the check
    are returned so the caller explores them too.
    """
    if not w.pending:
        return []
    first = min(w.pending)
    pid = first[1]
    taken = {k for kind, k in moves if kind == "deliver"}
    extra = []
    for k in w.pending:
        if k[1] == pid and k not in taken:
            stats.commutations += 1
            proc = w.procs[pid]
            key = (pid, proc.key(), first, k)
            same = memo.get(key)
            if same is None:
                a, b = w.pending[first], w.pending[k]
                same = memo[key] = _local_after(proc, a, b) == _local_after(proc, b, a)
            if not same:
                stats.reordered += 1
                extra.append(("deliver", k))
    return extra


def explore_setup(setup: Setup, keyring: KeyRing, amp_rule: str = "balanced",
                  stats: ExploreStats | None = None, state_limit: int = 2_000_000) -> ExploreStats:
    stats = stats or ExploreStats()
    stats.setups += 1
    certs = prior_certificates(keyring, setup.cfg, setup.rnd, setup.certified) if setup.rnd > 1 else {}
    world = _World(setup, keyring, amp_rule, certs)
    world.start()
    seen = {world.key()}
    memo: dict = {}
    stack = [world]
    reported = set()
    while stack:
        w = stack.pop()
        stats.states += 1
        if len(seen) > state_limit:
            raise RuntimeError(f"state limit exceeded for {setup}")
        moves = w.moves()
        moves += _check_skipped(w, moves, stats, memo)
        if w.quiescent():
            stats.terminals += 1
            for prop, detail in _check(w):
                if prop not in reported:
                    reported.add(prop)
                    stats.violations.append(Violation(prop, setup, detail))
        for move in moves:
            nxt = w.copy()
            nxt.apply(move)
            k = nxt.key()
            if k not in seen:
                seen.add(k)
                stack.append(nxt)
    return stats


VARIANTS = ((1, frozenset()), (2, frozenset({0})), (3, frozenset({0})), (3, frozenset({1})), (3, frozenset({0, 1})))


def explore(n: int = 4, max_faulty: int = 2, amp_rule: str = "balanced", variants=VARIANTS,
            configs: list[FaultConfig] | None = None, symmetric: bool = True,
            first_only: bool = False) -> ExploreStats:
    """Explore every setup of every config and variant.

    ``symmetric`` skips setups that rename processes of one already covered.
    ``first_only`` moves on to the next variant once one setup has a violation.
    """
    keyring = KeyRing(n, make_scheme("blake", 32), seed=b"explore")
    stats = ExploreStats()
    for cfg in configs or small_configs(n, max_faulty):
        for rnd, certified in variants:
            perms = None
            for setup in setups(cfg, rnd, certified):
                if symmetric:
                    perms = perms or symmetries(setup.roles)
                    if not canonical(setup, perms):
                        continue
                before = len(stats.violations)
                explore_setup(setup, keyring, amp_rule, stats)
                if first_only and len(stats.violations) > before:
                    break
    return stats
