"""Fault-model configuration, voting thresholds and the committee view."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction

ProcessId = int


class CommitteeCollapse(ValueError):
    """Raised when detected removals leave no usable voting threshold."""


@dataclass(frozen=True)
class FaultConfig:
    n: int
    t: int = 0
    d: int = 0
    q: int = 0
    h0: int = 0

    @classmethod
    def with_fraction(cls, n: int, t: int, d: int, q: int, fraction: str | Fraction) -> "FaultConfig":
        return cls(n=n, t=t, d=d, q=q, h0=h0_from_fraction(n, fraction))


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reasons: tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.accepted


def h0_from_fraction(n: int, fraction: str | Fraction) -> int:
    """Integer threshold for a fractional spec such as ``"2/3"``: ceil(fraction * n)."""
    return math.ceil(Fraction(fraction) * n)


def validate_config(cfg: FaultConfig) -> Verdict:
    n, t, d, q, h0 = cfg.n, cfg.t, cfg.d, cfg.q, cfg.h0
    reasons = []
    if min(n, t, d, q) < 0:
        reasons.append("counts must be non-negative")
    if n < 1:
        reasons.append("committee must be non-empty")
    if t + d + q >= n:
        reasons.append(f"t+d+q < n violated: {t + d + q} >= {n}")
    if not (2 * h0 > n and h0 <= n):
        reasons.append(f"h0 in (n/2, n] violated: h0={h0}, n={n}")
    if not d + t < 2 * h0 - n:
        reasons.append(f"safety d+t < 2h0-n violated: {d + t} >= {2 * h0 - n}")
    if not q + t <= n - h0:
        reasons.append(f"liveness q+t <= n-h0 violated: {q + t} > {n - h0}")
    if not n > 3 * t + d + 2 * q:
        reasons.append(f"no threshold can work: n > 3t+d+2q violated: {n} <= {3 * t + d + 2 * q}")
    return Verdict(not reasons, tuple(reasons))


def ec_bounds_hold(cfg: FaultConfig) -> bool:
    """Bounds under which the eventual-consensus wrapper stabilises."""
    return cfg.d + cfg.t < cfg.h0 and cfg.q + cfg.t < cfg.n - cfg.h0


def validate_ec_config(cfg: FaultConfig) -> Verdict:
    """Like :func:`validate_config`, but with the weaker eventual-consensus bounds in place of safety."""
    reasons = [r for r in validate_config(cfg).reasons if not r.startswith(("safety", "liveness"))]
    if not cfg.d + cfg.t < cfg.h0:
        reasons.append(f"eventual safety d+t < h0 violated: {cfg.d + cfg.t} >= {cfg.h0}")
    if not cfg.q + cfg.t < cfg.n - cfg.h0:
        reasons.append(f"eventual liveness q+t < n-h0 violated: {cfg.q + cfg.t} >= {cfg.n - cfg.h0}")
    return Verdict(not reasons, tuple(reasons))


def threshold(h0: int, d_r: int) -> int:
    if d_r < 0:
        raise ValueError("d_r must be non-negative")
    if d_r >= h0:
        raise CommitteeCollapse(f"{d_r} removals exhaust threshold h0={h0}")
    return h0 - d_r


def amplification_threshold(n: int, q: int, t: int, d_r: int) -> int:
    # below one vote the rule has no meaning; one vote is the weakest usable trigger
    return max(1, (n - q - t) // 2 - d_r + 1)


def balanced_amplification_threshold(n: int, q: int, t: int, d_r: int) -> int:
    """ceil((n-q-t)/2) - d_r, at least 1: an even split of n-q-t correct processes still reaches it."""
    return max(1, (n - q - t + 1) // 2 - d_r)


AMPLIFICATION_RULES = {"literal": amplification_threshold, "balanced": balanced_amplification_threshold}


def coordinator(r: int, n: int) -> ProcessId:
    # ((r-1) mod n)+1 over p_0..p_{n-1}; the value n wraps to p_0
    return (((r - 1) % n) + 1) % n


class Phase(enum.Enum):
    PHASE1 = "phase1"
    PHASE2 = "phase2"
    DECISION = "decision"


@dataclass(frozen=True)
class RoundPhase:
    round: int
    phase: Phase

    @property
    def parity(self) -> int:
        return self.round % 2


@dataclass
class CommitteeView:
    """Membership as seen by one process. Shared by all its protocol instances."""

    n0: int
    h0: int
    removed: set[ProcessId] = field(default_factory=set)
    local_pofs: dict[ProcessId, object] = field(default_factory=dict)

    @property
    def members(self) -> set[ProcessId]:
        return set(range(self.n0)) - self.removed

    @property
    def d_r(self) -> int:
        return len(self.removed)

    @property
    def h(self) -> int:
        return threshold(self.h0, self.d_r)

    def proven(self) -> set[ProcessId]:
        """Every culprit with a stored proof, removed or not."""
        return set(self.local_pofs)

    def remove(self, pofs) -> list[ProcessId]:
        """Record PoFs and remove their culprits; returns newly removed ids in order."""
        fresh = []
        for pof in pofs:
            if pof.culprit in self.removed:
                continue
            self.removed.add(pof.culprit)
            self.local_pofs[pof.culprit] = pof
            fresh.append(pof.culprit)
        return fresh
