"""Scenario files: JSON documents validated into a :class:`Scenario`."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from ..model import FaultConfig, Verdict, h0_from_fraction, validate_config, validate_ec_config

FAULT_CLASSES = ("benign", "deceitful", "byzantine")


class ScenarioError(ValueError):
    """Schema violation; ``errors`` lists ``(field path, message)`` pairs."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{p}: {m}" for p, m in errors))


class RosterEntry(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    fault_class: Literal["benign", "deceitful", "byzantine"] = Field(alias="class")
    script: str
    params: dict = Field(default_factory=dict)


class PatternSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["none", "random", "partition", "coordinator_starve", "trickle"] = "random"
    groups: Optional[list[list[int]]] = None
    targets: Optional[list[int]] = None


class Scenario(BaseModel):
    model_config = ConfigDict(extra="forbid")

    version: Literal[1] = 1
    name: str = "scenario"
    mode: Literal["general", "aabc", "aarb", "ec"] = "general"
    n: int = Field(ge=1, le=64)
    h0: Optional[int] = None
    h0_fraction: Optional[str] = None
    t: int = Field(default=0, ge=0)
    d: int = Field(default=0, ge=0)
    q: int = Field(default=0, ge=0)
    delta: int = Field(default=100, ge=1)
    gst: int = Field(default=0, ge=0)
    seed: int = 1
    horizon: int = Field(default=200_000, ge=1)
    allow_unsafe: bool = False
    proposals: Optional[list[int]] = None
    inputs: Optional[list[int]] = None
    source: int = 0
    roster: dict[int, RosterEntry] = Field(default_factory=dict)
    pre_gst_pattern: Union[str, PatternSpec] = "random"
    lambda_bytes: int = Field(default=32, ge=1, le=64)
    scheme: Literal["blake", "ed25519"] = "blake"
    ec_epochs: int = Field(default=20, ge=1)
    amplification: Literal["balanced", "literal"] = "balanced"

    @model_validator(mode="after")
    def _check(self) -> "Scenario":
        if (self.h0 is None) == (self.h0_fraction is None):
            raise ValueError("exactly one of h0 and h0_fraction must be given")
        for pid in self.roster:
            if not 0 <= pid < self.n:
                raise ValueError(f"roster pid {pid} outside 0..{self.n - 1}")
        for name in ("proposals", "inputs"):
            values = getattr(self, name)
            if values is not None and len(values) != self.n:
                raise ValueError(f"{name} must have n={self.n} entries")
        if self.inputs is not None and any(v not in (0, 1) for v in self.inputs):
            raise ValueError("inputs must be bits")
        if isinstance(self.pre_gst_pattern, str):
            self.pre_gst_pattern = PatternSpec(kind=self.pre_gst_pattern)
        return self

    @property
    def threshold(self) -> int:
        return self.h0 if self.h0 is not None else h0_from_fraction(self.n, self.h0_fraction)

    def fault_config(self) -> FaultConfig:
        return FaultConfig(n=self.n, t=self.t, d=self.d, q=self.q, h0=self.threshold)

    def verdict(self) -> Verdict:
        """Configuration checks beyond the schema: roster counts and, unless waived, the bounds."""
        reasons = []
        counts = {c: 0 for c in FAULT_CLASSES}
        for entry in self.roster.values():
            counts[entry.fault_class] += 1
        for c, field_name in (("benign", "q"), ("deceitful", "d"), ("byzantine", "t")):
            if counts[c] != getattr(self, field_name):
                reasons.append(f"roster has {counts[c]} {c} processes but {field_name}={getattr(self, field_name)}")
        if not self.allow_unsafe:
            check = validate_ec_config if self.mode == "ec" else validate_config
            reasons.extend(check(self.fault_config()).reasons)
        return Verdict(not reasons, tuple(reasons))

    def with_(self, **changes) -> "Scenario":
        data = self.model_dump(by_alias=True)
        data.update(changes)
        return Scenario.model_validate(data)

    def proposal_for(self, pid: int):
        if self.mode == "aabc":
            return (self.inputs or [pid % 2 for pid in range(self.n)])[pid]
        if self.mode == "aarb":
            value = (self.proposals or [100 + i for i in range(self.n)])[self.source]
            return (self.source, value)
        return (self.proposals or [100 + i for i in range(self.n)])[pid]


def parse_scenario(data: dict) -> Scenario:
    try:
        return Scenario.model_validate(data)
    except ValidationError as exc:
        errors = [(".".join(str(p) for p in e["loc"]) or "<root>", e["msg"]) for e in exc.errors()]
        raise ScenarioError(errors) from None


def load_scenario(path: str | Path) -> Scenario:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError([("<file>", f"invalid JSON: {exc}")]) from None
    return parse_scenario(data)
