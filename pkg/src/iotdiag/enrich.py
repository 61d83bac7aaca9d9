"""Contextual enrichment of flagged flows and their rendering as logic atoms.

Each group of flagged flows (one device, one time window) becomes a single
``communicate(S, D, T, P, F)`` fact, optionally preceded by
``available(D)``.  Absence of the availability fact means the device is
offline (closed-world reading).
"""
from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .flows import FlowRecord
from .logic import Atom, parse_fact_statements
from .thresholds import tukey_hinges

log = logging.getLogger(__name__)

WITHIN_LIMIT = "within_limit"
EXCEEDS_LIMIT = "exceeds_limit"
SINGLE = "single_endpoint"
MULTIPLE = "multiple_endpoints"
MALICIOUS = "malicious_endpoint"


@dataclass(frozen=True)
class RateFences:
    lower: float
    upper: float
    q1: float
    q3: float
    iqr: float

    def to_dict(self) -> dict:
        return {"lower": self.lower, "upper": self.upper, "q1": self.q1, "q3": self.q3, "iqr": self.iqr}

    @classmethod
    def from_dict(cls, d: dict) -> "RateFences":
        return cls(**d)


def learn_rate_fences(benign: Sequence[FlowRecord], mult: float = 1.5) -> RateFences:
    """Tukey fences on benign packet rates; the lower fence is clamped at 0."""
    if len(benign) < 4:
        raise ValueError(f"need at least 4 benign flows, got {len(benign)}")
    q1, q3 = tukey_hinges([r.flow_rate for r in benign])
    iqr = q3 - q1
    return RateFences(max(0.0, q1 - mult * iqr), q3 + mult * iqr, q1, q3, iqr)


def classify_rate(f: RateFences, rate: float) -> str:
    return EXCEEDS_LIMIT if rate > f.upper else WITHIN_LIMIT


# --------------------------------------------------------------------------
# Endpoint reputation

Reputation = Callable[[str], "bool | None"]


def load_blacklist(path) -> frozenset[str]:
    """One endpoint per line; ``#`` starts a comment."""
    out = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        entry = line.split("#", 1)[0].strip()
        if entry:
            out.add(entry)
    return frozenset(out)


@dataclass
class ContextConfig:
    blacklist: frozenset[str] = frozenset()
    window: float = 10.0
    assume_attack_success: bool = True
    availability_overrides: dict[str, bool] = field(default_factory=dict)
    # strict mode: endpoints of unknown reputation count as malicious
    strict_reputation: bool = False
    trusted: frozenset[str] = frozenset()
    # optional live lookup: True = malicious, False = clean, None = unknown
    reputation: Reputation | None = None

    def __post_init__(self):
        if not self.window > 0:
            raise ValueError("window must be positive")
        self.blacklist = frozenset(self.blacklist)
        self.trusted = frozenset(self.trusted)

    def is_malicious(self, endpoint: str) -> bool:
        if endpoint in self.blacklist:
            return True
        verdict = self.reputation(endpoint) if self.reputation is not None else None
        if verdict is not None:
            return bool(verdict)
        return self.strict_reputation and endpoint not in self.trusted


def classify_source(flows_in_window: Sequence[FlowRecord], target: str, cfg: ContextConfig,
                    fences: RateFences | None = None) -> str:
    """Source term for one window of flagged flows against ``target``.

    Precedence: a blacklisted party, then several anomalous sources, then a
    single source at an excessive rate, else the peer's own identifier.
    Anomalous sources are the peers of flows above the rate fence when any
    flow exceeds it, otherwise the peers of all flows in the window.
    """
    if not flows_in_window:
        raise ValueError("empty window")
    if any(r.device != target for r in flows_in_window):
        raise ValueError(f"window mixes devices other than {target}")
    if any(cfg.is_malicious(r.src) or cfg.is_malicious(r.dst) for r in flows_in_window):
        return MALICIOUS
    exceeding = []
    if fences is not None:
        exceeding = [r for r in flows_in_window if classify_rate(fences, r.flow_rate) == EXCEEDS_LIMIT]
    anomalous = exceeding or list(flows_in_window)
    sources = list(dict.fromkeys(r.peer for r in anomalous))
    if len(sources) > 1:
        return MULTIPLE
    if exceeding:
        return SINGLE
    return sources[0]


def probe_availability(device: str, cfg: ContextConfig, rate_flag: str, source: str) -> bool:
    if device in cfg.availability_overrides:
        return bool(cfg.availability_overrides[device])
    if cfg.assume_attack_success and rate_flag == EXCEEDS_LIMIT and source in (SINGLE, MULTIPLE):
        return False
    return True


# --------------------------------------------------------------------------
# Atoms


@dataclass(frozen=True)
class CommAtom:
    source: str
    target: str
    hour: int
    protocol: str
    rate_flag: str
    available: bool
    flows: tuple[FlowRecord, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        if not 0 <= self.hour <= 23:
            raise ValueError(f"hour {self.hour} outside 0..23")
        if self.rate_flag not in (WITHIN_LIMIT, EXCEEDS_LIMIT):
            raise ValueError(f"bad rate flag {self.rate_flag}")
        if self.source == self.target:
            raise ValueError("source and destination coincide")

    def atoms(self) -> list[Atom]:
        comm = Atom("communicate", (self.source, self.target, self.hour, self.protocol, self.rate_flag))
        return ([Atom("available", (self.target,))] if self.available else []) + [comm]

    def to_text(self) -> str:
        return " ".join(f"{a}." for a in self.atoms())


def hour_of_day(ts: float) -> int:
    return datetime.fromtimestamp(ts, tz=timezone.utc).hour


def group_flagged(flagged: Iterable[FlowRecord], window: float) -> list[list[FlowRecord]]:
    """Group flows by (device, time window), in order of first appearance."""
    groups: dict[tuple, list[FlowRecord]] = {}
    for r in sorted(flagged, key=lambda r: r.ts):
        groups.setdefault((r.device, math.floor(r.ts / window)), []).append(r)
    return list(groups.values())


def group_to_atom(group: Sequence[FlowRecord], fences: RateFences, cfg: ContextConfig) -> CommAtom:
    device = group[0].device
    rate_flag = classify_rate(fences, max(r.flow_rate for r in group))
    source = classify_source(group, device, cfg, fences)
    protocol = Counter(r.protocol for r in group).most_common(1)[0][0]
    available = probe_availability(device, cfg, rate_flag, source)
    return CommAtom(source, device, hour_of_day(group[0].ts), protocol, rate_flag, available, tuple(group))


def flows_to_atoms(flagged: Sequence[FlowRecord], fences: RateFences | Mapping[str, RateFences],
                   cfg: ContextConfig) -> list[CommAtom]:
    """One ``CommAtom`` per (device, window) group of flagged flows."""
    out = []
    for group in group_flagged(flagged, cfg.window):
        f = fences if isinstance(fences, RateFences) else fences[group[0].device]
        out.append(group_to_atom(group, f, cfg))
    return out


def format_atoms(atoms: Sequence[CommAtom], comments: Sequence[str] | None = None) -> str:
    lines = []
    for i, a in enumerate(atoms):
        note = f" % {comments[i]}" if comments and comments[i] else ""
        lines.append(a.to_text() + note)
    return "\n".join(lines) + ("\n" if lines else "")


def read_anomalies(text: str) -> list[list[Atom]]:
    """Split an atoms file into anomalies.

    Each anomaly ends with a ``communicate`` fact and owns every fact since
    the previous one.  ``not a.`` statements are accepted and dropped.
    """
    anomalies: list[list[Atom]] = []
    current: list[Atom] = []
    for absent, atom in parse_fact_statements(text):
        if absent:
            if atom in current:
                raise ValueError(f"{atom} asserted both present and absent")
            continue
        current.append(atom)
        if atom.pred == "communicate":
            anomalies.append(current)
            current = []
    if current:
        anomalies.append(current)
    return anomalies
