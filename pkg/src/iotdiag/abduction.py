"""Abduction by refutation over labelled integrity constraints.

An anomaly that makes the model unsatisfiable is explained by the security
requirement whose removal restores satisfiability.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .logic import Atom, Program, RequirementMeta, check_satisfiable, exclude

log = logging.getLogger(__name__)

BENIGN = "benign"
DIAGNOSED = "diagnosed"
UNEXPLAINED = "unexplained"

UNIVERSAL_CONTROL_KEY = "ALL"


@dataclass
class DiagnosisResult:
    status: str
    violated: list[RequirementMeta] = field(default_factory=list)
    attack_class: str | None = None
    controls: list[str] = field(default_factory=list)
    elapsed: float = 0.0
    witness: list[dict] = field(default_factory=list)
    # requirement ids of every violated constraint in the initial check
    fired: list[str] = field(default_factory=list)

    @property
    def requirement_ids(self) -> list[str]:
        return [r.id for r in self.violated]

    def to_text(self) -> str:
        if self.status == BENIGN:
            return "Not a security anomaly"
        if self.status == UNEXPLAINED:
            return (
                "Unexplained anomaly: no single requirement explains it "
                f"(violated: {', '.join(self.fired) or 'unlabelled constraint'})"
            )
        lines = [f"Violated Security Requirement: {r.text or r.id}" for r in self.violated]
        lines.append(f"Diagnosis: {self.attack_class}")
        return "\n".join(lines)

    def to_record(self) -> dict:
        return {
            "status": self.status,
            "requirements": self.requirement_ids,
            "class": self.attack_class,
            "controls": list(self.controls),
            "witness": self.witness,
            "elapsed_ms": self.elapsed * 1e3,
        }


def diagnose(p: Program, anomaly: Iterable[Atom]) -> DiagnosisResult:
    """Map one anomaly (a set of ground atoms) to the requirement it violates.

    Every requirement whose sole exclusion restores satisfiability is
    reported, in declaration order; the first one is the diagnosis.
    """
    t0 = time.perf_counter()
    anomaly = list(anomaly)
    result = check_satisfiable(p, anomaly)
    if result.satisfiable:
        return DiagnosisResult(BENIGN, elapsed=time.perf_counter() - t0)
    fired = list(dict.fromkeys(v.requirement_id or "?" for v in result.violations))
    violated = []
    for meta in p.requirements:
        if check_satisfiable(exclude(p, meta.id), anomaly).satisfiable:
            violated.append(meta)
    elapsed = time.perf_counter() - t0
    if not violated:
        return DiagnosisResult(UNEXPLAINED, elapsed=elapsed, fired=fired,
                               witness=[_witness(v) for v in result.violations])
    ids = {m.id for m in violated}
    witness = [_witness(v) for v in result.violations if v.requirement_id in ids]
    return DiagnosisResult(
        DIAGNOSED,
        violated=violated,
        attack_class=violated[0].diagnosis or violated[0].id,
        elapsed=elapsed,
        witness=witness,
        fired=fired,
    )


def _witness(v) -> dict:
    return {
        "requirement": v.requirement_id,
        "bindings": {k: val for k, val in sorted(v.bindings.items())},
        "body": [str(a) for a in v.body],
    }


def load_catalog(path) -> dict[str, list[str]]:
    data = json.loads(Path(path).read_text())
    return {k: list(v) for k, v in data.get("controls", data).items()}


def recommend_controls(r: DiagnosisResult, catalog: Mapping[str, list[str]]) -> list[str]:
    """Controls for every violated requirement plus the firmware-update entry."""
    if r.status != DIAGNOSED:
        raise ValueError(f"cannot recommend controls for a {r.status} result")
    out: list[str] = []
    for req in r.violated:
        if req.id not in catalog:
            log.warning("requirement %s missing from control catalog", req.id)
            continue
        out.extend(catalog[req.id])
    out.extend(catalog.get(UNIVERSAL_CONTROL_KEY, []))
    return list(dict.fromkeys(out))


def diagnose_all(p: Program, anomalies, catalog=None) -> list[DiagnosisResult]:
    results = []
    for anomaly in anomalies:
        r = diagnose(p, anomaly)
        if catalog is not None and r.status == DIAGNOSED:
            r.controls = recommend_controls(r, catalog)
        results.append(r)
    return results
