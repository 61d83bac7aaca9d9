"""Reference smart-home rule program, control catalog and canned anomalies."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

from ..abduction import DIAGNOSED, diagnose, load_catalog
from ..logic import Program, check_satisfiable, parse_program

ASSET_DIR = Path(__file__).resolve().parent
RULES_PATH = ASSET_DIR / "smart_home.lp"
CONTROLS_PATH = ASSET_DIR / "controls.json"
CANNED_DIR = ASSET_DIR / "canned_anomalies"

REQUIREMENT_IDS = ("CCOM1", "CDEV1", "ICOM1", "ICOM2", "IDEV1", "ADEV1", "ADEV2")

# expected attack class for each canned anomaly
GOLDEN = {
    "CCOM1": "Vulnerability/Malware",
    "CDEV1": "Recon/BruteForce",
    "ICOM1": "MitM/Malware",
    "ICOM2": "Recon",
    "IDEV1": "Vulnerability/Malware",
    "ADEV1": "DoS",
    "ADEV2": "DDoS/Botnet",
}


@lru_cache(maxsize=None)
def reference_model() -> Program:
    return parse_program(RULES_PATH.read_text())


def control_catalog() -> dict[str, list[str]]:
    return load_catalog(CONTROLS_PATH)


def canned_anomaly(req_id: str):
    from ..enrich import read_anomalies

    (anomaly,) = read_anomalies((CANNED_DIR / f"{req_id}.lp").read_text())
    return anomaly


@dataclass
class AssetReport:
    ok: bool = True
    diagnostics: list[str] = field(default_factory=list)

    def fail(self, message: str) -> None:
        self.ok = False
        self.diagnostics.append(message)


def validate_assets(rules_path=RULES_PATH, controls_path=CONTROLS_PATH, canned_dir=CANNED_DIR) -> AssetReport:
    """Parse, check the base model is consistent and replay one golden anomaly per requirement."""
    from ..enrich import read_anomalies

    report = AssetReport()
    try:
        program = parse_program(Path(rules_path).read_text())
    except Exception as exc:  # reported, not raised
        report.fail(f"rules do not parse: {exc}")
        return report
    ids = [m.id for m in program.requirements]
    missing = [r for r in REQUIREMENT_IDS if r not in ids]
    if missing:
        report.fail(f"requirements missing: {', '.join(missing)}")
    if not check_satisfiable(program).satisfiable:
        report.fail("base model is unsatisfiable")
    catalog = load_catalog(controls_path)
    for req_id in ids:
        if req_id not in catalog:
            report.fail(f"{req_id}: no entry in control catalog")
    for req_id, expected in GOLDEN.items():
        path = Path(canned_dir) / f"{req_id}.lp"
        if not path.exists():
            report.fail(f"{req_id}: canned anomaly {path.name} missing")
            continue
        for anomaly in read_anomalies(path.read_text()):
            r = diagnose(program, anomaly)
            if r.status != DIAGNOSED or r.requirement_ids[:1] != [req_id] or r.attack_class != expected:
                report.fail(
                    f"{req_id}: expected {expected}, got {r.status} {r.requirement_ids} {r.attack_class}"
                )
    return report
