"""Detection and diagnosis scoring: confusion counts, P/R/F1, AUC-PR."""
from __future__ import annotations

import fnmatch
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .abduction import DIAGNOSED, DiagnosisResult

DDOS_BOTNET = "DDoS/Botnet"
RECON_BRUTEFORCE = "Recon/BruteForce"
MITM_MALWARE = "MitM/Malware"
DOS = "DoS"
DIAGNOSIS_CLASSES = (DDOS_BOTNET, RECON_BRUTEFORCE, MITM_MALWARE, DOS)

DEFAULT_RELABEL = (
    ("DDoS*", DDOS_BOTNET), ("Mirai*", DDOS_BOTNET), ("Torii", DDOS_BOTNET),
    ("Trojan", DDOS_BOTNET), ("Gagfyt", DDOS_BOTNET), ("Kenjiro", DDOS_BOTNET),
    ("Okiru", DDOS_BOTNET), ("Hakai", DDOS_BOTNET), ("IRCBot", DDOS_BOTNET),
    ("Muhstik", DDOS_BOTNET), ("Hide&Seek", DDOS_BOTNET),
    ("Recon*", RECON_BRUTEFORCE), ("*Port Scan*", RECON_BRUTEFORCE),
    ("*Brute Force*", RECON_BRUTEFORCE),
    ("DNS Spoofing", MITM_MALWARE), ("Upload*", MITM_MALWARE), ("*C&C*", MITM_MALWARE),
    ("DoS *", DOS),
    ("Ultrasonic*", "Vulnerability/Malware"),
)


class UnmappedLabelError(KeyError):
    pass


@dataclass
class RelabelMap:
    """Ordered glob patterns (case-insensitive); the first match wins."""

    rules: list[tuple[str, str]] = field(default_factory=lambda: list(DEFAULT_RELABEL))

    def lookup(self, label: str) -> str:
        key = label.strip().lower()
        for pattern, cls in self.rules:
            if fnmatch.fnmatchcase(key, pattern.lower()):
                return cls
        raise UnmappedLabelError(f"no class for attack label {label!r}")

    __call__ = lookup

    @classmethod
    def from_dict(cls, d: dict) -> "RelabelMap":
        return cls([(k, v) for k, v in d.items()])


# --------------------------------------------------------------------------


@dataclass
class MetricsRow:
    attack: str = ""
    device: str = ""
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    auc_pr: float = math.nan
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    fold: int | None = None


def _prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def average_precision(truth: Sequence[bool], scores: Sequence[float]) -> float:
    """Step-sum AP ranking by ascending score; tied scores enter together.

    NaN when ``truth`` has no positives.
    """
    y = np.asarray(truth, dtype=bool)
    s = np.asarray(scores, dtype=float)
    n_pos = int(y.sum())
    if n_pos == 0:
        return math.nan
    order = np.argsort(s, kind="stable")
    s, y = s[order], y[order]
    # last index of each run of equal scores
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[ends]
    precision = tp / (ends + 1)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def detection_metrics(predictions: Sequence[bool], truth: Sequence[bool],
                      scores: Sequence[float] | None = None) -> MetricsRow:
    """Confusion counts and P/R/F1 for flagged-vs-true anomalies.

    ``scores`` follow the detector convention (lower is more anomalous).
    """
    pred = np.asarray(predictions, dtype=bool)
    y = np.asarray(truth, dtype=bool)
    if pred.shape != y.shape or (scores is not None and len(scores) != len(y)):
        raise ValueError("predictions, truth and scores must have equal lengths")
    tp = int(np.sum(pred & y))
    fp = int(np.sum(pred & ~y))
    fn = int(np.sum(~pred & y))
    tn = int(np.sum(~pred & ~y))
    p, r, f1 = _prf(tp, fp, fn)
    ap = average_precision(y, scores) if scores is not None else math.nan
    return MetricsRow(precision=p, recall=r, f1=f1, auc_pr=ap, tp=tp, fp=fp, fn=fn, tn=tn)


def predicted_class(r: DiagnosisResult | None) -> str | None:
    if r is None or r.status != DIAGNOSED:
        return None
    return r.attack_class


def diagnosis_metrics(results: Sequence[DiagnosisResult | None], truth_labels: Sequence[str | None],
                      relabel: RelabelMap | None = None,
                      classes: Iterable[str] | None = None) -> MetricsRow:
    """Micro-averaged one-vs-rest scores over ``classes``.

    A truth label of None means benign.  Benign and unexplained results are
    negative predictions.  ``classes`` defaults to every class seen.
    """
    if len(results) != len(truth_labels):
        raise ValueError("results and truth must have equal lengths")
    relabel = relabel or RelabelMap()
    t = [relabel(lbl) if lbl is not None else None for lbl in truth_labels]
    p = [predicted_class(r) for r in results]
    keep = set(classes) if classes is not None else {c for c in t + p if c is not None}
    tp = fp = fn = tn = 0
    for ti, pi in zip(t, p):
        ti = ti if ti in keep else None
        pi = pi if pi in keep else None
        if pi is not None and pi == ti:
            tp += 1
            continue
        if pi is not None:
            fp += 1
        if ti is not None:
            fn += 1
        if pi is None and ti is None:
            tn += 1
    prec, rec, f1 = _prf(tp, fp, fn)
    return MetricsRow(attack="micro", precision=prec, recall=rec, f1=f1, tp=tp, fp=fp, fn=fn, tn=tn)


# --------------------------------------------------------------------------

COLUMNS = ("Attack", "Device", "Precision", "Recall", "AUC PR", "F1")


@dataclass
class MetricsReport:
    title: str = ""
    rows: list[MetricsRow] = field(default_factory=list)

    def aggregate(self) -> list[MetricsRow]:
        """Mean over folds for each (attack, device); NaN folds are skipped for AUC-PR."""
        groups: dict[tuple[str, str], list[MetricsRow]] = {}
        for r in self.rows:
            groups.setdefault((r.attack, r.device), []).append(r)
        out = []
        for (attack, device), rs in groups.items():
            aps = [r.auc_pr for r in rs if not math.isnan(r.auc_pr)]
            out.append(MetricsRow(
                attack, device,
                float(np.mean([r.precision for r in rs])),
                float(np.mean([r.recall for r in rs])),
                float(np.mean([r.f1 for r in rs])),
                float(np.mean(aps)) if aps else math.nan,
                sum(r.tp for r in rs), sum(r.fp for r in rs),
                sum(r.fn for r in rs), sum(r.tn for r in rs),
            ))
        return out

    def to_dict(self) -> dict:
        def clean(r: MetricsRow) -> dict:
            d = asdict(r)
            return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}

        return {
            "title": self.title,
            "folds": [clean(r) for r in self.rows],
            "aggregate": [clean(r) for r in self.aggregate()],
        }

    def to_table(self) -> str:
        body = [
            (r.attack, r.device, f"{r.precision:.3f}", f"{r.recall:.3f}",
             "nan" if math.isnan(r.auc_pr) else f"{r.auc_pr:.3f}", f"{r.f1:.3f}")
            for r in self.aggregate()
        ]
        widths = [max(len(c), *(len(row[i]) for row in body)) if body else len(c)
                  for i, c in enumerate(COLUMNS)]
        fmt = "  ".join(f"{{:<{w}}}" if i < 2 else f"{{:>{w}}}" for i, w in enumerate(widths))
        lines = [self.title] if self.title else []
        lines.append(fmt.format(*COLUMNS))
        lines.append("  ".join("-" * w for w in widths))
        lines.extend(fmt.format(*row) for row in body)
        return "\n".join(lines) + "\n"

    def write(self, directory, stem: str) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{stem}.json").write_text(json.dumps(self.to_dict(), indent=2))
        (d / f"{stem}.txt").write_text(self.to_table())
