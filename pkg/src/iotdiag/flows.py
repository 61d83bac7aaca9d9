"""Flow records: CSV ingestion, per-device partitioning and evaluation splits."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

log = logging.getLogger(__name__)

RATE_EPS = 1e-6  # seconds; duration floor for flow_rate
PROTOCOLS = ("http", "https", "dns", "udp", "tcp_other", "icmp", "other")
BASE_FEATURES = ("duration", "pkt_count", "byte_count", "conn_state", "protocol", "flow_rate")
CANONICAL_COLUMNS = (
    "ts", "device", "src", "dst", "protocol", "duration",
    "pkt_count", "byte_count", "conn_state", "flow_rate",
)
MANDATORY = ("ts", "device", "src", "dst", "protocol", "duration", "pkt_count")
DEFAULT_BENIGN_LABEL = "Benign"

_PROTOCOL_ALIASES = {
    "http": "http", "80": "http",
    "https": "https", "tls": "https", "ssl": "https", "443": "https",
    "dns": "dns", "53": "dns",
    "udp": "udp", "17": "udp",
    "tcp": "tcp_other", "6": "tcp_other", "tcp_other": "tcp_other",
    "icmp": "icmp", "1": "icmp",
}


class FlowDataError(ValueError):
    pass


def normalize_protocol(value: str) -> str:
    key = str(value).strip().lower()
    return _PROTOCOL_ALIASES.get(key, key if key in PROTOCOLS else "other")


def flow_rate(pkt_count: float, duration: float) -> float:
    return pkt_count / max(duration, RATE_EPS)


@dataclass(frozen=True)
class FlowRecord:
    ts: float
    device: str
    src: str
    dst: str
    protocol: str
    duration: float
    pkt_count: int
    byte_count: float = 0.0
    conn_state: int = 0
    flow_rate: float = 0.0
    extra: tuple[float, ...] = ()
    label: str | None = None

    @classmethod
    def make(cls, ts, device, src, dst, protocol, duration, pkt_count,
             byte_count=0.0, conn_state=0, extra=(), label=None) -> "FlowRecord":
        """Validate the raw fields and derive ``flow_rate``."""
        duration = float(duration)
        pkt_count = int(pkt_count)
        if not duration >= 0:
            raise FlowDataError(f"negative or NaN duration {duration}")
        if pkt_count < 1:
            raise FlowDataError(f"pkt_count must be >= 1, got {pkt_count}")
        return cls(
            ts=float(ts), device=str(device), src=str(src), dst=str(dst),
            protocol=normalize_protocol(protocol), duration=duration,
            pkt_count=pkt_count, byte_count=float(byte_count),
            conn_state=int(conn_state), flow_rate=flow_rate(pkt_count, duration),
            extra=tuple(float(x) for x in extra), label=label or None,
        )

    @property
    def peer(self) -> str:
        """The endpoint on the other side of the monitored device."""
        return self.dst if self.src == self.device else self.src

    def features(self) -> list[float]:
        return [
            self.duration, float(self.pkt_count), self.byte_count, float(self.conn_state),
            float(PROTOCOLS.index(self.protocol)), self.flow_rate, *self.extra,
        ]

    def is_benign(self, benign_label: str = DEFAULT_BENIGN_LABEL) -> bool:
        return self.label is None or self.label.strip().lower() == benign_label.lower()


def feature_matrix(records: Sequence[FlowRecord]) -> np.ndarray:
    if not records:
        return np.empty((0, 0))
    return np.array([r.features() for r in records], dtype=float)


# --------------------------------------------------------------------------
# CSV ingestion


@dataclass
class ColumnMapping:
    """Which CSV columns feed which record fields.

    ``codes`` holds the categorical encodings (first-seen order). It is filled
    in while loading and should be saved alongside trained models so that
    scoring re-uses identical codes.
    """

    columns: dict[str, str] = field(default_factory=dict)
    device_value: str | None = None
    extra: list[str] | None = None
    categorical: list[str] = field(default_factory=list)
    ignore: list[str] = field(default_factory=list)
    benign_label: str = DEFAULT_BENIGN_LABEL
    codes: dict[str, dict[str, int]] = field(default_factory=dict)
    rejected: int = 0

    _OPTIONS = ("device_value", "extra", "categorical", "ignore", "benign_label", "codes")

    @classmethod
    def from_dict(cls, data: dict) -> "ColumnMapping":
        data = dict(data)
        options = {k: data.pop(k) for k in cls._OPTIONS if k in data}
        return cls(columns=data, **options)

    @classmethod
    def from_json(cls, path) -> "ColumnMapping":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        out: dict = dict(self.columns)
        if self.device_value is not None:
            out["device_value"] = self.device_value
        if self.extra is not None:
            out["extra"] = list(self.extra)
        for key in ("categorical", "ignore"):
            if getattr(self, key):
                out[key] = list(getattr(self, key))
        out["benign_label"] = self.benign_label
        out["codes"] = {k: dict(v) for k, v in self.codes.items()}
        return out

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def encode(self, column: str, value: str) -> int:
        table = self.codes.setdefault(column, {})
        if value not in table:
            table[value] = len(table)
        return table[value]


def canonical_mapping(extra_names: Sequence[str] = ()) -> ColumnMapping:
    cols = {name: name for name in CANONICAL_COLUMNS if name != "flow_rate"}
    cols["label"] = "label"
    return ColumnMapping(columns=cols, extra=list(extra_names), ignore=["flow_rate"])


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _parse_ts(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return datetime.fromisoformat(text).timestamp()


def load_flows(path, mapping: ColumnMapping) -> list[FlowRecord]:
    """Read a CSV file into validated flow records.

    Rows missing a mandatory field or failing validation are dropped and
    counted in ``mapping.rejected``.  Unmapped numeric columns become the
    ``extra`` feature vector unless ``mapping.extra`` lists them explicitly;
    their names are recorded in ``mapping.extra``.
    """
    path = Path(path)
    if not path.is_file():
        raise FlowDataError(f"cannot read flow file {path}")
    required = [m for m in MANDATORY if not (m == "device" and mapping.device_value is not None)]
    missing = [m for m in required if m not in mapping.columns]
    if missing:
        raise FlowDataError(f"missing mandatory column: {', '.join(missing)}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        rows = list(reader)
    absent = [c for c in mapping.columns.values() if c not in header]
    if mapping.extra:
        absent += [c for c in mapping.extra if c not in header]
    if absent:
        raise FlowDataError(f"mapping references absent column(s): {', '.join(absent)}")

    used = set(mapping.columns.values()) | set(mapping.ignore)
    if mapping.extra is None:
        candidates = [c for c in header if c not in used]
        extra = [
            c for c in candidates
            if c in mapping.categorical or all(_is_number(r[c]) for r in rows if r.get(c) not in ("", None))
        ]
        mapping.extra = extra
    extra = list(mapping.extra)

    col = mapping.columns
    records: list[FlowRecord] = []
    rejected = 0
    missing_extra = 0
    for row in rows:
        try:
            values = {k: (row.get(c) or "").strip() for k, c in col.items()}
            if any(not values[m] for m in required):
                rejected += 1
                continue
            conn = values.get("conn_state", "")
            if conn and not _is_number(conn):
                conn = mapping.encode("conn_state", conn)
            ex = []
            for name in extra:
                cell = (row.get(name) or "").strip()
                if not cell:
                    missing_extra += 1
                    ex.append(0.0)
                elif name in mapping.categorical:
                    ex.append(float(mapping.encode(name, cell)))
                else:
                    ex.append(float(cell))
            records.append(FlowRecord.make(
                ts=_parse_ts(values["ts"]),
                device=mapping.device_value if mapping.device_value is not None else values["device"],
                src=values["src"], dst=values["dst"], protocol=values["protocol"],
                duration=values["duration"], pkt_count=float(values["pkt_count"]),
                byte_count=values.get("byte_count") or 0.0,
                conn_state=float(conn) if conn != "" else 0,
                extra=ex, label=values.get("label") or None,
            ))
        except (ValueError, FlowDataError):
            rejected += 1
    if missing_extra:
        log.warning("%d missing extra feature values replaced by 0", missing_extra)
    if rejected:
        log.warning("rejected %d of %d rows from %s", rejected, len(rows), path)
    mapping.rejected = rejected
    if not records:
        raise FlowDataError(f"no valid rows in {path}")
    return records


def write_flows(path, records: Sequence[FlowRecord], extra_names: Sequence[str] = ()) -> None:
    """Write records as canonical flow CSV."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*CANONICAL_COLUMNS, *extra_names, "label"])
        for r in records:
            w.writerow([
                repr(r.ts), r.device, r.src, r.dst, r.protocol, repr(r.duration), r.pkt_count,
                repr(r.byte_count), r.conn_state, repr(r.flow_rate),
                *(repr(x) for x in r.extra), r.label or "",
            ])


def read_flows(path) -> tuple[list[FlowRecord], list[str]]:
    """Load a canonical flow CSV; returns the records and extra feature names."""
    with Path(path).open(newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh))
    extra = [h for h in header if h not in CANONICAL_COLUMNS and h != "label"]
    mapping = canonical_mapping(extra)
    return load_flows(path, mapping), extra


# --------------------------------------------------------------------------
# Partitioning and splits


@dataclass
class DeviceDataset:
    device: str
    benign: list[FlowRecord] = field(default_factory=list)
    anomalous: list[FlowRecord] = field(default_factory=list)
    feature_names: tuple[str, ...] = ()


def partition_by_device(flows: Sequence[FlowRecord], benign_label: str = DEFAULT_BENIGN_LABEL,
                        extra_names: Sequence[str] = ()) -> list[DeviceDataset]:
    """One dataset per device id, in order of first appearance."""
    names = (*BASE_FEATURES, *extra_names)
    out: dict[str, DeviceDataset] = {}
    for r in flows:
        ds = out.get(r.device)
        if ds is None:
            ds = out[r.device] = DeviceDataset(r.device, feature_names=names)
        (ds.benign if r.is_benign(benign_label) else ds.anomalous).append(r)
    return list(out.values())


@dataclass(frozen=True)
class SplitSpec:
    anomaly_ratio: float = 0.05
    seed: int = 0
    k: int = 10

    def __post_init__(self):
        if not 0 < self.anomaly_ratio < 0.5:
            raise ValueError(f"anomaly_ratio must be in (0, 0.5), got {self.anomaly_ratio}")
        if self.k < 2:
            raise ValueError(f"k must be >= 2, got {self.k}")


class EvalSplit(NamedTuple):
    train: list[FlowRecord]
    test: list[FlowRecord]
    achieved_ratio: float


MIN_BENIGN = 20


def _anomaly_count(n_benign: int, ratio: float, available: int) -> int:
    """Anomaly count whose share of the test set is closest to ``ratio``."""
    ideal = n_benign * ratio / (1 - ratio)
    candidates = {max(1, math.floor(ideal)), max(1, math.ceil(ideal))}
    best = min(candidates, key=lambda n: (abs(n / (n + n_benign) - ratio), n))
    return min(best, available)


def _sample_anomalies(anomalous, n_benign_test, spec: SplitSpec, rng) -> list[FlowRecord]:
    if not anomalous or n_benign_test == 0:
        return []
    n = _anomaly_count(n_benign_test, spec.anomaly_ratio, len(anomalous))
    ideal = n_benign_test * spec.anomaly_ratio / (1 - spec.anomaly_ratio)
    if n < round(ideal):
        log.warning("only %d anomalies available (wanted %.0f); using all", n, ideal)
    idx = np.sort(rng.choice(len(anomalous), size=n, replace=False))
    return [anomalous[i] for i in idx]


def _assemble(benign, train_idx, test_idx, anomalies) -> EvalSplit:
    train = [benign[i] for i in np.sort(train_idx)]
    test_benign = [benign[i] for i in np.sort(test_idx)]
    test = sorted(test_benign + anomalies, key=lambda r: r.ts)
    ratio = len(anomalies) / len(test) if test else 0.0
    return EvalSplit(train, test, ratio)


def make_eval_split(ds: DeviceDataset, spec: SplitSpec = SplitSpec()) -> EvalSplit:
    """Benign-only training set and a test set with ~``anomaly_ratio`` anomalies.

    One in ``spec.k`` benign records is held out for testing.
    """
    if len(ds.benign) < MIN_BENIGN:
        raise FlowDataError(f"{ds.device}: need >= {MIN_BENIGN} benign flows, have {len(ds.benign)}")
    if not ds.anomalous:
        raise FlowDataError(f"{ds.device}: no anomalous flows to evaluate against")
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(len(ds.benign))
    n_test = max(1, round(len(ds.benign) / spec.k))
    anomalies = _sample_anomalies(ds.anomalous, n_test, spec, rng)
    return _assemble(ds.benign, perm[n_test:], perm[:n_test], anomalies)


def kfold(ds: DeviceDataset, spec: SplitSpec = SplitSpec()) -> list[EvalSplit]:
    """k splits whose benign test folds partition the benign records."""
    if spec.k > len(ds.benign):
        raise FlowDataError(f"{ds.device}: k={spec.k} exceeds {len(ds.benign)} benign flows")
    perm = np.random.default_rng(spec.seed).permutation(len(ds.benign))
    folds = np.array_split(perm, spec.k)
    out = []
    for i, fold in enumerate(folds):
        rng = np.random.default_rng([spec.seed, i])
        train_idx = np.concatenate([f for j, f in enumerate(folds) if j != i])
        anomalies = _sample_anomalies(ds.anomalous, len(fold), spec, rng)
        out.append(_assemble(ds.benign, train_idx, fold, anomalies))
    return out
