"""Per-device detector bundles and the train / detect / diagnose / evaluate flow."""
from __future__ import annotations

import json
import logging
import math
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .abduction import DIAGNOSED, DiagnosisResult, diagnose, recommend_controls
from .enrich import CommAtom, ContextConfig, RateFences, flows_to_atoms, learn_rate_fences, read_anomalies
from .flows import (BASE_FEATURES, DEFAULT_BENIGN_LABEL, MIN_BENIGN, FlowDataError, FlowRecord,
                    SplitSpec, feature_matrix, kfold, partition_by_device)
from .forest import ForestModel, ForestParams, fit_matrix
from .logic import Atom, Program
from .metrics import (DIAGNOSIS_CLASSES, MetricsReport, MetricsRow, RelabelMap, detection_metrics,
                      diagnosis_metrics)
from .thresholds import FittedThreshold, ThresholdSpec, apply_batch, fit_threshold

log = logging.getLogger(__name__)

BUNDLE_VERSION = 1


class MissingModelError(KeyError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    forest: ForestParams = ForestParams()
    threshold: ThresholdSpec = ThresholdSpec()
    # detector inputs by name; None means every numeric column
    features: tuple[str, ...] | None = None
    validation_fraction: float = 0.1
    fence_mult: float = 1.5

    def __post_init__(self):
        if not 0 < self.validation_fraction < 0.5:
            raise ValueError("validation_fraction must be in (0, 0.5)")
        if self.features is not None:
            object.__setattr__(self, "features", tuple(self.features))

    def with_seed(self, seed: int) -> "DetectorConfig":
        f = self.forest
        return DetectorConfig(ForestParams(f.n_trees, f.subsample, seed), self.threshold,
                              self.features, self.validation_fraction, self.fence_mult)

    def to_dict(self) -> dict:
        return {
            "forest": asdict(self.forest), "threshold": asdict(self.threshold),
            "features": list(self.features) if self.features is not None else None,
            "validation_fraction": self.validation_fraction, "fence_mult": self.fence_mult,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        return cls(
            ForestParams(**d.get("forest", {})), ThresholdSpec(**d.get("threshold", {})),
            d.get("features"), d.get("validation_fraction", 0.1), d.get("fence_mult", 1.5),
        )


def all_feature_names(extra_names: Sequence[str] = ()) -> tuple[str, ...]:
    return (*BASE_FEATURES, *extra_names)


@dataclass
class DeviceModel:
    """Forest, fitted score cut-offs and rate fences for one device."""

    device: str
    forest: ForestModel
    threshold: FittedThreshold
    fences: RateFences
    record_features: tuple[str, ...]  # layout of FlowRecord.features()
    n_train: int = 0

    @property
    def columns(self) -> list[int]:
        return [self.record_features.index(n) for n in self.forest.feature_names]

    def matrix(self, records: Sequence[FlowRecord]) -> np.ndarray:
        X = feature_matrix(records)
        if X.shape[1] != len(self.record_features):
            raise FlowDataError(
                f"{self.device}: flows carry {X.shape[1]} features, model expects {len(self.record_features)}"
            )
        return X[:, self.columns]

    def scores(self, records: Sequence[FlowRecord]) -> np.ndarray:
        if not records:
            return np.empty(0)
        return self.forest.score_matrix(self.matrix(records))

    def to_dict(self) -> dict:
        return {
            "bundle_version": BUNDLE_VERSION,
            "device": self.device,
            "record_features": list(self.record_features),
            "n_train": self.n_train,
            "threshold": self.threshold.to_dict(),
            "fences": self.fences.to_dict(),
            "forest": self.forest.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceModel":
        if d.get("bundle_version") != BUNDLE_VERSION:
            raise ValueError(f"unsupported model bundle version {d.get('bundle_version')!r}")
        return cls(
            d["device"], ForestModel.from_dict(d["forest"]), FittedThreshold.from_dict(d["threshold"]),
            RateFences.from_dict(d["fences"]), tuple(d["record_features"]), d.get("n_train", 0),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path) -> "DeviceModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def model_path(model_dir, device: str) -> Path:
    return Path(model_dir) / f"{device}.model.json"


def load_models(model_dir, devices: Iterable[str] | None = None) -> dict[str, DeviceModel]:
    d = Path(model_dir)
    if devices is None:
        return {m.device: m for m in (DeviceModel.load(p) for p in sorted(d.glob("*.model.json")))}
    out = {}
    for dev in devices:
        p = model_path(d, dev)
        if not p.exists():
            raise MissingModelError(f"no model for device {dev!r} in {d}")
        out[dev] = DeviceModel.load(p)
    return out


def train_device(device: str, benign: Sequence[FlowRecord], cfg: DetectorConfig,
                 extra_names: Sequence[str] = ()) -> DeviceModel:
    """Forest on most benign flows; cut-offs from the held-out validation slice."""
    if len(benign) < MIN_BENIGN:
        raise FlowDataError(f"{device}: need >= {MIN_BENIGN} benign flows, have {len(benign)}")
    names = all_feature_names(extra_names)
    selected = tuple(cfg.features) if cfg.features is not None else names
    missing = [n for n in selected if n not in names]
    if missing:
        raise FlowDataError(f"unknown detector feature(s): {', '.join(missing)}")
    X = feature_matrix(benign)[:, [names.index(n) for n in selected]]
    perm = np.random.default_rng([cfg.forest.seed, 1]).permutation(len(X))
    n_val = max(2, int(round(cfg.validation_fraction * len(X))))
    forest = fit_matrix(X[perm[n_val:]], cfg.forest, selected)
    threshold = fit_threshold(forest.score_matrix(X[perm[:n_val]]), cfg.threshold)
    fences = learn_rate_fences(benign, cfg.fence_mult)
    return DeviceModel(device, forest, threshold, fences, names, len(benign) - n_val)


def _pool_map(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def train_models(flows: Sequence[FlowRecord], cfg: DetectorConfig, extra_names: Sequence[str] = (),
                 benign_label: str = DEFAULT_BENIGN_LABEL, devices: Iterable[str] | None = None,
                 jobs: int = 1) -> tuple[dict[str, DeviceModel], dict[str, str]]:
    """One model per device; failures are collected rather than raised."""
    wanted = set(devices) if devices is not None else None
    datasets = [ds for ds in partition_by_device(flows, benign_label, extra_names)
                if wanted is None or ds.device in wanted]

    def work(ds):
        try:
            return ds.device, train_device(ds.device, ds.benign, cfg, extra_names), None
        except (FlowDataError, ValueError) as exc:
            return ds.device, None, str(exc)

    models, skipped = {}, {}
    for device, model, err in _pool_map(work, datasets, jobs):
        if model is None:
            log.warning("skipping %s: %s", device, err)
            skipped[device] = err
        else:
            models[device] = model
    return models, skipped


# --------------------------------------------------------------------------
# Detection


@dataclass
class Detection:
    records: list[FlowRecord]
    scores: np.ndarray
    flagged: np.ndarray

    @property
    def flagged_records(self) -> list[FlowRecord]:
        return [r for r, f in zip(self.records, self.flagged) if f]

    def summary(self) -> str:
        return f"flagged {int(self.flagged.sum())}/{len(self.records)} flows"


def detect(flows: Sequence[FlowRecord], models: dict[str, DeviceModel]) -> Detection:
    """Score every flow with its device's model; input order is preserved."""
    flows = list(flows)
    scores = np.zeros(len(flows))
    flagged = np.zeros(len(flows), dtype=bool)
    by_device: dict[str, list[int]] = {}
    for i, r in enumerate(flows):
        by_device.setdefault(r.device, []).append(i)
    for device, idx in by_device.items():
        model = models.get(device)
        if model is None:
            raise MissingModelError(f"no model for device {device!r}")
        s = model.scores([flows[i] for i in idx])
        scores[idx] = s
        flagged[idx] = apply_batch(model.threshold, s)
    return Detection(flows, scores, flagged)


def enrich(flagged: Sequence[FlowRecord], models: dict[str, DeviceModel], ctx: ContextConfig) -> list[CommAtom]:
    return flows_to_atoms(flagged, {d: m.fences for d, m in models.items()}, ctx)


def group_label(atom: CommAtom, benign_label: str = DEFAULT_BENIGN_LABEL) -> str | None:
    """Most common attack label among the group's flows; None when all benign."""
    labels = [r.label for r in atom.flows if not r.is_benign(benign_label)]
    return Counter(labels).most_common(1)[0][0] if labels else None


class DiagnosisCache:
    """Memoised diagnose(); anomalies with identical atoms share a result."""

    def __init__(self, program: Program, catalog: dict | None = None):
        self.program = program
        self.catalog = catalog
        self._memo: dict[frozenset, DiagnosisResult] = {}
        self.latencies: list[float] = []

    def __call__(self, atoms: Iterable[Atom]) -> DiagnosisResult:
        atoms = list(atoms)
        key = frozenset(atoms)
        hit = self._memo.get(key)
        if hit is None:
            hit = diagnose(self.program, atoms)
            if self.catalog is not None and hit.status == DIAGNOSED:
                hit.controls = recommend_controls(hit, self.catalog)
            self.latencies.append(hit.elapsed)
            self._memo[key] = hit
        return hit


# --------------------------------------------------------------------------
# Evaluation


@dataclass
class EvalResult:
    detection: MetricsReport
    diagnosis: MetricsReport
    latencies: list[float] = field(default_factory=list)
    elapsed: float = 0.0

    def diagnosis_row(self, name: str = "micro (groups)") -> MetricsRow:
        for r in self.diagnosis.aggregate():
            if r.attack == name:
                return r
        raise KeyError(name)

    def detection_row(self, attack: str) -> MetricsRow:
        for r in self.detection.aggregate():
            if r.attack == attack:
                return r
        raise KeyError(attack)

    def summary(self) -> dict:
        lat = np.array(self.latencies) if self.latencies else np.zeros(1)
        return {
            "elapsed_s": self.elapsed,
            "diagnose_latency_s": {"mean": float(lat.mean()), "max": float(lat.max()), "n": len(self.latencies)},
        }


def evaluate(flows: Sequence[FlowRecord], program: Program, ctx: ContextConfig,
             cfg: DetectorConfig = DetectorConfig(), split: SplitSpec = SplitSpec(),
             extra_names: Sequence[str] = (), extra_atoms: Sequence[tuple[str, str]] = (),
             relabel: RelabelMap | None = None, benign_label: str = DEFAULT_BENIGN_LABEL,
             classes: Sequence[str] = DIAGNOSIS_CLASSES, jobs: int = 1) -> EvalResult:
    """k-fold detection scores plus diagnosis of every fold's flagged stream.

    Detection: per device and attack, a benign fold mixed with sampled
    anomalies at ``split.anomaly_ratio``.  Diagnosis: the fold's benign test
    flows plus *all* attack flows of the device, so each time window keeps
    its full set of sources.  ``extra_atoms`` (text, label) pairs are
    diagnosed once per fold alongside.
    """
    t0 = time.perf_counter()
    relabel = relabel or RelabelMap()
    for r in flows:
        if not r.is_benign(benign_label):
            relabel(r.label)  # fail fast on unmapped labels
    extra = [(anomaly, label) for text, label in extra_atoms for anomaly in read_anomalies(text)]
    for _, label in extra:
        relabel(label)
    cache = DiagnosisCache(program)
    datasets = [ds for ds in partition_by_device(flows, benign_label, extra_names) if ds.anomalous]

    def fold_work(item):
        ds, i, sp = item
        model = train_device(ds.device, sp.train, cfg.with_seed(split.seed + i), extra_names)
        s = model.scores(sp.test)
        pred = apply_batch(model.threshold, s)
        rows = []
        for attack in dict.fromkeys(r.label for r in ds.anomalous):
            keep = [j for j, r in enumerate(sp.test) if r.is_benign(benign_label) or r.label == attack]
            y = [not sp.test[j].is_benign(benign_label) for j in keep]
            row = detection_metrics(pred[keep], y, s[keep])
            row.attack, row.device, row.fold = attack, ds.device, i
            rows.append(row)
        stream = sorted([r for r in sp.test if r.is_benign(benign_label)] + ds.anomalous, key=lambda r: r.ts)
        stream_flags = apply_batch(model.threshold, model.scores(stream))
        return i, rows, stream, stream_flags, model

    items = [(ds, i, sp) for ds in datasets for i, sp in enumerate(kfold(ds, split))]
    outputs = _pool_map(fold_work, items, jobs)

    detection = MetricsReport("Detection")
    per_fold: dict[int, list] = {}
    for i, rows, stream, flags, model in outputs:
        detection.rows.extend(rows)
        per_fold.setdefault(i, []).append((stream, flags, model))

    diagnosis = MetricsReport("Diagnosis")
    for i in sorted(per_fold):
        group_results, group_truth = [], []
        flow_results, flow_truth = [], []
        for stream, flags, model in per_fold[i]:
            flagged = [r for r, f in zip(stream, flags) if f]
            atoms = flows_to_atoms(flagged, model.fences, ctx)
            verdict: dict[int, DiagnosisResult] = {}
            for a in atoms:
                res = cache(a.atoms())
                group_results.append(res)
                group_truth.append(group_label(a, benign_label))
                for r in a.flows:
                    verdict[id(r)] = res
            for r in stream:
                flow_results.append(verdict.get(id(r)))
                flow_truth.append(None if r.is_benign(benign_label) else r.label)
        for anomaly, label in extra:
            group_results.append(cache(anomaly))
            group_truth.append(label)
        for name, res, truth in (("micro (groups)", group_results, group_truth),
                                 ("micro (flows)", flow_results, flow_truth)):
            row = diagnosis_metrics(res, truth, relabel, classes)
            row.attack, row.device, row.fold = name, "all", i
            diagnosis.rows.append(row)
        for c in classes:
            row = diagnosis_metrics(group_results, group_truth, relabel, [c])
            row.attack, row.device, row.fold = c, "all", i
            diagnosis.rows.append(row)
    return EvalResult(detection, diagnosis, cache.latencies, time.perf_counter() - t0)
