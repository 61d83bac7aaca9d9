"""Anomaly detection and abductive diagnosis for smart-home network flows.

Typical use::

    from iotdiag import diagnose, reference_model, parse_atoms
    result = diagnose(reference_model(), parse_atoms("communicate(smart_speaker, trusted_app_server, 23, https, within_limit)."))
    print(result.to_text())
"""
from __future__ import annotations

__version__ = "0.1.0"

from .abduction import BENIGN, DIAGNOSED, UNEXPLAINED, DiagnosisResult, diagnose, recommend_controls
from .assets import control_catalog, reference_model, validate_assets
from .enrich import ContextConfig, RateFences, flows_to_atoms, learn_rate_fences, read_anomalies
from .flows import FlowRecord, SplitSpec, kfold, load_flows, make_eval_split, partition_by_device
from .forest import ForestModel, ForestParams, c_factor, fit_forest, score, score_batch
from .logic import parse_atoms, parse_program
from .metrics import RelabelMap, detection_metrics, diagnosis_metrics
from .thresholds import ThresholdSpec, apply_threshold, fit_threshold
