from __future__ import annotations

import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.metrics import average_precision_score

from iotdiag.abduction import BENIGN, DIAGNOSED, UNEXPLAINED, DiagnosisResult
from iotdiag.metrics import (
    DDOS_BOTNET, DIAGNOSIS_CLASSES, DOS, MITM_MALWARE, RECON_BRUTEFORCE, MetricsReport, MetricsRow,
    RelabelMap, UnmappedLabelError, average_precision, detection_metrics, diagnosis_metrics,
)


def test_counts_and_prf():
    row = detection_metrics([1, 1, 0, 0, 1], [1, 0, 1, 0, 1])
    assert (row.tp, row.fp, row.fn, row.tn) == (2, 1, 1, 1)
    assert row.precision == pytest.approx(2 / 3)
    assert row.recall == pytest.approx(2 / 3)
    assert math.isnan(row.auc_pr)


def test_no_predictions_gives_zero():
    row = detection_metrics([0, 0], [1, 0])
    assert (row.precision, row.recall, row.f1) == (0.0, 0.0, 0.0)


def test_length_mismatch():
    with pytest.raises(ValueError):
        detection_metrics([1], [1, 0])


def test_perfect_ranking_ap():
    # lower score = more anomalous
    assert average_precision([1, 1, 0, 0, 0], [-0.4, -0.3, 0.1, 0.2, 0.3]) == 1.0


def test_ap_nan_without_positives():
    assert math.isnan(average_precision([0, 0, 0], [0.1, 0.2, 0.3]))
    assert math.isnan(detection_metrics([0, 1], [0, 0], [0.1, -0.2]).auc_pr)


@given(st.lists(st.tuples(st.booleans(), st.integers(-5, 5)), min_size=2, max_size=60))
def test_ap_matches_sklearn(pairs):
    y = np.array([p[0] for p in pairs])
    s = np.array([p[1] / 10 for p in pairs])
    if not y.any():
        return
    assert average_precision(y, s) == pytest.approx(average_precision_score(y, -s), abs=1e-12)


@given(st.integers(0, 10**6), st.integers(0, 10**6), st.integers(0, 10**6))
def test_f1_harmonic_identity(tp, fp, fn):
    truth = [1] * tp + [0] * fp + [1] * fn
    pred = [1] * tp + [1] * fp + [0] * fn
    if len(truth) > 5000:
        return
    row = detection_metrics(pred, truth)
    if row.precision + row.recall:
        assert row.f1 == pytest.approx(2 * row.precision * row.recall / (row.precision + row.recall), abs=1e-12)


def test_relabel_defaults():
    r = RelabelMap()
    assert r("DDoS HTTP Flood") == DDOS_BOTNET
    assert r("mirai udp flood") == DDOS_BOTNET
    assert r("Port Scan") == RECON_BRUTEFORCE
    assert r("DNS Spoofing") == MITM_MALWARE
    assert r("DoS HTTP Flood") == DOS
    with pytest.raises(UnmappedLabelError):
        r("Teleportation")


def test_relabel_first_match_wins():
    r = RelabelMap([("dos*", "A"), ("dos http*", "B")])
    assert r("DoS HTTP Flood") == "A"


def _res(cls):
    return DiagnosisResult(DIAGNOSED, attack_class=cls)


def test_diagnosis_micro():
    results = [_res(DOS), _res(DDOS_BOTNET), DiagnosisResult(BENIGN), None,
               DiagnosisResult(UNEXPLAINED), _res(DOS)]
    truth = ["DoS HTTP Flood", "DoS HTTP Flood", None, None, "Port Scan", None]
    row = diagnosis_metrics(results, truth, classes=DIAGNOSIS_CLASSES)
    # TP: first; FP: second (wrong class) and last; FN: second and fifth
    assert (row.tp, row.fp, row.fn, row.tn) == (1, 2, 2, 2)


def test_diagnosis_classes_restrict():
    row = diagnosis_metrics([_res("Vulnerability/Malware")], ["Ultrasonic Voice Command"], classes=DIAGNOSIS_CLASSES)
    assert (row.tp, row.fp, row.fn) == (0, 0, 0)


def test_report_aggregate_and_write(tmp_path):
    rep = MetricsReport("Detection", [
        MetricsRow("dos", "cam", 1.0, 0.5, 2 / 3, math.nan, fold=0),
        MetricsRow("dos", "cam", 0.5, 1.0, 2 / 3, 0.8, fold=1),
    ])
    (agg,) = rep.aggregate()
    assert (agg.precision, agg.recall, agg.auc_pr) == (0.75, 0.75, 0.8)
    rep.write(tmp_path, "det")
    data = json.loads((tmp_path / "det.json").read_text())
    assert data["folds"][0]["auc_pr"] is None
    table = (tmp_path / "det.txt").read_text()
    assert "AUC PR" in table and "0.750" in table
