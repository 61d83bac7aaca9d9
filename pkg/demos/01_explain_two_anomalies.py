"""Explain two hand-written anomalies against the bundled smart-home model.

A smart speaker talking at 23:00, then a multi-source flood that knocked
the hue bridge offline.  Each gets the violated requirement, the attack
class and the recommended controls.
"""
from iotdiag import control_catalog, diagnose, read_anomalies, recommend_controls, reference_model

TRACES = """
communicate(smart_speaker, trusted_app_server, 23, https, within_limit).
not available(philipshuebridge).
communicate(multiple_endpoints, philipshuebridge, 10, https, exceeds_limit).
available(amazonplug).
communicate(amazonplug-cloud, amazonplug, 14, https, within_limit).
"""

model = reference_model()
catalog = control_catalog()

for anomaly in read_anomalies(TRACES):
    print(" ".join(f"{a}." for a in anomaly))
    result = diagnose(model, anomaly)
    print(result.to_text())
    if result.status == "diagnosed":
        for c in recommend_controls(result, catalog):
            print("  control:", c)
    print(f"  ({result.elapsed * 1e3:.1f} ms)\n")
