from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from iotdiag.enrich import (
    EXCEEDS_LIMIT, MALICIOUS, MULTIPLE, SINGLE, WITHIN_LIMIT, CommAtom, ContextConfig, RateFences,
    classify_rate, classify_source, flows_to_atoms, format_atoms, group_flagged, hour_of_day,
    learn_rate_fences, load_blacklist, probe_availability, read_anomalies,
)
from iotdiag.flows import FlowRecord
from iotdiag.logic import Atom

T10 = 1672567200.0  # 10:00 UTC


def rec(ts=T10, src="cloud", dst="cam", rate=10.0, protocol="https", device="cam"):
    return FlowRecord.make(ts, device, src, dst, protocol, 10 / rate, 10)


FENCES = RateFences(0.0, 20.0, 8.0, 12.0, 4.0)


def test_fences_from_benign():
    f = learn_rate_fences([rec(rate=r) for r in (2, 4, 6, 8, 10, 12, 14, 16, 18)])
    assert (f.q1, f.q3, f.lower, f.upper) == pytest.approx((6, 14, 0, 26))


def test_fences_need_data():
    with pytest.raises(ValueError):
        learn_rate_fences([rec()])


@given(st.lists(st.floats(0.01, 1e4), min_size=4, max_size=50))
def test_fence_lower_clamped(rates):
    f = learn_rate_fences([rec(rate=r) for r in rates])
    assert 0 <= f.lower <= f.q1 <= f.q3 <= f.upper


def test_rate_flag_strict():
    assert classify_rate(FENCES, 20.0) == WITHIN_LIMIT
    assert classify_rate(FENCES, 20.01) == EXCEEDS_LIMIT


def test_source_precedence():
    cfg = ContextConfig(blacklist={"c2"})
    bad = [rec(src="c2", rate=1000), rec(src="bot1", rate=1000), rec(src="bot2", rate=1000)]
    assert classify_source(bad, "cam", cfg, FENCES) == MALICIOUS
    assert classify_source(bad[1:], "cam", cfg, FENCES) == MULTIPLE
    assert classify_source(bad[1:2], "cam", cfg, FENCES) == SINGLE
    assert classify_source([rec(src="cloud")], "cam", cfg, FENCES) == "cloud"


def test_malicious_as_destination():
    cfg = ContextConfig(blacklist={"c2"})
    assert classify_source([rec(src="cam", dst="c2")], "cam", cfg, FENCES) == MALICIOUS


def test_only_exceeding_sources_count():
    cfg = ContextConfig()
    flows = [rec(src="bot", rate=1000), rec(src="cloud", rate=5)]
    assert classify_source(flows, "cam", cfg, FENCES) == SINGLE


def test_several_within_limit_sources_are_multiple():
    flows = [rec(src="a"), rec(src="b")]
    assert classify_source(flows, "cam", ContextConfig(), FENCES) == MULTIPLE


def test_source_rejects_mixed_devices():
    with pytest.raises(ValueError):
        classify_source([rec(), rec(device="tv", dst="tv")], "cam", ContextConfig())


def test_reputation_hooks():
    cfg = ContextConfig(reputation=lambda e: True if e == "evil" else None, strict_reputation=True,
                        trusted={"cloud"})
    assert cfg.is_malicious("evil")
    assert not cfg.is_malicious("cloud")
    assert cfg.is_malicious("unknown")


def test_blacklist_file(tmp_path):
    p = tmp_path / "bl.txt"
    p.write_text("# header\nc2  # beacon\n\nrogue\n")
    assert load_blacklist(p) == {"c2", "rogue"}


def test_availability():
    cfg = ContextConfig()
    assert probe_availability("cam", cfg, EXCEEDS_LIMIT, MULTIPLE) is False
    assert probe_availability("cam", cfg, EXCEEDS_LIMIT, "rpi") is True
    assert probe_availability("cam", ContextConfig(assume_attack_success=False), EXCEEDS_LIMIT, SINGLE)
    assert probe_availability("cam", ContextConfig(availability_overrides={"cam": True}), EXCEEDS_LIMIT, SINGLE)


def test_grouping_by_device_and_window():
    flows = [rec(ts=T10 + 1), rec(ts=T10 + 9), rec(ts=T10 + 11), rec(ts=T10 + 2, device="tv", dst="tv")]
    groups = group_flagged(flows, 10)
    assert [len(g) for g in groups] == [2, 1, 1]


def test_flows_to_atoms():
    flows = [rec(src=f"bot{i}", rate=1000, ts=T10 + i) for i in range(5)]
    (a,) = flows_to_atoms(flows, {"cam": FENCES}, ContextConfig())
    assert a.to_text() == "communicate(multiple_endpoints,cam,10,https,exceeds_limit)."
    assert len(a.flows) == 5


def test_comm_atom_validation():
    with pytest.raises(ValueError):
        CommAtom("a", "b", 24, "https", WITHIN_LIMIT, True)
    with pytest.raises(ValueError):
        CommAtom("a", "a", 1, "https", WITHIN_LIMIT, True)
    with pytest.raises(ValueError):
        CommAtom("a", "b", 1, "https", "fast", True)


def test_hour_utc():
    assert hour_of_day(T10) == 10
    assert hour_of_day(T10 + 13 * 3600) == 23


def test_format_and_read_back():
    atoms = [CommAtom("rpi", "cam", 10, "https", EXCEEDS_LIMIT, True),
             CommAtom(SINGLE, "tv", 3, "udp", EXCEEDS_LIMIT, False)]
    text = format_atoms(atoms, ["Port Scan", None])
    assert "% Port Scan" in text
    assert read_anomalies(text) == [a.atoms() for a in atoms]


def test_read_anomalies_drops_absent_and_rejects_conflict():
    text = "not available(cam). communicate(single_endpoint, cam, 10, https, exceeds_limit)."
    assert read_anomalies(text) == [[Atom("communicate", ("single_endpoint", "cam", 10, "https", "exceeds_limit"))]]
    with pytest.raises(ValueError):
        read_anomalies("available(cam). not available(cam). communicate(a, cam, 1, https, within_limit).")


_names = st.sampled_from(["cam", "tv", "plug", "rpi-17-1", "bot_3"])


@given(_names, _names, st.integers(0, 23), st.sampled_from(["https", "udp", "dns"]),
       st.sampled_from([WITHIN_LIMIT, EXCEEDS_LIMIT]), st.booleans())
def test_atom_text_round_trip(src, dst, hour, proto, flag, avail):
    if src == dst:
        return
    a = CommAtom(src, dst, hour, proto, flag, avail)
    assert read_anomalies(a.to_text()) == [a.atoms()]
