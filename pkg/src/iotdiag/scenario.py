"""Seeded synthetic smart-home traffic with labelled attacks.

Benign flows arrive as a Poisson process per device; every flow's packet
rate is the profile rate with +-20% jitter.  Attacks overlay extra flows
(or, for the ultrasonic case, a single actuation atom) on their target.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .flows import FlowRecord, write_flows

EXTRA_FEATURES = ("dst_port", "pkt_size_mean", "pkt_size_std", "iat_cv")
# Continuous, mutually independent columns the detector uses on generated
# traffic.  Packet and byte counts are products of these and add skew.
DETECTOR_FEATURES = ("duration", "flow_rate", "pkt_size_mean", "pkt_size_std", "iat_cv")
DAY_START = 1672567200.0  # 2023-01-01 10:00:00 UTC

ATTACK_KINDS = (
    "dos_http_flood", "ddos_http_flood", "port_scan", "mirai_udp",
    "c2_beacon", "dns_spoof", "upload", "ultrasonic",
)
FLOOD_KINDS = frozenset({"dos_http_flood", "ddos_http_flood", "mirai_udp"})
MULTI_SOURCE_KINDS = frozenset({"ddos_http_flood", "mirai_udp"})

DEFAULT_LABELS = {
    "dos_http_flood": "DoS HTTP Flood",
    "ddos_http_flood": "DDoS HTTP Flood",
    "port_scan": "Recon Port Scan",
    "mirai_udp": "Mirai UDP Plain",
    "c2_beacon": "C&C Beacon",
    "dns_spoof": "DNS Spoofing",
    "upload": "Upload Attack",
    "ultrasonic": "Ultrasonic Voice Command Attack",
}

# endpoints the low-and-slow attacks talk to; all end up on the blacklist
MALICIOUS_PEERS = {"c2_beacon": "c2c_server1", "dns_spoof": "rogue-dns", "upload": "exfil-server"}
ULTRASONIC_ATOM = "communicate(smart_speaker, trusted_app_server, 23, https, within_limit)."

_PROTOCOL_PORT = {"https": 443, "dns": 53, "udp": 123}


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    rate: float = 20.0  # mean packets/s within a flow
    pkt_size: float = 300.0  # mean bytes per packet
    flow_interval: float = 3.0  # mean seconds between flow starts
    protocols: dict = field(default_factory=lambda: {"https": 0.7, "dns": 0.2, "udp": 0.1})
    peers: tuple[str, ...] = ()
    active_hours: tuple[int, int] = (0, 24)

    def __post_init__(self):
        if self.rate <= 0 or self.flow_interval <= 0 or self.pkt_size <= 0:
            raise ValueError(f"{self.name}: rate, pkt_size and flow_interval must be positive")
        unknown = set(self.protocols) - set(_PROTOCOL_PORT)
        if unknown:
            raise ValueError(f"{self.name}: unsupported benign protocols {sorted(unknown)}")
        object.__setattr__(self, "peers", tuple(self.peers) or (f"{self.name}-cloud", "router"))
        object.__setattr__(self, "active_hours", tuple(self.active_hours))


@dataclass(frozen=True)
class AttackSpec:
    kind: str
    target: str
    start: float
    duration: float = 120.0
    intensity: float = 50.0
    n_sources: int = 12
    label: str | None = None

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.duration <= 0 or self.start < 0:
            raise ValueError("attack start must be >= 0 and duration > 0")
        if self.kind in FLOOD_KINDS and self.intensity <= 1:
            raise ValueError(f"{self.kind}: intensity must exceed 1")
        if self.kind in MULTI_SOURCE_KINDS and self.n_sources < 10:
            raise ValueError(f"{self.kind}: needs at least 10 sources")

    @property
    def name(self) -> str:
        return self.label or DEFAULT_LABELS[self.kind]


@dataclass(frozen=True)
class ScenarioSpec:
    seed: int = 0
    duration: float = 3600.0
    devices: tuple[DeviceProfile, ...] = ()
    attacks: tuple[AttackSpec, ...] = ()
    t0: float = DAY_START

    def __post_init__(self):
        object.__setattr__(self, "devices", tuple(self.devices))
        object.__setattr__(self, "attacks", tuple(self.attacks))
        names = [d.name for d in self.devices]
        if len(set(names)) != len(names):
            raise ValueError("duplicate device profile")
        by_target: dict[str, list[AttackSpec]] = {}
        for a in self.attacks:
            if a.kind != "ultrasonic" and a.target not in names:
                raise ValueError(f"attack target {a.target!r} has no device profile")
            if a.start + a.duration > self.duration:
                raise ValueError(f"{a.kind} on {a.target} runs past the scenario end")
            by_target.setdefault(a.target, []).append(a)
        for target, attacks in by_target.items():
            attacks = sorted(attacks, key=lambda a: a.start)
            for prev, nxt in zip(attacks, attacks[1:]):
                if nxt.start < prev.start + prev.duration:
                    raise ValueError(f"overlapping attacks on {target}")

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        d["devices"] = tuple(DeviceProfile(**x) for x in d.get("devices", ()))
        d["attacks"] = tuple(AttackSpec(**x) for x in d.get("attacks", ()))
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ScenarioSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def benign_only(self) -> "ScenarioSpec":
        return replace(self, attacks=())


@dataclass
class Scenario:
    flows: list[FlowRecord]
    extra_atoms: list[tuple[str, str]]  # (atom text, label)
    blacklist: list[str]
    availability: dict[str, bool]
    extra_names: tuple[str, ...] = EXTRA_FEATURES

    @property
    def truth(self) -> list[str | None]:
        return [r.label for r in self.flows]


# --------------------------------------------------------------------------
# Generators


def _flow(ts, device, src, dst, proto, rate, pkts, bpp, conn_state, port, size_std, iat_cv,
          label=None) -> FlowRecord:
    byte_count = max(1, round(pkts * bpp))
    return FlowRecord.make(
        ts, device, src, dst, proto, pkts / rate, pkts, byte_count=byte_count,
        conn_state=conn_state, label=label,
        extra=(port, round(byte_count / pkts, 3), round(size_std, 3), round(iat_cv, 4)),
    )


def _benign_flows(p: DeviceProfile, spec: ScenarioSpec, rng: np.random.Generator) -> list[FlowRecord]:
    names = list(p.protocols)
    weights = np.array([p.protocols[k] for k in names], dtype=float)
    weights /= weights.sum()
    lo, hi = p.active_hours
    out = []
    t = rng.exponential(p.flow_interval)
    while t < spec.duration:
        ts = spec.t0 + t
        hour = int(ts // 3600) % 24
        if lo <= hour < hi:
            proto = names[rng.choice(len(names), p=weights)]
            port = _PROTOCOL_PORT[proto]
            rate = p.rate * rng.uniform(0.8, 1.2)
            pkts = max(1, int(round(rate * rng.uniform(2.0, 10.0))))
            peer = p.peers[rng.integers(len(p.peers))]
            src, dst = (p.name, peer) if rng.random() < 0.7 else (peer, p.name)
            bpp = p.pkt_size * rng.uniform(0.8, 1.2)
            out.append(_flow(ts, p.name, src, dst, proto, rate, pkts, bpp, 0, port,
                             rng.uniform(20.0, 80.0), rng.uniform(0.2, 1.0)))
        t += rng.exponential(p.flow_interval)
    return out


def _tile(rng, start: float, end: float, dur_lo: float, dur_hi: float):
    """Back-to-back (start, duration) slots covering [start, end)."""
    t = start
    while t < end:
        d = min(rng.uniform(dur_lo, dur_hi), end - t)
        if d <= 0:
            break
        yield t, d
        t += d


def _attack_flows(a: AttackSpec, prof: DeviceProfile, spec: ScenarioSpec,
                  rng: np.random.Generator) -> list[FlowRecord]:
    # Shapes sit outside the benign ranges of duration, packet/byte counts
    # and rate, each in a direction that matches the attack.
    t0, t1 = spec.t0 + a.start, spec.t0 + a.start + a.duration
    base, size = prof.rate, prof.pkt_size
    out: list[FlowRecord] = []

    def add(ts, src, dst, proto, rate, dur, bpp, conn_state, port):
        pkts = max(1, int(round(rate * dur)))
        out.append(_flow(ts, a.target, src, dst, proto, rate, pkts, bpp, conn_state, port,
                         rng.uniform(0.0, 5.0), rng.uniform(0.0, 0.05), a.name))

    if a.kind == "dos_http_flood":
        for ts, d in _tile(rng, t0, t1, 10.5, 14.0):
            add(ts, "attacker-1", a.target, "https", a.intensity * base * rng.uniform(0.9, 1.1),
                d, size * rng.uniform(1.3, 1.5), 2, 443)
    elif a.kind in MULTI_SOURCE_KINDS:
        proto = "udp" if a.kind == "mirai_udp" else "https"
        for i in range(a.n_sources):
            src = f"bot-{i + 1:02d}"
            for ts, d in _tile(rng, t0 + rng.uniform(0, 2.0), t1, 10.5, 14.0):
                port = int(rng.integers(1024, 65536)) if proto == "udp" else 443
                add(ts, src, a.target, proto, a.intensity * base / a.n_sources * rng.uniform(0.9, 1.1),
                    d, size * rng.uniform(1.3, 1.5), 2, port)
    elif a.kind == "port_scan":
        ports = rng.choice(np.arange(1, 65536), size=int(a.duration / 0.1) + 1, replace=False)
        t, i = t0, 0
        while t < t1:
            pkts = int(rng.integers(1, 3))
            dur = rng.uniform(0.0005, 0.002)
            out.append(_flow(t, a.target, "rpi", a.target, "tcp_other", pkts / dur, pkts, 60.0, 3,
                             int(ports[i]), 0.0, 0.0, a.name))
            t += rng.uniform(0.1, 0.3)
            i += 1
    elif a.kind == "c2_beacon":
        # sparse keep-alives: long, slow and tiny
        t = t0
        while t < t1:
            add(t, a.target, MALICIOUS_PEERS[a.kind], "https", 0.02 * base * rng.uniform(0.9, 1.1),
                rng.uniform(30.0, 60.0), 0.3 * size, 0, 4444)
            t += rng.uniform(20.0, 30.0)
    elif a.kind == "dns_spoof":
        # short bursts of oversized answers from a rogue resolver
        t = t0
        while t < t1:
            add(t, a.target, MALICIOUS_PEERS[a.kind], "dns", 0.3 * base * rng.uniform(0.9, 1.1),
                rng.uniform(0.2, 0.5), 0.25 * size, 0, 53)
            t += rng.uniform(5.0, 10.0)
    elif a.kind == "upload":
        # bulk exfiltration just under the rate fence
        t = t0
        while t < t1:
            add(t, a.target, MALICIOUS_PEERS[a.kind], "https", base * rng.uniform(1.25, 1.35),
                rng.uniform(30.0, 60.0), size * rng.uniform(1.3, 1.5), 0, 443)
            t += rng.uniform(8.0, 12.0)
    return out


def generate(spec: ScenarioSpec) -> Scenario:
    """Deterministic under ``spec.seed``; flows come back sorted by timestamp."""
    profiles = {p.name: p for p in spec.devices}
    flows: list[FlowRecord] = []
    for i, p in enumerate(spec.devices):
        flows.extend(_benign_flows(p, spec, np.random.default_rng([spec.seed, i])))
    extra_atoms: list[tuple[str, str]] = []
    blacklist: list[str] = []
    availability: dict[str, bool] = {}
    for j, a in enumerate(spec.attacks):
        if a.kind == "ultrasonic":
            extra_atoms.append((ULTRASONIC_ATOM, a.name))
            continue
        rng = np.random.default_rng([spec.seed, 1000 + j])
        flows.extend(_attack_flows(a, profiles[a.target], spec, rng))
        if a.kind in MALICIOUS_PEERS:
            blacklist.append(MALICIOUS_PEERS[a.kind])
        if a.kind in FLOOD_KINDS:
            availability[a.target] = False
        elif a.kind == "port_scan":
            availability[a.target] = True
    flows.sort(key=lambda r: (r.ts, r.device, r.src, r.dst))
    return Scenario(flows, extra_atoms, sorted(set(blacklist)), availability)


def write_scenario(out_dir, scen: Scenario) -> dict[str, Path]:
    """Write flows, truth, blacklist, extra atoms and availability files."""
    d = Path(out_dir)
    d.mkdir(parents=True, exist_ok=True)
    paths = {
        "flows": d / "flows.csv", "truth": d / "truth.csv", "blacklist": d / "blacklist.txt",
        "atoms": d / "extra_atoms.lp", "availability": d / "availability.json",
    }
    write_flows(paths["flows"], scen.flows, scen.extra_names)
    with paths["truth"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["flow_id", "ts", "device", "label"])
        for i, r in enumerate(scen.flows):
            w.writerow([i, repr(r.ts), r.device, r.label or "Benign"])
    paths["blacklist"].write_text("# endpoints contacted by generated attacks\n"
                                  + "".join(f"{e}\n" for e in scen.blacklist))
    paths["atoms"].write_text("".join(f"{text} % {label}\n" for text, label in scen.extra_atoms))
    paths["availability"].write_text(json.dumps(scen.availability, indent=2, sort_keys=True) + "\n")
    return paths


# --------------------------------------------------------------------------
# Presets

DEFAULT_DEVICES = (
    DeviceProfile("alexaechodot", rate=18.0),
    DeviceProfile("amazonplug", rate=8.0, protocols={"https": 0.8, "dns": 0.2}),
    DeviceProfile("amcrestcamera", rate=40.0, protocols={"https": 0.85, "udp": 0.15}),
    DeviceProfile("dlinkcamera", rate=35.0, protocols={"https": 0.85, "udp": 0.15}),
    DeviceProfile("philipshuebridge", rate=12.0),
    DeviceProfile("techkinlightstrip", rate=6.0, protocols={"https": 0.6, "dns": 0.4}),
    DeviceProfile("irobotroomba", rate=10.0),
    DeviceProfile("rpi", rate=25.0),
    DeviceProfile("smart_speaker", rate=15.0),
)

DEFAULT_SUITE = (
    ("ddos_http_flood", "philipshuebridge"),
    ("dns_spoof", "irobotroomba"),
    ("dos_http_flood", "dlinkcamera"),
    ("mirai_udp", "alexaechodot"),
    ("port_scan", "amazonplug"),
    ("upload", "rpi"),
    ("c2_beacon", "techkinlightstrip"),
    ("ultrasonic", "smart_speaker"),
)

STEALTH_INTENSITY = 1.5


def default_suite(seed: int = 0, duration: float = 3600.0, attack_start: float = 1800.0,
                  attack_duration: float = 300.0, stealth: bool = False) -> ScenarioSpec:
    """The eight-attack suite, one attack per device.

    ``stealth`` drops flood intensity to 1.5x baseline (hard mode).
    """
    intensity = STEALTH_INTENSITY if stealth else 50.0
    attacks = tuple(
        AttackSpec(kind, target, attack_start, attack_duration, intensity=intensity)
        for kind, target in DEFAULT_SUITE
    )
    return ScenarioSpec(seed=seed, duration=duration, devices=DEFAULT_DEVICES, attacks=attacks)
