"""Command-line entry point: gen | train | detect | diagnose | eval.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 at least one anomaly could not be explained.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .abduction import DIAGNOSED, UNEXPLAINED, load_catalog
from .assets import CONTROLS_PATH, RULES_PATH
from .enrich import ContextConfig, format_atoms, load_blacklist, read_anomalies
from .flows import DEFAULT_BENIGN_LABEL, ColumnMapping, FlowDataError, SplitSpec, load_flows, read_flows
from .logic import GroundingLimitError, ParseError, parse_program
from .pipeline import (DetectorConfig, DiagnosisCache, MissingModelError, detect, enrich, evaluate,
                       group_label, load_models, model_path, train_models)
from .scenario import DETECTOR_FEATURES, ScenarioSpec, default_suite, generate, write_scenario
from .thresholds import METHODS

log = logging.getLogger("iotdiag")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_UNEXPLAINED = 0, 1, 2, 3


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# Configuration


def load_config(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file {p} not found")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {p}: {exc}") from exc
    # relative paths in the config are relative to the config file
    base = p.resolve().parent
    paths = cfg.get("paths", {})
    cfg["paths"] = {k: str(base / v) if v and not Path(v).is_absolute() else v for k, v in paths.items()}
    return cfg


def _path(args, cfg: dict, key: str, required: bool = True) -> Path | None:
    value = getattr(args, key, None) or cfg.get("paths", {}).get(key)
    if value is None:
        if required:
            raise UsageError(f"--{key.replace('_', '-')} is required (or set paths.{key} in the config)")
        return None
    return Path(value)


def _existing(p: Path | None, what: str) -> Path | None:
    if p is not None and not p.exists():
        raise UsageError(f"{what} {p} does not exist")
    return p


def _seed(args, cfg: dict) -> int:
    return args.seed if args.seed is not None else int(cfg.get("seed", 0))


def detector_config(args, cfg: dict) -> DetectorConfig:
    dc = DetectorConfig.from_dict(cfg.get("detector", {}))
    if getattr(args, "threshold", None):
        dc = replace(dc, threshold=replace(dc.threshold, method=args.threshold))
    return dc.with_seed(_seed(args, cfg))


def context_config(args, cfg: dict) -> ContextConfig:
    c = dict(cfg.get("context", {}))
    blacklist = _existing(_path(args, cfg, "blacklist", required=False), "blacklist")
    availability = _existing(_path(args, cfg, "availability", required=False), "availability file")
    overrides = dict(c.pop("availability_overrides", {}))
    if availability is not None:
        overrides.update({k: bool(v) for k, v in json.loads(availability.read_text()).items()})
    if getattr(args, "assume_attack_success", None) is not None:
        c["assume_attack_success"] = args.assume_attack_success
    if getattr(args, "strict_reputation", False):
        c["strict_reputation"] = True
    return ContextConfig(
        blacklist=load_blacklist(blacklist) if blacklist else frozenset(c.pop("blacklist", ())),
        availability_overrides=overrides,
        **{k: v for k, v in c.items() if k in ("window", "assume_attack_success", "strict_reputation", "trusted")},
    )


def read_input_flows(args, cfg: dict):
    flows_path = _existing(_path(args, cfg, "flows"), "flow file")
    mapping_path = _existing(_path(args, cfg, "mapping", required=False), "mapping file")
    if mapping_path is None:
        flows, extra = read_flows(flows_path)
        return flows, extra, cfg.get("benign_label", DEFAULT_BENIGN_LABEL)
    mapping = ColumnMapping.from_json(mapping_path)
    flows = load_flows(flows_path, mapping)
    return flows, list(mapping.extra or ()), mapping.benign_label


def _filter_devices(flows, devices):
    if not devices:
        return flows
    keep = set(devices)
    return [r for r in flows if r.device in keep]


def _program(args, cfg: dict):
    rules = _existing(_path(args, cfg, "rules", required=False) or RULES_PATH, "rules file")
    return parse_program(rules.read_text())


# --------------------------------------------------------------------------
# Subcommands


def cmd_gen(args, cfg: dict) -> int:
    spec_path = args.spec or cfg.get("paths", {}).get("spec")
    if spec_path in (None, "default"):
        spec = default_suite(seed=_seed(args, cfg), stealth=args.stealth)
    else:
        spec = ScenarioSpec.from_json(_existing(Path(spec_path), "scenario spec"))
        if args.seed is not None:
            spec = replace(spec, seed=args.seed)
    if args.benign_only:
        spec = spec.benign_only()
    out = Path(args.out)
    scen = generate(spec)
    paths = write_scenario(out, scen)
    (out / "scenario.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    config = {
        "seed": spec.seed,
        "paths": {
            "flows": "flows.csv", "blacklist": "blacklist.txt", "availability": "availability.json",
            "extra_atoms": "extra_atoms.lp", "model_dir": "models", "report_dir": "reports",
        },
        "detector": {"features": list(DETECTOR_FEATURES)},
    }
    (out / "config.json").write_text(json.dumps(config, indent=2) + "\n")
    n_attack = sum(1 for r in scen.flows if r.label)
    print(f"wrote {len(scen.flows)} flows ({n_attack} attack) and {len(scen.extra_atoms)} extra atoms to {out}")
    log.debug("outputs: %s", {k: str(v) for k, v in paths.items()})
    return EXIT_OK


def cmd_train(args, cfg: dict) -> int:
    flows, extra, benign_label = read_input_flows(args, cfg)
    flows = _filter_devices(flows, args.device)
    model_dir = _path(args, cfg, "model_dir")
    dc = detector_config(args, cfg)
    models, skipped = train_models(flows, dc, extra, benign_label, args.device, jobs=args.jobs)
    model_dir.mkdir(parents=True, exist_ok=True)
    for device, model in sorted(models.items()):
        model.save(model_path(model_dir, device))
    for device, reason in sorted(skipped.items()):
        print(f"skipped {device}: {reason}", file=sys.stderr)
    print(f"trained {len(models)} model(s) in {model_dir}")
    if not models:
        return EXIT_DATA
    return EXIT_OK


def cmd_detect(args, cfg: dict) -> int:
    flows, _, _ = read_input_flows(args, cfg)
    flows = _filter_devices(flows, args.device)
    model_dir = _existing(_path(args, cfg, "model_dir"), "model directory")
    models = load_models(model_dir, sorted({r.device for r in flows}))
    ctx = context_config(args, cfg)
    det = detect(flows, models)
    out = _path(args, cfg, "report_dir")
    out.mkdir(parents=True, exist_ok=True)
    with (out / "scores.csv").open("w", encoding="utf-8") as fh:
        fh.write("ts,device,src,dst,score,flagged\n")
        for r, s, f in zip(det.records, det.scores, det.flagged):
            fh.write(f"{r.ts!r},{r.device},{r.src},{r.dst},{s!r},{int(f)}\n")
    atoms = enrich(det.flagged_records, models, ctx)
    comments = [group_label(a) or "" for a in atoms]
    (out / "atoms.lp").write_text(format_atoms(atoms, comments))
    print(f"{det.summary()}; {len(atoms)} anomaly group(s) written to {out / 'atoms.lp'}")
    return EXIT_OK


def cmd_diagnose(args, cfg: dict) -> int:
    program = _program(args, cfg)
    atoms_path = _existing(Path(args.atoms) if args.atoms else _path(args, cfg, "atoms"), "atoms file")
    controls = _existing(_path(args, cfg, "controls", required=False) or CONTROLS_PATH, "control catalog")
    anomalies = read_anomalies(atoms_path.read_text())
    cache = DiagnosisCache(program, load_catalog(controls))
    results = [cache(a) for a in anomalies]
    texts = []
    for i, (a, r) in enumerate(zip(anomalies, results), 1):
        trace = " ".join(f"{x}." for x in a)
        texts.append(f"[{i}] {trace}\n{r.to_text()}")
        if r.status == DIAGNOSED and r.controls:
            texts[-1] += "\nControls: " + "; ".join(r.controls)
    report = "\n\n".join(texts) + ("\n" if texts else "")
    print(report, end="")
    out = _path(args, cfg, "report_dir", required=False)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "diagnosis.txt").write_text(report)
        records = [dict(r.to_record(), anomaly=[str(x) for x in a]) for a, r in zip(anomalies, results)]
        (out / "diagnosis.json").write_text(json.dumps(records, indent=2) + "\n")
    n_unexplained = sum(r.status == UNEXPLAINED for r in results)
    if n_unexplained:
        print(f"{n_unexplained} unexplained anomaly(ies)", file=sys.stderr)
        return EXIT_UNEXPLAINED
    return EXIT_OK


def cmd_eval(args, cfg: dict) -> int:
    flows, extra, benign_label = read_input_flows(args, cfg)
    flows = _filter_devices(flows, args.device)
    seed = _seed(args, cfg)
    split = SplitSpec(**{**cfg.get("split", {}), "seed": seed})
    extra_atoms_path = _existing(_path(args, cfg, "extra_atoms", required=False), "extra atoms file")
    extra_atoms = labelled_atoms(extra_atoms_path.read_text()) if extra_atoms_path else []
    res = evaluate(flows, _program(args, cfg), context_config(args, cfg), detector_config(args, cfg),
                   split, extra, extra_atoms, benign_label=benign_label, jobs=args.jobs)
    out = _path(args, cfg, "report_dir")
    res.detection.write(out, "detection")
    res.diagnosis.write(out, "diagnosis")
    (out / "summary.json").write_text(json.dumps(res.summary(), indent=2) + "\n")
    print(res.detection.to_table())
    print(res.diagnosis.to_table(), end="")
    return EXIT_OK


def labelled_atoms(text: str) -> list[tuple[str, str]]:
    """One (atoms, label) pair per line; the label is the trailing ``% comment``."""
    out = []
    for line in text.splitlines():
        body, _, comment = line.partition("%")
        if body.strip():
            if not comment.strip():
                raise UsageError(f"extra atom without a '% label' comment: {line.strip()}")
            out.append((body, comment.strip()))
    return out


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON pipeline config")
    common.add_argument("--seed", type=int, help="seed for every stochastic stage")
    common.add_argument("--device", action="append", help="restrict to this device (repeatable)")
    common.add_argument("--jobs", type=int, default=1, help="worker threads for per-device work")
    common.add_argument("-v", "--verbose", action="store_true")

    ctx = argparse.ArgumentParser(add_help=False)
    ctx.add_argument("--blacklist", help="endpoint blacklist file")
    ctx.add_argument("--availability", help="JSON map device -> available")
    ctx.add_argument("--assume-attack-success", dest="assume_attack_success",
                     action=argparse.BooleanOptionalAction, default=None,
                     help="treat flood targets as offline unless overridden (default on)")
    ctx.add_argument("--strict-reputation", action="store_true",
                     help="flag endpoints of unknown reputation as malicious")

    p = argparse.ArgumentParser(prog="iotdiag", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic scenario")
    g.add_argument("spec", nargs="?", help="scenario JSON ('default' or omitted: built-in suite)")
    g.add_argument("--out", required=True, help="output directory")
    g.add_argument("--benign-only", action="store_true")
    g.add_argument("--stealth", action="store_true", help="1.5x flood intensity (built-in suite)")
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("train", parents=[common], help="fit one detector per device")
    t.add_argument("--flows")
    t.add_argument("--mapping")
    t.add_argument("--models", dest="model_dir")
    t.add_argument("--threshold", choices=METHODS)
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("detect", parents=[common, ctx], help="score flows and emit anomaly atoms")
    d.add_argument("--flows")
    d.add_argument("--mapping")
    d.add_argument("--models", dest="model_dir")
    d.add_argument("--out", dest="report_dir")
    d.set_defaults(func=cmd_detect)

    x = sub.add_parser("diagnose", parents=[common], help="explain anomaly atoms")
    x.add_argument("atoms", nargs="?")
    x.add_argument("--rules")
    x.add_argument("--controls")
    x.add_argument("--out", dest="report_dir")
    x.set_defaults(func=cmd_diagnose)

    e = sub.add_parser("eval", parents=[common, ctx], help="k-fold detection and diagnosis scores")
    e.add_argument("--flows")
    e.add_argument("--mapping")
    e.add_argument("--rules")
    e.add_argument("--extra-atoms", dest="extra_atoms")
    e.add_argument("--threshold", choices=METHODS)
    e.add_argument("--out", dest="report_dir")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, load_config(args.config))
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FlowDataError, MissingModelError, GroundingLimitError, KeyError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
