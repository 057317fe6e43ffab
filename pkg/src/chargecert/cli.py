"""Command-line entry points.

One JSON configuration document drives every run (no environment
variables), so runs are content-addressable and reproducible from
(config, seed).  Exit codes: 0 success, 2 configuration error,
3 simulation/runtime error, 4 synthesis budget exhausted.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from chargecert import battery, cegis, protocols
from chargecert.abstraction import Abstraction
from chargecert.battery import KELVIN, BatteryError, initial_state, make_cell_parameters, sample_cell
from chargecert.learner import Policy, RewardConfig, TrainConfig, make_env_factory, train
from chargecert.protocols import (
    CcCvConfig,
    ProtocolError,
    Rect,
    SwitchedController,
    rollout,
    run_ccv,
    run_constant_current,
)
from chargecert.verify import UNBOUNDED, RwaSpec, rwa_check, worst_case_hitting_time

SCHEMA_VERSION = 1

_SECTION_KEYS = {
    "simulate": {
        "protocol", "current_A", "n_steps", "i_cc_A", "v_cv_V", "i_cutoff_A",
        "soc_stop", "policy_file", "horizon_steps", "dt_s", "cell",
        "initial_soc", "initial_temp_C", "sample_seed",
    },
    "benchmark_ccv": {
        "currents_A", "dt_s", "soc_start", "temp_C", "v_cv_V", "i_cutoff_A", "cell",
    },
    "train": {
        "region_V", "region_T_C", "horizon_steps", "dt_s", "cell", "train", "reward",
    },
    "cegis": None,  # validated by CegisConfig itself
}


class ConfigError(Exception):
    pass


def load_section(path, section: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"config schema_version must be {SCHEMA_VERSION}")
    unknown_top = set(doc) - {"schema_version", "seed"} - set(_SECTION_KEYS)
    if unknown_top:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown_top)}")
    if section not in doc:
        raise ConfigError(f"config lacks the '{section}' section")
    sec = doc[section]
    allowed = _SECTION_KEYS[section]
    if allowed is not None:
        unknown = set(sec) - allowed
        if unknown:
            raise ConfigError(f"unknown keys in '{section}': {sorted(unknown)}")
    return doc


def _build_cell(sec: dict, seed):
    template = dict(sec.get("cell") or {})
    sample_seed = sec.get("sample_seed")
    if sample_seed is not None or seed is not None:
        use = sample_seed if sample_seed is not None else seed
        return sample_cell(int(use), template=template or None)
    params = make_cell_parameters(**template)
    soc0 = float(sec.get("initial_soc", 0.2))
    t0 = float(sec.get("initial_temp_C", 25.0)) + KELVIN
    return params, initial_state(params, soc0, t0)


def cmd_simulate(args) -> int:
    doc = load_section(args.config, "simulate")
    sec = doc["simulate"]
    seed = args.seed if args.seed is not None else doc.get("seed")
    cell = _build_cell(sec, seed)
    dt = float(sec.get("dt_s", 15.0))
    protocol = sec.get("protocol", "constant")
    if protocol == "constant":
        trace = run_constant_current(cell, float(sec.get("current_A", 0.0)),
                                     int(sec.get("n_steps", 100)), dt)
    elif protocol == "ccv":
        cfg = CcCvConfig(
            i_cc=float(sec["i_cc_A"]),
            v_cv=float(sec.get("v_cv_V", 4.2)),
            i_cutoff=float(sec.get("i_cutoff_A", 0.05)),
            soc_stop=float(sec.get("soc_stop", 0.9)),
        )
        trace = run_ccv(cell, cfg, dt)
    elif protocol == "policy":
        pol = Policy.load(sec["policy_file"])
        ctrl = SwitchedController([Rect(0.0, 10.0, -100.0, 200.0)], [pol])
        trace = rollout(cell, ctrl, int(sec.get("horizon_steps", 320)), dt)
    else:
        raise ConfigError(f"unknown protocol {protocol!r}")
    with open(args.out, "w") as f:
        trace.to_csv(f)
    print(f"wrote {args.out}: {trace.n_transitions} transitions, terminal={trace.terminal}")
    return 0


def cmd_benchmark_ccv(args) -> int:
    doc = load_section(args.config, "benchmark_ccv")
    sec = doc["benchmark_ccv"]
    currents = [float(c) for c in sec.get("currents_A", [])]
    if not currents:
        raise ConfigError("benchmark_ccv.currents_A must be a nonempty list")
    rows = protocols.benchmark_ccv(
        currents,
        template=dict(sec.get("cell") or {}) or None,
        soc_start=float(sec.get("soc_start", 0.02)),
        temp_c=float(sec.get("temp_C", 25.0)),
        dt=float(sec.get("dt_s", 15.0)),
        v_cv=float(sec.get("v_cv_V", 4.2)),
        i_cutoff=float(sec.get("i_cutoff_A", 0.05)),
    )
    with open(args.out, "w") as f:
        protocols.write_benchmark_csv(rows, f)
    flags = protocols.benchmark_trends(rows)
    for name, ok in flags.items():
        print(f"trend {name}: {'pass' if ok else 'FAIL'}")
    summary = Path(str(args.out) + ".summary.json")
    summary.write_text(json.dumps(flags, indent=2, sort_keys=True))
    print(f"wrote {args.out} and {summary}")
    return 0


def cmd_train(args) -> int:
    doc = load_section(args.config, "train")
    sec = doc["train"]
    seed = args.seed if args.seed is not None else doc.get("seed", 0)
    tcfg_doc = dict(sec.get("train") or {})
    if "hidden" in tcfg_doc:
        tcfg_doc["hidden"] = tuple(tcfg_doc["hidden"])
    tcfg = TrainConfig(seed=int(seed), horizon=int(sec.get("horizon_steps", 80)),
                       **tcfg_doc)
    rcfg = RewardConfig(**(sec.get("reward") or {}))
    v_lo, v_hi = sec.get("region_V", [2.8, 4.0])
    t_lo, t_hi = sec.get("region_T_C", [17.0, 32.0])
    region = Rect(float(v_lo), float(v_hi), float(t_lo), float(t_hi))
    factory = make_env_factory(rcfg, tcfg.horizon, template=dict(sec.get("cell") or {}) or None,
                               region=region, dt=float(sec.get("dt_s", 15.0)))
    policy = train(factory, tcfg, rcfg)
    policy.save(args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_verify(args) -> int:
    from chargecert.verify import VerifyError

    try:
        abs_doc = json.loads(Path(args.abstraction).read_text())
        spec_doc = json.loads(Path(args.spec).read_text())
        if abs_doc.get("schema_version") != 1 or spec_doc.get("schema_version") != 1:
            raise ConfigError("abstraction/spec schema_version mismatch")
        abst = Abstraction.from_json_dict(abs_doc)
        spec = RwaSpec.from_json_dict(spec_doc)
    except (OSError, json.JSONDecodeError, KeyError, VerifyError) as e:
        raise ConfigError(f"cannot load inputs: {e}") from e
    result = rwa_check(abst, spec)
    Path(args.out).write_text(result.to_json())
    print(f"holds={str(result.holds).lower()} n_initial={result.n_initial} "
          f"n_counterexample_states={len(result.counterexample_states)}")
    if args.hitting:
        labels = frozenset(args.hitting.split(","))
        t = worst_case_hitting_time(abst, labels, cap=spec.horizon)
        print(f"hitting[{args.hitting}]={'unbounded' if t is UNBOUNDED else int(t)}")
    return 0


def cmd_cegis(args) -> int:
    if args.resume:
        try:
            result = cegis.resume(args.resume)
        except (OSError, json.JSONDecodeError, KeyError) as e:
            print(f"corrupted run directory: {e}", file=sys.stderr)
            return 3
    else:
        if not args.config or not args.out:
            raise ConfigError("cegis needs --config and --out (or --resume)")
        doc = load_section(args.config, "cegis")
        cfg = cegis.CegisConfig.from_json_dict(doc["cegis"])
        if args.seed is not None:
            cfg = cegis.CegisConfig.from_json_dict(
                {**cfg.to_json_dict(), "seed": int(args.seed)})
        if args.jobs is not None:
            cfg = cegis.CegisConfig.from_json_dict(
                {**cfg.to_json_dict(), "jobs": int(args.jobs)})
        spec = cegis.battery_rwa_spec(cfg.horizon)
        result = cegis.run(cfg, spec, out_dir=args.out)
    if result.status == cegis.CERTIFIED:
        c = result.certificate
        n_states = result.record.entries[-1]["n_states"] if result.record.entries else "?"
        print(f"eps={c.epsilon:.6g} beta={c.beta:g} s_star={c.s_star} states={n_states}")
        return 0
    print(f"synthesis failed after {len(result.record.entries)} iterations", file=sys.stderr)
    return 4


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    try:
        record = json.loads((run_dir / "record.json").read_text())
    except (OSError, json.JSONDecodeError) as e:
        print(f"cannot read record: {e}", file=sys.stderr)
        return 3
    print(f"status: {record['status']}")
    print("iter  m  states  s*  epsilon      holds  cex_windows  cex_samples")
    for e in record["entries"]:
        print(f"{e['iteration']:>4}  {e['m']:>1}  {e['n_states']:>6}  {e['s_star']:>2}  "
              f"{e['epsilon']:<11.4g}  {str(e['holds']):<5}  "
              f"{e['n_counterexample_windows']:>11}  {e['n_counterexample_samples']:>11}")
    cert = run_dir / "certificate.json"
    if cert.exists():
        c = json.loads(cert.read_text())
        print(f"certificate: eps={c['epsilon']:.6g} beta={c['beta']:g} "
              f"s_star={c['s_star']} method={c['method']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="chargecert",
        description="charging-policy synthesis and sampling-based certification",
    )
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--jobs", type=int, default=None, help="worker processes for rollouts")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one cell under a protocol, write a trace CSV")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("benchmark-ccv", help="CC-CV sweep with trend summary")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_benchmark_ccv)

    s = sub.add_parser("train", help="train one region policy")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("verify", help="re-verify a stored abstraction")
    s.add_argument("--abstraction", required=True)
    s.add_argument("--spec", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--hitting", default=None, help="comma-separated target labels")
    s.set_defaults(fn=cmd_verify)

    s = sub.add_parser("cegis", help="run the synthesis loop")
    s.add_argument("--config")
    s.add_argument("--out")
    s.add_argument("--resume", default=None)
    s.set_defaults(fn=cmd_cegis)

    s = sub.add_parser("report", help="summarize a run directory")
    s.add_argument("--run", required=True)
    s.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (BatteryError, ProtocolError, cegis.CegisError) as e:
        print(f"simulation error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
