"""Counterexample-driven synthesis loop tying together the learner, the
simulator, the abstraction, the verifier, and the certificate.

Each round trains one agent per partition region, rolls the switched
controller out from freshly sampled cells (verification seeds live in a
namespace disjoint from training seeds), builds the window abstraction
with provenance, and checks the reach-while-avoid property.  On success a
scenario certificate is emitted; otherwise the partition schedule advances
and the loop repeats.  Every iteration is persisted before the next one
starts, so an interrupted run resumes from its run directory.
"""

from __future__ import annotations

import dataclasses
import gzip
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from chargecert import battery
from chargecert.abstraction import Alphabet, Behavior, build_salca
from chargecert.battery import DESK_CELL, battery_alphabet
from chargecert.certificate import ScenarioCertificate, complexity, epsilon
from chargecert.learner import RewardConfig, TrainConfig, make_env_factory, train
from chargecert.learner import Policy
from chargecert.protocols import (
    Rect,
    SwitchedController,
    TRACE_HEADER,
    rollout_many,
    select_policy,
)
from chargecert.verify import RwaSpec, rwa_check

INIT_BOX = (2.8, 4.0, 17.0, 32.0)  # initial (V, T) measurement box

CERTIFIED = "certified"
EXHAUSTED = "max-iterations-exhausted"
IN_PROGRESS = "in-progress"


class CegisError(Exception):
    pass


def derive_seed(master: int, *tags) -> int:
    """Stable, namespaced seed: training and verification draws never collide."""
    digest = hashlib.sha256(repr((int(master),) + tags).encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def make_partition(m: int, grid_shape: tuple[int, int], box=INIT_BOX) -> list[Rect]:
    """Uniform gv x gt grid over the initial box, row-major (rows = temperature)."""
    gv, gt = grid_shape
    if gv * gt != m:
        raise CegisError(f"grid {grid_shape} does not tile {m} regions")
    v_lo, v_hi, t_lo, t_hi = box
    dv, dt_ = (v_hi - v_lo) / gv, (t_hi - t_lo) / gt
    rects = []
    for r in range(gt):
        for c in range(gv):
            rects.append(Rect(
                v_lo + c * dv, v_lo + (c + 1) * dv,
                t_lo + r * dt_, t_lo + (r + 1) * dt_,
            ))
    return rects


@dataclass(frozen=True)
class CegisConfig:
    n_traj: int = 2000
    ell: int = 4
    horizon: int = 80
    beta: float = 1e-6
    max_iterations: int = 3
    partition_schedule: tuple = (1, 8, 16)
    grid_shapes: tuple = ((1, (1, 1)), (8, (4, 2)), (16, (4, 4)))
    refine_failing_only: bool = False
    seed: int = 0
    jobs: int = 1
    dt: float = 15.0
    cell_template: tuple = tuple(sorted(DESK_CELL.items()))
    train: TrainConfig = field(default_factory=lambda: TrainConfig(
        total_steps=12_000, hidden=(32, 32), warmup_steps=500, batch_size=128,
        horizon=80, discount=0.99, update_every=2, reward_scale=1e-2,
        lr=1e-3, alpha_lr=1e-3, entropy_target=-2.0,
    ))
    reward: RewardConfig = field(default_factory=RewardConfig)

    def __post_init__(self):
        ms = list(self.partition_schedule)
        if not ms or ms[0] != 1 or any(a >= b for a, b in zip(ms, ms[1:])):
            raise CegisError("partition schedule must start at 1 and strictly increase")
        shapes = dict(self.grid_shapes)
        for m in ms:
            gv, gt = shapes.get(m, (m, 1))
            if gv * gt != m:
                raise CegisError(f"grid shape for M={m} does not multiply out")

    def grid_shape_for(self, m: int) -> tuple[int, int]:
        return tuple(dict(self.grid_shapes).get(m, (m, 1)))

    def template_dict(self) -> dict:
        return dict(self.cell_template)

    def to_json_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["train"] = dataclasses.asdict(self.train)
        d["reward"] = dataclasses.asdict(self.reward)
        return d

    @classmethod
    def from_json_dict(cls, doc: dict) -> "CegisConfig":
        doc = dict(doc)
        doc["train"] = TrainConfig(**{
            k: tuple(v) if k == "hidden" else v for k, v in doc["train"].items()
        })
        doc["reward"] = RewardConfig(**doc["reward"])
        doc["partition_schedule"] = tuple(doc["partition_schedule"])
        doc["grid_shapes"] = tuple((int(m), tuple(s)) for m, s in doc["grid_shapes"])
        doc["cell_template"] = tuple((k, v) for k, v in doc["cell_template"])
        return cls(**doc)

    def content_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_json_dict(), sort_keys=True).encode()
        ).hexdigest()


@dataclass
class CegisRecord:
    """Append-only per-iteration log; the final entry either certifies or
    reports exhaustion."""

    entries: list = field(default_factory=list)
    status: str = IN_PROGRESS

    def to_json_dict(self) -> dict:
        return {"schema_version": 1, "status": self.status, "entries": self.entries}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "CegisRecord":
        return cls(entries=list(doc["entries"]), status=doc["status"])


@dataclass
class CegisResult:
    status: str
    controller: SwitchedController | None
    certificate: ScenarioCertificate | None
    record: CegisRecord


def default_trainer(cfg: CegisConfig):
    """SAC trainer restricted to one partition region."""

    def trainer(region: Rect, iteration: int, seed: int) -> Policy:
        tcfg = dataclasses.replace(
            cfg.train, seed=seed, horizon=cfg.horizon,
            control_dt=cfg.dt,
        )
        factory = make_env_factory(
            cfg.reward, cfg.horizon, template=cfg.template_dict(),
            region=region, dt=cfg.dt,
        )
        return train(factory, tcfg, cfg.reward)

    return trainer


def default_rollout_fn(cfg: CegisConfig):
    def fn(controller: SwitchedController, seeds: list[int], horizon: int):
        return rollout_many(
            controller, seeds, horizon, template=cfg.template_dict(),
            dt=cfg.dt, jobs=cfg.jobs,
        )

    return fn


def _controller_hash(policies: list[Policy]) -> str:
    h = hashlib.sha256()
    for p in policies:
        h.update(json.dumps(p.to_json_dict(), sort_keys=True).encode())
    return h.hexdigest()


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)


def write_traces_gz(path: Path, results) -> None:
    """All verification traces in one gzip CSV, keyed by sample id."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with gzip.open(path, "wt") as f:
        f.write("sample_id," + TRACE_HEADER + "\n")
        for sid, (_seed, _params, _state0, trace) in enumerate(results):
            for i in range(len(trace.k)):
                f.write(
                    f"{sid},{int(trace.k[i])},{trace.t_s[i]:.10g},{trace.soc[i]:.10g},"
                    f"{trace.volt[i]:.10g},{trace.temp_c[i]:.10g},{trace.i_a[i]:.10g},"
                    f"{trace.q_loss[i]:.12g},{trace.delta_sei[i]:.12g},{trace.labels[i]}\n"
                )


def read_trace_labels_gz(path: Path) -> dict[int, list[str]]:
    words: dict[int, list[str]] = {}
    with gzip.open(path, "rt") as f:
        header = f.readline()
        assert header.strip().split(",")[0] == "sample_id"
        for line in f:
            cols = line.rstrip("\n").split(",")
            words.setdefault(int(cols[0]), []).append(cols[-1])
    return words


def _center_measurement(region: Rect):
    from chargecert.battery import KELVIN, OutputMeasurement

    return OutputMeasurement(
        k=0, soc=0.5,
        volt=0.5 * (region.v_lo + region.v_hi),
        temp=0.5 * (region.t_lo + region.t_hi) + KELVIN,
        i_prev=0.0,
    )


def battery_rwa_spec(horizon: int) -> RwaSpec:
    """Goal: the charged bin, safely; safe: voltage and temperature flags clear."""
    safe = frozenset(battery.safe_label_texts())
    goal = frozenset(t for t in battery.goal_label_texts() if t in safe)
    return RwaSpec(horizon=horizon, goal_symbols=goal, safe_symbols=safe)


def run(
    cfg: CegisConfig,
    spec: RwaSpec,
    trainer=None,
    rollout_fn=None,
    out_dir=None,
    start_iteration: int = 0,
    record: CegisRecord | None = None,
) -> CegisResult:
    """Execute the synthesis loop; returns a result instead of raising when
    the iteration budget runs out."""
    trainer = trainer or default_trainer(cfg)
    rollout_fn = rollout_fn or default_rollout_fn(cfg)
    out = Path(out_dir) if out_dir is not None else None
    alphabet = Alphabet.of(battery_alphabet())
    record = record if record is not None else CegisRecord()
    schedule = list(cfg.partition_schedule)

    if out is not None:
        _write_json(out / "config.json", {
            "schema_version": 1, "config_hash": cfg.content_hash(),
            "cegis": cfg.to_json_dict(), "rwa_spec": spec.to_json_dict(),
        })

    controller = None
    prev_shape = None
    prev_cex_points: list[tuple[float, float]] = []
    for j in range(start_iteration, cfg.max_iterations):
        m = schedule[min(j, len(schedule) - 1)]
        shape = cfg.grid_shape_for(m)
        partition = make_partition(m, shape)
        nested = prev_shape is None or (
            shape[0] % prev_shape[0] == 0 and shape[1] % prev_shape[1] == 0
        )
        policies = []
        for r, region in enumerate(partition):
            keep_previous = (
                cfg.refine_failing_only
                and controller is not None
                and not any(region.contains(v, t) for v, t in prev_cex_points)
            )
            if keep_previous:
                # region certified-clean so far: reuse the policy covering its center
                center = _center_measurement(region)
                policies.append(select_policy(controller, center))
            else:
                policies.append(trainer(region, j, derive_seed(cfg.seed, "train", j, r)))
        prev_shape = shape
        controller = SwitchedController(partition, policies)

        seeds = [derive_seed(cfg.seed, "verify", j, i) for i in range(cfg.n_traj)]
        results = rollout_fn(controller, seeds, cfg.horizon)
        behaviors = [
            Behavior(tuple(alphabet.index[s] for s in r[3].label_word(cfg.horizon)), sid)
            for sid, r in enumerate(results)
        ]
        abst = build_salca(behaviors, cfg.ell, alphabet)
        s_star, method = complexity(behaviors, cfg.ell)
        eps = epsilon(cfg.n_traj, s_star, cfg.beta)
        ver = rwa_check(abst, spec)
        violators = [
            sid for sid, r in enumerate(results)
            if not r[3].satisfies_rwa(spec.goal_symbols, spec.safe_symbols, cfg.horizon)
        ]

        prev_cex_points = [
            (float(results[sid][3].volt[0]), float(results[sid][3].temp_c[0]))
            for sid in ver.counterexample_samples
        ]
        entry = {
            "iteration": j,
            "m": m,
            "grid_shape": list(shape),
            "partition": [[r.v_lo, r.v_hi, r.t_lo, r.t_hi] for r in partition],
            "nested_in_previous": nested,
            "controller_hash": _controller_hash(policies),
            "n_states": abst.n_states,
            "s_star": s_star,
            "method": method,
            "epsilon": eps,
            "holds": ver.holds,
            "n_counterexample_windows": len(ver.counterexample_states),
            "n_counterexample_samples": len(ver.counterexample_samples),
            "trace_violation_sample_ids": violators,
            "abstraction_hash": abst.sha256(),
            "finished_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        record.entries.append(entry)

        if out is not None:
            it = out / f"iter_{j}"
            (it / "policies").mkdir(parents=True, exist_ok=True)
            for r, pol in enumerate(policies):
                pol.save(it / "policies" / f"policy_{r}.json")
            write_traces_gz(it / "traces.csv.gz", results)
            _write_json(it / "abstraction.json", abst.to_json_dict())
            _write_json(it / "verification.json", {
                **ver.to_json_dict(),
                "s_star": s_star, "method": method, "epsilon": eps,
                "n_states": abst.n_states,
            })

        if ver.holds:
            cert = ScenarioCertificate(
                n_samples=cfg.n_traj, ell=cfg.ell, horizon=cfg.horizon,
                beta=cfg.beta, s_star=s_star, epsilon=eps, method=method,
                abstraction_hash=abst.sha256(),
                spec_hash=hashlib.sha256(
                    json.dumps(spec.to_json_dict(), sort_keys=True).encode()
                ).hexdigest(),
                created_at=time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            )
            record.status = CERTIFIED
            if out is not None:
                _write_json(out / "certificate.json", cert.to_json_dict())
                _write_json(out / "record.json", record.to_json_dict())
            return CegisResult(CERTIFIED, controller, cert, record)

        if out is not None:
            _write_json(out / "record.json", record.to_json_dict())

    record.status = EXHAUSTED
    if out is not None:
        _write_json(out / "record.json", record.to_json_dict())
    return CegisResult(EXHAUSTED, controller, None, record)


def resume(out_dir, trainer=None, rollout_fn=None) -> CegisResult:
    """Continue an interrupted run; completed runs are a no-op."""
    out = Path(out_dir)
    cfg_doc = json.loads((out / "config.json").read_text())
    cfg = CegisConfig.from_json_dict(cfg_doc["cegis"])
    spec = RwaSpec.from_json_dict(cfg_doc["rwa_spec"])
    rec_path = out / "record.json"
    record = (
        CegisRecord.from_json_dict(json.loads(rec_path.read_text()))
        if rec_path.exists()
        else CegisRecord()
    )
    if record.status == CERTIFIED:
        cert_doc = json.loads((out / "certificate.json").read_text())
        cert_doc.pop("schema_version", None)
        cert_doc["n_samples"] = cert_doc.pop("n")
        return CegisResult(CERTIFIED, None, ScenarioCertificate(**cert_doc), record)
    if record.status == EXHAUSTED:
        return CegisResult(EXHAUSTED, None, None, record)
    return run(
        cfg, spec, trainer=trainer, rollout_fn=rollout_fn, out_dir=out,
        start_iteration=len(record.entries), record=record,
    )
