"""Campaign orchestration and persistence.

A campaign is one directory: a manifest describing what was asked for,
per-experiment trace files, injection logs, and the report CSVs derived
from them.  Everything in the reports can be recomputed from the trace
files alone, and rerunning with the same configuration reproduces every
byte.  Experiments fan out over a process pool when workers > 1 and are
merged back in experiment order, so the worker count never changes the
output.
"""
from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from faultminer.bayes import (
    GibbsConfig,
    MiningResult,
    em_train,
    load_model,
    matrix_triples,
    mine_trace,
    build_topology,
    save_model,
    trace_matrix,
)
from faultminer.faults import (
    CampaignConfig,
    FaultPlan,
    Injector,
    catalog,
    fault_by_name,
    make_plan,
    plan_from_json,
    plan_to_json,
)
from faultminer.registry import injectable_names
from faultminer.scenario import Scenario, Trace, run, scenario_library

__all__ = [
    "CampaignError",
    "GoldenHazard",
    "GoldenSummary",
    "CampaignReport",
    "run_golden",
    "run_random_campaign",
    "train_model",
    "mine_and_validate",
    "build_report",
    "compensation_curve",
    "RUN_CSV_HEADER",
    "GOLDEN_CSV_HEADER",
]

RUN_CSV_HEADER = ("index,model,fault,start,duration,seed,scenes,"
                  "min_cipo,max_lk,hazard,collision_frame,digest")
GOLDEN_CSV_HEADER = "seed,scenes,min_cipo,max_lk,hazard,digest"
MVF_CSV_HEADER = "module,experiments,violations,mvf_percent"
BOX_CSV_HEADER = ("label,metric,lo_whisker,q1,median,q3,hi_whisker,"
                  "minimum,maximum,n")
FCRIT_CSV_HEADER = ("scene,fault,golden_long,golden_lat,est_long,est_lat,"
                    "flagged,manifested")

TRAIN_WINDOW = 3          # windows kept around an injection, either side
TRAIN_TAIL = 8            # scenes simulated past the injection start


class CampaignError(ValueError):
    """Bad configuration or campaign layout."""


class GoldenHazard(RuntimeError):
    """A golden run produced a hazard; the setup is wrong, stop."""


@dataclass(frozen=True)
class GoldenSummary:
    scenario_id: str
    seeds: tuple[int, ...]
    min_cipo: float          # smallest clear gap over every run
    max_lk: float            # largest lane offset over every run
    median_min_cipo: float
    median_max_lk: float
    hazards: int
    elapsed: float


@dataclass
class CampaignReport:
    golden: GoldenSummary
    labels: tuple[str, ...]
    hazard_counts: dict[str, int]
    experiment_counts: dict[str, int]
    mvf: dict[str, float]                 # module -> percent
    mvf_ranking: tuple[str, ...]          # descending
    quartiles: dict[tuple[str, str], tuple[float, ...]]
    compensation_files: tuple[str, ...]
    elapsed: float


def _scenario(scenario_id: str) -> Scenario:
    lib = scenario_library()
    if scenario_id not in lib:
        raise CampaignError(f"unknown scenario {scenario_id!r}; "
                            f"library has {sorted(lib)}")
    return lib[scenario_id]


def _ensure_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_manifest(out: Path, doc: dict) -> None:
    doc = dict(doc)
    doc["schema"] = 1
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True))


def _golden_worker(args) -> tuple[int, bytes, int, float, float, bool]:
    scenario_id, seed = args
    tr = run(_scenario(scenario_id), seed=seed)
    m = tr.metrics()
    return seed, tr.to_bytes(), len(tr.rows), m.min_cipo, m.max_lk, m.hazard


def _map_ordered(worker, jobs, workers: int):
    """Run jobs through a pool (or inline) preserving job order."""
    if workers <= 1:
        return [worker(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(worker, jobs, chunksize=4))


def run_golden(scenario_id: str, runs: int = 50, seed: int = 0,
               out_dir=None, workers: int = 1) -> GoldenSummary:
    """Reference runs without any injection; any hazard aborts."""
    if runs < 1:
        raise CampaignError("need at least one golden run")
    started = time.perf_counter()
    seeds = tuple(range(seed, seed + runs))
    results = _map_ordered(_golden_worker,
                           [(scenario_id, s) for s in seeds], workers)
    rows = []
    hazards = 0
    out = _ensure_dir(Path(out_dir)) if out_dir is not None else None
    if out is not None:
        _ensure_dir(out / "traces")
    for s, blob, scenes, min_cipo, max_lk, hazard in results:
        hazards += int(hazard)
        digest = hashlib.sha256(blob).hexdigest()
        rows.append((s, scenes, min_cipo, max_lk, hazard, digest))
        if out is not None:
            (out / "traces" / f"golden_{scenario_id}_{s}.csv").write_bytes(blob)
    summary = GoldenSummary(
        scenario_id=scenario_id,
        seeds=seeds,
        min_cipo=float(min(r[2] for r in rows)),
        max_lk=float(max(r[3] for r in rows)),
        median_min_cipo=float(np.median([r[2] for r in rows])),
        median_max_lk=float(np.median([r[3] for r in rows])),
        hazards=hazards,
        elapsed=time.perf_counter() - started,
    )
    if out is not None:
        lines = [GOLDEN_CSV_HEADER]
        for s, scenes, min_cipo, max_lk, hazard, digest in rows:
            lines.append(f"{s},{scenes},{min_cipo!r},{max_lk!r},{int(hazard)},{digest}")
        (out / "golden.csv").write_text("\n".join(lines) + "\n")
        _write_manifest(out, {
            "kind": "golden", "scenario": scenario_id, "runs": runs,
            "seed": seed, "min_cipo": summary.min_cipo,
            "max_lk": summary.max_lk, "hazards": hazards,
        })
    if hazards:
        bad = [r[0] for r in rows if r[4]]
        raise GoldenHazard(
            f"{hazards} golden hazard(s) on {scenario_id}, seeds {bad}")
    return summary


def _campaign_label(config: CampaignConfig) -> str:
    if config.target in ("random", ""):
        return config.model
    return f"{config.model}:{config.target}"


def _experiment_worker(args) -> tuple[int, bytes, str, list[str], dict]:
    scenario_id, index, seed, plan_json = args
    sc = _scenario(scenario_id)
    plan = plan_from_json(plan_json)
    inj = Injector(plan)
    tr = run(sc, seed=seed, injector=inj)
    m = tr.metrics()
    row = {
        "index": index, "model": plan.model, "fault": plan.fault.name,
        "start": plan.start, "duration": plan.duration, "seed": seed,
        "scenes": len(tr.rows), "min_cipo": m.min_cipo, "max_lk": m.max_lk,
        "hazard": int(m.hazard),
        "collision_frame": "" if tr.collision_frame is None else tr.collision_frame,
    }
    return index, tr.to_bytes(), plan_json, inj.log_lines(), row


def run_random_campaign(config: CampaignConfig, out_dir=None,
                        workers: int = 1) -> list[dict]:
    """One fault model against one scenario, many seeded experiments."""
    sc = _scenario(config.scenario_id)
    started = time.perf_counter()
    jobs = []
    for i in range(config.experiments):
        seed = config.seed + i
        plan = make_plan(config, sc.scenes, seed)
        jobs.append((config.scenario_id, i, seed, plan_to_json(plan)))
    results = _map_ordered(_experiment_worker, jobs, workers)

    out = Path(out_dir) if out_dir is not None else Path(config.out_dir)
    _ensure_dir(out / "traces")
    _ensure_dir(out / "injections")
    rows = []
    lines = [RUN_CSV_HEADER]
    for index, blob, plan_json, log, row in results:
        row["digest"] = hashlib.sha256(blob).hexdigest()
        rows.append(row)
        (out / "traces" / f"exp_{index:05d}.csv").write_bytes(blob)
        (out / "injections" / f"exp_{index:05d}.json").write_text(plan_json)
        if log:
            (out / "injections" / f"exp_{index:05d}.log").write_text(
                "\n".join(log) + "\n")
        lines.append(",".join(str(row[c]) for c in RUN_CSV_HEADER.split(",")))
    (out / "runs.csv").write_text("\n".join(lines) + "\n")
    _write_manifest(out, {
        "kind": "random-campaign", "scenario": config.scenario_id,
        "model": config.model, "target": config.target,
        "label": _campaign_label(config),
        "experiments": config.experiments, "seed": config.seed,
        "hazards": sum(r["hazard"] for r in rows),
        "elapsed": time.perf_counter() - started,
    })
    return rows


def _training_worker(args) -> list:
    """Simulate one truncated injected run, return its training windows."""
    scenario_id, type_name, seed = args
    sc = _scenario(scenario_id)
    cfg = CampaignConfig(scenario_id=scenario_id, model="OneFixed",
                         target=type_name, seed=seed)
    plan = make_plan(cfg, sc.scenes, seed)
    inj = Injector(plan)
    tr = run(sc, seed=seed, injector=inj,
             stop_after=plan.start + TRAIN_TAIL)
    mat = trace_matrix(tr)
    lo = max(1, plan.start - TRAIN_WINDOW)
    hi = min(len(mat) - 2, plan.start + TRAIN_WINDOW)
    centers = list(range(lo, hi + 1))
    if not centers:
        return []
    return [matrix_triples(mat, centers)]


def train_model(scenario_id: str, out_path, reps: int = 30, seed: int = 0,
                golden_runs: int = 5, workers: int = 1,
                manifest_path=None) -> Path:
    """Assemble the training windows and fit the model.

    The set mixes full golden coverage with windows straddling one
    single-scene injection per fault type and replication, which is
    where the fault-conditional dynamics live.
    """
    sc = _scenario(scenario_id)
    types = catalog()
    chunks = []
    for g in range(golden_runs):
        tr = run(sc, seed=seed + g)
        mat = trace_matrix(tr)
        chunks.append(matrix_triples(mat, range(1, len(mat) - 1)))
    jobs = []
    plan_seed = seed + golden_runs
    for t_idx, ft in enumerate(types):
        for rep in range(reps):
            jobs.append((scenario_id, ft.name,
                         plan_seed + t_idx * reps + rep))
    for result in _map_ordered(_training_worker, jobs, workers):
        chunks.extend(result)
    data = np.concatenate(chunks, axis=0)
    net = em_train(build_topology(), data)
    out_path = Path(out_path)
    _ensure_dir(out_path.parent)
    save_model(net, out_path)
    if manifest_path is not None:
        doc = {
            "scenario": scenario_id, "seed": seed,
            "golden_runs": golden_runs, "triples": int(len(data)),
            "fault_types": {ft.name: reps for ft in types},
        }
        Path(manifest_path).write_text(json.dumps(doc, indent=2, sort_keys=True))
    return out_path


def replay_pair(scenario_id: str, golden_seed: int, scene: int,
                fault_name: str) -> tuple[Trace, bool]:
    """Inject the mined fault at its mined scene and rerun the world."""
    sc = _scenario(scenario_id)
    plan = FaultPlan(model="OneFixed", start=scene, duration=1,
                     fault=fault_by_name(fault_name), seed=golden_seed)
    tr = run(sc, seed=golden_seed, injector=Injector(plan))
    return tr, tr.metrics().hazard


def _replay_worker(args) -> tuple[int, bool]:
    scenario_id, golden_seed, idx, scene, fault_name = args
    _, manifested = replay_pair(scenario_id, golden_seed, scene, fault_name)
    return idx, manifested


@dataclass
class MiningCampaign:
    scenario_id: str
    golden_seed: int
    mining: MiningResult
    manifested: tuple[bool, ...]
    scenes: int
    catalog_size: int
    mine_seconds: float
    per_replay_seconds: float
    replay_seconds: float

    @property
    def manifestation_rate(self) -> float:
        return (sum(self.manifested) / len(self.manifested)
                if self.manifested else 0.0)

    @property
    def critical_scene_percent(self) -> float:
        return 100.0 * len(self.mining.critical_scenes()) / self.scenes

    @property
    def critical_fault_percent(self) -> float:
        return 100.0 * len(self.mining.pairs) / (self.catalog_size * self.scenes)

    @property
    def speedup(self) -> float:
        exhaustive = self.scenes * self.catalog_size * self.per_replay_seconds
        actual = self.mine_seconds + len(self.mining.pairs) * self.per_replay_seconds
        return exhaustive / actual if actual > 0 else float("inf")


def mine_and_validate(model_path, scenario_id: str, golden_seed: int = 0,
                      out_dir=None, workers: int = 1,
                      gibbs: GibbsConfig | None = None,
                      progress=None) -> MiningCampaign:
    """Mine the trained model against a golden run, then replay each hit."""
    net = load_model(model_path)
    sc = _scenario(scenario_id)
    t0 = time.perf_counter()
    golden = run(sc, seed=golden_seed)
    per_replay = time.perf_counter() - t0
    if golden.metrics().hazard:
        raise GoldenHazard(f"golden run of {scenario_id} is already hazardous")

    t0 = time.perf_counter()
    mining = mine_trace(net, golden, sc, gibbs=gibbs, progress=progress)
    mine_seconds = time.perf_counter() - t0

    t0 = time.perf_counter()
    jobs = [(scenario_id, golden_seed, i, p.scene, p.fault)
            for i, p in enumerate(mining.pairs)]
    verdicts = _map_ordered(_replay_worker, jobs, workers)
    manifested = tuple(v for _, v in sorted(verdicts))
    replay_seconds = time.perf_counter() - t0
    if mining.pairs:
        per_replay = replay_seconds / len(mining.pairs)

    result = MiningCampaign(
        scenario_id=scenario_id, golden_seed=golden_seed, mining=mining,
        manifested=manifested, scenes=len(golden.rows),
        catalog_size=len(mining.fault_names),
        mine_seconds=mine_seconds, per_replay_seconds=per_replay,
        replay_seconds=replay_seconds,
    )
    if out_dir is not None:
        out = _ensure_dir(Path(out_dir))
        lines = [FCRIT_CSV_HEADER]
        for p, man in zip(mining.pairs, manifested):
            lines.append(f"{p.scene},{p.fault},{p.golden_long!r},"
                         f"{p.golden_lat!r},{p.est_long!r},{p.est_lat!r},"
                         f"{int(p.flagged)},{int(man)}")
        (out / "fcrit.csv").write_text("\n".join(lines) + "\n")
        _write_manifest(out, {
            "kind": "mining", "scenario": scenario_id, "seed": golden_seed,
            "model_file": str(model_path), "pairs": len(mining.pairs),
            "critical_scenes": mining.critical_scenes(),
            "candidates": mining.candidates,
            "scanned": mining.scanned,
            "flagged_fraction": mining.flagged_fraction,
            "manifestation_rate": result.manifestation_rate,
            "critical_scene_percent": result.critical_scene_percent,
            "critical_fault_percent": result.critical_fault_percent,
            "speedup": result.speedup,
            "mine_seconds": mine_seconds,
            "per_replay_seconds": per_replay,
        })
    return result


def compensation_curve(golden: Trace, injected: Trace) -> np.ndarray:
    """Difference of cumulative brake effort, injected minus golden.

    Frames past an early termination hold the last value so the curve
    always spans the golden run's length.
    """
    gb = np.cumsum([float(r["actuation.brake"]) for r in golden.rows])
    ib = np.cumsum([float(r["actuation.brake"]) for r in injected.rows])
    n = len(gb)
    if len(ib) < n:
        ib = np.concatenate([ib, np.full(n - len(ib), ib[-1] if len(ib) else 0.0)])
    return ib[:n] - gb


def _quartiles(values: np.ndarray) -> tuple[float, ...]:
    q1, med, q3 = (float(v) for v in np.percentile(values, [25, 50, 75]))
    iqr = q3 - q1
    lo = float(values[values >= q1 - 1.5 * iqr].min())
    hi = float(values[values <= q3 + 1.5 * iqr].max())
    return lo, q1, med, q3, hi, float(values.min()), float(values.max()), len(values)


def _module_of(variable: str) -> str:
    return variable.split(".", 1)[0]


def _read_campaign_rows(cdir: Path) -> tuple[dict, list[dict]]:
    manifest = json.loads((cdir / "manifest.json").read_text())
    text = (cdir / "runs.csv").read_text().splitlines()
    if text[0] != RUN_CSV_HEADER:
        raise CampaignError(f"{cdir}: unexpected runs.csv header")
    cols = text[0].split(",")
    rows = []
    for line in text[1:]:
        if not line:
            continue
        cells = line.split(",")
        rows.append(dict(zip(cols, cells)))
    indices = sorted(int(r["index"]) for r in rows)
    if indices != list(range(manifest["experiments"])):
        raise CampaignError(f"{cdir}: experiments missing or duplicated")
    return manifest, rows


def build_report(golden_dir, campaign_dirs, out_dir,
                 golden_summary: GoldenSummary | None = None) -> CampaignReport:
    """Aggregate campaign directories against a golden reference."""
    started = time.perf_counter()
    gdir = Path(golden_dir)
    if not (gdir / "golden.csv").exists():
        raise CampaignError(f"no golden reference under {gdir}")
    gtext = (gdir / "golden.csv").read_text().splitlines()
    if gtext[0] != GOLDEN_CSV_HEADER:
        raise CampaignError("unexpected golden.csv header")
    grows = [line.split(",") for line in gtext[1:] if line]
    gmanifest = json.loads((gdir / "manifest.json").read_text())
    golden_min = min(float(r[2]) for r in grows)
    golden_max = max(float(r[3]) for r in grows)
    if golden_summary is None:
        golden_summary = GoldenSummary(
            scenario_id=gmanifest["scenario"],
            seeds=tuple(int(r[0]) for r in grows),
            min_cipo=golden_min, max_lk=golden_max,
            median_min_cipo=float(np.median([float(r[2]) for r in grows])),
            median_max_lk=float(np.median([float(r[3]) for r in grows])),
            hazards=sum(int(r[4]) for r in grows), elapsed=0.0)

    out = _ensure_dir(Path(out_dir))
    labels = []
    hazard_counts: dict[str, int] = {}
    experiment_counts: dict[str, int] = {}
    quartiles: dict[tuple[str, str], tuple[float, ...]] = {}
    module_hits: dict[str, list[int]] = {}
    comp_files: list[str] = []
    golden_traces = {int(r[0]): gdir / "traces"
                     / f"golden_{gmanifest['scenario']}_{int(r[0])}.csv"
                     for r in grows}

    box_lines = [BOX_CSV_HEADER]
    for cdir in [Path(d) for d in campaign_dirs]:
        manifest, rows = _read_campaign_rows(cdir)
        label = manifest.get("label", cdir.name)
        labels.append(label)
        hazard_counts[label] = sum(int(r["hazard"]) for r in rows)
        experiment_counts[label] = len(rows)
        mins = np.array([float(r["min_cipo"]) for r in rows])
        maxs = np.array([float(r["max_lk"]) for r in rows])
        quartiles[(label, "min_cipo")] = _quartiles(mins)
        quartiles[(label, "max_lk")] = _quartiles(maxs)
        for metric, arr in (("min_cipo", mins), ("max_lk", maxs)):
            q = quartiles[(label, metric)]
            box_lines.append(label + "," + metric + ","
                             + ",".join(repr(v) for v in q[:7]) + f",{q[7]}")
        for r in rows:
            target = r["fault"].split(":")[0]
            viol = int(float(r["min_cipo"]) < golden_min
                       or float(r["max_lk"]) > golden_max)
            module_hits.setdefault(_module_of(target), []).append(viol)
        # compensation curves for windowed injections with a golden twin
        if manifest.get("model", "") in ("MFixed", "MRandom"):
            for r in rows:
                s = int(r["seed"])
                if s not in golden_traces or not golden_traces[s].exists():
                    continue
                g = Trace.load(golden_traces[s])
                t = Trace.load(cdir / "traces" / f"exp_{int(r['index']):05d}.csv")
                c = compensation_curve(g, t)
                name = f"compensation_{label.replace(':', '_')}_{int(r['index']):05d}.csv"
                lines = ["scene,c"] + [f"{k},{v!r}" for k, v in enumerate(c)]
                (out / name).write_text("\n".join(lines) + "\n")
                comp_files.append(name)

    modules = sorted({_module_of(n) for n in injectable_names()})
    mvf: dict[str, float] = {}
    for mod in modules:
        hits = module_hits.get(mod, [])
        mvf[mod] = 100.0 * sum(hits) / len(hits) if hits else 0.0
    ranking = tuple(sorted(mvf, key=lambda m: (-mvf[m], m)))

    mvf_lines = [MVF_CSV_HEADER]
    for mod in ranking:
        hits = module_hits.get(mod, [])
        mvf_lines.append(f"{mod},{len(hits)},{sum(hits)},{mvf[mod]!r}")
    (out / "mvf.csv").write_text("\n".join(mvf_lines) + "\n")
    (out / "boxplot.csv").write_text("\n".join(box_lines) + "\n")
    hz_lines = ["label,experiments,hazards,rate"]
    for label in labels:
        n = experiment_counts[label]
        h = hazard_counts[label]
        hz_lines.append(f"{label},{n},{h},{h / n!r}")
    (out / "hazards.csv").write_text("\n".join(hz_lines) + "\n")

    return CampaignReport(
        golden=golden_summary,
        labels=tuple(labels),
        hazard_counts=hazard_counts,
        experiment_counts=experiment_counts,
        mvf=mvf,
        mvf_ranking=ranking,
        quartiles=quartiles,
        compensation_files=tuple(comp_files),
        elapsed=time.perf_counter() - started,
    )
