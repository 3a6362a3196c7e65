"""Critical-pair mining: which (scene, fault) combinations would turn a
clean run unsafe, answered from the trained net instead of replays.

For each candidate scene k of a golden trace the fault is grafted in as
an intervention on the faulted variable's middle-slice node.  Nodes the
intervention cannot reach keep their recorded values as evidence; the
reachable ones are re-estimated by Gibbs sampling, all candidate scenes
in one vectorized pass per fault type.  The estimated speed, heading
and steering then feed the same stop-distance assessment the simulator
runs, and the pair is kept when the golden frame was safe but the
counterfactual one is not.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from faultminer.bayes.infer import GibbsConfig, gibbs_infer
from faultminer.bayes.network import NetError, TemporalBayesNet, trace_matrix
from faultminer.faults import FaultType, catalog
from faultminer.kinematics import VehicleState
from faultminer.registry import get_spec, numeric_columns
from faultminer.safety import SafetyConfig, assess, is_critical
from faultminer.scenario import Scenario, Trace, VehicleParams, scene_objects

__all__ = ["MinedPair", "MiningResult", "mine_trace", "fault_do_map"]


@dataclass(frozen=True)
class MinedPair:
    """One (scene, fault) combination the net predicts to be unsafe."""

    scene: int
    fault: str
    golden_long: float
    golden_lat: float
    est_long: float
    est_lat: float
    est_speed: float
    est_heading: float
    flagged: bool


@dataclass
class MiningResult:
    scenario_id: str
    seed: int
    pairs: list[MinedPair]
    candidates: int            # golden-safe scenes that were scanned
    scanned: int               # (scene, fault) combinations examined
    flagged_fraction: float    # share of estimates with convergence doubt
    elapsed: float
    fault_names: tuple[str, ...] = field(default=())

    def critical_scenes(self) -> list[int]:
        return sorted({p.scene for p in self.pairs})

    def by_fault(self) -> dict[str, list[MinedPair]]:
        out: dict[str, list[MinedPair]] = {}
        for p in self.pairs:
            out.setdefault(p.fault, []).append(p)
        return out


def fault_do_map(net: TemporalBayesNet, fault: FaultType,
                 golden_at_k: np.ndarray) -> dict[int, np.ndarray]:
    """Middle-slice intervention for a fault type, one value per case.

    golden_at_k carries the recorded numeric rows at the faulted scenes,
    shaped (cases, columns); relative rules read their base value there.
    """
    cols = numeric_columns()
    n_cases = len(golden_at_k)
    spec = get_spec(fault.target)
    if spec.kind == "categorical":
        if fault.rule != "set_category":
            raise NetError(f"{fault.name}: categorical targets only "
                           "support fixed categories")
        out = {}
        for c in spec.categories:
            node = net.node(1, f"{fault.target}={c}")
            val = 1.0 if c == fault.category else 0.0
            out[node] = np.full(n_cases, val)
        return out
    ci = cols.index(fault.target)
    base = golden_at_k[:, ci]
    if fault.rule == "set_max":
        vals = np.full(n_cases, float(spec.bounds[1]))
    elif fault.rule == "set_min":
        vals = np.full(n_cases, float(spec.bounds[0]))
    elif fault.rule == "double":
        vals = 2.0 * base
    elif fault.rule == "halve":
        vals = 0.5 * base
    elif fault.rule == "set_value":
        vals = np.full(n_cases, float(fault.value))
    else:
        raise NetError(f"{fault.name}: rule has no graph intervention")
    return {net.node(1, fault.target): vals}


def _estimated_deltas(trace: Trace, scenario: Scenario, centers: np.ndarray,
                      speed: np.ndarray, heading: np.ndarray,
                      steer_cmd: np.ndarray, vp: VehicleParams,
                      cfg: SafetyConfig, lane) -> tuple[np.ndarray, np.ndarray]:
    """Stop-distance margins at k+1 under the estimated vehicle state."""
    kin = vp.kin
    dt = kin.dt
    long_out = np.empty(len(centers))
    lat_out = np.empty(len(centers))
    xs = np.asarray(trace.column("truth.x"))
    ys = np.asarray(trace.column("truth.y"))
    phis = np.asarray(trace.column("truth.phi"))
    for i, k in enumerate(centers):
        v = max(float(speed[i]), 0.0)
        th = float(heading[i])
        cmd = min(max(float(steer_cmd[i]), -1.0), 1.0)
        phi_k = float(phis[k])
        dphi = min(max(cmd * kin.phi_max - phi_k,
                       -vp.steer_rate_max * dt), vp.steer_rate_max * dt)
        phi = min(max(phi_k + dphi, -kin.phi_max), kin.phi_max)
        state = VehicleState(
            x=float(xs[k]) + v * np.cos(th) * dt,
            y=float(ys[k]) + v * np.sin(th) * dt,
            v=v, theta=th, phi=phi)
        a = assess(state, scene_objects(scenario, int(k) + 1), lane, kin, cfg)
        long_out[i] = a.delta_long
        lat_out[i] = a.delta_lat
    return long_out, lat_out


def mine_trace(net: TemporalBayesNet, trace: Trace, scenario: Scenario,
               faults: list[FaultType] | None = None,
               gibbs: GibbsConfig | None = None,
               vp: VehicleParams | None = None,
               safety_cfg: SafetyConfig | None = None,
               progress=None) -> MiningResult:
    """Scan a golden trace for fault types that would break it."""
    if not net.trained:
        raise NetError("mining needs a trained model")
    if trace.scenario_id != scenario.scenario_id:
        raise NetError("trace and scenario disagree")
    faults = list(catalog()) if faults is None else list(faults)
    gibbs = gibbs or GibbsConfig()
    vp = vp or VehicleParams()
    cfg = safety_cfg or SafetyConfig()
    lane = scenario.lane()
    started = time.perf_counter()

    mat = trace_matrix(trace)
    dl = np.asarray(trace.column("assess.delta_long"))
    dlat = np.asarray(trace.column("assess.delta_lat"))
    n = len(mat)
    safe = (dl > 0) & (dlat > 0)
    centers = np.array([k for k in range(1, n - 1) if safe[k] and safe[k + 1]],
                       dtype=int)

    dag = net.as_dag()
    C = net.n_cols
    query = (net.node(2, "inertial.speed"), net.node(2, "inertial.heading"),
             net.node(1, "actuation.steer"))
    pairs: list[MinedPair] = []
    flagged_total = 0
    scanned = 0

    # all rules on one target share the intervened node set, hence the
    # same reachable set and evidence; they ride along as extra cases of
    # a single sampling pass
    groups: dict[str, list[FaultType]] = {}
    for fault in faults:
        groups.setdefault(fault.target, []).append(fault)

    done = 0
    for target, group in groups.items():
        if not centers.size:
            break
        per_fault = [fault_do_map(net, f, mat[centers]) for f in group]
        do = {node: np.concatenate([dm[node] for dm in per_fault])
              for node in per_fault[0]}
        reach = dag.descendants(list(do))
        latent = reach - set(do)
        evidence: dict[int, np.ndarray] = {}
        for node in range(dag.n_nodes):
            if node in do or node in latent:
                continue
            s, ci = divmod(node, C)
            evidence[node] = np.tile(mat[centers - 1 + s, ci], len(group))
        res = gibbs_infer(dag, evidence, do, query, gibbs)
        for g, fault in enumerate(group):
            sel = slice(g * len(centers), (g + 1) * len(centers))
            est_long, est_lat = _estimated_deltas(
                trace, scenario, centers, res.mean[sel, 0],
                res.mean[sel, 1], res.mean[sel, 2], vp, cfg, lane)
            case_flag = res.flagged[sel].any(axis=1)
            flagged_total += int(case_flag.sum())
            scanned += len(centers)
            means = res.mean[sel]
            for i, k in enumerate(centers):
                if is_critical(dl[k + 1], dlat[k + 1], est_long[i], est_lat[i]):
                    pairs.append(MinedPair(
                        scene=int(k), fault=fault.name,
                        golden_long=float(dl[k + 1]),
                        golden_lat=float(dlat[k + 1]),
                        est_long=float(est_long[i]), est_lat=float(est_lat[i]),
                        est_speed=float(means[i, 0]),
                        est_heading=float(means[i, 1]),
                        flagged=bool(case_flag[i])))
        done += len(group)
        if progress is not None:
            progress(done, len(faults), target, len(pairs))

    pairs.sort(key=lambda p: (p.scene, p.fault))
    return MiningResult(
        scenario_id=trace.scenario_id,
        seed=trace.seed,
        pairs=pairs,
        candidates=int(centers.size),
        scanned=scanned,
        flagged_fraction=flagged_total / scanned if scanned else 0.0,
        elapsed=time.perf_counter() - started,
        fault_names=tuple(f.name for f in faults),
    )
