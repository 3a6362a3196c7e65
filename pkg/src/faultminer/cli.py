"""Campaign front end: golden references, fault sweeps, model training,
mining with replay validation, and report assembly from disk artifacts.

Exit codes: 0 success, 2 bad configuration, 3 golden run produced a
hazard (a misconfigured world, not a finding), 4 too many estimates
failed their convergence check.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from faultminer.bayes import (
    GaussianDag,
    GibbsConfig,
    build_topology,
    em_train,
    gibbs_infer,
    sample_triples,
)
from faultminer.campaign import (
    CampaignError,
    GoldenHazard,
    build_report,
    mine_and_validate,
    run_golden,
    run_random_campaign,
    train_model,
)
from faultminer.faults import CampaignConfig, FaultError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GOLDEN_HAZARD = 3
EXIT_UNCONVERGED = 4

# mined estimates carrying a convergence flag beyond this share make the
# whole mining pass untrustworthy
FLAGGED_LIMIT = 0.05

_GIBBS_KEYS = {f.name for f in dataclasses.fields(GibbsConfig)}


def _load_json(path: str, what: str) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as e:
        raise CampaignError(f"cannot read {what} {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise CampaignError(f"{what} {path} is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise CampaignError(f"{what} {path} must hold a JSON object")
    return doc


def _campaign_config(path: str, args) -> CampaignConfig:
    doc = _load_json(path, "config")
    allowed = {f.name for f in dataclasses.fields(CampaignConfig)}
    for key in doc:
        if key not in allowed:
            raise CampaignError(f"unknown config field {key!r}")
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.out is not None:
        doc["out_dir"] = args.out
    try:
        return CampaignConfig(**doc)
    except TypeError as e:
        raise CampaignError(f"bad config: {e}") from None


def cmd_golden(args) -> int:
    summary = run_golden(args.scenario, runs=args.runs, seed=args.seed or 0,
                         out_dir=args.out, workers=args.workers)
    print(f"{summary.scenario_id}: {len(summary.seeds)} golden runs, "
          f"0 hazards in {summary.elapsed:.1f}s")
    print(f"  min clear gap   worst {summary.min_cipo:.2f} m, "
          f"median {summary.median_min_cipo:.2f} m")
    print(f"  max lane offset worst {summary.max_lk:.2f} m, "
          f"median {summary.median_max_lk:.2f} m")
    print(f"  reference written to {args.out}")
    return EXIT_OK


def cmd_random_campaign(args) -> int:
    if args.config is None:
        raise CampaignError("random-campaign needs --config")
    config = _campaign_config(args.config, args)
    report_dir = run_random_campaign(config, workers=args.workers)
    print(f"{config.scenario_id} {config.model}:{config.target} "
          f"x{config.experiments} -> {report_dir}")
    return EXIT_OK


def cmd_train(args) -> int:
    out = args.out or f"{args.scenario}.model"
    path = train_model(args.scenario, out, reps=args.runs,
                       seed=args.seed or 0, workers=args.workers)
    print(f"model written to {path}")
    return EXIT_OK


def cmd_mine(args) -> int:
    limit = FLAGGED_LIMIT
    gibbs = None
    if args.config is not None:
        doc = _load_json(args.config, "mining config")
        limit = float(doc.pop("flagged_limit", limit))
        bad = set(doc) - _GIBBS_KEYS
        if bad:
            raise CampaignError(f"unknown mining config field {bad.pop()!r}")
        if doc:
            gibbs = GibbsConfig(**doc)
    mc = mine_and_validate(args.model, args.scenario,
                           golden_seed=args.seed or 0, out_dir=args.out,
                           workers=args.workers, gibbs=gibbs)
    m = mc.mining
    print(f"{mc.scenario_id}: scanned {m.scanned} (scene, fault) pairs "
          f"in {mc.mine_seconds:.1f}s, mined {len(m.pairs)}")
    print(f"  critical scenes {mc.critical_scene_percent:.2f}%  "
          f"critical faults {mc.critical_fault_percent:.2f}%")
    print(f"  manifestation rate {mc.manifestation_rate:.0%}  "
          f"speedup {mc.speedup:.0f}x over exhaustive replay")
    print(f"  convergence flags on {m.flagged_fraction:.1%} of estimates")
    if args.out:
        print(f"  pairs written to {args.out}")
    if m.flagged_fraction > limit:
        print(f"too many unconverged estimates (limit {limit:.1%})",
              file=sys.stderr)
        return EXIT_UNCONVERGED
    return EXIT_OK


def cmd_report(args) -> int:
    golden_dir, campaign_dirs = args.dirs[0], args.dirs[1:]
    if not campaign_dirs:
        raise CampaignError("report needs a golden directory and at least "
                            "one campaign directory")
    rep = build_report(golden_dir, campaign_dirs, args.out)
    for label in rep.labels:
        print(f"{label}: {rep.experiment_counts[label]} experiments, "
              f"{rep.hazard_counts[label]} hazards")
    for module in rep.mvf_ranking:
        print(f"  MVF {module}: {rep.mvf[module]:.1f}%")
    print(f"report written to {args.out}")
    return EXIT_OK


def _selfcheck_em(rng: np.random.Generator) -> tuple[bool, str]:
    truth = build_topology()
    for c in truth.cols:
        pi, pp = len(truth.intra[c]), len(truth.prev[c])
        truth.boundary[c] = (rng.normal(size=pi) * 0.3, rng.normal(), 0.2)
        truth.transition[c] = (rng.normal(size=pi + pp) * 0.3, rng.normal(), 0.2)
    truth.trained = True
    triples = sample_triples(truth, 6000, seed=int(rng.integers(1 << 30)))
    fit = build_topology()
    em_train(fit, triples, iterations=3)
    worst = 0.0
    for c in truth.cols:
        for store_t, store_f in ((truth.boundary, fit.boundary),
                                 (truth.transition, fit.transition)):
            wt, bt, _ = store_t[c]
            wf, bf, _ = store_f[c]
            err = np.abs(np.append(wt, bt) - np.append(wf, bf))
            scale = np.maximum(np.abs(np.append(wt, bt)), 1.0)
            worst = max(worst, float((err / scale).max()))
    return worst < 0.1, f"parameter recovery, worst error {worst:.1%}"


def _selfcheck_gibbs(rng: np.random.Generator) -> tuple[bool, str]:
    n = 6
    parents = [np.arange(max(0, i - 2), i) for i in range(n)]
    weights = [rng.normal(size=len(p)) * 0.5 for p in parents]
    dag = GaussianDag(names=[f"v{i}" for i in range(n)], parents=parents,
                      weights=weights, intercepts=rng.normal(size=n),
                      sigmas=np.full(n, 0.5))
    mean, cov = dag.joint_moments()
    obs = {n - 1: 1.5}
    keep = [i for i in range(n) if i not in obs]
    oi = [n - 1]
    sub = cov[np.ix_(keep, oi)] @ np.linalg.inv(cov[np.ix_(oi, oi)])
    exact = mean[keep] + (sub @ (np.array([1.5]) - mean[oi])).ravel()
    res = gibbs_infer(dag, obs, {}, keep,
                      GibbsConfig(samples=4000, seed=int(rng.integers(1 << 30))))
    err = float(np.abs(res.mean[0] - exact).max())
    ok = err < 0.05 and not res.any_flagged
    return ok, f"posterior agreement, worst error {err:.3f}"


def cmd_selfcheck(args) -> int:
    rng = np.random.default_rng(args.seed or 0)
    failed = False
    for name, check in (("train", _selfcheck_em), ("infer", _selfcheck_gibbs)):
        ok, detail = check(rng)
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        failed |= not ok
    return EXIT_UNCONVERGED if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="faultminer",
        description="fault-injection campaigns and model-guided mining")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=False, model=False):
        if scenario:
            p.add_argument("--scenario", required=True,
                           help="built-in scenario id (A1..A6)")
        if model:
            p.add_argument("--model", required=True, help="trained model file")
        p.add_argument("--config", help="JSON settings file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out", default=None, help="output directory or file")

    p = sub.add_parser("golden", help="reference runs, no injection")
    common(p, scenario=True)
    p.add_argument("--runs", type=int, default=50)
    p.set_defaults(fn=cmd_golden)

    p = sub.add_parser("random-campaign", help="fault sweep from a config file")
    common(p)
    p.set_defaults(fn=cmd_random_campaign)

    p = sub.add_parser("train", help="fit the scene-transition model")
    common(p, scenario=True)
    p.add_argument("--runs", type=int, default=30,
                   help="injection replications per fault type")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("mine", help="mine critical pairs and replay them")
    common(p, scenario=True, model=True)
    p.set_defaults(fn=cmd_mine)

    p = sub.add_parser("report", help="aggregate campaign directories")
    common(p)
    p.add_argument("dirs", nargs="+",
                   help="golden directory followed by campaign directories")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("selfcheck", help="synthetic recovery checks")
    common(p)
    p.set_defaults(fn=cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except GoldenHazard as e:
        print(f"golden hazard: {e}", file=sys.stderr)
        return EXIT_GOLDEN_HAZARD
    except (CampaignError, FaultError, ValueError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
