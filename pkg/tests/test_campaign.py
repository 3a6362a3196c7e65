"""Campaign orchestration: persistence layout, determinism, reporting."""
import json

import numpy as np
import pytest

from faultminer.bayes.train import TrainError
from faultminer.campaign import (
    BOX_CSV_HEADER,
    GOLDEN_CSV_HEADER,
    MVF_CSV_HEADER,
    RUN_CSV_HEADER,
    CampaignError,
    build_report,
    compensation_curve,
    replay_pair,
    run_golden,
    run_random_campaign,
    train_model,
)
from faultminer.faults import CampaignConfig
from faultminer.registry import injectable_names
from faultminer.scenario import run, scenario_library


def small_golden(out, runs=2):
    return run_golden("A5", runs=runs, seed=0, out_dir=out)


class TestGolden:
    def test_layout_and_summary(self, tmp_path):
        out = tmp_path / "gold"
        s = small_golden(out)
        text = (out / "golden.csv").read_text().splitlines()
        assert text[0] == GOLDEN_CSV_HEADER
        assert len(text) == 3
        assert (out / "traces" / "golden_A5_0.csv").exists()
        assert (out / "traces" / "golden_A5_1.csv").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["scenario"] == "A5"
        assert s.hazards == 0
        assert s.min_cipo <= s.median_min_cipo

    def test_same_seeds_same_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        small_golden(a)
        small_golden(b)
        assert (a / "golden.csv").read_bytes() == (b / "golden.csv").read_bytes()
        assert (a / "traces" / "golden_A5_1.csv").read_bytes() \
            == (b / "traces" / "golden_A5_1.csv").read_bytes()

    def test_zero_runs_rejected(self, tmp_path):
        with pytest.raises(CampaignError):
            run_golden("A5", runs=0, out_dir=tmp_path / "x")

    def test_unknown_scenario_rejected(self, tmp_path):
        with pytest.raises(CampaignError):
            run_golden("Z9", runs=1, out_dir=tmp_path / "x")


class TestRandomCampaign:
    CFG = dict(scenario_id="A5", model="OneRandom", experiments=3, seed=11)

    def test_layout_and_manifest(self, tmp_path):
        out = tmp_path / "camp"
        rows = run_random_campaign(CampaignConfig(**self.CFG), out_dir=out)
        text = (out / "runs.csv").read_text().splitlines()
        assert text[0] == RUN_CSV_HEADER
        assert [r["index"] for r in rows] == [0, 1, 2]
        for i in range(3):
            assert (out / "traces" / f"exp_{i:05d}.csv").exists()
            plan = json.loads(
                (out / "injections" / f"exp_{i:05d}.json").read_text())
            assert plan["model"] == "OneRandom"
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["experiments"] == 3
        assert manifest["hazards"] == sum(r["hazard"] for r in rows)

    def test_same_config_same_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run_random_campaign(CampaignConfig(**self.CFG), out_dir=a)
        run_random_campaign(CampaignConfig(**self.CFG), out_dir=b)
        assert (a / "runs.csv").read_bytes() == (b / "runs.csv").read_bytes()

    def test_fixed_target_campaign(self, tmp_path):
        rows = run_random_campaign(
            CampaignConfig(scenario_id="A5", model="OneFixed",
                           target="actuation.brake", experiments=2, seed=5),
            out_dir=tmp_path / "c")
        assert all(r["fault"].startswith("actuation.brake") for r in rows)


class TestReport:
    @pytest.fixture(scope="class")
    def artifacts(self, tmp_path_factory):
        root = tmp_path_factory.mktemp("report")
        summary = run_golden("A5", runs=2, seed=0, out_dir=root / "gold")
        run_random_campaign(
            CampaignConfig(scenario_id="A5", model="OneRandom",
                           experiments=3, seed=11),
            out_dir=root / "camp")
        return root, summary

    def test_csv_headers_and_mvf_range(self, artifacts):
        root, summary = artifacts
        rep = build_report(root / "gold", [root / "camp"], root / "rep",
                           golden_summary=summary)
        assert (root / "rep" / "mvf.csv").read_text().splitlines()[0] \
            == MVF_CSV_HEADER
        assert (root / "rep" / "boxplot.csv").read_text().splitlines()[0] \
            == BOX_CSV_HEADER
        assert all(0.0 <= v <= 100.0 for v in rep.mvf.values())
        # every injectable module shows up, hit or not
        want = {n.split(".")[0] for n in injectable_names()}
        assert set(rep.mvf) == want

    def test_untargeted_module_scores_zero(self, artifacts):
        root, summary = artifacts
        rep = build_report(root / "gold", [root / "camp"], root / "rep2",
                           golden_summary=summary)
        targeted = set()
        for line in (root / "camp" / "runs.csv").read_text().splitlines()[1:]:
            targeted.add(line.split(",")[2].split(".")[0])
        for mod, val in rep.mvf.items():
            if mod not in targeted:
                assert val == 0.0

    def test_ranking_is_descending(self, artifacts):
        root, summary = artifacts
        rep = build_report(root / "gold", [root / "camp"], root / "rep3",
                           golden_summary=summary)
        vals = [rep.mvf[m] for m in rep.mvf_ranking]
        assert vals == sorted(vals, reverse=True)

    def test_quartiles_are_ordered(self, artifacts):
        root, summary = artifacts
        rep = build_report(root / "gold", [root / "camp"], root / "rep4",
                           golden_summary=summary)
        for q in rep.quartiles.values():
            lo, q1, med, q3, hi = q[:5]
            assert lo <= q1 <= med <= q3 <= hi

    def test_missing_golden_rejected(self, artifacts, tmp_path):
        root, _ = artifacts
        with pytest.raises(CampaignError):
            build_report(tmp_path / "nowhere", [root / "camp"], tmp_path / "r")

    def test_tampered_golden_header_rejected(self, artifacts, tmp_path):
        root, _ = artifacts
        bad = tmp_path / "bad"
        bad.mkdir()
        src = (root / "gold" / "golden.csv").read_text().splitlines()
        (bad / "golden.csv").write_text(
            "\n".join(["seed,scenes,who,knows"] + src[1:]) + "\n")
        (bad / "manifest.json").write_text(
            (root / "gold" / "manifest.json").read_text())
        with pytest.raises(CampaignError):
            build_report(bad, [root / "camp"], tmp_path / "r")

    def test_dropped_experiment_detected(self, artifacts, tmp_path):
        root, summary = artifacts
        broken = tmp_path / "broken"
        broken.mkdir()
        lines = (root / "camp" / "runs.csv").read_text().splitlines()
        (broken / "runs.csv").write_text("\n".join(lines[:-1]) + "\n")
        (broken / "manifest.json").write_text(
            (root / "camp" / "manifest.json").read_text())
        with pytest.raises(CampaignError):
            build_report(root / "gold", [broken], tmp_path / "r",
                         golden_summary=summary)


class TestCompensation:
    def test_identical_runs_cancel_exactly(self):
        sc = scenario_library()["A5"]
        a = run(sc, seed=3)
        b = run(sc, seed=3)
        assert not compensation_curve(a, b).any()

    def test_short_run_pads_with_its_last_value(self):
        sc = scenario_library()["A5"]
        a = run(sc, seed=3)
        b = run(sc, seed=3, stop_after=100)
        c = compensation_curve(a, b)
        assert len(c) == len(a.rows)


class TestTrainAndReplay:
    def test_insufficient_data_guard(self, tmp_path):
        with pytest.raises(TrainError):
            train_model("A5", tmp_path / "m.model", reps=1, golden_runs=1)

    def test_replay_pair_reruns_the_world(self):
        tr, hazard = replay_pair("A5", 0, 104, "actuation.brake:set_min")
        assert tr.scenario_id == "A5"
        assert hazard
