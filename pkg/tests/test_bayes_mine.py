import numpy as np
import pytest

from faultminer.bayes import NetError, build_topology, mine_trace, fault_do_map
from faultminer.bayes.infer import GibbsConfig
from faultminer.bayes.network import trace_matrix
from faultminer.faults import FaultType, catalog
from faultminer.registry import get_spec, numeric_columns
from faultminer.safety import is_critical
from faultminer.scenario import run, scenario_library

FAST = GibbsConfig(burn_in=20, samples=200, chains=2, seed=7)


def synthetic_net(seed=0):
    """Topology with random parameters; values are arbitrary but legal."""
    net = build_topology()
    rng = np.random.default_rng(seed)
    for c in net.cols:
        pi, pp = len(net.intra[c]), len(net.prev[c])
        net.boundary[c] = (rng.normal(size=pi) * 0.2, rng.normal(), 0.3)
        net.transition[c] = (rng.normal(size=pi + pp) * 0.2, rng.normal(), 0.3)
    net.trained = True
    return net


@pytest.fixture(scope="module")
def short_golden():
    sc = scenario_library()["A5"]
    return run(sc, seed=0, stop_after=60), sc


class TestFaultDoMap:
    def setup_method(self):
        self.net = build_topology()

    def test_bounded_rules_pin_the_bounds(self):
        spec = get_spec("actuation.brake")
        base = np.zeros((4, self.net.n_cols))
        for rule, want in (("set_max", spec.bounds[1]), ("set_min", spec.bounds[0])):
            dm = fault_do_map(self.net, FaultType("actuation.brake", rule), base)
            node = self.net.node(1, "actuation.brake")
            assert set(dm) == {node}
            np.testing.assert_array_equal(dm[node], np.full(4, want))

    def test_relative_rules_scale_the_recorded_value(self):
        ci = numeric_columns().index("planning.obstacle_gap")
        base = np.zeros((3, self.net.n_cols))
        base[:, ci] = [10.0, 4.0, -2.0]
        dbl = fault_do_map(self.net, FaultType("planning.obstacle_gap", "double"), base)
        hlv = fault_do_map(self.net, FaultType("planning.obstacle_gap", "halve"), base)
        node = self.net.node(1, "planning.obstacle_gap")
        np.testing.assert_allclose(dbl[node], [20.0, 8.0, -4.0])
        np.testing.assert_allclose(hlv[node], [5.0, 2.0, -1.0])

    def test_set_value_ignores_the_recorded_value(self):
        dm = fault_do_map(
            self.net, FaultType("planning.target_speed", "set_value", value=3.5),
            np.ones((2, self.net.n_cols)) * 99.0)
        np.testing.assert_array_equal(
            dm[self.net.node(1, "planning.target_speed")], [3.5, 3.5])

    def test_categorical_fault_clamps_the_whole_indicator_block(self):
        spec = get_spec("perception.sensor_fused_obstacle_class")
        dm = fault_do_map(
            self.net,
            FaultType("perception.sensor_fused_obstacle_class", "set_category",
                      category="disappear"),
            np.zeros((2, self.net.n_cols)))
        assert len(dm) == len(spec.categories)
        for c in spec.categories:
            node = self.net.node(1, f"perception.sensor_fused_obstacle_class={c}")
            want = 1.0 if c == "disappear" else 0.0
            np.testing.assert_array_equal(dm[node], np.full(2, want))

    def test_bitflip_has_no_graph_counterpart(self):
        with pytest.raises(NetError):
            fault_do_map(self.net, FaultType("actuation.brake", "bitflip", n_bits=1),
                         np.zeros((1, self.net.n_cols)))

    def test_intervention_lands_on_the_middle_slice(self):
        dm = fault_do_map(self.net, FaultType("actuation.throttle", "set_max"),
                          np.zeros((1, self.net.n_cols)))
        (node,) = dm
        assert self.net.n_cols <= node < 2 * self.net.n_cols


class TestMineTrace:
    def test_untrained_model_is_refused(self, short_golden):
        trace, sc = short_golden
        with pytest.raises(NetError):
            mine_trace(build_topology(), trace, sc)

    def test_trace_and_scenario_must_agree(self, short_golden):
        trace, _ = short_golden
        other = scenario_library()["A1"]
        with pytest.raises(NetError):
            mine_trace(synthetic_net(), trace, other)

    def test_every_pair_passes_the_criticality_test(self, short_golden):
        trace, sc = short_golden
        faults = [FaultType("actuation.brake", "set_min"),
                  FaultType("actuation.throttle", "set_max"),
                  FaultType("perception.sensor_fused_obstacle_class",
                            "set_category", category="disappear")]
        res = mine_trace(synthetic_net(), trace, sc, faults=faults, gibbs=FAST)
        dl = trace.column("assess.delta_long")
        dlat = trace.column("assess.delta_lat")
        assert res.scanned == res.candidates * len(faults)
        assert 0.0 <= res.flagged_fraction <= 1.0
        for p in res.pairs:
            assert p.fault in {f.name for f in faults}
            assert 1 <= p.scene <= len(trace.rows) - 2
            # the golden frame and its successor were safe by construction
            assert dl[p.scene] > 0 and dlat[p.scene] > 0
            assert is_critical(dl[p.scene + 1], dlat[p.scene + 1],
                               p.est_long, p.est_lat)

    def test_candidates_skip_unsafe_golden_frames(self, short_golden):
        trace, sc = short_golden
        dl = np.asarray(trace.column("assess.delta_long"))
        dlat = np.asarray(trace.column("assess.delta_lat"))
        safe = (dl > 0) & (dlat > 0)
        want = sum(1 for k in range(1, len(trace.rows) - 1)
                   if safe[k] and safe[k + 1])
        res = mine_trace(synthetic_net(), trace, sc,
                         faults=[FaultType("actuation.brake", "set_min")],
                         gibbs=FAST)
        assert res.candidates == want

    def test_same_inputs_same_pairs(self, short_golden):
        trace, sc = short_golden
        faults = [FaultType("actuation.brake", "set_min"),
                  FaultType("planning.obstacle_gap", "double")]
        a = mine_trace(synthetic_net(3), trace, sc, faults=faults, gibbs=FAST)
        b = mine_trace(synthetic_net(3), trace, sc, faults=faults, gibbs=FAST)
        assert [(p.scene, p.fault, p.est_long, p.est_lat) for p in a.pairs] \
            == [(p.scene, p.fault, p.est_long, p.est_lat) for p in b.pairs]

    def test_catalog_is_the_default_fault_set(self, short_golden):
        trace, sc = short_golden
        res = mine_trace(synthetic_net(), trace, sc, gibbs=FAST,
                         faults=list(catalog())[:4])
        assert res.fault_names == tuple(f.name for f in list(catalog())[:4])

    def test_progress_callback_sees_every_target(self, short_golden):
        trace, sc = short_golden
        faults = [FaultType("actuation.brake", "set_min"),
                  FaultType("actuation.brake", "set_max"),
                  FaultType("actuation.throttle", "set_max")]
        seen = []
        mine_trace(synthetic_net(), trace, sc, faults=faults, gibbs=FAST,
                   progress=lambda done, total, target, found: seen.append(
                       (done, total, target)))
        assert seen == [(2, 3, "actuation.brake"), (3, 3, "actuation.throttle")]
