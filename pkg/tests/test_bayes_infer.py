import numpy as np
import pytest

from faultminer.bayes import GaussianDag, GibbsConfig, NetError, gibbs_infer

from oracles import exact_posterior_mean, random_gaussian_dag


def line_graph(weights, sigmas, intercepts=None):
    n = len(sigmas)
    intercepts = intercepts if intercepts is not None else np.zeros(n)
    parents = [np.array([], dtype=int)] + [np.array([i]) for i in range(n - 1)]
    ws = [np.array([])] + [np.array([w]) for w in weights]
    return GaussianDag([f"n{i}" for i in range(n)], parents, ws,
                       np.asarray(intercepts, dtype=float),
                       np.asarray(sigmas, dtype=float))


def test_config_validation():
    with pytest.raises(NetError):
        GibbsConfig(samples=1)
    with pytest.raises(NetError):
        GibbsConfig(chains=1)
    with pytest.raises(NetError):
        GibbsConfig(samples=501)   # odd counts break the split diagnostic


def test_evidence_and_do_must_not_overlap():
    dag = line_graph([1.0], [1.0, 1.0])
    with pytest.raises(NetError):
        gibbs_infer(dag, {0: 1.0}, {0: 2.0}, [1])


def test_non_finite_evidence_rejected():
    dag = line_graph([1.0], [1.0, 1.0])
    with pytest.raises(NetError):
        gibbs_infer(dag, {0: np.nan}, {}, [1])


def test_matches_exact_conditioning_small():
    """A handful of nets here; the wide sweep runs in the acceptance suite."""
    rng = np.random.default_rng(40)
    cfg = GibbsConfig(burn_in=300, samples=4000, seed=1)
    for trial in range(5):
        dag = random_gaussian_dag(10, rng)
        ev = {2: 0.5, 7: -1.0}
        do = {4: 2.0}
        exact = exact_posterior_mean(dag, ev, do)
        latent = [i for i in range(10) if i not in (2, 4, 7)]
        res = gibbs_infer(dag, ev, do, latent, cfg)
        err = np.abs(res.mean[0] - exact[latent]) \
            / np.maximum(np.abs(exact[latent]), 1.0)
        assert err.max() < 0.05, f"trial {trial}: {err.max():.3f}"
        assert not res.any_flagged


def test_intervention_is_a_point_mass():
    dag = line_graph([1.5, 1.5], [0.5, 0.5, 0.5])
    res = gibbs_infer(dag, {}, {1: 3.0}, [0, 1, 2], GibbsConfig(seed=2))
    assert res.mean[0, 1] == 3.0
    assert res.std[0, 1] == 0.0
    assert res.rhat[0, 1] == 1.0
    # downstream shifts to match, upstream keeps its prior
    assert res.mean[0, 2] == pytest.approx(4.5, abs=0.1)
    assert res.mean[0, 0] == pytest.approx(0.0, abs=0.1)


def test_former_parent_evidence_has_no_influence():
    """Cutting the edge means re-weighing the parent cannot move anything."""
    dag = line_graph([2.0, 1.0], [1.0, 1.0, 1.0])   # n0 -> n1 -> n2
    cfg = GibbsConfig(seed=3)
    a = gibbs_infer(dag, {0: 0.0}, {1: 1.0}, [2], cfg)
    b = gibbs_infer(dag, {0: 50.0}, {1: 1.0}, [2], cfg)
    np.testing.assert_array_equal(a.mean, b.mean)
    np.testing.assert_array_equal(a.std, b.std)


def test_evidence_on_children_pulls_parents():
    dag = line_graph([1.0], [1.0, 0.3])
    res = gibbs_infer(dag, {1: 4.0}, {}, [0], GibbsConfig(seed=4))
    exact = exact_posterior_mean(dag, {1: 4.0}, {})
    assert res.mean[0, 0] == pytest.approx(exact[0], abs=0.05)
    assert res.mean[0, 0] > 2.0   # prior mean is 0; the child dragged it up


def test_latent_set_is_the_complement():
    dag = line_graph([1.0, 1.0, 1.0], [1.0] * 4)
    res = gibbs_infer(dag, {0: 0.0}, {2: 1.0}, [3], GibbsConfig(seed=5))
    assert set(res.latent) == {1, 3}


def test_case_vectorization_matches_exact_per_case():
    rng = np.random.default_rng(41)
    dag = random_gaussian_dag(8, rng)
    ev_vals = np.array([-1.0, 0.0, 2.0])
    do_vals = np.array([0.5, 1.0, -2.0])
    query = [i for i in range(8) if i not in (1, 3)]
    res = gibbs_infer(dag, {1: ev_vals}, {3: do_vals}, query,
                      GibbsConfig(burn_in=300, samples=4000, seed=6))
    assert res.mean.shape == (3, len(query))
    for case in range(3):
        exact = exact_posterior_mean(dag, {1: float(ev_vals[case])},
                                     {3: float(do_vals[case])})
        err = np.abs(res.mean[case] - exact[query]) \
            / np.maximum(np.abs(exact[query]), 1.0)
        assert err.max() < 0.05


def test_case_length_mismatch_rejected():
    dag = line_graph([1.0], [1.0, 1.0])
    with pytest.raises(NetError):
        gibbs_infer(dag, {0: np.array([1.0, 2.0])},
                    {1: np.array([1.0, 2.0, 3.0])}, [0])


def test_poor_mixing_is_flagged():
    """Single-node updates crawl through a near-deterministic chain; the
    diagnostic has to notice.  Whole-block draws clear the same problem."""
    n = 8
    dag = line_graph([1.0] * (n - 1), [1.0] + [0.01] * (n - 1))
    res = gibbs_infer(dag, {}, {}, list(range(n)),
                      GibbsConfig(burn_in=0, samples=60, seed=7, block_size=1))
    assert res.any_flagged
    assert res.rhat.max() > 1.05
    blocked = gibbs_infer(dag, {}, {}, list(range(n)),
                          GibbsConfig(burn_in=0, samples=60, seed=7))
    assert not blocked.any_flagged


def test_same_seed_is_bit_identical():
    dag = line_graph([1.0, -0.5], [1.0, 0.7, 0.4])
    a = gibbs_infer(dag, {0: 1.0}, {}, [1, 2], GibbsConfig(seed=8))
    b = gibbs_infer(dag, {0: 1.0}, {}, [1, 2], GibbsConfig(seed=8))
    np.testing.assert_array_equal(a.mean, b.mean)
    np.testing.assert_array_equal(a.rhat, b.rhat)
