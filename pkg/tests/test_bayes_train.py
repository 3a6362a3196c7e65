import numpy as np
import pytest

from faultminer.bayes import (
    TrainError,
    build_topology,
    em_train,
    log_likelihood,
    sample_triples,
)
from faultminer.bayes.network import SIGMA_FLOOR

from test_bayes_network import randomized


def all_params(net):
    out = []
    for c in net.cols:
        for store in (net.boundary, net.transition):
            w, b, s = store[c]
            out.extend(list(w) + [b, s])
    return np.array(out)


@pytest.fixture(scope="module")
def truth_and_data():
    net = randomized(build_topology(), np.random.default_rng(11), sigma=0.1)
    return net, sample_triples(net, 10_000, seed=12)


def test_recovers_known_parameters(truth_and_data):
    truth, data = truth_and_data
    fitted = em_train(build_topology(), data)
    rel = np.abs(all_params(fitted) - all_params(truth)) \
        / np.maximum(np.abs(all_params(truth)), 1.0)
    assert rel.max() < 0.05
    assert fitted.trained


def test_log_likelihood_never_decreases(truth_and_data):
    _, data = truth_and_data
    fitted = em_train(build_topology(), data)
    hist = fitted.train_log
    assert len(hist) >= 1
    assert all(b >= a - 1e-6 * abs(a) for a, b in zip(hist, hist[1:]))


def test_refit_of_fit_is_a_fixed_point(truth_and_data):
    """Fully observed data makes one pass optimal; another changes nothing."""
    _, data = truth_and_data
    once = em_train(build_topology(), data, iterations=1)
    twice = em_train(build_topology(), data, iterations=5)
    np.testing.assert_allclose(all_params(once), all_params(twice), rtol=1e-8)


def test_sample_size_guard():
    net = build_topology()
    data = sample_triples(randomized(build_topology(),
                                     np.random.default_rng(0)), 100, seed=0)
    with pytest.raises(TrainError):
        em_train(net, data)


def test_rejects_bad_shape_and_infinities():
    net = build_topology()
    with pytest.raises(TrainError):
        em_train(net, np.zeros((50, 2, net.n_cols)))
    bad = np.zeros((10_000, 3, net.n_cols))
    bad[0, 0, 0] = np.inf
    with pytest.raises(TrainError):
        em_train(net, bad)


def test_constant_column_degrades_to_intercept(truth_and_data):
    _, data = truth_and_data
    data = data.copy()
    ci = build_topology().cols.index("inertial.accel")
    data[:, :, ci] = 3.25
    with pytest.warns(UserWarning, match="ridge"):
        fitted = em_train(build_topology(), data)
    for store in (fitted.boundary, fitted.transition):
        w, b, s = store["inertial.accel"]
        assert s == pytest.approx(SIGMA_FLOOR)
        assert b + w.sum() * 0 == pytest.approx(b)  # weights finite
        assert np.all(np.isfinite(w))


def test_missing_entries_are_marginalized():
    rng = np.random.default_rng(21)
    truth = randomized(build_topology(), rng, sigma=0.15)
    data = sample_triples(truth, 6000, seed=22)
    # knock out two sensor readings on half the records; two distinct
    # missingness patterns keeps the E-step exact and quick
    cols = list(truth.cols)
    c1 = cols.index("perception.lidar_object_distance")
    c2 = cols.index("perception.camera_object_distance")
    data[:3000, 1, c1] = np.nan
    data[1500:4500, 2, c2] = np.nan
    fitted = em_train(build_topology(), data, iterations=8)
    hist = fitted.train_log
    assert len(hist) >= 2
    assert all(b >= a - 1e-6 * abs(a) for a, b in zip(hist, hist[1:]))
    rel = np.abs(all_params(fitted) - all_params(truth)) \
        / np.maximum(np.abs(all_params(truth)), 1.0)
    assert rel.max() < 0.25
    assert np.median(rel) < 0.05


def test_observed_likelihood_prefers_truth():
    rng = np.random.default_rng(31)
    truth = randomized(build_topology(), rng, sigma=0.1)
    other = randomized(build_topology(), np.random.default_rng(99), sigma=0.1)
    data = sample_triples(truth, 4000, seed=32)
    assert log_likelihood(truth, data) > log_likelihood(other, data)
