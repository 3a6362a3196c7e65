"""Parameter fitting for the three-slice net.

Expectation-Maximization over windowed triples.  With every entry
observed the E-step is degenerate and the M-step is one weighted
least-squares pass per conditional; records with missing entries (NaN)
are completed with the exact conditional Gaussian under the current
parameters, contributing their second moments rather than plug-in
values.  The observed-data log-likelihood is tracked per iteration and
never decreases.
"""
from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.linalg import solve_triangular

from faultminer.bayes.network import SIGMA_FLOOR, TemporalBayesNet

__all__ = ["TrainError", "em_train", "log_likelihood"]

RIDGE = 1e-6


class TrainError(ValueError):
    """Raised for unusable training data."""


def _cpd_layout(net: TemporalBayesNet):
    """Design-index layout for every conditional, in the flat 3C vector.

    Yields (kind, col, y_index, parent_indices) with one boundary entry
    and two transition entries (slices two and three share parameters).
    """
    C = net.n_cols
    idx = {c: i for i, c in enumerate(net.cols)}
    for c in net.cols:
        yield "boundary", c, idx[c], [idx[p] for p in net.intra[c]]
    for c in net.cols:
        for s in (1, 2):
            par = [s * C + idx[p] for p in net.intra[c]]
            par += [(s - 1) * C + idx[p] for p in net.prev[c]]
            yield "transition", c, s * C + idx[c], par


def _solve_wls(xtx: np.ndarray, xty: np.ndarray, yty: float, n: float,
               label: str) -> tuple[np.ndarray, float]:
    """Weights and residual variance from expected sufficient statistics."""
    p = len(xtx)
    try:
        scale = np.linalg.eigvalsh(xtx)
        singular = scale[0] <= RIDGE * max(scale[-1], 1.0)
    except np.linalg.LinAlgError:
        singular = True
    if singular:
        warnings.warn(f"singular design for {label}; ridge applied")
        xtx = xtx + RIDGE * np.eye(p)
    w = np.linalg.solve(xtx, xty)
    var = (yty - 2.0 * w @ xty + w @ xtx @ w) / max(n, 1.0)
    sigma = max(math.sqrt(max(var, 0.0)), SIGMA_FLOOR)
    return w, sigma


def _current_joint(net: TemporalBayesNet) -> tuple[np.ndarray, np.ndarray]:
    dag = net.as_dag()
    return dag.joint_moments()


def _expected_stats(flat: np.ndarray, mu: np.ndarray, cov: np.ndarray):
    """Per-record completed means and covariances.

    Returns (means, covs): means[r] is the record with NaNs replaced by
    the conditional mean; covs[r] is nonzero only on the missing block.
    Records are grouped by missing pattern so the conditioning algebra
    runs once per pattern.
    """
    n, d = flat.shape
    means = flat.copy()
    covs = np.zeros((n, d, d))
    miss = np.isnan(flat)
    patterns: dict[bytes, list[int]] = {}
    for r in range(n):
        patterns.setdefault(miss[r].tobytes(), []).append(r)
    for key, rows in patterns.items():
        m = np.frombuffer(key, dtype=bool)
        if not m.any():
            continue
        o = ~m
        soo = cov[np.ix_(o, o)]
        smo = cov[np.ix_(m, o)]
        smm = cov[np.ix_(m, m)]
        gain = smo @ np.linalg.inv(soo) if o.any() else np.zeros((m.sum(), 0))
        cond_cov = smm - (gain @ smo.T if o.any() else 0.0)
        for r in rows:
            if o.any():
                cond_mean = mu[m] + gain @ (flat[r, o] - mu[o])
            else:
                cond_mean = mu[m]
            means[r, m] = cond_mean
            covs[r][np.ix_(m, m)] = cond_cov
    return means, covs


def _m_step(net: TemporalBayesNet, means: np.ndarray,
            covs: np.ndarray | None) -> None:
    stats: dict[tuple[str, str], list] = {}
    for kind, col, yi, par in _cpd_layout(net):
        key = (kind, col)
        sel = par + [yi]
        mu_sel = means[:, sel]
        second = mu_sel[:, :, None] * mu_sel[:, None, :]
        if covs is not None:
            second = second + covs[:, sel][:, :, sel]
        tot = second.sum(axis=0)
        msum = mu_sel.sum(axis=0)
        n = len(means)
        p = len(par)
        # augment with the intercept column of ones
        xtx = np.empty((p + 1, p + 1))
        xtx[:p, :p] = tot[:p, :p]
        xtx[:p, p] = msum[:p]
        xtx[p, :p] = msum[:p]
        xtx[p, p] = n
        xty = np.concatenate([tot[:p, p], [msum[p]]])
        yty = tot[p, p]
        if key in stats:
            acc = stats[key]
            acc[0] += xtx
            acc[1] += xty
            acc[2] += yty
            acc[3] += n
        else:
            stats[key] = [xtx, xty, yty, float(n)]
    for (kind, col), (xtx, xty, yty, n) in stats.items():
        w_aug, sigma = _solve_wls(xtx, xty, yty, n, f"{kind}:{col}")
        w, b = w_aug[:-1], float(w_aug[-1])
        store = net.boundary if kind == "boundary" else net.transition
        store[col] = (w, b, sigma)


def log_likelihood(net: TemporalBayesNet, triples: np.ndarray) -> float:
    """Observed-data log-likelihood of windowed triples under the net."""
    flat = np.asarray(triples, dtype=float).reshape(len(triples), -1)
    if flat.shape[1] != 3 * net.n_cols:
        raise TrainError("triples do not match the network's column count")
    miss = np.isnan(flat)
    total = 0.0
    if not miss.any():
        for kind, col, yi, par in _cpd_layout(net):
            store = net.boundary if kind == "boundary" else net.transition
            w, b, sg = store[col]
            resid = flat[:, yi] - (flat[:, par] @ w + b)
            total += float(np.sum(-0.5 * (resid / sg) ** 2
                                  - math.log(sg) - 0.5 * math.log(2 * math.pi)))
        return total
    mu, cov = _current_joint(net)
    patterns: dict[bytes, list[int]] = {}
    for r in range(len(flat)):
        patterns.setdefault(miss[r].tobytes(), []).append(r)
    for key, rows in patterns.items():
        m = np.frombuffer(key, dtype=bool)
        o = ~m
        if not o.any():
            continue
        soo = cov[np.ix_(o, o)]
        chol = np.linalg.cholesky(soo)
        diff = flat[np.ix_(rows, o)] - mu[o]
        sol = solve_triangular(chol, diff.T, lower=True)
        quad = np.sum(sol ** 2, axis=0)
        logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        k = int(o.sum())
        total += float(np.sum(-0.5 * quad) - 0.5 * len(rows)
                       * (logdet + k * math.log(2 * math.pi)))
    return total


def _init_params(net: TemporalBayesNet, flat: np.ndarray) -> None:
    C3 = 3 * net.n_cols
    col_mean = np.empty(C3)
    col_std = np.empty(C3)
    for j in range(C3):
        col = flat[:, j]
        col = col[~np.isnan(col)]
        col_mean[j] = col.mean() if col.size else 0.0
        col_std[j] = col.std() if col.size else 1.0
    for kind, colname, yi, par in _cpd_layout(net):
        store = net.boundary if kind == "boundary" else net.transition
        store[colname] = (np.zeros(len(par)), float(col_mean[yi]),
                          max(float(col_std[yi]), 1.0))


def em_train(net: TemporalBayesNet, triples: np.ndarray,
             iterations: int = 20, tol: float = 1e-6) -> TemporalBayesNet:
    """Fit the conditionals; sets net.trained and net.train_log."""
    data = np.asarray(triples, dtype=float)
    if data.ndim != 3 or data.shape[1] != 3 or data.shape[2] != net.n_cols:
        raise TrainError(f"expected (n, 3, {net.n_cols}) triples, "
                         f"got {data.shape}")
    if np.isinf(data).any():
        raise TrainError("training data contains infinities")
    n_params = net.parameter_count()
    if len(data) < 10 * n_params:
        raise TrainError(
            f"{len(data)} triples cannot support {n_params} parameters")
    flat = data.reshape(len(data), -1)
    fully_observed = not np.isnan(flat).any()

    history: list[float] = []
    if fully_observed:
        _m_step(net, flat, None)
        net.trained = True
        for _ in range(max(iterations, 1)):
            history.append(log_likelihood(net, data))
            if len(history) >= 2 and abs(history[-1] - history[-2]) <= \
                    tol * max(1.0, abs(history[-1])):
                break
            _m_step(net, flat, None)
    else:
        _init_params(net, flat)
        net.trained = True
        prev_ll = -math.inf
        for _ in range(max(iterations, 1)):
            mu, cov = _current_joint(net)
            means, covs = _expected_stats(flat, mu, cov)
            _m_step(net, means, covs)
            ll = log_likelihood(net, data)
            history.append(ll)
            if ll - prev_ll <= tol * max(1.0, abs(ll)) and prev_ll > -math.inf:
                break
            prev_ll = ll
    net.train_log = history
    return net
