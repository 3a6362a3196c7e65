"""Posterior estimation on a linear-Gaussian DAG by blocked Gibbs
sampling.

Evidence nodes are clamped and keep their incoming edges; intervened
nodes are clamped with incoming edges severed, so they never pull on
their former parents.  The latent nodes are partitioned into blocks in
topological order, and every block's full conditional given the rest is
a Gaussian read straight off the joint precision matrix, so each sweep
draws whole blocks at once.  Tightly coupled variables, which a
one-node-at-a-time scan crawls through, move together this way; with a
single block the sweep draws exact posterior samples.

Updates run on a value tensor of shape (chains, cases, nodes): a batch
of independent queries against the same network shares one pass, which
is what keeps scanning every candidate scene of a run affordable.
Convergence is screened with the split-chain shrink factor on every
query node; estimates whose factor exceeds the threshold are flagged,
not silently accepted.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from faultminer.bayes.network import GaussianDag, NetError

__all__ = ["GibbsConfig", "InferResult", "gibbs_infer"]


@dataclass(frozen=True)
class GibbsConfig:
    burn_in: int = 200
    samples: int = 2000
    chains: int = 4
    seed: int = 0
    rhat_threshold: float = 1.05
    block_size: int = 64      # 1 recovers the classic one-node scan

    def __post_init__(self) -> None:
        if self.burn_in < 0 or self.samples < 2 or self.chains < 2:
            raise NetError("need samples >= 2 and chains >= 2")
        if self.samples % 2:
            raise NetError("sample count must be even for split diagnostics")
        if self.block_size < 1:
            raise NetError("block size must be >= 1")


@dataclass(frozen=True)
class InferResult:
    """Posterior summaries per case and query node."""

    query: tuple[int, ...]
    mean: np.ndarray        # (cases, len(query))
    std: np.ndarray
    rhat: np.ndarray
    flagged: np.ndarray     # shrink factor above threshold
    latent: tuple[int, ...] = field(default=())

    @property
    def any_flagged(self) -> bool:
        return bool(self.flagged.any())


def _as_case_matrix(values: dict[int, object], n_cases: int,
                    what: str) -> dict[int, np.ndarray]:
    out: dict[int, np.ndarray] = {}
    for node, v in values.items():
        arr = np.asarray(v, dtype=float)
        if arr.ndim == 0:
            arr = np.full(n_cases, float(arr))
        if arr.shape != (n_cases,):
            raise NetError(f"{what} for node {node} has shape {arr.shape}, "
                           f"expected ({n_cases},)")
        if not np.isfinite(arr).all():
            raise NetError(f"{what} for node {node} is not finite")
        out[int(node)] = arr
    return out


def _case_count(*value_maps: dict[int, object]) -> int:
    n = 1
    for vm in value_maps:
        for v in vm.values():
            a = np.asarray(v)
            if a.ndim == 1:
                if n != 1 and a.shape[0] != n:
                    raise NetError("case counts disagree across values")
                n = a.shape[0]
            elif a.ndim > 1:
                raise NetError("values must be scalars or 1-d case arrays")
    return n


def _mutilated_precision(dag: GaussianDag, do_nodes) -> np.ndarray:
    """Joint precision of the graph with intervened in-edges removed."""
    n = dag.n_nodes
    ia = np.eye(n)
    for i in range(n):
        if i in do_nodes:
            continue
        for p, w in zip(dag.parents[i], dag.weights[i]):
            ia[i, p] = -w
    d_inv = 1.0 / dag.sigmas ** 2
    J = ia.T @ (d_inv[:, None] * ia)
    return (J + J.T) / 2.0


def _mutilated_mean(dag: GaussianDag, dv: dict[int, np.ndarray],
                    n_cases: int) -> np.ndarray:
    """Per-case marginal mean of every node under the interventions."""
    mu = np.empty((n_cases, dag.n_nodes))
    for i in range(dag.n_nodes):
        if i in dv:
            mu[:, i] = dv[i]
            continue
        p = dag.parents[i]
        mu[:, i] = dag.intercepts[i] + (mu[:, p] @ dag.weights[i]
                                        if len(p) else 0.0)
    return mu


def gibbs_infer(dag: GaussianDag,
                evidence: dict[int, object],
                do: dict[int, object],
                query: list[int] | tuple[int, ...],
                cfg: GibbsConfig | None = None) -> InferResult:
    """Mean, spread and convergence flag for each query node.

    evidence and do map node index to a scalar or to a 1-d array giving
    one value per case; scalars broadcast across cases.  Query nodes in
    evidence or do come back with their clamped value and zero spread.
    """
    cfg = cfg or GibbsConfig()
    if set(evidence) & set(do):
        raise NetError("a node cannot be both evidence and intervened")
    n_cases = _case_count(evidence, do)
    ev = _as_case_matrix(evidence, n_cases, "evidence")
    dv = _as_case_matrix(do, n_cases, "intervention")
    clamped = {**ev, **dv}
    latent = [i for i in range(dag.n_nodes) if i not in clamped]
    query = tuple(int(q) for q in query)
    nq = len(query)

    rng = np.random.default_rng(cfg.seed)
    flat = cfg.chains * n_cases
    V = np.zeros((cfg.chains, n_cases, dag.n_nodes))
    for node, vals in clamped.items():
        V[:, :, node] = vals[None, :]

    J = _mutilated_precision(dag, set(dv))
    mu = _mutilated_mean(dag, dv, n_cases)          # (cases, nodes)

    # overdispersed start: marginal mean plus inflated noise
    for i in latent:
        V[:, :, i] = mu[None, :, i] + 3.0 * dag.sigmas[i] \
            * rng.standard_normal((cfg.chains, n_cases))

    clamped_idx = np.array(sorted(clamped), dtype=int)
    dev_clamped = (V[0, :, clamped_idx].T - mu[:, clamped_idx]
                   if len(clamped_idx) else np.zeros((n_cases, 0)))

    blocks = []
    for lo in range(0, len(latent), cfg.block_size):
        b = np.asarray(latent[lo:lo + cfg.block_size], dtype=int)
        others = np.asarray([i for i in latent if i not in set(b.tolist())],
                            dtype=int)
        chol = cho_factor(J[np.ix_(b, b)], lower=True)
        low = np.tril(chol[0])
        # constant part of the conditional shift: clamped deviations
        h_const = (dev_clamped @ J[np.ix_(clamped_idx, b)]
                   if len(clamped_idx) else np.zeros((n_cases, len(b))))
        k_lat = J[np.ix_(others, b)]
        blocks.append((b, others, chol, low, h_const, k_lat))

    qsel = np.asarray(query, dtype=int)
    half = cfg.samples // 2
    h_sum = np.zeros((2, cfg.chains, n_cases, nq))
    h_sq = np.zeros((2, cfg.chains, n_cases, nq))

    if len(blocks) == 1 and not len(blocks[0][1]):
        # one block, no unclamped neighbours: successive draws are already
        # independent, so the shift is constant and burn-in buys nothing
        b, _, chol, low, h_const, _ = blocks[0]
        shift = cho_solve(chol, h_const.T)              # (|b|, cases)
        cond = mu[:, b] - shift.T                       # (cases, |b|)
        pos = {node: j for j, node in enumerate(b.tolist())}
        q_lat = np.asarray([i for i, node in enumerate(query)
                            if node not in clamped], dtype=int)
        rows = np.asarray([pos[query[i]] for i in q_lat], dtype=int)
        base = cond[:, rows].T                          # (nq_lat, cases)
        if len(rows):
            # sampling only the query marginal is enough: draws are iid,
            # so nothing downstream ever reads the other coordinates
            cov = cho_solve(chol, np.eye(len(b)))[np.ix_(rows, rows)]
            low_q = np.linalg.cholesky(cov)
        chunk_cap = max(1, 4_000_000 // max(len(rows) * flat, 1))
        for part in (0, 1):
            left = half
            while left and len(rows):
                c = min(left, chunk_cap)
                left -= c
                z = rng.standard_normal((len(rows), c * flat))
                vals = base[:, None, None, :] + (low_q @ z).reshape(
                    len(rows), c, cfg.chains, n_cases)
                h_sum[part][:, :, q_lat] += vals.sum(axis=1).transpose(1, 2, 0)
                h_sq[part][:, :, q_lat] += \
                    (vals ** 2).sum(axis=1).transpose(1, 2, 0)
    else:
        for sweep in range(cfg.burn_in + cfg.samples):
            for b, others, chol, low, h_const, k_lat in blocks:
                if len(others):
                    h = (V[:, :, others] - mu[None, :, others]) @ k_lat
                else:
                    h = np.zeros((cfg.chains, n_cases, len(b)))
                h = h + h_const[None, :, :]
                shift = cho_solve(chol, h.reshape(flat, len(b)).T)
                z = rng.standard_normal((len(b), flat))
                noise = solve_triangular(low.T, z, lower=False)
                V[:, :, b] = mu[None, :, b] + \
                    (noise - shift).T.reshape(cfg.chains, n_cases, len(b))
            kept = sweep - cfg.burn_in
            if kept >= 0:
                part = 0 if kept < half else 1
                vals = V[:, :, qsel]
                h_sum[part] += vals
                h_sq[part] += vals ** 2

    mean_h = h_sum / half                              # (2, chains, cases, nq)
    var_h = h_sq / half - mean_h ** 2                  # within-half variance
    var_h = np.maximum(var_h, 0.0) * half / max(half - 1, 1)
    m = 2 * cfg.chains
    mean_hc = mean_h.reshape(m, n_cases, nq)
    var_hc = var_h.reshape(m, n_cases, nq)
    grand = mean_hc.mean(axis=0)
    W = var_hc.mean(axis=0)
    B = half * mean_hc.var(axis=0, ddof=1)
    var_plus = W * (half - 1) / half + B / half
    with np.errstate(divide="ignore", invalid="ignore"):
        rhat = np.sqrt(var_plus / W)
    rhat = np.where(W <= 1e-300, 1.0, rhat)

    total = 2 * half
    mean = grand
    second = (h_sq.sum(axis=0).reshape(cfg.chains, n_cases, nq).sum(axis=0)
              / (cfg.chains * total))
    std = np.sqrt(np.maximum(
        second - (h_sum.sum(axis=0).reshape(cfg.chains, n_cases, nq)
                  .sum(axis=0) / (cfg.chains * total)) ** 2, 0.0))

    # clamped query nodes are known exactly
    for col, node in enumerate(query):
        if node in clamped:
            mean[:, col] = clamped[node]
            std[:, col] = 0.0
            rhat[:, col] = 1.0

    flagged = rhat > cfg.rhat_threshold
    return InferResult(query=query, mean=mean, std=std, rhat=rhat,
                       flagged=flagged, latent=tuple(latent))
