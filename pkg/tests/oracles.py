"""Hand-rolled reference answers used by several test modules.

The closed-form machinery here deliberately avoids the package's own
moment propagation: the joint is assembled from the structural-equation
form x = Ax + b + eps, so a bug in the library's forward pass cannot
hide in the oracle.
"""
import numpy as np


def sem_joint(dag):
    """Mean and covariance of the DAG's joint via (I - A)^-1."""
    n = dag.n_nodes
    A = np.zeros((n, n))
    for i in range(n):
        for p, w in zip(dag.parents[i], dag.weights[i]):
            A[i, p] = w
    inv = np.linalg.inv(np.eye(n) - A)
    mu = inv @ dag.intercepts
    cov = inv @ np.diag(dag.sigmas ** 2) @ inv.T
    return mu, cov


def mutilated(dag, do_nodes):
    """Copy of the DAG with incoming edges of the intervened nodes cut."""
    from faultminer.bayes import GaussianDag
    parents = [np.array([], dtype=int) if i in do_nodes else dag.parents[i]
               for i in range(dag.n_nodes)]
    weights = [np.array([]) if i in do_nodes else dag.weights[i]
               for i in range(dag.n_nodes)]
    intercepts = dag.intercepts.copy()
    return GaussianDag(list(dag.names), parents, weights, intercepts,
                       dag.sigmas.copy())


def exact_posterior_mean(dag, evidence, do):
    """Conditional mean of every node under evidence and interventions.

    Interventions sever incoming edges first; the intervened values then
    join the evidence as exact observations of the mutilated joint.
    """
    cut = mutilated(dag, set(do))
    mu, cov = sem_joint(cut)
    known = {**evidence, **do}
    o = np.array(sorted(known), dtype=int)
    vals = np.array([known[i] for i in o])
    out = mu.copy()
    if len(o):
        rest = np.array([i for i in range(dag.n_nodes) if i not in known],
                        dtype=int)
        gain = cov[np.ix_(rest, o)] @ np.linalg.inv(cov[np.ix_(o, o)])
        out[rest] = mu[rest] + gain @ (vals - mu[o])
        out[o] = vals
    return out


def random_gaussian_dag(n_nodes, rng, max_parents=3, weight_scale=0.6):
    from faultminer.bayes import GaussianDag
    parents, weights = [], []
    for i in range(n_nodes):
        k = int(rng.integers(0, min(i, max_parents) + 1))
        if k:
            p = np.sort(rng.choice(i, size=k, replace=False)).astype(int)
        else:
            p = np.array([], dtype=int)
        parents.append(p)
        weights.append(rng.normal(size=k) * weight_scale)
    return GaussianDag(
        names=[f"n{i}" for i in range(n_nodes)],
        parents=parents,
        weights=weights,
        intercepts=rng.normal(size=n_nodes),
        sigmas=0.3 + rng.random(n_nodes),
    )
