"""Network structure: a generic linear-Gaussian DAG and the three-slice
temporal net built from the variable registry.

Every node x carries the conditional P(x | parents) = N(w'p + b, sigma).
The temporal net keeps one parameter set per registry column for the
first slice (intra-slice parents only) and one shared set for the two
later slices (intra plus previous-slice parents), so the slice-to-slice
dynamics are the same wherever the window lands in a run.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from faultminer.registry import (
    encode_value,
    numeric_columns,
    numeric_parents_intra,
    numeric_parents_prev,
    registry_names,
)

__all__ = [
    "NetError",
    "GaussianDag",
    "TemporalBayesNet",
    "build_topology",
    "save_model",
    "load_model",
    "sample_triples",
    "trace_matrix",
    "matrix_triples",
    "SLICE_LABELS",
]

SLICE_LABELS = ("k-1", "k", "k+1")
SIGMA_FLOOR = 1e-6


class NetError(ValueError):
    """Raised for malformed networks or model files."""


@dataclass
class GaussianDag:
    """Flat linear-Gaussian DAG in topological node order."""

    names: list[str]
    parents: list[np.ndarray]      # per node, indices of its parents
    weights: list[np.ndarray]      # per node, aligned with parents
    intercepts: np.ndarray
    sigmas: np.ndarray

    def __post_init__(self) -> None:
        n = len(self.names)
        if not (len(self.parents) == len(self.weights) == n
                and len(self.intercepts) == len(self.sigmas) == n):
            raise NetError("node arrays disagree in length")
        for i, (p, w) in enumerate(zip(self.parents, self.weights)):
            if len(p) != len(w):
                raise NetError(f"{self.names[i]}: parents and weights differ")
            if any(j >= i for j in p):
                raise NetError(f"{self.names[i]}: parent after child; not a DAG")
            if any(j < 0 for j in p):
                raise NetError(f"{self.names[i]}: negative parent index")
        if np.any(self.sigmas <= 0):
            raise NetError("sigmas must be positive")

    @property
    def n_nodes(self) -> int:
        return len(self.names)

    def children_lists(self) -> list[list[tuple[int, int]]]:
        """For each node, the (child, slot-in-child's-parents) pairs."""
        out: list[list[tuple[int, int]]] = [[] for _ in self.names]
        for child, pars in enumerate(self.parents):
            for slot, p in enumerate(pars):
                out[int(p)].append((child, slot))
        return out

    def descendants(self, roots) -> set[int]:
        kids = self.children_lists()
        seen: set[int] = set()
        stack = list(roots)
        while stack:
            i = stack.pop()
            for child, _ in kids[i]:
                if child not in seen:
                    seen.add(child)
                    stack.append(child)
        return seen

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Ancestral sampling; rows are joint draws in node order."""
        out = np.empty((n, self.n_nodes))
        for i in range(self.n_nodes):
            mean = self.intercepts[i] + (
                out[:, self.parents[i]] @ self.weights[i]
                if len(self.parents[i]) else 0.0)
            out[:, i] = mean + self.sigmas[i] * rng.standard_normal(n)
        return out

    def joint_moments(self) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of the implied joint Gaussian."""
        n = self.n_nodes
        mu = np.zeros(n)
        cov = np.zeros((n, n))
        for i in range(n):
            p = self.parents[i]
            w = self.weights[i]
            if len(p):
                mu[i] = self.intercepts[i] + w @ mu[p]
                cross = cov[:, p] @ w        # Cov(x_j, w'p) for all j
                cov[i, :i] = cross[:i]
                cov[:i, i] = cross[:i]
                cov[i, i] = w @ cov[np.ix_(p, p)] @ w + self.sigmas[i] ** 2
            else:
                mu[i] = self.intercepts[i]
                cov[i, i] = self.sigmas[i] ** 2
        return mu, cov


@dataclass
class TemporalBayesNet:
    """Three slices over the registry's numeric columns.

    boundary[col] parameterizes the first slice, transition[col] the two
    later ones; each value is (weights, intercept, sigma) with weights
    aligned to intra parents followed (for transitions) by previous-slice
    parents.
    """

    cols: tuple[str, ...]
    intra: dict[str, tuple[str, ...]]
    prev: dict[str, tuple[str, ...]]
    boundary: dict[str, tuple[np.ndarray, float, float]] = field(default_factory=dict)
    transition: dict[str, tuple[np.ndarray, float, float]] = field(default_factory=dict)
    trained: bool = False

    def __post_init__(self) -> None:
        order = {c: i for i, c in enumerate(self.cols)}
        for c in self.cols:
            for p in self.intra[c]:
                if order[p] >= order[c]:
                    raise NetError(f"intra edge {p} -> {c} breaks write order")
            for p in self.prev[c]:
                if p not in order:
                    raise NetError(f"{c}: unknown previous-slice parent {p}")

    @property
    def n_cols(self) -> int:
        return len(self.cols)

    @property
    def n_nodes(self) -> int:
        return 3 * len(self.cols)

    def node(self, slice_idx: int, col: str) -> int:
        return slice_idx * self.n_cols + self.cols.index(col)

    def node_name(self, idx: int) -> str:
        return f"{SLICE_LABELS[idx // self.n_cols]}:{self.cols[idx % self.n_cols]}"

    def parameter_count(self) -> int:
        n = 0
        for c in self.cols:
            n += len(self.intra[c]) + 2                      # boundary w, b, sigma
            n += len(self.intra[c]) + len(self.prev[c]) + 2  # transition
        return n

    def topology_digest(self) -> str:
        parts = ["cols=" + ",".join(self.cols)]
        for c in self.cols:
            parts.append(f"intra:{c}<-" + ",".join(self.intra[c]))
            parts.append(f"prev:{c}<-" + ",".join(self.prev[c]))
        return hashlib.sha256("\n".join(parts).encode()).hexdigest()

    def edges(self) -> list[tuple[int, int]]:
        out = []
        idx = {c: i for i, c in enumerate(self.cols)}
        for s in range(3):
            base = s * self.n_cols
            for c in self.cols:
                for p in self.intra[c]:
                    out.append((base + idx[p], base + idx[c]))
                if s > 0:
                    for p in self.prev[c]:
                        out.append((base - self.n_cols + idx[p], base + idx[c]))
        return out

    def descendants(self, nodes) -> set[int]:
        kids: dict[int, list[int]] = {}
        for a, b in self.edges():
            kids.setdefault(a, []).append(b)
        seen: set[int] = set()
        stack = list(nodes)
        while stack:
            i = stack.pop()
            for child in kids.get(i, ()):
                if child not in seen:
                    seen.add(child)
                    stack.append(child)
        return seen

    def as_dag(self) -> GaussianDag:
        if not self.trained:
            raise NetError("network has no parameters yet; train it first")
        idx = {c: i for i, c in enumerate(self.cols)}
        names, parents, weights = [], [], []
        intercepts, sigmas = [], []
        for s in range(3):
            base = s * self.n_cols
            for c in self.cols:
                names.append(f"{SLICE_LABELS[s]}:{c}")
                if s == 0:
                    w, b, sg = self.boundary[c]
                    par = [base + idx[p] for p in self.intra[c]]
                else:
                    w, b, sg = self.transition[c]
                    par = ([base + idx[p] for p in self.intra[c]]
                           + [base - self.n_cols + idx[p] for p in self.prev[c]])
                parents.append(np.asarray(par, dtype=int))
                weights.append(np.asarray(w, dtype=float))
                intercepts.append(float(b))
                sigmas.append(float(sg))
        return GaussianDag(names, parents, weights,
                           np.asarray(intercepts), np.asarray(sigmas))


def build_topology() -> TemporalBayesNet:
    """Derive the three-slice structure from the variable registry."""
    cols = tuple(numeric_columns())
    intra = {c: tuple(numeric_parents_intra(c)) for c in cols}
    prev = {c: tuple(numeric_parents_prev(c)) for c in cols}
    return TemporalBayesNet(cols=cols, intra=intra, prev=prev)


def sample_triples(net: TemporalBayesNet, n: int, seed: int) -> np.ndarray:
    """Draw n windows from the model, shaped (n, 3, columns)."""
    flat = net.as_dag().sample(n, np.random.default_rng(seed))
    return flat.reshape(n, 3, net.n_cols)


def trace_matrix(trace) -> np.ndarray:
    """Numeric view of a run, (scenes, columns); categoricals become
    their indicator blocks."""
    cols = numeric_columns()
    out = np.empty((len(trace.rows), len(cols)))
    for r, row in enumerate(trace.rows):
        j = 0
        for name in registry_names():
            enc = encode_value(name, row[name])
            for _ in range(len(enc)):
                out[r, j] = enc[cols[j]]
                j += 1
    return out


def matrix_triples(mat: np.ndarray, centers) -> np.ndarray:
    """Stack (k-1, k, k+1) windows of a run matrix for each center k."""
    mat = np.asarray(mat, dtype=float)
    centers = np.asarray(centers, dtype=int)
    if centers.size and (centers.min() < 1 or centers.max() > len(mat) - 2):
        raise NetError("window center outside the run")
    return np.stack([mat[k - 1:k + 2] for k in centers]) if centers.size \
        else np.empty((0, 3, mat.shape[1]))


# model files ---------------------------------------------------------

def _param_line(kind: str, col: str, parents, w, b, sg) -> str:
    cells = [kind, col, repr(float(sg)), repr(float(b))]
    for p, wi in zip(parents, w):
        cells.append(p)
        cells.append(repr(float(wi)))
    return "|".join(cells)


def save_model(net: TemporalBayesNet, path) -> None:
    if not net.trained:
        raise NetError("refusing to save an untrained model")
    lines = [
        "# three-slice linear-gaussian driving-stack model",
        f"# topology={net.topology_digest()}",
        f"# columns={net.n_cols}",
    ]
    for c in net.cols:
        lines.append(f"column|{c}")
    for c in net.cols:
        w, b, sg = net.boundary[c]
        lines.append(_param_line("boundary", c, net.intra[c], w, b, sg))
    for c in net.cols:
        w, b, sg = net.transition[c]
        parents = list(net.intra[c]) + [f"prev:{p}" for p in net.prev[c]]
        lines.append(_param_line("transition", c, parents, w, b, sg))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_model(path) -> TemporalBayesNet:
    net = build_topology()
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    digest = None
    cols: list[str] = []
    params: dict[tuple[str, str], tuple[np.ndarray, float, float]] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            if key.strip() == "topology":
                digest = val.strip()
            continue
        cells = line.split("|")
        if cells[0] == "column":
            cols.append(cells[1])
            continue
        if cells[0] not in ("boundary", "transition"):
            raise NetError(f"unknown model record {cells[0]!r}")
        try:
            col = cells[1]
            sg = float(cells[2])
            b = float(cells[3])
            names = cells[4::2]
            w = np.asarray([float(x) for x in cells[5::2]])
        except (IndexError, ValueError) as e:
            raise NetError(f"bad model line: {e}") from None
        if len(names) != len(w):
            raise NetError(f"{col}: ragged parent list")
        params[(cells[0], col)] = (w, b, sg, names)
    if digest != net.topology_digest():
        raise NetError("model was built against a different variable registry")
    if tuple(cols) != net.cols:
        raise NetError("model column list does not match the registry")
    for c in net.cols:
        for kind, expected in (
            ("boundary", list(net.intra[c])),
            ("transition", list(net.intra[c]) + [f"prev:{p}" for p in net.prev[c]]),
        ):
            if (kind, c) not in params:
                raise NetError(f"model is missing the {kind} record for {c}")
            w, b, sg, names = params[(kind, c)]
            if names != expected:
                raise NetError(f"{c}: {kind} parents do not match the registry")
            if sg <= 0:
                raise NetError(f"{c}: non-positive sigma")
            store = net.boundary if kind == "boundary" else net.transition
            store[c] = (w, b, sg)
    net.trained = True
    return net
