"""Network topologies, combination matrices, and their Perron data.

Agents are the nodes of an undirected connected graph.  A combination
matrix A is nonnegative and left-stochastic (columns sum to one); entry
a[l, k] is the weight agent k applies to data arriving from agent l.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.csgraph

COLUMN_SUM_TOL = 1e-12
PERRON_RESIDUAL_TOL = 1e-10
BALANCE_TOL = 1e-10


class GraphError(ValueError):
    """Malformed or disconnected graph."""


class SpectralError(RuntimeError):
    """An eigen computation failed or revealed unusable structure."""


@dataclass(frozen=True)
class Graph:
    """Undirected connected graph on n agents.

    Edges are canonical (i, j) pairs with i < j; self-loops are not part
    of the edge set (self-weights live on the matrix diagonal instead).
    """

    n: int
    edges: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        if self.n < 1:
            raise GraphError(f"agent count must be positive, got {self.n}")
        canon = set()
        for e in self.edges:
            i, j = int(e[0]), int(e[1])
            if i == j:
                raise GraphError(f"self-loop ({i}, {j}) not allowed in edge set")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise GraphError(f"edge ({i}, {j}) out of range for n={self.n}")
            canon.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(canon))
        if not self._connected():
            raise GraphError("graph is not connected")

    def _connected(self) -> bool:
        if self.n == 1:
            return True
        adj = self.adjacency()
        ncomp, _ = scipy.sparse.csgraph.connected_components(
            scipy.sparse.csr_matrix(adj), directed=False
        )
        return ncomp == 1

    def adjacency(self) -> np.ndarray:
        """0/1 adjacency matrix (no self-loops)."""
        adj = np.zeros((self.n, self.n))
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = 1.0
        return adj

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def neighbors(self, k: int) -> list:
        out = [j if i == k else i for (i, j) in self.edges if k in (i, j)]
        return sorted(out)

    def to_json(self) -> str:
        return json.dumps({"n": self.n, "edges": sorted(map(list, self.edges))})

    @classmethod
    def from_json(cls, text: str) -> "Graph":
        doc = json.loads(text)
        return cls(int(doc["n"]), frozenset(tuple(e) for e in doc["edges"]))


@dataclass(frozen=True)
class CombinationMatrix:
    """Left-stochastic nonnegative matrix tied to a graph.

    Validated at construction: nonnegativity, column sums, sparsity that
    respects the graph, and primitivity (a single eigenvalue on the unit
    circle, located at 1, with at least one positive self-weight).
    """

    a: np.ndarray
    graph: Graph

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        object.__setattr__(self, "a", a)
        n = self.graph.n
        if a.shape != (n, n):
            raise ValueError(f"matrix shape {a.shape} does not match n={n}")
        if a.min() < 0:
            raise ValueError("combination matrix has negative entries")
        colsum = a.sum(axis=0)
        if np.abs(colsum - 1.0).max() > COLUMN_SUM_TOL:
            raise ValueError(
                f"columns must sum to 1 within {COLUMN_SUM_TOL:g}; "
                f"max deviation {np.abs(colsum - 1.0).max():.3e}"
            )
        allowed = self.graph.adjacency().astype(bool) | np.eye(n, dtype=bool)
        if np.any((a > 0) & ~allowed):
            raise ValueError("positive weight on a non-edge pair")
        if not np.any(np.diag(a) > 0):
            raise SpectralError("no agent has a positive self-weight")
        if n > 1:
            # directed support must be strongly connected, otherwise the
            # Perron vector degenerates (zero entries) even when the
            # eigenvalue tests below look fine
            support = scipy.sparse.csr_matrix((a > 0).astype(int))
            n_comp, _ = scipy.sparse.csgraph.connected_components(
                support, directed=True, connection="strong")
            if n_comp != 1:
                raise SpectralError(
                    "matrix support is not strongly connected; "
                    "matrix is not primitive"
                )
        vals = np.linalg.eigvals(a)
        near_one = np.abs(vals - 1.0) <= 1e-8
        if near_one.sum() != 1:
            raise SpectralError(
                f"matrix is not primitive: {int(near_one.sum())} eigenvalues at 1"
            )
        others = np.abs(vals[~near_one])
        if others.size and others.max() >= 1.0 - 1e-10:
            raise SpectralError(
                "matrix is not primitive: non-unit eigenvalue on the unit circle"
            )

    @property
    def n(self) -> int:
        return self.graph.n


@dataclass(frozen=True)
class PerronData:
    """Perron vector p (Ap = p, sum 1, entrywise positive) plus the
    spectral summary of A: second-largest eigenvalue (real for balanced
    policies), smallest eigenvalue, and second-largest eigenvalue
    magnitude rhoA."""

    p: np.ndarray
    lambda2: float
    lambdaN: float
    rhoA: float


def build_metropolis(graph: Graph) -> CombinationMatrix:
    """Metropolis weights: symmetric doubly-stochastic.

    Off-diagonal weight 1/(1 + max(deg_i, deg_j)) on every edge, with the
    diagonal absorbing the remainder of each column.
    """
    n = graph.n
    deg = graph.degrees()
    a = np.zeros((n, n))
    for i, j in graph.edges:
        w = 1.0 / (1.0 + max(deg[i], deg[j]))
        a[i, j] = a[j, i] = w
    a[np.diag_indices(n)] = 1.0 - a.sum(axis=0)
    return CombinationMatrix(a, graph)


def build_averaging(graph: Graph) -> CombinationMatrix:
    """Averaging rule: column k holds 1/|N_k| on the closed neighborhood
    of agent k.  Left-stochastic and balanced, with Perron entries
    proportional to the closed-neighborhood sizes."""
    n = graph.n
    a = np.zeros((n, n))
    for k in range(n):
        nbhd = graph.neighbors(k) + [k]
        for l in nbhd:
            a[l, k] = 1.0 / len(nbhd)
    return CombinationMatrix(a, graph)


def _spectrum_summary(a: np.ndarray):
    """(lambda2, lambdaN, rhoA) from a full eigendecomposition."""
    n = a.shape[0]
    vals = np.linalg.eigvals(a)
    order = np.lexsort((-vals.imag, -vals.real))
    vals = vals[order]
    if n == 1:
        return float("nan"), 1.0, 0.0, vals
    lambda2 = float(vals[1].real)
    lambdaN = float(vals[-1].real)
    perron_idx = int(np.argmin(np.abs(vals - 1.0)))
    rest = np.delete(vals, perron_idx)
    rhoA = float(np.abs(rest).max())
    return lambda2, lambdaN, rhoA, vals


def perron_vector(a: CombinationMatrix, max_iter: int = 100_000) -> PerronData:
    """Compute the Perron data of a primitive combination matrix.

    The vector itself comes from power iteration (x <- Ax with sum-one
    renormalization); when the spectral gap is small (|1 - rhoA| < 1e-3)
    or the iteration stalls, the eigenvector is taken from the full
    eigendecomposition instead.

    Raises SpectralError for non-primitive input (repeated eigenvalue 1,
    eigenvalue at -1, or a non-positive limit vector).
    """
    A = a.a
    n = A.shape[0]
    vals = np.linalg.eigvals(A)
    near_one = np.abs(vals - 1.0) <= 1e-8
    if near_one.sum() != 1:
        raise SpectralError("repeated eigenvalue at 1; matrix is not primitive")
    if np.any(np.abs(vals + 1.0) <= 1e-8):
        raise SpectralError("eigenvalue at -1; matrix is not primitive")
    lambda2, lambdaN, rhoA, _ = _spectrum_summary(A)

    p = None
    if n == 1:
        p = np.array([1.0])
    elif abs(1.0 - rhoA) >= 1e-3:
        # iterate down to the numerical floor: stop once the residual no
        # longer improves, so downstream consumers see the vector at full
        # precision rather than an early-exit approximation
        x = np.full(n, 1.0 / n)
        best, best_res, stall = x, np.inf, 0
        for _ in range(max_iter):
            x = A @ x
            x /= x.sum()
            res = np.abs(A @ x - x).max()
            if res < best_res:
                best, best_res, stall = x, res, 0
            else:
                stall += 1
            if res <= 5e-16 or stall >= 50:
                break
        if best_res <= PERRON_RESIDUAL_TOL:
            p = best
    if p is None and n > 1:
        # slow mixing (or stalled): read the eigenvector off the full solve
        w, v = np.linalg.eig(A)
        vec = np.real(v[:, np.argmin(np.abs(w - 1.0))])
        if vec.sum() < 0:
            vec = -vec
        p = vec / vec.sum()

    if p.min() <= 0:
        raise SpectralError("Perron vector is not entrywise positive")
    residual = np.abs(A @ p - p).max()
    if residual > PERRON_RESIDUAL_TOL:
        raise SpectralError(f"Perron residual {residual:.3e} above tolerance")
    return PerronData(p=p, lambda2=lambda2, lambdaN=lambdaN, rhoA=rhoA)


def check_balanced(a: CombinationMatrix, p: PerronData):
    """Balance predicate: P A^T == A P with P = diag(p).

    Returns (balanced, violation) where violation is the largest residual
    entry.  A Perron vector that is not entrywise positive fails the
    predicate regardless of the residual (the positivity deficit is folded
    into the reported violation).
    """
    pv = np.asarray(p.p, dtype=float)
    P = np.diag(pv)
    residual = np.abs(P @ a.a.T - a.a @ P).max()
    deficit = max(0.0, -float(pv.min()))
    balanced = bool(residual <= BALANCE_TOL and pv.min() > 0)
    return balanced, float(max(residual, deficit))


def random_connected_graph(n: int, edge_probability: float, seed: int) -> Graph:
    """Erdos-Renyi draw conditioned on connectivity.

    Rejection-samples up to a fixed budget, then falls back to the last
    draw augmented with a random spanning chain.  Deterministic for a
    fixed seed.
    """
    if n < 1:
        raise GraphError("n must be positive")
    if not (0 < edge_probability <= 1):
        raise GraphError("edge_probability must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    if n == 1:
        return Graph(1, frozenset())
    iu = np.triu_indices(n, k=1)
    edges = frozenset()
    for _ in range(200):
        mask = rng.random(len(iu[0])) < edge_probability
        edges = frozenset(zip(iu[0][mask].tolist(), iu[1][mask].tolist()))
        try:
            return Graph(n, edges)
        except GraphError:
            continue
    # connect the last draw with a random spanning chain
    perm = rng.permutation(n)
    chain = {(min(perm[t - 1], perm[t]), max(perm[t - 1], perm[t])) for t in range(1, n)}
    return Graph(n, edges | frozenset((int(i), int(j)) for i, j in chain))


def matrix_from_array(a, graph: Graph | None = None) -> CombinationMatrix:
    """Wrap a raw array as a CombinationMatrix, inferring the graph from
    the off-diagonal sparsity pattern when none is given."""
    a = np.array(a, dtype=float)
    if graph is None:
        n = a.shape[0]
        edges = {
            (i, j)
            for i in range(n)
            for j in range(i + 1, n)
            if a[i, j] > 0 or a[j, i] > 0
        }
        graph = Graph(n, frozenset(edges))
    return CombinationMatrix(a, graph)


def save_matrix_csv(path, a: np.ndarray) -> None:
    """N rows of N comma-separated decimals, column-stochastic as stored."""
    np.savetxt(path, np.atleast_2d(a), delimiter=",", fmt="%.17g")


def load_matrix_csv(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=","))
