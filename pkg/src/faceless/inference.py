"""MAP inference for the weighted-Potts CRF on a single clique (or any small graph).

Objective of a labeling Y over nodes V and edges E:

    (1/|V|) sum_i phi_i(Y_i) + (alpha/|E|) sum_(i,j) w_ij [Y_i == Y_j]

with the pairwise term taken as 0 when E is empty. Labels are integer indices;
ties always resolve to the smallest label (or label vector, lexicographically).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BudgetExceeded, ConfigError, InferenceError

TIE_TOL = 1e-10
MODES = ("unary_only", "joint_tree", "joint_maxproduct")


@dataclass(frozen=True)
class InferenceParams:
    alpha: float = 100.0
    max_iterations: int = 50
    damping: float = 0.5
    convergence_tol: float = 1e-9

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigError(f"alpha must be non-negative, got {self.alpha}")
        if not 0.0 <= self.damping < 1.0:
            raise ConfigError(f"damping must lie in [0, 1), got {self.damping}")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")


@dataclass(frozen=True, eq=False)
class CliqueProblem:
    """Unary rows (n, K), undirected edges (m, 2) with weights, and clamped labels.

    ``clamped[i] >= 0`` fixes node i to that label; its unary row is one-hot.
    """

    unary: np.ndarray
    edges: np.ndarray
    weights: np.ndarray
    clamped: np.ndarray

    @property
    def n_nodes(self):
        return self.unary.shape[0]

    @property
    def n_labels(self):
        return self.unary.shape[1]

    @property
    def n_edges(self):
        return len(self.weights)


def make_problem(unary, edges=(), weights=(), clamped=None) -> CliqueProblem:
    unary = np.array(unary, dtype=float, ndmin=2)
    n, k = unary.shape
    edges = np.asarray(edges, dtype=int).reshape(-1, 2)
    weights = np.asarray(weights, dtype=float).reshape(-1)
    if len(edges) != len(weights):
        raise ConfigError("edges and weights differ in length")
    if len(edges) and (edges.min() < 0 or edges.max() >= n or np.any(edges[:, 0] == edges[:, 1])):
        raise ConfigError("edges must join two distinct existing nodes")
    clamp = np.full(n, -1, dtype=int) if clamped is None else np.asarray(clamped, dtype=int).copy()
    if clamp.shape != (n,) or clamp.max(initial=-1) >= k:
        raise ConfigError("clamped must hold one entry per node, each -1 or a valid label")
    fixed = clamp >= 0
    if fixed.any():
        unary[fixed] = 0.0
        unary[np.flatnonzero(fixed), clamp[fixed]] = 1.0
    return CliqueProblem(unary, edges, weights, clamp)


@dataclass(frozen=True)
class Labeling:
    labels: tuple
    objective_value: float
    converged: bool = True
    iterations: int = 0


def objective(labels, problem: CliqueProblem, alpha: float) -> float:
    labels = np.asarray(labels)
    if labels.shape != (problem.n_nodes,):
        raise InferenceError(f"labeling covers {labels.size} of {problem.n_nodes} nodes")
    if np.any(labels < 0) or np.any(labels >= problem.n_labels):
        raise InferenceError("labeling contains an unlabeled node or an invalid label")
    value = problem.unary[np.arange(problem.n_nodes), labels].sum() / problem.n_nodes
    if problem.n_edges:
        agree = labels[problem.edges[:, 0]] == labels[problem.edges[:, 1]]
        value += alpha * problem.weights[agree].sum() / problem.n_edges
    return float(value)


def _first_max(values, tol=TIE_TOL):
    values = np.asarray(values)
    return int(np.argmax(values >= values.max() - tol))


def exact_map(problem: CliqueProblem, alpha: float, budget: int = 10**6) -> Labeling:
    """Exhaustive enumeration over free nodes; refuses beyond ``budget`` states."""
    free = np.flatnonzero(problem.clamped < 0)
    k = problem.n_labels
    n_states = k ** len(free)
    if n_states > budget:
        raise BudgetExceeded(f"{k}^{len(free)} = {n_states} states exceeds the enumeration budget {budget}")
    codes = np.arange(n_states)
    powers = k ** np.arange(len(free) - 1, -1, -1)
    L = np.tile(problem.clamped, (n_states, 1))
    if len(free):
        L[:, free] = (codes[:, None] // powers) % k
    values = problem.unary[np.arange(problem.n_nodes), L].sum(axis=1) / problem.n_nodes
    if problem.n_edges:
        agree = L[:, problem.edges[:, 0]] == L[:, problem.edges[:, 1]]
        values = values + alpha * (agree @ problem.weights) / problem.n_edges
    best = _first_max(values)
    labels = L[best]
    return Labeling(tuple(int(v) for v in labels), objective(labels, problem, alpha))


def _node_potentials(problem: CliqueProblem, n_nodes: int):
    theta = problem.unary / n_nodes
    fixed = problem.clamped >= 0
    if fixed.any():
        mask = np.ones_like(theta, dtype=bool)
        mask[np.flatnonzero(fixed), problem.clamped[fixed]] = False
        mask[~fixed] = False
        theta = np.where(mask, -np.inf, theta)
    return theta


def max_product(problem: CliqueProblem, params: InferenceParams = InferenceParams()) -> Labeling:
    """Damped synchronous max-sum message passing, decoded from node beliefs."""
    n, k = problem.n_nodes, problem.n_labels
    theta = _node_potentials(problem, n)
    m = problem.n_edges
    if m == 0:
        labels = np.array([_first_max(row) for row in theta])
        return Labeling(tuple(int(v) for v in labels), objective(labels, problem, params.alpha), True, 0)
    src = np.concatenate([problem.edges[:, 0], problem.edges[:, 1]])
    dst = np.concatenate([problem.edges[:, 1], problem.edges[:, 0]])
    rev = np.concatenate([np.arange(m, 2 * m), np.arange(m)])
    coupling = np.tile(params.alpha * problem.weights / m, 2)[:, None]
    messages = np.zeros((2 * m, k))
    converged = False
    iterations = 0
    for iterations in range(1, params.max_iterations + 1):
        incoming = np.zeros((n, k))
        np.add.at(incoming, dst, messages)
        h = theta[src] + incoming[src] - messages[rev]
        new = np.maximum(h.max(axis=1, keepdims=True), h + coupling)
        new -= new.max(axis=1, keepdims=True)
        new = params.damping * messages + (1.0 - params.damping) * new
        delta = np.abs(new - messages).max()
        messages = new
        if delta < params.convergence_tol:
            converged = True
            break
    beliefs = theta.copy()
    np.add.at(beliefs, dst, messages)
    labels = np.array([_first_max(row) for row in beliefs])
    return Labeling(tuple(int(v) for v in labels), objective(labels, problem, params.alpha), converged, iterations)


def star_scores(query: int, problem: CliqueProblem, alpha: float) -> np.ndarray:
    """Max-marginal scores of each query label on the star around ``query``.

    The star keeps the query, its neighbours and the incident edges; |V| and |E|
    are those of the star.
    """
    if not 0 <= query < problem.n_nodes:
        raise InferenceError(f"query node {query} is not in the clique")
    e = problem.edges
    incident = np.flatnonzero((e[:, 0] == query) | (e[:, 1] == query))
    nbrs = np.where(e[incident, 0] == query, e[incident, 1], e[incident, 0])
    n_v = 1 + len(incident)
    theta = _node_potentials(problem, n_v)
    score = theta[query].copy()
    if len(incident) == 0:
        return score
    c = alpha * problem.weights[incident] / len(incident)
    th = theta[nbrs]
    score += np.maximum(th.max(axis=1, keepdims=True), th + c[:, None]).sum(axis=0)
    return score


def tree_approx_query(query: int, problem: CliqueProblem, params: InferenceParams = InferenceParams()) -> int:
    """Exact max-sum on the star graph centred at the query; returns its label."""
    return _first_max(star_scores(query, problem, params.alpha))


def infer_query(query: int, problem: CliqueProblem, params: InferenceParams = InferenceParams(),
                mode: str = "joint_tree") -> int:
    if mode not in MODES:
        raise ConfigError(f"unknown inference mode {mode!r}")
    if not 0 <= query < problem.n_nodes:
        raise InferenceError(f"query node {query} is not in the clique")
    if problem.clamped[query] >= 0:
        return int(problem.clamped[query])
    if mode == "unary_only":
        return _first_max(problem.unary[query])
    if mode == "joint_tree":
        return tree_approx_query(query, problem, params)
    return max_product(problem, params).labels[query]
