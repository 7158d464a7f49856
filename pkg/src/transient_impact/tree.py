"""Finite scenario trees: filtered structure, measures, martingale tools.

Nodes are stored level by level (parents always precede children), each node
carrying the exogenous price, depth and resilience at its time slot together
with the transition probability from its parent under the reference measure.
A re-weighted measure is represented the same way: one transition probability
per node.  All recursions are deterministic level sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoSignChange
from .market import TimeGrid, as_curve

MARTINGALE_RTOL = 1e-10
SIMPLEX_ATOL = 1e-9


class ScenarioTree:
    """Level-ordered scenario tree with per-node market data.

    Parameters
    ----------
    times : array
        Trading times shared by all scenarios, ``times[0] == 0``.
    parent : int array
        Parent node id per node; ``-1`` for the root (node 0).
    p_transition : array
        Probability of the edge from the parent, ``1.0`` at the root.
        Transition probabilities sum to one over each node's children.
    P, delta, r : arrays
        Exogenous price, market depth and resilience rate per node.
    """

    def __init__(self, times, parent, p_transition, P, delta, r):
        self.grid = TimeGrid(np.asarray(times, dtype=float))
        self.parent = np.asarray(parent, dtype=int)
        n = self.parent.size
        self.p_transition = as_curve(p_transition, n, "p_transition")
        self.P = as_curve(P, n, "P")
        self.delta = as_curve(delta, n, "delta")
        self.r = as_curve(r, n, "r")

        if n == 0 or self.parent[0] != -1:
            raise ValueError("node 0 must be the root (parent -1)")
        if np.any(self.parent[1:] < 0) or np.any(self.parent[1:] >= np.arange(1, n)):
            raise ValueError("nodes must be stored level by level with parents first")
        if np.any(self.delta <= 0.0):
            raise ValueError("market depth must be > 0 at every node")
        if np.any(self.r < 0.0):
            raise ValueError("resilience rate must be >= 0 at every node")
        if np.any(self.p_transition < 0.0):
            raise ValueError("transition probabilities must be >= 0")
        if self.p_transition[0] != 1.0:
            raise ValueError("root transition probability must be 1")

        self.t_index = np.zeros(n, dtype=int)
        for node in range(1, n):
            self.t_index[node] = self.t_index[self.parent[node]] + 1
        self.n_levels = int(self.t_index.max()) + 1
        if self.n_levels != self.grid.n_points:
            raise ValueError(
                f"tree depth ({self.n_levels} levels) does not match the time grid "
                f"({self.grid.n_points} points)"
            )

        self.children: list[np.ndarray] = [np.empty(0, dtype=int) for _ in range(n)]
        order = np.argsort(self.parent[1:], kind="stable") + 1
        splits = np.searchsorted(self.parent[order], np.arange(n))
        for node in range(n):
            lo, hi = splits[node], splits[node + 1] if node + 1 < n else order.size
            self.children[node] = order[lo:hi]

        self.is_leaf = np.array([c.size == 0 for c in self.children])
        if np.any(self.t_index[self.is_leaf] != self.n_levels - 1):
            raise ValueError("every leaf must sit at the terminal time")
        self.leaves = np.flatnonzero(self.is_leaf)
        self.levels = [np.flatnonzero(self.t_index == k) for k in range(self.n_levels)]

        for node in np.flatnonzero(~self.is_leaf):
            total = self.p_transition[self.children[node]].sum()
            if abs(total - 1.0) > SIMPLEX_ATOL:
                raise ValueError(f"transition probabilities at node {node} sum to {total}, not 1")

        # Per-node resilience discount and liquidity curve along the path.
        dt = np.diff(self.grid.times)
        self.rho = np.ones(n)
        for node in range(1, n):
            par = self.parent[node]
            self.rho[node] = self.rho[par] * np.exp(self.r[par] * dt[self.t_index[par]])
        self.kappa = self.delta / self.rho**2
        # Mass of the interval ending at each node, consumed against parent-time values.
        self.edge_weight = np.zeros(n)
        self.edge_weight[1:] = self.kappa[self.parent[1:]] - self.kappa[1:]

    # -- basic structure ----------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return self.parent.size

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def accumulate(self, values, initial=0.0) -> np.ndarray:
        """Running sum of a per-node quantity along every root-to-node path."""
        values = as_curve(values, self.n_nodes, "values")
        out = np.empty(self.n_nodes)
        out[0] = initial + values[0]
        out[1:] = values[1:]
        for node in range(1, self.n_nodes):
            out[node] += out[self.parent[node]]
        return out

    def path_nodes(self, leaf: int) -> np.ndarray:
        """Node ids from the root to ``leaf`` inclusive."""
        path = np.empty(self.n_levels, dtype=int)
        node = leaf
        for k in range(self.n_levels - 1, -1, -1):
            path[k] = node
            node = self.parent[node]
        return path

    def leaf_paths(self) -> np.ndarray:
        return np.stack([self.path_nodes(leaf) for leaf in self.leaves])

    def reach_probabilities(self, transitions=None) -> np.ndarray:
        """Probability of passing through each node (products of edge weights)."""
        q = self.p_transition if transitions is None else _transition_array(self, transitions)
        out = q.copy()
        for node in range(1, self.n_nodes):
            out[node] *= out[self.parent[node]]
        return out

    def validate_assumptions_pathwise(self) -> tuple[bool, float]:
        """Edge-wise check that the liquidity curve strictly decreases on every path."""
        drops = self.edge_weight[1:] / self.kappa[self.parent[1:]]
        margin = float(drops.min()) if drops.size else np.inf
        return margin > 1e-12, margin

    # -- constructors --------------------------------------------------------

    @classmethod
    def single_path(cls, market, P) -> "ScenarioTree":
        """Chain tree carrying one deterministic scenario of a market."""
        n = market.grid.n_points
        parent = np.arange(-1, n - 1)
        return cls(
            market.grid.times,
            parent,
            np.ones(n),
            as_curve(P, n, "P"),
            market.liquidity.delta,
            market.liquidity.r,
        )

    @classmethod
    def from_node_dicts(cls, times, nodes, default_delta=None, default_r=None) -> "ScenarioTree":
        """Build from records ``{id, parent, p_transition, P[, delta, r]}``.

        Records must be supplied in id order starting at 0; missing depth or
        resilience falls back to the per-time-index defaults (deterministic
        curves broadcast onto the tree).
        """
        n = len(nodes)
        parent = np.empty(n, dtype=int)
        p = np.empty(n)
        price = np.empty(n)
        delta = np.empty(n)
        r = np.empty(n)
        t_index = np.zeros(n, dtype=int)
        for i, rec in enumerate(nodes):
            if int(rec.get("id", i)) != i:
                raise ValueError("node records must be listed in id order starting at 0")
            parent[i] = int(rec["parent"])
            t_index[i] = 0 if parent[i] < 0 else t_index[parent[i]] + 1
            if "t_index" in rec and int(rec["t_index"]) != t_index[i]:
                raise ValueError(f"node {i}: declared t_index contradicts the parent structure")
            p[i] = float(rec.get("p_transition", 1.0))
            price[i] = float(rec["P"])
            if "delta" in rec:
                delta[i] = float(rec["delta"])
            elif default_delta is not None:
                delta[i] = np.asarray(default_delta, dtype=float).reshape(-1)[t_index[i]] \
                    if np.ndim(default_delta) else float(default_delta)
            else:
                raise ValueError(f"node {i} has no depth and no default was given")
            if "r" in rec:
                r[i] = float(rec["r"])
            elif default_r is not None:
                r[i] = np.asarray(default_r, dtype=float).reshape(-1)[t_index[i]] \
                    if np.ndim(default_r) else float(default_r)
            else:
                raise ValueError(f"node {i} has no resilience rate and no default was given")
        return cls(times, parent, p, price, delta, r)


@dataclass(frozen=True)
class NodeMeasure:
    """Re-weighted transition probabilities, absolutely continuous w.r.t. the tree's."""

    transitions: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "transitions", np.asarray(self.transitions, dtype=float))

    @classmethod
    def for_tree(cls, tree: ScenarioTree, transitions) -> "NodeMeasure":
        q = as_curve(transitions, tree.n_nodes, "transitions")
        if np.any(q < 0.0):
            raise ValueError("measure transitions must be >= 0")
        if np.any((tree.p_transition == 0.0) & (q > 0.0)):
            raise ValueError("measure puts mass on a branch with zero reference probability")
        for node in np.flatnonzero(~tree.is_leaf):
            total = q[tree.children[node]].sum()
            if abs(total - 1.0) > SIMPLEX_ATOL:
                raise ValueError(f"measure transitions at node {node} sum to {total}, not 1")
        q = q.copy()
        q[0] = 1.0
        return cls(q)

    @classmethod
    def reference(cls, tree: ScenarioTree) -> "NodeMeasure":
        return cls(tree.p_transition.copy())


def _transition_array(tree: ScenarioTree, q) -> np.ndarray:
    if isinstance(q, NodeMeasure):
        return q.transitions
    return as_curve(q, tree.n_nodes, "transitions")


# ---------------------------------------------------------------------------
# Expectations and martingales
# ---------------------------------------------------------------------------


def _expand_leaf_values(tree: ScenarioTree, values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.shape == (tree.leaves.size,):
        out = np.zeros(tree.n_nodes)
        out[tree.leaves] = values
        return out
    if values.shape == (tree.n_nodes,):
        return values.astype(float).copy()
    raise ValueError("values must be given per leaf or per node")


def conditional_expectation(tree: ScenarioTree, q, values) -> np.ndarray:
    """Backward recursion: node value = transition-weighted mean of children.

    ``values`` fixes the leaves (given per leaf in leaf-id order, or per node).
    Returns one value per node.
    """
    qt = _transition_array(tree, q)
    out = _expand_leaf_values(tree, values)
    for level in reversed(tree.levels[:-1]):
        for node in level:
            kids = tree.children[node]
            out[node] = float(np.dot(qt[kids], out[kids]))
    return out


def martingale_projection(tree: ScenarioTree, q, terminal_values) -> np.ndarray:
    """Martingale with the given terminal values: projections under ``q``."""
    return conditional_expectation(tree, q, terminal_values)


def is_martingale(tree: ScenarioTree, q, M) -> tuple[bool, float]:
    """Largest one-step drift of ``M`` under ``q``; true when below tolerance."""
    qt = _transition_array(tree, q)
    M = as_curve(M, tree.n_nodes, "M")
    defect = 0.0
    for node in np.flatnonzero(~tree.is_leaf):
        kids = tree.children[node]
        defect = max(defect, abs(float(np.dot(qt[kids], M[kids])) - M[node]))
    scale = 1.0 + float(np.max(np.abs(M)))
    return defect <= MARTINGALE_RTOL * scale, defect


def q_tail_probability(tree: ScenarioTree, q, threshold: float) -> float:
    """Mass the measure puts on terminal prices above the threshold."""
    reach = tree.reach_probabilities(q)
    leaves = tree.leaves
    mass = float(np.sum(reach[leaves][tree.P[leaves] > threshold]))
    return min(max(mass, 0.0), 1.0)  # guard rounding in the transition products


# ---------------------------------------------------------------------------
# Measure tilt
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TiltResult:
    """Outcome of the drift-removing two-point tilt."""

    measure: NodeMeasure
    martingale: np.ndarray
    max_abs_gap: float
    tail_probability: float


def tilt_to_martingale(tree: ScenarioTree, g, eps: float) -> TiltResult:
    """Re-weight the tree so the drift-adjusted price becomes a martingale.

    ``g`` is a non-increasing deterministic offset per time index.  At every
    internal node the children attaining the most negative and most positive
    increment of ``P + g`` (among branches with positive reference
    probability; ties broken by lowest node id) are mixed so the one-step
    drift of ``P + g`` is exactly zero.  The resulting projection of the
    terminal ``P + g`` then matches ``P + g`` at every node up to rounding.
    Reports that gap together with the tilted mass on ``{P_T > eps}``.

    Raises :class:`NoSignChange` where no such two-point mix exists.
    """
    g = as_curve(g, tree.n_levels, "g")
    if np.any(np.diff(g) > 0.0):
        raise ValueError("offset function must be non-increasing")

    q = np.zeros(tree.n_nodes)
    q[0] = 1.0
    shifted = tree.P + g[tree.t_index]
    for node in np.flatnonzero(~tree.is_leaf):
        kids = tree.children[node]
        kids = kids[tree.p_transition[kids] > 0.0]
        if kids.size == 0:
            raise NoSignChange(f"node {node} has no admissible branches")
        inc = shifted[kids] - shifted[node]
        lo = int(kids[np.argmin(inc)])
        hi = int(kids[np.argmax(inc)])
        d_lo = shifted[lo] - shifted[node]
        d_hi = shifted[hi] - shifted[node]
        if d_lo > 0.0 or d_hi < 0.0:
            raise NoSignChange(
                f"increments at node {node} do not change sign "
                f"(range [{d_lo:.6g}, {d_hi:.6g}])"
            )
        if d_hi > d_lo:
            w_lo = d_hi / (d_hi - d_lo)
            q[lo] += w_lo
            q[hi] += 1.0 - w_lo
        else:  # all admissible increments vanish
            q[lo] += 1.0

    measure = NodeMeasure.for_tree(tree, q)
    M = martingale_projection(tree, measure, shifted[tree.leaves])
    gap = float(np.max(np.abs(shifted - M)))
    tail = q_tail_probability(tree, measure, eps)
    return TiltResult(measure=measure, martingale=M, max_abs_gap=gap, tail_probability=tail)
