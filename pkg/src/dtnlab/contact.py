"""Instantaneous contact graph, its clusters, and percolation diagnostics.

Two nodes are in contact when their distance is at most ``R``. Neighbor
candidates come from a uniform grid of cell side ``R`` (only the 3x3 block
around a node can hold a contact), and clusters are merged with a
union-find using path compression and union by size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .errors import InvalidNode, InvalidRange

__all__ = [
    "ContactSnapshot",
    "ClusterPartition",
    "DensityBounds",
    "neighbor_pairs",
    "cluster_labels",
    "labels_from_pairs",
    "build_clusters",
    "source_cluster_size",
    "largest_cluster_fraction",
    "critical_density_bounds",
    "percolation_scan",
]


@numba.njit(cache=True)
def _grid(x, y, R):
    """Bucket points into cells of side ``R``.

    Returns the cell coordinates of every point, the point permutation that
    groups points by cell, and per-cell [start, end) offsets into it. Cells
    are stored densely when the grid is not much larger than the point set,
    otherwise only occupied cells are kept (sorted keys, binary search).
    """
    n = x.shape[0]
    x0 = x.min()
    y0 = y.min()
    nx = int((x.max() - x0) // R) + 1
    ny = int((y.max() - y0) // R) + 1
    stride = ny + 2
    cx = np.empty(n, np.int64)
    cy = np.empty(n, np.int64)
    key = np.empty(n, np.int64)
    for k in range(n):
        cx[k] = int((x[k] - x0) // R) + 1
        cy[k] = int((y[k] - y0) // R) + 1
        key[k] = cx[k] * stride + cy[k]
    ncells = (nx + 2) * stride
    dense = ncells <= max(16 * n, 65536)
    if dense:
        start = np.zeros(ncells + 1, np.int64)
        for k in range(n):
            start[key[k] + 1] += 1
        for c in range(ncells):
            start[c + 1] += start[c]
        fill = start[:-1].copy()
        order = np.empty(n, np.int64)
        for k in range(n):
            order[fill[key[k]]] = k
            fill[key[k]] += 1
        skey = np.empty(0, np.int64)
    else:
        order = np.argsort(key, kind="mergesort")
        skey = key[order]
        start = np.empty(0, np.int64)
    return cx, cy, stride, order, dense, start, skey


@numba.njit(cache=True)
def _cell_span(dense, start, skey, c):
    if dense:
        return start[c], start[c + 1]
    return np.searchsorted(skey, c, side="left"), np.searchsorted(skey, c, side="right")


@numba.njit(cache=True)
def _pairs_kernel(x, y, R):
    n = x.shape[0]
    cx, cy, stride, order, dense, start, skey = _grid(x, y, R)
    xs = x[order]
    ys = y[order]
    r2 = R * R
    cap = 8 * n + 16
    pi = np.empty(cap, np.int64)
    pj = np.empty(cap, np.int64)
    m = 0
    for p in range(n):
        i = order[p]
        for dx in range(-1, 2):
            for dy in range(-1, 2):
                lo, hi = _cell_span(dense, start, skey, (cx[i] + dx) * stride + cy[i] + dy)
                if hi <= p:
                    continue
                for q in range(max(lo, p + 1), hi):
                    ddx = xs[p] - xs[q]
                    ddy = ys[p] - ys[q]
                    if ddx * ddx + ddy * ddy <= r2:
                        if m == cap:
                            cap *= 2
                            pi2 = np.empty(cap, np.int64)
                            pj2 = np.empty(cap, np.int64)
                            pi2[:m] = pi[:m]
                            pj2[:m] = pj[:m]
                            pi = pi2
                            pj = pj2
                        j = order[q]
                        pi[m] = min(i, j)
                        pj[m] = max(i, j)
                        m += 1
    return pi[:m].copy(), pj[:m].copy()


@numba.njit(cache=True)
def _find(parent, i):
    root = i
    while parent[root] != root:
        root = parent[root]
    while parent[i] != root:
        nxt = parent[i]
        parent[i] = root
        i = nxt
    return root


@numba.njit(cache=True)
def _labels_kernel(x, y, R):
    n = x.shape[0]
    cx, cy, stride, order, dense, start, skey = _grid(x, y, R)
    xs = x[order]
    ys = y[order]
    r2 = R * R
    # Union-find runs over cell-sorted positions for memory locality.
    parent = np.arange(n)
    size = np.ones(n, np.int64)
    for p in range(n):
        i = order[p]
        for dx in range(-1, 2):
            for dy in range(-1, 2):
                lo, hi = _cell_span(dense, start, skey, (cx[i] + dx) * stride + cy[i] + dy)
                if hi <= p:
                    continue
                for q in range(max(lo, p + 1), hi):
                    ddx = xs[p] - xs[q]
                    ddy = ys[p] - ys[q]
                    if ddx * ddx + ddy * ddy <= r2:
                        a = _find(parent, p)
                        b = _find(parent, q)
                        if a != b:
                            if size[a] < size[b]:
                                a, b = b, a
                            parent[b] = a
                            size[a] += size[b]
    # Canonical id: smallest original node index in the cluster.
    smallest = np.full(n, n, np.int64)
    for p in range(n):
        r = _find(parent, p)
        if order[p] < smallest[r]:
            smallest[r] = order[p]
    labels = np.empty(n, np.int64)
    for p in range(n):
        labels[order[p]] = smallest[parent[p]]
    return labels


@numba.njit(cache=True)
def _pair_labels_kernel(pi, pj, n):
    parent = np.arange(n)
    for k in range(pi.shape[0]):
        a = _find(parent, pi[k])
        b = _find(parent, pj[k])
        if a != b:
            # Root at the smaller index, so the root is the canonical label.
            if a < b:
                parent[b] = a
            else:
                parent[a] = b
    labels = np.empty(n, np.int64)
    for i in range(n):
        labels[i] = _find(parent, i)
    return labels


def _as_xy(positions):
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    return np.ascontiguousarray(pos[:, 0]), np.ascontiguousarray(pos[:, 1])


def _check_range(R):
    if not R > 0:
        raise InvalidRange(f"transmission range must be positive, got {R}")


def neighbor_pairs(x: np.ndarray, y: np.ndarray, R: float) -> tuple[np.ndarray, np.ndarray]:
    """All index pairs ``i < j`` with ``|p_i - p_j| <= R``, grouped by ``i``."""
    _check_range(R)
    if len(x) < 2:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return _pairs_kernel(np.asarray(x, float), np.asarray(y, float), float(R))


def cluster_labels(x: np.ndarray, y: np.ndarray, R: float) -> np.ndarray:
    """Cluster label of every node; a label is the smallest node index in its cluster."""
    _check_range(R)
    if len(x) == 0:
        return np.empty(0, np.int64)
    return _labels_kernel(np.asarray(x, float), np.asarray(y, float), float(R))


def labels_from_pairs(i: np.ndarray, j: np.ndarray, n: int) -> np.ndarray:
    """Same labels as :func:`cluster_labels`, from an already computed link list."""
    return _pair_labels_kernel(np.asarray(i, np.int64), np.asarray(j, np.int64), int(n))


@dataclass(frozen=True)
class ContactSnapshot:
    positions: np.ndarray
    range: float

    def __post_init__(self):
        _check_range(self.range)
        object.__setattr__(self, "positions", np.asarray(self.positions, float).reshape(-1, 2))


@dataclass(frozen=True)
class ClusterPartition:
    label: np.ndarray
    sizes: dict

    @property
    def node_count(self) -> int:
        return len(self.label)

    def members(self, cluster_id: int) -> np.ndarray:
        return np.flatnonzero(self.label == cluster_id)


@dataclass(frozen=True)
class DensityBounds:
    """Critical density bracket in nodes per square metre."""

    lower: float
    upper: float

    def per_km2(self) -> tuple[float, float]:
        return self.lower * 1e6, self.upper * 1e6


def build_clusters(snapshot: ContactSnapshot) -> ClusterPartition:
    x, y = _as_xy(snapshot.positions)
    label = cluster_labels(x, y, snapshot.range)
    ids, counts = np.unique(label, return_counts=True)
    return ClusterPartition(label, dict(zip(ids.tolist(), counts.tolist())))


def source_cluster_size(partition: ClusterPartition, source: int) -> int:
    if not 0 <= source < partition.node_count:
        raise InvalidNode(f"node {source} not in a network of {partition.node_count}")
    return partition.sizes[int(partition.label[source])]


def largest_cluster_fraction(partition: ClusterPartition) -> float:
    if partition.node_count == 0:
        raise InvalidNode("empty partition")
    return max(partition.sizes.values()) / partition.node_count


def critical_density_bounds(R: float) -> DensityBounds:
    """Bracket for the continuum-percolation critical density at range ``R`` (metres).

    Simulation estimates put the critical density of the unit-range disk
    graph between 1.43 and 1.44; the bracket scales as ``1 / R**2``.
    """
    if not R > 0:
        raise InvalidRange(f"transmission range must be positive, got {R}")
    r2 = float(R) * float(R)
    return DensityBounds(1.43 / r2, 1.44 / r2)


@dataclass(frozen=True)
class PercolationSummary:
    density: float
    R: float
    L: float
    trials: int
    mean_largest_fraction: float
    mean_source_cluster: float

    header = "lambda,R,L,trials,mean_largest_fraction,mean_source_cluster"

    def csv_row(self) -> str:
        return (f"{self.density:g},{self.R:g},{self.L:g},{self.trials},"
                f"{self.mean_largest_fraction:.6f},{self.mean_source_cluster:.4f}")


def percolation_scan(density_km2: float, R: float, L: float, trials: int,
                     seed: int = 0) -> PercolationSummary:
    """Static placements: mean largest-cluster fraction and mean source-cluster size.

    Each trial places ``round(density * L^2)`` nodes uniformly. The source
    cluster size is averaged over every possible source of the placement
    (``sum(s^2) / M``), which has far less variance than drawing one source.
    """
    from .sim import node_count  # local import: sim depends on this module

    _check_range(R)
    M = node_count(density_km2, L)
    fractions = np.empty(trials)
    source_sizes = np.empty(trials)
    for k in range(trials):
        rng = np.random.default_rng(np.random.SeedSequence([seed, k]))
        x = rng.uniform(0.0, L, M)
        y = rng.uniform(0.0, L, M)
        label = cluster_labels(x, y, R)
        counts = np.bincount(label, minlength=M)
        fractions[k] = counts.max() / M
        source_sizes[k] = float(counts.astype(float) @ counts) / M
    return PercolationSummary(density_km2, R, L, trials,
                              float(fractions.mean()), float(source_sizes.mean()))
