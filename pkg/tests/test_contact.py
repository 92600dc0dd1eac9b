from collections import deque

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dtnlab.contact import (ContactSnapshot, build_clusters, cluster_labels,
                            critical_density_bounds, labels_from_pairs, largest_cluster_fraction,
                            neighbor_pairs,
                            percolation_scan, source_cluster_size)
from dtnlab.errors import InvalidNode, InvalidRange


def bfs_components(pos, R):
    """O(n^2) oracle: component id = smallest member index."""
    n = len(pos)
    d2 = ((pos[:, None, :] - pos[None, :, :]) ** 2).sum(-1)
    adj = d2 <= R * R
    label = np.full(n, -1)
    for s in range(n):
        if label[s] >= 0:
            continue
        label[s] = s
        q = deque([s])
        while q:
            u = q.popleft()
            for v in np.flatnonzero(adj[u]):
                if label[v] < 0:
                    label[v] = s
                    q.append(v)
    return label


def partition(pos, R):
    return build_clusters(ContactSnapshot(pos, R))


def test_chain_is_one_cluster():
    p = partition([(0, 0), (0, 40), (0, 90)], 50)
    assert p.sizes == {0: 3}


def test_gap_splits_clusters():
    p = partition([(0, 0), (0, 51)], 50)
    assert sorted(p.sizes.values()) == [1, 1]


def test_exact_range_connects():
    p = partition([(0, 0), (0, 50), (30, 90)], 50)
    assert p.sizes == {0: 3}


@pytest.mark.parametrize("seed", range(8))
def test_matches_bfs_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 1000))
    R = float(rng.uniform(5, 80))
    pos = rng.uniform(0, 1000, (n, 2))
    assert np.array_equal(partition(pos, R).label, bfs_components(pos, R))


@given(st.lists(st.tuples(st.integers(0, 40), st.integers(0, 40)), min_size=1, max_size=60),
       st.integers(1, 12))
def test_integer_grid_ties_match_oracle(points, R):
    # Integer coordinates produce many exact-R distances.
    pos = np.array(points, float)
    assert np.array_equal(partition(pos, float(R)).label, bfs_components(pos, R))


@given(st.integers(0, 2**31), st.integers(2, 300))
def test_neighbor_pairs_exact(seed, n):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0, 300, (n, 2))
    R = 25.0
    i, j = neighbor_pairs(pos[:, 0], pos[:, 1], R)
    got = set(zip(i.tolist(), j.tolist()))
    d2 = ((pos[:, None] - pos[None]) ** 2).sum(-1)
    a, b = np.nonzero(np.triu(d2 <= R * R, 1))
    assert got == set(zip(a.tolist(), b.tolist()))
    assert len(got) == len(i)


@given(st.integers(0, 2**31), st.integers(1, 400), st.floats(5, 60))
def test_labels_from_pairs_match(seed, n, R):
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(0, 400, (2, n))
    assert np.array_equal(labels_from_pairs(*neighbor_pairs(x, y, R), n), cluster_labels(x, y, R))


def test_sparse_grid_path_matches_dense():
    # Few points spread over a huge area take the sorted-key branch.
    rng = np.random.default_rng(3)
    pos = np.vstack([rng.uniform(0, 1e6, (50, 2)), [[10, 10], [20, 10], [1e6, 1e6]]])
    assert np.array_equal(cluster_labels(pos[:, 0], pos[:, 1], 15.0), bfs_components(pos, 15.0))


def test_sizes_sum_to_count():
    rng = np.random.default_rng(0)
    p = partition(rng.uniform(0, 500, (400, 2)), 30)
    assert sum(p.sizes.values()) == p.node_count == 400


def test_source_cluster_size():
    p = partition([(0, 0), (0, 40), (500, 500)], 50)
    assert source_cluster_size(p, 2) == 1
    assert source_cluster_size(p, 0) == 2
    with pytest.raises(InvalidNode):
        source_cluster_size(p, 3)


def test_all_in_one_cluster():
    pos = np.column_stack((np.arange(20) * 10.0, np.zeros(20)))
    assert source_cluster_size(partition(pos, 10), 7) == 20


def test_largest_fraction():
    assert largest_cluster_fraction(partition([(0, 0)], 1)) == 1.0
    assert largest_cluster_fraction(partition([(0, 0), (0, 5)], 1)) == 0.5


def test_invalid_range():
    with pytest.raises(InvalidRange):
        ContactSnapshot([(0, 0)], 0)
    with pytest.raises(InvalidRange):
        critical_density_bounds(-1)


def test_critical_bounds():
    b = critical_density_bounds(1)
    assert (b.lower, b.upper) == (1.43, 1.44)
    b = critical_density_bounds(2)
    assert (b.lower, b.upper) == (0.3575, 0.36)
    assert critical_density_bounds(50).per_km2() == (572.0, 576.0)


def test_supercritical_largest_fraction():
    s = percolation_scan(650, 50, 5000, trials=5, seed=1)
    assert s.mean_largest_fraction > 0.5
