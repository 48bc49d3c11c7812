from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from skdtree.model import MAXVAL
from skdtree.oracle import BinaryKdTree, FlatStore, scan_count, scan_knn, scan_range

from conftest import id_set, random_points


def brute_range(coords, lo, hi):
    return [i for i, row in enumerate(coords.tolist()) if all(a <= v <= b for v, a, b in zip(row, lo, hi))]


def brute_knn_dists(coords, q, k):
    return sorted(sum((int(a) - b) ** 2 for a, b in zip(row, q)) for row in coords.tolist())[:k]


# --- flat store ------------------------------------------------------------


def test_empty_store_answers_nothing():
    store = FlatStore(dims=2)
    assert scan_count(store, (0, 0), (MAXVAL, MAXVAL)) == 0
    dists, coords, ids = scan_knn(store, (0, 0), 3)
    assert dists == [] and coords.shape == (0, 2) and ids.size == 0


def test_store_needs_coords_or_dims():
    with pytest.raises(ValueError):
        FlatStore()


def test_whole_domain_returns_all_points(rng):
    coords = random_points(rng, 500, 3)
    store = FlatStore(coords)
    _, ids = scan_range(store, (0,) * 3, (MAXVAL,) * 3)
    assert sorted(ids.tolist()) == list(range(500))


def test_append_and_remove_keep_the_live_multiset(rng):
    coords = random_points(rng, 40, 2, bits=10)
    store = FlatStore(coords)
    live = {(tuple(r), i) for i, r in enumerate(coords.tolist())}
    for i in range(100):
        p = tuple(int(v) for v in random_points(rng, 1, 2, bits=10)[0])
        store.append(p, 1000 + i)
        live.add((p, 1000 + i))
    for (p, pid) in sorted(live)[::3]:
        assert store.remove(p, pid)
        live.discard((p, pid))
    assert not store.remove((MAXVAL - 1, 0), 5)
    assert id_set(store.coords, store.ids) == sorted(live)


def test_remove_matches_coordinates_not_just_id():
    store = FlatStore(np.array([[1, 1], [2, 2]], dtype=np.uint64), np.array([7, 7], dtype=np.uint64))
    assert not store.remove((3, 3), 7)
    assert store.remove((2, 2), 7)
    assert store.coords.tolist() == [[1, 1]]


# --- scans -----------------------------------------------------------------


def test_knn_on_stored_point_has_zero_distance(rng):
    coords = random_points(rng, 200, 4)
    dists, _, ids = scan_knn(FlatStore(coords), coords[17].tolist(), 1)
    assert dists == [0] and ids.tolist() == [17]


def test_collinear_knn_picks_nearest_ordinals():
    # points 0..9 scaled by 10 on one axis; the query 34 plays the role of 3.4
    coords = np.array([[10 * i, 0] for i in range(10)], dtype=np.uint64)
    dists, _, ids = scan_knn(FlatStore(coords), (34, 0), 3)
    assert ids.tolist() == [3, 4, 2]
    assert dists == [16, 36, 196]


def test_knn_ties_follow_storage_order():
    coords = np.array([[5], [1], [9], [1], [5]], dtype=np.uint64)
    _, _, ids = scan_knn(FlatStore(coords), (3,), 4)
    assert ids.tolist() == [0, 1, 3, 4]


def test_knn_with_k_past_live_count_returns_all(rng):
    coords = random_points(rng, 7, 2)
    dists, _, ids = scan_knn(FlatStore(coords), (0, 0), 50)
    assert len(dists) == 7 and sorted(ids.tolist()) == list(range(7))


@given(st.integers(0, 2**32), st.integers(1, 4), st.integers(1, 30))
def test_scans_match_definitions(seed, dims, k):
    rng = np.random.default_rng(seed)
    coords = random_points(rng, 120, dims, bits=int(rng.integers(4, 64)))
    store = FlatStore(coords)
    a, b = sorted(random_points(rng, 2, dims, bits=64).tolist())
    lo, hi = [min(x, y) for x, y in zip(a, b)], [max(x, y) for x, y in zip(a, b)]
    assert sorted(scan_range(store, lo, hi)[1].tolist()) == brute_range(coords, lo, hi)
    q = random_points(rng, 1, dims, bits=64)[0].tolist()
    assert scan_knn(store, q, k)[0] == brute_knn_dists(coords, q, k)


# --- binary kd-tree baseline -----------------------------------------------


def test_single_bucket_tree_scans_everything(rng):
    coords = random_points(rng, 50, 2)
    tree = BinaryKdTree(coords, np.arange(50), leaf_size=128)
    assert tree.root.points is not None
    assert sorted(pid for _, pid in tree.range((0, 0), (MAXVAL, MAXVAL))) == list(range(50))
    q = coords[9].tolist()
    assert tree.knn(q, 1)[0][0] == 0


def test_empty_baseline_tree():
    tree = BinaryKdTree(np.empty((0, 2), dtype=np.uint64), np.empty(0, dtype=np.uint64))
    assert tree.range((0, 0), (5, 5)) == [] and tree.knn((0, 0), 3) == []


@given(st.integers(0, 2**32), st.integers(1, 4), st.integers(1, 40), st.sampled_from([2, 8, 128]))
def test_baseline_agrees_with_scans(seed, dims, k, leaf_size):
    rng = np.random.default_rng(seed)
    coords = random_points(rng, 700, dims, bits=20, distinct=int(rng.integers(2, 700)))
    ids = np.arange(700, dtype=np.uint64)
    store = FlatStore(coords, ids)
    tree = BinaryKdTree(coords, ids, leaf_size=leaf_size)
    for _ in range(5):
        c = coords[rng.integers(0, 700)].astype(np.int64)
        half = rng.integers(0, 1 << 18, size=dims)
        lo = np.maximum(c - half, 0).tolist()
        hi = (c + half).tolist()
        assert sorted(pid for _, pid in tree.range(lo, hi)) == sorted(scan_range(store, lo, hi)[1].tolist())
        q = random_points(rng, 1, dims, bits=20)[0].tolist()
        assert [d for d, _, _ in tree.knn(q, k)] == scan_knn(store, q, k)[0]
