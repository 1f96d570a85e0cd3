import math

import numpy as np
import pytest

from abnkit.cache import (
    build_cache,
    cache_from_text,
    cache_to_text,
    enumerate_parent_sets,
)
from abnkit.dag import ConstraintSet, Dag
from abnkit.data import standardize
from abnkit.errors import CacheMismatch, UnenumeratedParentSet
from abnkit.formula import parse_formula

from conftest import gaussian_chain_dataset, mixed_dataset


class TestEnumerate:
    def test_unconstrained_count_matches_binomial_sum(self):
        cons = ConstraintSet(tuple(f"x{i}" for i in range(8)), max_parents=4)
        masks = enumerate_parent_sets(0, cons, 8)
        assert len(masks) == sum(math.comb(7, k) for k in range(5))  # 99
        assert masks == sorted(masks)
        assert len(set(masks)) == len(masks)

    def test_fully_banned_row_yields_empty_set_only(self):
        nodes = tuple(f"x{i}" for i in range(5))
        banned = parse_formula("~x0|.", nodes)
        cons = ConstraintSet(nodes, banned=banned, max_parents=3)
        assert enumerate_parent_sets(0, cons, 5) == [0]
        # other nodes are unrestricted (x0 may still be their parent)
        assert len(enumerate_parent_sets(1, cons, 5)) == sum(math.comb(4, k) for k in range(4))

    def test_retained_with_limit_one(self):
        nodes = ("a", "b", "c")
        retained = parse_formula("~a|b", nodes)
        cons = ConstraintSet(nodes, retained=retained, max_parents=1)
        masks = enumerate_parent_sets(0, cons, 3)
        assert masks == [0b010]

    def test_retained_always_subset(self):
        nodes = tuple(f"x{i}" for i in range(6))
        retained = parse_formula("~x0|x3", nodes)
        cons = ConstraintSet(nodes, retained=retained, max_parents=3)
        for mask in enumerate_parent_sets(0, cons, 6):
            assert mask & 0b001000

    def test_per_node_limits(self):
        nodes = ("a", "b", "c", "d")
        cons = ConstraintSet(nodes, max_parents=[0, 1, 2, 3])
        assert len(enumerate_parent_sets(0, cons, 4)) == 1
        assert len(enumerate_parent_sets(1, cons, 4)) == 4
        assert len(enumerate_parent_sets(2, cons, 4)) == 7
        assert len(enumerate_parent_sets(3, cons, 4)) == 8

    def test_monotone_in_max_parents(self):
        nodes = tuple(f"x{i}" for i in range(6))
        counts = []
        for limit in range(6):
            cons = ConstraintSet(nodes, max_parents=limit)
            counts.append(len(enumerate_parent_sets(0, cons, 6)))
        assert counts == sorted(counts)
        assert counts[-1] == 2**5  # saturation at n-1 parents


class TestBuildCache:
    def test_scores_finite_and_decomposable(self):
        ds = standardize(gaussian_chain_dataset(120, 0))
        cache = build_cache(ds, ConstraintSet(ds.names, max_parents=2))
        assert cache.n_entries == 3 * 4  # C(2,0)+C(2,1)+C(2,2) per node
        dag = Dag(ds.names, np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]]))
        total = cache.dag_score(dag)
        parts = [cache.score(i, m) for i, m in enumerate(dag.parent_masks())]
        assert total == sum(parts)

    def test_mle_cache_has_four_scores(self):
        ds = mixed_dataset(80, 1)
        cache = build_cache(ds, method="mle")
        assert cache.score_types == ("loglik", "aic", "bic", "mdl")
        for i in range(3):
            vec_ll = cache.score_vector(i, "loglik")
            vec_aic = cache.score_vector(i, "aic")
            assert np.all(vec_ll >= vec_aic)

    def test_limit_zero_single_entry_per_node(self):
        ds = mixed_dataset(60, 2)
        cache = build_cache(ds, ConstraintSet(ds.names, max_parents=0))
        assert cache.n_entries == 3
        assert all(cache.masks[i].tolist() == [0] for i in range(3))

    def test_deterministic_rebuild(self):
        ds = mixed_dataset(90, 3)
        a = cache_to_text(build_cache(ds, ConstraintSet(ds.names, max_parents=2)))
        b = cache_to_text(build_cache(ds, ConstraintSet(ds.names, max_parents=2)))
        assert a == b

    def test_parallel_build_matches_serial(self):
        ds = mixed_dataset(70, 4)
        cons = ConstraintSet(ds.names, max_parents=2)
        serial = cache_to_text(build_cache(ds, cons, jobs=1))
        parallel = cache_to_text(build_cache(ds, cons, jobs=2))
        assert serial == parallel

    def test_unenumerated_lookup_fails_loudly(self):
        ds = mixed_dataset(60, 5)
        nodes = ds.names
        banned = parse_formula("~g|b", nodes)
        cache = build_cache(ds, ConstraintSet(nodes, banned=banned, max_parents=2))
        banned_mask = 1 << nodes.index("b")
        with pytest.raises(UnenumeratedParentSet):
            cache.score(nodes.index("g"), banned_mask)

    def test_failed_fit_recorded_not_fatal(self):
        # magnitudes around 1e160 overflow the profiled variance: the node is
        # unscoreable, recorded as -inf, and the build completes anyway
        from abnkit.data import Dataset

        cols = np.column_stack([np.tile([0.0, 1e160], 20), np.tile([1e160, 0.0], 20)])
        ds = Dataset(names=("a", "b"), columns=cols,
                     distributions=("gaussian", "gaussian"))
        cache = build_cache(ds, method="mle")
        assert len(cache.diagnostics) > 0
        assert cache.score(0, 0, "loglik") == -np.inf


class TestSerialization:
    def test_round_trip_bit_exact(self):
        ds = mixed_dataset(100, 6)
        cache = build_cache(ds, ConstraintSet(ds.names, max_parents=2))
        text = cache_to_text(cache)
        back = cache_from_text(text)
        assert back.nodes == cache.nodes
        assert back.fingerprint == cache.fingerprint
        for i in range(cache.n_nodes):
            assert np.array_equal(back.masks[i], cache.masks[i])
            assert np.array_equal(back.scores[i], cache.scores[i])
        assert cache_to_text(back) == text

    def test_fingerprint_guard(self):
        ds = mixed_dataset(100, 7)
        other = mixed_dataset(100, 8)
        cache = build_cache(ds, ConstraintSet(ds.names, max_parents=1))
        cache.check_dataset(ds)
        with pytest.raises(CacheMismatch):
            cache.check_dataset(other)

    def test_rejects_garbage(self):
        with pytest.raises(CacheMismatch):
            cache_from_text("not a cache\n")

    def test_diagnostics_survive_round_trip(self):
        from abnkit.data import Dataset

        cols = np.column_stack([np.zeros(30), np.arange(30, dtype=float)])
        ds = Dataset(names=("p", "g"), columns=cols,
                     distributions=("poisson", "gaussian"))
        cache = build_cache(ds, method="mle")
        back = cache_from_text(cache_to_text(cache))
        assert back.diagnostics == cache.diagnostics
