import itertools
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bounded_clustering.evaluation import ari, count_clusters, evaluate, hard_assign
from bounded_clustering.graph import Graph, SbmSpec, sbm_generate
from bounded_clustering.losses import Bounds


def pair_count_ari(x, y):
    """ARI from the four pair classes (same/different in each partition)."""
    ss = sd = ds = dd = 0
    for i, j in itertools.combinations(range(len(x)), 2):
        a, b = x[i] == x[j], y[i] == y[j]
        if a and b:
            ss += 1
        elif a:
            sd += 1
        elif b:
            ds += 1
        else:
            dd += 1
    den = (ss + sd) * (sd + dd) + (ss + ds) * (ds + dd)
    if den == 0:
        return 1.0
    return float(Fraction(2 * (ss * dd - sd * ds), den))


def test_hard_assign_examples():
    s = np.eye(3)[[2, 0, 1]]
    assert hard_assign(s).tolist() == [2, 0, 1]
    assert hard_assign(np.array([[0.5, 0.5]])).tolist() == [0]
    labels = hard_assign(np.full((3, 4), 0.25))
    assert labels.tolist() == [0, 0, 0] and count_clusters(labels) == 1


def test_count_clusters():
    assert count_clusters([0, 0, 1, 1]) == 2
    assert count_clusters([4, 4, 4]) == 1
    assert count_clusters([3, 1, 4]) == 3


def test_ari_examples():
    assert ari([0, 1, 1, 2, 2], [0, 1, 1, 2, 2]) == 1.0
    assert ari([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0
    assert ari([0, 0, 1, 1], [0, 1, 0, 1]) == -0.5
    assert ari([0, 0, 0], [0, 0, 0]) == 1.0


def test_ari_input_checks():
    with pytest.raises(ValueError):
        ari([0, 1], [0, 1, 2])
    with pytest.raises(ValueError):
        ari([0], [0])


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 12).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 4), min_size=n, max_size=n),
    st.lists(st.integers(0, 4), min_size=n, max_size=n))))
def test_ari_matches_pair_classification(pair):
    x, y = pair
    assert abs(ari(x, y) - pair_count_ari(x, y)) <= 1e-12
    assert ari(x, y) == ari(y, x)


def test_ari_against_sklearn():
    metrics = pytest.importorskip("sklearn.metrics")
    rng = np.random.default_rng(0)
    for _ in range(50):
        x, y = rng.integers(0, 4, 30), rng.integers(0, 6, 30)
        assert abs(ari(x, y) - metrics.adjusted_rand_score(x, y)) < 1e-12


def test_evaluate_one_hot_ground_truth():
    g = sbm_generate(SbmSpec([4, 4, 4], 0.9, 0.1, 0))
    s = np.eye(3)[g.labels]
    report = evaluate(g, s, Bounds(2, 5))
    assert report.ari == 1.0
    assert report.predicted_cluster_count == 3 and report.within_bounds
    assert not evaluate(g, s, Bounds(4, 5)).within_bounds


def test_evaluate_uniform_s():
    g = Graph(4, [(0, 1), (2, 3)])
    report = evaluate(g, np.full((4, 3), 1 / 3), Bounds(2, 3))
    assert report.predicted_cluster_count == 1
    assert not report.within_bounds
    assert report.hard_modularity == 0.0
    assert report.ari is None
    assert report.to_dict()["within_bounds"] is False
