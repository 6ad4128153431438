import numpy as np
import pytest

from ecoforecast import kmeans as km
from kmeans_oracles import blobs, brute_assign, sad_minimizer, same_partition


def test_k_equals_n_zero_sse(rng):
    X = rng.normal(size=(12, 3))
    assert km.fit(X, 12, seed=0).sse == 0.0


def test_k1_is_mean(rng):
    X = rng.normal(size=(40, 2))
    m = km.fit(X, 1, seed=0)
    np.testing.assert_allclose(m.centroids[0], X.mean(axis=0), atol=1e-14)
    assert m.sse == pytest.approx(len(X) * X.var(axis=0).sum(), rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_sse_matches_brute_force(seed):
    X = np.random.default_rng(seed).normal(size=(100, 3))
    m = km.fit(X, 4, seed=seed)
    lab, d = brute_assign(X, m.centroids)
    assert abs(m.sse - d.sum()) <= 1e-9 * max(1.0, d.sum())
    np.testing.assert_array_equal(m.labels(X), lab)
    assert all(np.diff(m.history) <= 1e-12)


def test_elbow_non_increasing():
    X = np.random.default_rng(1).normal(size=(300, 3))
    curve = km.elbow_curve(X, range(1, 16), seed=2, restarts=2)
    sse = [s for _, s in curve] if isinstance(curve[0], tuple) else list(curve)
    assert all(b <= a for a, b in zip(sse, sse[1:]))


def test_blob_recovery():
    ok = 0
    for s in range(20):
        X, truth = blobs(s)
        ok += same_partition(km.best_fit(X, 3, seed=s).labels(X), truth)
    assert ok >= 19


def test_lower_median():
    assert km.lower_median([1, 2, 9]) == 2
    assert km.lower_median([1, 3]) == 1
    assert km.lower_median([3, 1]) == 1


def test_representatives_minimize_sad(rng):
    X = rng.normal(size=(200, 2))
    ghg = rng.exponential(2.0, 200).round(2)
    m = km.fit(X, 6, seed=1)
    reps = km.assign_cluster_ghg(m, X, ghg)
    lab = m.labels(X)
    for j in range(6):
        assert reps[j] == sad_minimizer(ghg[lab == j].tolist())


def test_predict_alphabet_and_centroid(rng):
    X = rng.normal(size=(150, 3))
    m = km.fit(X, 5, seed=3)
    km.assign_cluster_ghg(m, X, rng.uniform(0, 5, 150))
    p = km.predict(m, rng.normal(size=(500, 3)))
    assert len(set(p.tolist())) <= 5
    for j in range(5):
        assert km.predict(m, m.centroids[j:j + 1])[0] == m.cluster_ghg[j]
    assert km.predict(m, np.zeros((0, 3))).shape == (0,)


def test_empty_cluster_reseeded():
    X = np.array([[0.0], [0.1], [10.0], [10.1]])
    C0 = np.array([[0.05], [10.05], [100.0]])
    m = km.fit(X, 3, init=C0)
    assert np.isfinite(m.centroids).all()
    assert len(set(m.labels(X).tolist())) == 3


def test_text_roundtrip(rng):
    X = rng.normal(size=(50, 2))
    m = km.fit(X, 3, seed=0)
    km.assign_cluster_ghg(m, X, rng.uniform(0, 5, 50))
    m.feature_names = ("speed", "density")
    back = km.from_text(km.to_text(m))
    np.testing.assert_array_equal(back.centroids, m.centroids)
    np.testing.assert_array_equal(back.cluster_ghg, m.cluster_ghg)


def test_rejects_bad_k(rng):
    with pytest.raises(ValueError):
        km.fit(rng.normal(size=(3, 2)), 4)
