import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from sklearn.metrics import adjusted_rand_score
from sklearn.metrics import silhouette_score as sk_silhouette

from dgflow import explore, geom

from _helpers import random_coords, signed_rank_enumeration, two_families


# features ---------------------------------------------------------------------

def test_coulomb_features_layout():
    gen = np.random.default_rng(0)
    c = geom.Conformer([6, 1, 8], random_coords(gen, 3))
    row = explore.coulomb_features([c])[0]
    C = geom.coulomb_matrix(c)
    assert row.shape == (6,)
    np.testing.assert_array_equal(row, C[np.triu_indices(3)])


def test_sorted_features_are_permutation_invariant():
    gen = np.random.default_rng(1)
    c = geom.Conformer([6, 1, 8, 7], random_coords(gen, 4))
    perm = [2, 0, 3, 1]
    p = geom.Conformer(c.Z[perm], c.R[perm])
    a, b = explore.coulomb_features([c, p], sort=True)
    np.testing.assert_allclose(a, b, rtol=1e-14)


def test_features_reject_mixed_sizes():
    gen = np.random.default_rng(2)
    with pytest.raises(ValueError):
        explore.coulomb_features([geom.Conformer([1, 1, 1], random_coords(gen, 3)),
                                  geom.Conformer([1, 1], random_coords(gen, 2))])


# PCA --------------------------------------------------------------------------

def test_pca_planar_data():
    gen = np.random.default_rng(3)
    basis = np.linalg.qr(gen.normal(size=(5, 2)))[0].T
    X = gen.normal(size=(50, 2)) @ basis + gen.normal(size=5)
    res = explore.pca(X, 2)
    assert res.explained_variance_ratio.sum() == pytest.approx(1.0, abs=1e-10)


def test_pca_isotropic_ratios_similar():
    X = np.random.default_rng(4).normal(size=(20_000, 3))
    r = explore.pca(X, 3).explained_variance_ratio
    np.testing.assert_allclose(r, 1 / 3, atol=0.02)


def test_pca_properties():
    gen = np.random.default_rng(5)
    X = gen.normal(size=(30, 6)) * [5, 3, 2, 1, 0.5, 0.1]
    res = explore.pca(X, 3)
    np.testing.assert_allclose(res.components @ res.components.T, np.eye(3), atol=1e-12)
    assert np.all(np.diff(res.explained_variance_ratio) <= 0)
    idx = np.argmax(np.abs(res.components), axis=1)
    assert np.all(res.components[np.arange(3), idx] > 0)
    # inner products inside the component subspace are preserved
    Xc = X - X.mean(0)
    proj = Xc @ res.components.T @ res.components
    np.testing.assert_allclose(res.projected @ res.projected.T, proj @ proj.T, atol=1e-9)


@settings(max_examples=20)
@given(st.integers(0, 1000), st.floats(-100, 100))
def test_pca_translation_invariant(seed, shift):
    X = np.random.default_rng(seed).normal(size=(12, 4))
    a = explore.pca(X, 2).projected
    b = explore.pca(X + shift, 2).projected
    np.testing.assert_allclose(np.abs(a), np.abs(b), atol=1e-8)


def test_pca_component_limit():
    X = np.random.default_rng(6).normal(size=(3, 5))
    with pytest.raises(ValueError):
        explore.pca(X, 3)
    with pytest.raises(ValueError):
        explore.pca(X[:1], 1)


# k-means ----------------------------------------------------------------------

def test_kmeans_single_cluster_is_mean():
    X = np.random.default_rng(7).normal(size=(40, 3))
    res = explore.kmeans(X, 1)
    np.testing.assert_allclose(res.centroids[0], X.mean(0), atol=1e-12)


def test_kmeans_blobs():
    gen = np.random.default_rng(8)
    centres = np.array([[0, 0], [10, 0], [0, 10]])
    truth = np.repeat(np.arange(3), 50)
    X = centres[truth] + gen.normal(size=(150, 2))
    res = explore.kmeans(X, 3, seed=1)
    assert adjusted_rand_score(truth, res.labels) > 0.95


def test_kmeans_duplicates_share_label():
    X = np.array([[0.0, 0.0]] * 5 + [[3.0, 3.0]] * 5)
    res = explore.kmeans(X, 2)
    assert len(set(res.labels[:5])) == 1 and len(set(res.labels[5:])) == 1
    assert res.inertia == 0.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 5))
def test_kmeans_inertia_monotone(seed, k):
    X = np.random.default_rng(seed).normal(size=(30, 2))
    res = explore.kmeans(X, k, seed=seed, restarts=3)
    assert np.all(np.diff(res.history) <= 1e-12)


def test_kmeans_picks_best_restart():
    X = np.random.default_rng(9).normal(size=(60, 2))
    best = explore.kmeans(X, 4, seed=3, restarts=6)
    singles = []
    from dgflow import numerics as nx
    for gen in nx.spawn(nx.rng(3), 6):
        singles.append(explore._lloyd(X, explore._kmeanspp(X, 4, gen), 300)[2])
    assert best.inertia == min(singles)
    assert best.restart == int(np.argmin(singles))


def test_kmeans_errors():
    with pytest.raises(ValueError):
        explore.kmeans(np.zeros((3, 2)), 0)
    with pytest.raises(ValueError):
        explore.kmeans(np.zeros((3, 2)), 4)


def test_silhouette_matches_sklearn():
    gen = np.random.default_rng(10)
    X = gen.normal(size=(40, 3))
    labels = gen.integers(0, 3, size=40)
    assert explore.silhouette_score(X, labels) == pytest.approx(sk_silhouette(X, labels), abs=1e-12)


# cluster report ---------------------------------------------------------------

def test_identical_structures_single_cluster():
    c = geom.Conformer([6, 1, 1, 8], random_coords(np.random.default_rng(11), 4))
    rep = explore.cluster_ts_samples([c] * 6, c, k=2)
    assert len(set(rep.labels)) == 1
    np.testing.assert_allclose(rep.rmsd, 0.0, atol=1e-7)
    np.testing.assert_array_equal(rep.dmae, 0.0)


@pytest.mark.parametrize("seed", range(3))
def test_two_families_separate(seed):
    confs, truth = two_families(seed)
    rep = explore.cluster_ts_samples(confs, confs[0], k=2, seed=seed)
    assert adjusted_rand_score(truth, rep.labels) > 0.95


def test_report_matches_brute_force(tmp_path):
    confs, _ = two_families(5)
    gen = np.random.default_rng(5)
    energies = gen.normal(size=len(confs))
    ref = confs[3]
    rep = explore.cluster_ts_samples(confs, ref, k=2, energies=energies, reference_energy=0.25)
    for entry in rep.clusters():
        m = entry["members"]
        r = [geom.kabsch_align(ref.R, confs[i].R)[2] for i in m]
        d = [np.mean(np.abs(geom.pairwise_distances(confs[i]) - geom.pairwise_distances(ref))
                     [~np.eye(ref.n, dtype=bool)]) for i in m]
        e = [abs(energies[i] - 0.25) for i in m]
        assert entry["rmsd"]["mean"] == pytest.approx(np.mean(r), rel=1e-12)
        assert entry["dmae"]["median"] == pytest.approx(np.median(d), rel=1e-12)
        assert entry["abs_delta_e"]["max"] == pytest.approx(max(e), rel=1e-12)
        assert entry["lowest_energy_member"] == m[int(np.argmin(energies[m]))]
    rep.write_csv(tmp_path / "r.csv")
    rep.write_json(tmp_path / "r.json")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "index,cluster,pc1,pc2,rmsd,dmae,delta_e" and len(lines) == len(confs) + 1
    assert json.loads((tmp_path / "r.json").read_text())["k"] == 2


# Wilcoxon ---------------------------------------------------------------------

def test_wilcoxon_antisymmetric():
    d = np.array([1.0, -1.0, 2.0, -2.0, 3.0, -3.0, 4.0, -4.0])
    res = explore.wilcoxon_signed_rank(d)
    assert res.rank_biserial == 0.0
    assert res.p_value == pytest.approx(1.0)


def test_wilcoxon_all_positive_ten():
    res = explore.wilcoxon_signed_rank(np.arange(1, 11) * 0.3)
    assert res.rank_biserial == 1.0
    assert res.p_value == pytest.approx(2 / 2 ** 10, rel=1e-14)
    assert res.percent_positive == 100.0 and res.method == "exact"


@pytest.mark.parametrize("n", range(5, 13))
def test_wilcoxon_exact_matches_enumeration(n):
    gen = np.random.default_rng(n)
    for _ in range(3):
        d = gen.normal(loc=0.3, size=n)
        assert explore.wilcoxon_signed_rank(d).p_value == pytest.approx(signed_rank_enumeration(d), rel=1e-12)


def test_wilcoxon_exact_with_ties_and_zeros():
    d = np.array([1, 1, -1, 2, 2, 3, 0, 0, -2, 4.0])
    res = explore.wilcoxon_signed_rank(d)
    assert res.n == 8
    assert res.p_value == pytest.approx(signed_rank_enumeration(d), rel=1e-12)
    assert res.percent_positive == 60.0


def test_wilcoxon_against_scipy():
    gen = np.random.default_rng(12)
    d = gen.normal(loc=0.4, size=20)
    assert explore.wilcoxon_signed_rank(d).p_value == pytest.approx(
        stats.wilcoxon(d, method="exact").pvalue, rel=1e-10)
    d = gen.normal(loc=0.2, size=60)
    ours = explore.wilcoxon_signed_rank(d)
    assert ours.method == "normal"
    ref = stats.wilcoxon(d, method="approx", correction=True).pvalue
    assert ours.p_value == pytest.approx(ref, rel=1e-10)


def test_wilcoxon_errors():
    with pytest.raises(ValueError):
        explore.wilcoxon_signed_rank(np.zeros(10))
    with pytest.raises(ValueError):
        explore.wilcoxon_signed_rank([1.0, 2.0, 0.0, -1.0])
