import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from typeret import embedding as emb
from typeret import formats
from typeret.errors import DegenerateInputError, EmptyDescriptorSetError, TooFewSamplesError
from typeret.features import DescriptorSet


def random_sets(n_images, per_image, seed=0, clusters=6):
    rng = np.random.default_rng(seed)
    protos = rng.random((clusters, 128)) ** 4
    out = []
    for i in range(n_images):
        idx = rng.integers(clusters, size=per_image)
        d = protos[idx] + 0.05 * rng.random((per_image, 128))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        out.append(DescriptorSet(f"im{i:03d}", np.zeros((per_image, 4)), d))
    return out


SMALL = emb.EncoderConfig(n_clusters=8, n_codebooks=5, target_dim=6400, seed=4)


@pytest.fixture(scope="module")
def small_model():
    return emb.fit_encoder(random_sets(12, 60, seed=1), SMALL)


# -- Dirichlet ----------------------------------------------------------------

def test_dirichlet_zero_vector():
    out = emb.dirichlet_normalize(np.zeros(128), 1e-3)
    assert np.allclose(out, 1 / np.sqrt(128))


def test_dirichlet_one_hot_limit():
    d = np.zeros(128)
    d[0] = 5.0
    out = emb.dirichlet_normalize(d, 1e-12)
    assert abs(out[0] - 1) < 1e-6 and np.abs(out[1:]).max() < 1e-5


def test_dirichlet_hand_value():
    d = np.zeros(128)
    d[:2] = (3, 1)
    out = emb.dirichlet_normalize(d, 0.01)
    denom = 4 + 128 * 0.01  # 5.28
    assert out[0] == pytest.approx(np.sqrt(3.01 / denom), abs=1e-15)
    assert out[1] == pytest.approx(np.sqrt(1.01 / denom), abs=1e-15)
    assert out[5] == pytest.approx(np.sqrt(0.01 / denom), abs=1e-15)
    assert np.linalg.norm(out) == pytest.approx(1.0, abs=1e-12)


# -- whitening ---------------------------------------------------------------

def test_whitening_isotropic_gaussian():
    X = np.random.default_rng(0).normal(size=(10000, 4)) * [1, 2, 3, 0.5] + [1, -2, 0, 4]
    w = emb.fit_whitening(X, 4)
    cov = np.cov(w.apply(X), rowvar=False)
    assert np.abs(cov - np.eye(4)).max() < 0.05


def test_whitening_drops_constant_column():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(200, 5))
    X[:, 2] = 7.0
    w = emb.fit_whitening(X, 5)
    assert w.output_dim == 4
    assert np.abs(w.basis[:, 2]).max() < 1e-6


def test_whitening_mean_maps_to_zero():
    X = np.random.default_rng(2).normal(size=(50, 6))
    w = emb.fit_whitening(X, 6)
    assert np.allclose(w.apply(X.mean(axis=0)), 0)


def test_whitening_rank_cap_and_gram_path():
    X = np.random.default_rng(3).normal(size=(10, 40))
    w = emb.fit_whitening(X, 100)
    assert w.output_dim == 9
    cov = np.cov(w.apply(X), rowvar=False)
    assert np.abs(cov - np.eye(9)).max() < 1e-6


def test_whitening_needs_two_samples():
    with pytest.raises(DegenerateInputError):
        emb.fit_whitening(np.ones((1, 3)), 3)


# -- k-means -----------------------------------------------------------------

def test_kmeans_perfect_fit():
    X = np.random.default_rng(0).normal(size=(6, 3))
    cb = emb.kmeans(X, 6, seed=2)
    assert emb.inertia(X, cb) == 0
    assert sorted(map(tuple, cb.centroids)) == sorted(map(tuple, X))


def test_kmeans_two_blobs():
    rng = np.random.default_rng(5)
    a = rng.normal(0, 0.3, (100, 2))
    b = rng.normal(10, 0.3, (100, 2))
    cb = emb.kmeans(np.vstack([a, b]), 2, seed=0)
    c = sorted(map(tuple, cb.centroids))
    assert np.linalg.norm(np.subtract(c[0], a.mean(0))) < 0.5
    assert np.linalg.norm(np.subtract(c[1], b.mean(0))) < 0.5


def test_kmeans_deterministic():
    X = np.random.default_rng(0).normal(size=(300, 4))
    assert np.array_equal(emb.kmeans(X, 7, seed=9).centroids, emb.kmeans(X, 7, seed=9).centroids)


def test_kmeans_too_few():
    with pytest.raises(TooFewSamplesError):
        emb.kmeans(np.zeros((3, 2)), 4)
    with pytest.raises(TooFewSamplesError):
        emb.kmeans(np.zeros((10, 2)), 3)


def test_kmeans_centroids_distinct():
    X = np.random.default_rng(1).normal(size=(500, 3))
    cb = emb.kmeans(X, 20, seed=1)
    assert len(np.unique(cb.centroids, axis=0)) == 20


# -- VLAD --------------------------------------------------------------------

def test_vlad_examples():
    C = np.array([[0.0, 0.0], [5.0, 5.0]])
    assert np.array_equal(emb.vlad_embed_one([5.0, 5.0], C), np.zeros(4))
    assert np.array_equal(emb.vlad_embed_one([1.0, 0.0], C), [1.0, 0.0, 0.0, 0.0])
    tie = emb.vlad_embed_one([2.5, 2.5], C)
    assert np.array_equal(tie, [2.5, 2.5, 0, 0])


def test_vlad_single_block():
    rng = np.random.default_rng(0)
    C = rng.normal(size=(7, 5))
    for _ in range(50):
        v = emb.vlad_embed_one(rng.normal(size=5), C).reshape(7, 5)
        assert (np.abs(v).sum(axis=1) > 0).sum() <= 1


# -- GMP ---------------------------------------------------------------------

def test_gmp_single_embedding_closed_form():
    phi = np.random.default_rng(0).normal(size=(1, 9))
    xi = emb.gmp_pool(phi, 1000.0)
    assert np.allclose(xi, phi[0] / (phi[0] @ phi[0] + 1000), atol=1e-10, rtol=0)


def test_gmp_identical_rows():
    phi = np.random.default_rng(1).normal(size=6)
    n, lam = 7, 3.0
    xi = emb.gmp_pool(np.tile(phi, (n, 1)), lam)
    assert np.allclose(xi, n * phi / (n * phi @ phi + lam), atol=1e-12)


def test_gmp_orthogonal_rows():
    p1 = np.array([1.0, 2.0, 0.0, 0.0])
    p2 = np.array([0.0, 0.0, -3.0, 0.5])
    lam = 2.0
    xi = emb.gmp_pool(np.stack([p1, p2]), lam)
    assert np.allclose(xi, p1 / (p1 @ p1 + lam) + p2 / (p2 @ p2 + lam), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 200), st.integers(1, 64), st.floats(1e-2, 1e4), st.integers(0, 2 ** 32 - 1))
def test_gmp_normal_equations_property(n, dim, lam, seed):
    Phi = np.random.default_rng(seed).normal(size=(n, dim))
    xi = emb.gmp_pool(Phi, lam)
    rhs = Phi.sum(axis=0)
    resid = np.linalg.norm((Phi.T @ Phi + lam * np.eye(dim)) @ xi - rhs)
    assert resid <= 1e-8 * np.linalg.norm(rhs)
    dense = np.linalg.solve(Phi.T @ Phi + lam * np.eye(dim), rhs)
    assert np.allclose(xi, dense, rtol=1e-8, atol=1e-14)


def test_gmp_sum_pooling_limit():
    Phi = np.random.default_rng(2).normal(size=(30, 12))
    lam = 1e9
    got = lam * emb.gmp_pool(Phi, lam)
    want = Phi.sum(axis=0)
    assert np.linalg.norm(got - want) / np.linalg.norm(want) < 1e-3


# -- power + l2 --------------------------------------------------------------

def test_power_l2_examples():
    assert np.allclose(emb.power_l2([4.0, -4.0]), [1 / np.sqrt(2), -1 / np.sqrt(2)])
    e = np.zeros(5)
    e[3] = 1
    assert np.array_equal(emb.power_l2(e), e)
    assert np.array_equal(emb.power_l2(np.zeros(3)), np.zeros(3))


# -- encoder -----------------------------------------------------------------

def test_fit_encoder_dimensions_full_size():
    sets = random_sets(50, 40, seed=7, clusters=150)
    model = emb.fit_encoder(sets, emb.EncoderConfig(seed=1))
    assert model.joint_pca.input_dim == 5 * 100 * 128 == 64000
    assert model.output_dim == 49
    assert [cb.seed for cb in model.codebooks] == [1, 2, 3, 4, 5]


def test_fit_encoder_bit_identical():
    sets = random_sets(10, 50, seed=2)
    a = formats.dump_encoder(emb.fit_encoder(sets, SMALL))
    b = formats.dump_encoder(emb.fit_encoder(sets, SMALL))
    assert a == b


def test_fit_encoder_needs_two_images():
    with pytest.raises(TooFewSamplesError):
        emb.fit_encoder(random_sets(1, 50), SMALL)


def test_joint_whitened_training_covariance(small_model):
    sets = random_sets(12, 60, seed=1)
    cfg = small_model.config
    enc = np.stack([
        emb._concat_encoding(emb._local_features(ds.descriptors, cfg.dirichlet_eps, small_model.local_whitening),
                             small_model.codebooks, cfg)
        for ds in sets
    ])
    cov = np.cov(small_model.joint_pca.apply(enc), rowvar=False)
    assert np.abs(cov - np.eye(cov.shape[0])).max() < 0.05


def test_encode_unit_norm_and_permutation_invariance(small_model):
    ds = random_sets(1, 80, seed=9)[0]
    g = emb.encode_image(ds, small_model)
    assert abs(np.linalg.norm(g.vector) - 1) < 1e-6
    perm = np.random.default_rng(0).permutation(len(ds))
    shuffled = DescriptorSet(ds.image_id, ds.keypoints[perm], ds.descriptors[perm])
    assert np.array_equal(emb.encode_image(shuffled, small_model).vector, g.vector)


def test_encode_duplicated_descriptors(small_model):
    # duplicating every row doubles both sides of the ridge normal equations
    # except the lambda term, so it matches the original set at lambda / 2
    ds = random_sets(1, 80, seed=10)[0]
    dup = DescriptorSet(ds.image_id, np.vstack([ds.keypoints] * 2), np.vstack([ds.descriptors] * 2))
    half = emb.EncoderModel(
        emb.EncoderConfig(**{**SMALL.__dict__, "gmp": emb.GmpConfig(SMALL.gmp.lam / 2)}),
        small_model.local_whitening, small_model.codebooks, small_model.joint_pca)
    a = emb.encode_image(dup, small_model).vector
    b = emb.encode_image(ds, half).vector
    assert np.abs(a - b).max() < 1e-6


def test_encode_empty_raises(small_model):
    with pytest.raises(EmptyDescriptorSetError):
        emb.encode_image(DescriptorSet("e", np.zeros((0, 4)), np.zeros((0, 128))), small_model)
