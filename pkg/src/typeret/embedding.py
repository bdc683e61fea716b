"""Global image descriptors from local SIFT sets.

Chain per image: Dirichlet normalization, local PCA whitening, hard-assignment
VLAD residuals per codebook, generalized max pooling, signed power + l2
normalization, concatenation over codebooks, joint PCA whitening, final l2.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from typeret.errors import (
    DegenerateInputError,
    DimensionMismatchError,
    EmptyDescriptorSetError,
    NumericalError,
    TooFewSamplesError,
)


@dataclass(frozen=True)
class GmpConfig:
    lam: float = 1000.0
    residual_tol: float = 1e-8

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("GMP lambda must be positive")


@dataclass(frozen=True)
class EncoderConfig:
    n_clusters: int = 100
    n_codebooks: int = 5
    gmp: GmpConfig = field(default_factory=GmpConfig)
    power: float = 0.5
    target_dim: int = 6400
    local_dim: int = 128
    dirichlet_eps: float = 1e-3
    kmeans_iters: int = 100
    max_training_descriptors: int = 500000
    seed: int = 0


@dataclass
class WhiteningTransform:
    mean: np.ndarray  # (d,)
    basis: np.ndarray  # (m, d), rows scaled by 1/sqrt(eigenvalue + eps)
    eps: float

    @property
    def input_dim(self):
        return self.basis.shape[1]

    @property
    def output_dim(self):
        return self.basis.shape[0]

    def apply(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.input_dim:
            raise DimensionMismatchError(f"expected dim {self.input_dim}, got {X.shape[-1]}")
        return (X - self.mean.astype(np.float64)) @ self.basis.astype(np.float64).T


@dataclass
class Codebook:
    centroids: np.ndarray  # (k, d)
    seed: int

    @property
    def k(self):
        return self.centroids.shape[0]


@dataclass
class GlobalDescriptor:
    image_id: str
    vector: np.ndarray


@dataclass
class EncoderModel:
    config: EncoderConfig
    local_whitening: WhiteningTransform
    codebooks: list
    joint_pca: WhiteningTransform

    @property
    def output_dim(self):
        return self.joint_pca.output_dim


def dirichlet_normalize(D, eps=1e-3):
    """``sqrt((d_i + eps) / (sum_j d_j + dim * eps))`` row-wise; rows end up unit-norm."""
    D = np.asarray(D, dtype=np.float64)
    if eps <= 0:
        raise ValueError("eps must be positive")
    if (D < 0).any():
        raise ValueError("Dirichlet normalization needs non-negative components")
    dim = D.shape[-1]
    return np.sqrt((D + eps) / (D.sum(axis=-1, keepdims=True) + dim * eps))


def fit_whitening(X, m, eps=None):
    """PCA whitening keeping the top ``min(m, rank, n - 1)`` directions.

    ``eps`` defaults to ``1e-8`` times the largest eigenvalue. Directions with
    numerically zero variance are dropped.
    """
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if n < 2:
        raise DegenerateInputError("need at least two samples to fit a whitening")
    mean = X.mean(axis=0)
    Xc = X - mean
    if n <= d:
        # eigenvectors of the covariance through the n x n Gram matrix
        evals, U = np.linalg.eigh(Xc @ Xc.T)
        evals, U = evals[::-1], U[:, ::-1]
        keep = evals > evals[0] * 1e-10 if evals[0] > 0 else np.zeros_like(evals, bool)
        evals, U = evals[keep], U[:, keep]
        V = (Xc.T @ U) / np.sqrt(evals)
        evals = evals / (n - 1)
    else:
        evals, V = np.linalg.eigh(Xc.T @ Xc / (n - 1))
        evals, V = evals[::-1], V[:, ::-1]
        keep = evals > evals[0] * 1e-10 if evals[0] > 0 else np.zeros_like(evals, bool)
        evals, V = evals[keep], V[:, keep]
    dims = min(m, len(evals), n - 1, d)
    evals, V = evals[:dims], V[:, :dims]
    # deterministic sign: largest-magnitude component positive
    if dims:
        idx = np.abs(V).argmax(axis=0)
        V = V * np.sign(V[idx, np.arange(dims)])
    if eps is None:
        eps = 1e-8 * (float(evals[0]) if dims else 1.0)
    basis = (V / np.sqrt(evals + eps)).T
    return WhiteningTransform(mean, basis, float(eps))


def _sq_dists(X, C):
    return cdist(X, C, "sqeuclidean")


def kmeans(X, k, seed=0, iters=100):
    """k-means++ seeding followed by Lloyd iterations until assignments settle.

    Empty clusters are re-seeded with the point farthest from its centroid.
    """
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if k < 2:
        raise ValueError("k must be >= 2")
    if n < k:
        raise TooFewSamplesError(f"{n} samples for {k} clusters")
    if len(np.unique(X, axis=0)) < k:
        raise TooFewSamplesError(f"fewer than {k} distinct samples")
    rng = np.random.default_rng(seed)
    centers = np.empty((k, X.shape[1]))
    first = int(rng.integers(n))
    centers[0] = X[first]
    closest = _sq_dists(X, centers[:1])[:, 0]
    for i in range(1, k):
        total = closest.sum()
        probs = closest / total
        pick = int(rng.choice(n, p=probs))
        centers[i] = X[pick]
        closest = np.minimum(closest, _sq_dists(X, centers[i:i + 1])[:, 0])
    labels = None
    for _ in range(iters):
        dist = _sq_dists(X, centers)
        new = dist.argmin(axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, labels, X)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        for j in np.nonzero(~nonempty)[0]:
            d_own = _sq_dists(X, centers)[np.arange(n), labels]
            far = int(d_own.argmax())
            centers[j] = X[far]
            labels[far] = j
    return Codebook(centers, seed)


def inertia(X, codebook):
    return float(_sq_dists(np.asarray(X, dtype=np.float64), codebook.centroids).min(axis=1).sum())


def assign(X, centroids):
    """Nearest centroid per row; exact squared distances, ties to the lowest index."""
    return _sq_dists(np.asarray(X, dtype=np.float64), centroids).argmin(axis=1)


def vlad_embed_one(d, centroids):
    centroids = np.asarray(centroids, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    if d.shape[-1] != centroids.shape[1]:
        raise DimensionMismatchError("descriptor and codebook dimensions differ")
    j = int(assign(d[None], centroids)[0])
    out = np.zeros(centroids.shape)
    out[j] = d - centroids[j]
    return out.ravel()


def gmp_pool(Phi, lam, residual_tol=1e-8):
    """Ridge solution of ``min sum_i (phi_i . xi - 1)^2 + lam |xi|^2``.

    Solved in whichever of the primal (D x D) or dual (n x n) forms is smaller;
    raises NumericalError if the normal-equation residual exceeds
    ``residual_tol * |Phi' 1|``.
    """
    Phi = np.asarray(Phi, dtype=np.float64)
    if Phi.ndim != 2 or len(Phi) == 0:
        raise ValueError("need at least one embedding")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    n, dim = Phi.shape
    if n <= dim:
        A = Phi @ Phi.T
        A[np.diag_indices(n)] += lam
        xi = Phi.T @ np.linalg.solve(A, np.ones(n))
    else:
        A = Phi.T @ Phi
        A[np.diag_indices(dim)] += lam
        xi = np.linalg.solve(A, Phi.sum(axis=0))
    rhs = Phi.sum(axis=0)
    resid = np.linalg.norm(Phi.T @ (Phi @ xi) + lam * xi - rhs)
    if resid > residual_tol * max(np.linalg.norm(rhs), 1e-300):
        raise NumericalError(f"GMP normal-equation residual {resid:.3e} too large")
    return xi


def power_l2(v, alpha=0.5):
    v = np.asarray(v, dtype=np.float64)
    out = np.sign(v) * np.abs(v) ** alpha
    norm = np.linalg.norm(out, axis=-1, keepdims=True)
    return np.divide(out, norm, out=np.zeros_like(out), where=norm > 0)


def vlad_gmp(X, centroids, lam, power=0.5, residual_tol=1e-8):
    """Pooled VLAD-GMP encoding of whitened descriptors ``X`` for one codebook.

    Assignments partition the descriptors, so each block's ridge problem only
    involves its own residuals.
    """
    k, dim = centroids.shape
    labels = assign(X, centroids)
    out = np.zeros((k, dim))
    for j in range(k):
        members = labels == j
        if members.any():
            out[j] = gmp_pool(X[members] - centroids[j], lam, residual_tol)
    return power_l2(out.ravel(), power)


def _canonical_order(D):
    # lexicographic row order; makes encodings independent of input order
    return D[np.lexsort(D.T[::-1])]


def _local_features(descriptors, eps, whitening):
    D = _canonical_order(np.asarray(descriptors, dtype=np.float64))
    return whitening.apply(dirichlet_normalize(D, eps))


def _concat_encoding(X, codebooks, cfg):
    return np.concatenate([
        vlad_gmp(X, cb.centroids.astype(np.float64), cfg.gmp.lam, cfg.power, cfg.gmp.residual_tol)
        for cb in codebooks
    ])


def fit_encoder(training, cfg=EncoderConfig()):
    """Fit local whitening, the codebooks and the joint PCA from training DescriptorSets."""
    training = [ds for ds in training if len(ds)]
    if len(training) < 2:
        raise TooFewSamplesError("need at least two non-empty training images")
    pooled = np.concatenate([np.asarray(ds.descriptors, dtype=np.float64) for ds in training])
    if len(pooled) < cfg.n_clusters:
        raise TooFewSamplesError(f"{len(pooled)} descriptors for {cfg.n_clusters} clusters")
    rng = np.random.default_rng(cfg.seed)
    if len(pooled) > cfg.max_training_descriptors:
        pick = np.sort(rng.choice(len(pooled), cfg.max_training_descriptors, replace=False))
        pooled = pooled[pick]
    normed = dirichlet_normalize(pooled, cfg.dirichlet_eps)
    local = _f32(fit_whitening(normed, cfg.local_dim))
    white = local.apply(normed)
    codebooks = []
    for r in range(cfg.n_codebooks):
        cb = kmeans(white, cfg.n_clusters, seed=(cfg.seed + r) % 2 ** 64, iters=cfg.kmeans_iters)
        codebooks.append(Codebook(cb.centroids.astype(np.float32), cb.seed))
    enc = np.stack([
        _concat_encoding(_local_features(ds.descriptors, cfg.dirichlet_eps, local), codebooks, cfg)
        for ds in training
    ])
    joint = _f32(fit_whitening(enc, cfg.target_dim))
    return EncoderModel(cfg, local, codebooks, joint)


def _f32(t):
    # models are stored in float32; keep the in-memory copy identical to the file
    # (C order too, so BLAS takes the same path as for a loaded model)
    return WhiteningTransform(np.ascontiguousarray(t.mean, np.float32),
                              np.ascontiguousarray(t.basis, np.float32), t.eps)


def encode_image(ds, model):
    if len(ds) == 0:
        raise EmptyDescriptorSetError(f"image {ds.image_id!r} has no descriptors")
    cfg = model.config
    X = _local_features(ds.descriptors, cfg.dirichlet_eps, model.local_whitening)
    v = model.joint_pca.apply(_concat_encoding(X, model.codebooks, cfg))
    norm = np.linalg.norm(v)
    if norm > 0:
        v = v / norm
    return GlobalDescriptor(ds.image_id, v)
