"""Exemplar-SVM feature transform.

Each sample gets its own linear SVM (the sample as the only positive, a fixed
pool of negatives). The l2-normalized weight vector replaces the sample.
"""
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from typeret import kernels
from typeret.embedding import GlobalDescriptor
from typeret.errors import DegenerateInputError, DimensionMismatchError


@dataclass(frozen=True)
class EsvmConfig:
    c_pos: float = 1000.0
    c_neg: float = 1.0
    max_iter: int = 100000
    tol: float = 1e-6

    def __post_init__(self):
        if self.c_pos <= 0 or self.c_neg <= 0:
            raise ValueError("ESVM costs must be positive")


class NegativePool:
    def __init__(self, matrix, split="train", norm_tol=1e-4):
        M = np.asarray(matrix, dtype=np.float64)
        if M.ndim != 2 or len(M) == 0:
            raise DegenerateInputError("negative pool needs at least one row")
        norms = np.linalg.norm(M, axis=1)
        if np.abs(norms - 1).max() > norm_tol:
            raise ValueError("negative pool rows must be unit-norm")
        self.matrix = M
        self.split = split

    @classmethod
    def from_descriptors(cls, descs, split="train"):
        return cls(np.stack([np.asarray(g.vector, dtype=np.float64) for g in descs]), split)

    def __len__(self):
        return len(self.matrix)

    @property
    def dim(self):
        return self.matrix.shape[1]

    @cached_property
    def gram(self):
        return self.matrix @ self.matrix.T


@dataclass
class EsvmResult:
    weights: np.ndarray  # unit norm
    bias: float
    raw_norm: float
    objective: float
    iterations: int
    degenerate: bool = False


def primal_objective(w, b, pos, negs, cfg):
    """``1/2 |w|^2 + c_pos hinge(pos, +1) + c_neg sum hinge(neg, -1)``."""
    w = np.asarray(w, dtype=np.float64)
    hp = max(0.0, 1.0 - (pos @ w + b))
    hn = np.maximum(0.0, 1.0 + negs @ w + b).sum()
    return 0.5 * w @ w + cfg.c_pos * hp + cfg.c_neg * hn


def train_esvm(pos, negs, cfg=EsvmConfig()):
    x = np.asarray(getattr(pos, "vector", pos), dtype=np.float64)
    if x.shape != (negs.dim,):
        raise DimensionMismatchError(f"sample dim {x.shape[-1]} vs negatives dim {negs.dim}")
    n = len(negs)
    K = np.empty((n + 1, n + 1))
    K[1:, 1:] = negs.gram
    cross = negs.matrix @ x
    K[0, 0] = x @ x
    K[0, 1:] = cross
    K[1:, 0] = cross
    y = np.r_[1.0, -np.ones(n)]
    C = np.r_[cfg.c_pos, np.full(n, cfg.c_neg)]
    alpha, bias, iters = kernels.smo_solve(K, y, C, cfg.tol, cfg.max_iter)
    w = alpha[0] * x - alpha[1:] @ negs.matrix
    degenerate = bool(np.any(np.abs(negs.matrix - x).max(axis=1) < 1e-12))
    raw = float(np.linalg.norm(w))
    obj = primal_objective(w, bias, x, negs.matrix, cfg)
    if raw == 0:
        degenerate = True
        w = x / max(np.linalg.norm(x), 1e-300)
    else:
        w = w / raw
    if degenerate:
        warnings.warn("positive sample coincides with a negative; ESVM is best effort", RuntimeWarning)
    return EsvmResult(w, float(bias), raw, float(obj), int(iters), degenerate)


def esvm_transform_all(samples, negs, cfg=EsvmConfig(), threads=1):
    """Replace every sample by its ESVM weight vector, preserving order."""
    negs.gram  # compute once before fanning out

    def one(g):
        return GlobalDescriptor(g.image_id, train_esvm(g, negs, cfg).weights)

    samples = list(samples)
    if threads <= 1:
        return [one(g) for g in samples]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(one, samples))
