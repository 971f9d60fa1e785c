"""Feature decomposition: basic feature -> M non-negative latent features.

Each of the M decomposition matrices projects the input through a bias-free
linear map followed by ReLU. The latent features are regularized toward
rule-updated running centers by a compactness loss; the centers live outside
the gradient graph and move toward batch means by a fixed rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .numerics import relu


def decompose(x: np.ndarray, decomp_weights: np.ndarray) -> np.ndarray:
    """Latent bank for one sample: latents[j] = relu(W[j].T @ x).

    decomp_weights has shape (M, P, D); the result has shape (M, D).
    """
    x = np.asarray(x, dtype=np.float64)
    W = np.asarray(decomp_weights, dtype=np.float64)
    if W.ndim != 3 or x.ndim != 1 or W.shape[1] != x.shape[0]:
        raise ContractViolation(
            f"decompose shape mismatch: weights {W.shape}, x {x.shape}"
        )
    return relu(np.einsum("mpd,p->md", W, x))


def decompose_batch(X: np.ndarray, decomp_weights: np.ndarray) -> np.ndarray:
    """Latent banks for a batch: (N, P) -> (N, M, D)."""
    X = np.asarray(X, dtype=np.float64)
    W = np.asarray(decomp_weights, dtype=np.float64)
    if X.ndim != 2 or W.ndim != 3 or W.shape[1] != X.shape[1]:
        raise ContractViolation(
            f"decompose_batch shape mismatch: weights {W.shape}, X {X.shape}"
        )
    M, P, D = W.shape
    pre = X @ W.transpose(1, 0, 2).reshape(P, M * D)
    return relu(pre.reshape(X.shape[0], M, D))


@dataclass
class LatentCenters:
    """Running centers of the M latent features, one D-vector each.

    Centers are updated by rule only (never by the optimizer): each update
    moves them toward the batch mean of the corresponding latent feature by
    `rate`. Zero-initialized so the first batch pulls them to data scale.
    """

    centers: np.ndarray  # (M, D)
    rate: float = 0.5

    @classmethod
    def zeros(cls, n_latents: int, latent_dim: int, rate: float = 0.5) -> "LatentCenters":
        return cls(np.zeros((n_latents, latent_dim)), rate)

    def update(self, latent_batch: np.ndarray) -> None:
        """One mini-batch step: c_j -= rate * mean_i(c_j - l_ij).

        Mutates the centers; callers must serialize this with the optimizer
        step (one update per step, after the gradient step).
        """
        latent_batch = np.asarray(latent_batch, dtype=np.float64)
        if latent_batch.ndim != 3 or latent_batch.shape[0] < 1:
            raise ContractViolation("center update needs a non-empty (N, M, D) batch")
        if latent_batch.shape[1:] != self.centers.shape:
            raise ContractViolation(
                f"center update shape mismatch: batch {latent_batch.shape}, "
                f"centers {self.centers.shape}"
            )
        self.centers -= self.rate * (self.centers - latent_batch.mean(axis=0))


def compactness_loss(latent_batch: np.ndarray, centers: LatentCenters) -> float:
    """Mean over the batch of the summed squared distances to the centers.

    (1/N) sum_i sum_j ||l_ij - c_j||^2. Centers receive no gradient.
    """
    latent_batch = np.asarray(latent_batch, dtype=np.float64)
    if latent_batch.ndim != 3 or latent_batch.shape[0] < 1:
        raise ContractViolation("compactness_loss needs a non-empty (N, M, D) batch")
    if latent_batch.shape[1:] != centers.centers.shape:
        raise ContractViolation(
            f"compactness_loss shape mismatch: batch {latent_batch.shape}, "
            f"centers {centers.centers.shape}"
        )
    diff = latent_batch - centers.centers[None, :, :]
    return float(np.sum(diff * diff) / latent_batch.shape[0])


def compactness_grad(latent_batch: np.ndarray, centers: LatentCenters) -> np.ndarray:
    """d(compactness)/d(latents): (2/N)(l_ij - c_j), shape (N, M, D)."""
    latent_batch = np.asarray(latent_batch, dtype=np.float64)
    return 2.0 / latent_batch.shape[0] * (latent_batch - centers.centers[None, :, :])
