"""Per-latent importance weighting and its two regularizers.

Each latent feature passes through its own sigmoid gate; the L1 norm of the
gate vector (a plain sum, since sigmoid outputs are positive) is that
latent's scalar importance weight. A distribution loss pulls each sample's
weight vector toward a rule-updated center for its class, and a balance loss
pulls the batch-mean weight vector toward the uniform vector 1/M.

Note the deliberate scale mismatch in the balance loss: the weights live in
[0, D) (sum of D sigmoids) while the target coordinates are 1/M. The formula
is implemented verbatim; normalizing the mean vector first is a plausible
alternative reading that is intentionally not applied.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .numerics import sigmoid


def gate(latents: np.ndarray, gate_weights: np.ndarray) -> np.ndarray:
    """Gate bank for one sample: gates[j] = sigmoid(W[j].T @ latents[j])."""
    latents = np.asarray(latents, dtype=np.float64)
    W = np.asarray(gate_weights, dtype=np.float64)
    if latents.ndim != 2 or W.ndim != 3 or W.shape[:2] != (latents.shape[0], latents.shape[1]):
        raise ContractViolation(
            f"gate shape mismatch: weights {W.shape}, latents {latents.shape}"
        )
    return sigmoid(np.einsum("mde,md->me", W, latents))


def gate_batch(latent_batch: np.ndarray, gate_weights: np.ndarray) -> np.ndarray:
    """Gate banks for a batch: (N, M, D) -> (N, M, D)."""
    L = np.asarray(latent_batch, dtype=np.float64)
    W = np.asarray(gate_weights, dtype=np.float64)
    if L.ndim != 3 or W.ndim != 3 or W.shape[:2] != L.shape[1:]:
        raise ContractViolation(
            f"gate_batch shape mismatch: weights {W.shape}, batch {L.shape}"
        )
    pre = np.matmul(L.transpose(1, 0, 2), W).transpose(1, 0, 2)
    return sigmoid(pre)


def intra_weights(gates: np.ndarray) -> np.ndarray:
    """Importance weight per latent: the L1 norm of its gate vector.

    Gate entries are sigmoid outputs in (0, 1), so the L1 norm is a plain sum
    and the map is smooth with unit derivative per entry. Works on a single
    (M, D) bank or a batched (N, M, D) stack.
    """
    gates = np.asarray(gates, dtype=np.float64)
    return gates.sum(axis=-1)


def scale_features(latents: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Intra-aware features: each latent scaled by its importance weight.

    Broadcasts over a single bank ((M, D) with (M,)) or a batch
    ((N, M, D) with (N, M)).
    """
    latents = np.asarray(latents, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if latents.shape[:-1] != weights.shape:
        raise ContractViolation(
            f"scale_features shape mismatch: latents {latents.shape}, "
            f"weights {weights.shape}"
        )
    return weights[..., None] * latents


@dataclass
class ClassCenters:
    """Running per-class centers of the intra-weight vectors, one M-vector each.

    Same rule-update convention as the latent centers: gradient-free,
    zero-initialized, moved toward the class means present in the batch.
    """

    centers: np.ndarray  # (K, M)
    rate: float = 0.5

    @classmethod
    def zeros(cls, n_classes: int, n_latents: int, rate: float = 0.5) -> "ClassCenters":
        return cls(np.zeros((n_classes, n_latents)), rate)

    def update(self, weight_batch: np.ndarray, labels: np.ndarray) -> None:
        """Move each class center present in the batch toward its class mean.

        Classes absent from the batch are left untouched rather than
        regularized toward stale statistics.
        """
        weight_batch = np.asarray(weight_batch, dtype=np.float64)
        labels = np.asarray(labels)
        if weight_batch.ndim != 2 or weight_batch.shape[0] < 1:
            raise ContractViolation("class center update needs a non-empty (N, M) batch")
        _check_labels(labels, self.centers.shape[0], weight_batch.shape[0])
        for k in np.unique(labels):
            class_mean = weight_batch[labels == k].mean(axis=0)
            self.centers[k] += self.rate * (class_mean - self.centers[k])


def _check_labels(labels: np.ndarray, n_classes: int, n_samples: int) -> None:
    if labels.shape != (n_samples,):
        raise ContractViolation(
            f"labels shape {labels.shape} does not match batch size {n_samples}"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ContractViolation(
            f"labels must lie in [0, {n_classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )


def distribution_loss(
    weight_batch: np.ndarray, labels: np.ndarray, centers: ClassCenters
) -> float:
    """(1/N) sum_i ||w_i - center[label_i]||^2; gradient flows to w_i only."""
    weight_batch = np.asarray(weight_batch, dtype=np.float64)
    labels = np.asarray(labels)
    if weight_batch.ndim != 2 or weight_batch.shape[0] < 1:
        raise ContractViolation("distribution_loss needs a non-empty (N, M) batch")
    _check_labels(labels, centers.centers.shape[0], weight_batch.shape[0])
    diff = weight_batch - centers.centers[labels]
    return float(np.sum(diff * diff) / weight_batch.shape[0])


def distribution_grad(
    weight_batch: np.ndarray, labels: np.ndarray, centers: ClassCenters
) -> np.ndarray:
    """d(distribution)/d(weights): (2/N)(w_i - center[label_i]), shape (N, M)."""
    weight_batch = np.asarray(weight_batch, dtype=np.float64)
    labels = np.asarray(labels)
    return 2.0 / weight_batch.shape[0] * (weight_batch - centers.centers[labels])


def mean_weights(weight_batch: np.ndarray) -> np.ndarray:
    """Batch-mean intra-weight vector, shape (M,)."""
    weight_batch = np.asarray(weight_batch, dtype=np.float64)
    if weight_batch.ndim != 2 or weight_batch.shape[0] < 1:
        raise ContractViolation("mean_weights needs a non-empty (N, M) batch")
    return weight_batch.mean(axis=0)


def uniform_target(n_latents: int) -> np.ndarray:
    """The uniform weight vector [1/M, ..., 1/M]."""
    return np.full(n_latents, 1.0 / n_latents)


def balance_loss(mean_w: np.ndarray) -> float:
    """L1 distance between the batch-mean weight vector and the uniform target."""
    mean_w = np.asarray(mean_w, dtype=np.float64)
    return float(np.abs(mean_w - uniform_target(mean_w.shape[0])).sum())


def balance_sign(mean_w: np.ndarray) -> np.ndarray:
    """Subgradient of the balance loss w.r.t. the mean vector: sign, 0 at ties.

    Each sample's weight vector receives this divided by N (the mean carries
    a 1/N factor per sample).
    """
    mean_w = np.asarray(mean_w, dtype=np.float64)
    return np.sign(mean_w - uniform_target(mean_w.shape[0]))


def per_class_mean_weights(
    weight_batch: np.ndarray, labels: np.ndarray, n_classes: int
) -> np.ndarray:
    """Mean intra-weight vector per class, shape (K, M); absent classes get zeros."""
    weight_batch = np.asarray(weight_batch, dtype=np.float64)
    labels = np.asarray(labels)
    _check_labels(labels, n_classes, weight_batch.shape[0])
    out = np.zeros((n_classes, weight_batch.shape[1]))
    for k in range(n_classes):
        mask = labels == k
        if mask.any():
            out[k] = weight_batch[mask].mean(axis=0)
    return out
