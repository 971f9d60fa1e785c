"""Adam with step decay, the epoch loop with center updates, and evaluation.

Per optimizer step, in this order: forward, backward, Adam update, then both
center-bank updates using the latent features and importance weights cached
by the forward pass (one forward per batch; centers see pre-step features,
the usual center-loss convention). Batches are drawn by a seeded
Fisher-Yates shuffle each epoch; a final partial batch is kept and its
losses use its true size.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .datasets import FeatureDataset
from .decomposition import LatentCenters
from .errors import ContractViolation, DataFormatError, TrainingError
from .intra import ClassCenters
from .head import (
    Centers,
    HeadConfig,
    LossBreakdown,
    ParamGroups,
    backward,
    forward,
    forward_sequential,
)
from .numerics import SplitMix64

ADAM_BETA1 = 0.500
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class Schedule:
    """Step-decay learning-rate schedule.

    The rate starts at base_lr and is multiplied by `factor` once for each
    boundary that the epoch index has reached: "after E epochs" means the
    decay applies from epoch index >= E.
    """

    base_lr: float = 1e-4
    decay_epochs: tuple[int, ...] = (10, 18, 25, 32)
    factor: float = 0.1
    total_epochs: int = 40
    batch_size: int = 64

    def validate(self) -> None:
        if self.base_lr <= 0 or self.batch_size < 1 or self.total_epochs < 1:
            raise ContractViolation(f"invalid schedule: {self}")
        if list(self.decay_epochs) != sorted(set(self.decay_epochs)):
            raise ContractViolation("decay epochs must be strictly increasing")
        if self.decay_epochs and self.decay_epochs[-1] >= self.total_epochs:
            raise ContractViolation("decay epochs must be < total_epochs")

    def lr_at(self, epoch: int) -> float:
        if not 0 <= epoch < self.total_epochs:
            raise ContractViolation(
                f"epoch {epoch} out of range [0, {self.total_epochs})"
            )
        decays = sum(1 for boundary in self.decay_epochs if boundary <= epoch)
        return self.base_lr * self.factor**decays


@dataclass
class AdamState:
    """Bias-corrected Adam moments for every parameter group."""

    first: ParamGroups
    second: ParamGroups
    step_count: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def zeros(cls, params: ParamGroups) -> "AdamState":
        return cls(first=params.zeros_like(), second=params.zeros_like())


def adam_step(
    params: ParamGroups, grads: ParamGroups, state: AdamState, lr: float
) -> None:
    """One in-place bias-corrected Adam update."""
    grads.raise_if_not_finite("passed to adam_step")
    state.step_count += 1
    t = state.step_count
    correct1 = 1.0 - state.beta1**t
    correct2 = 1.0 - state.beta2**t
    for name, theta in params.items():
        g = getattr(grads, name)
        m = getattr(state.first, name)
        v = getattr(state.second, name)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        theta -= lr * (m / correct1) / (np.sqrt(v / correct2) + state.eps)
    params.raise_if_not_finite("after adam_step")


@dataclass
class TrainerState:
    """Everything that evolves during training (checkpointable)."""

    params: ParamGroups
    centers: Centers
    adam: AdamState
    rng: SplitMix64


@dataclass
class EpochSummary:
    """Mean losses over the epoch's batches plus end-of-epoch train accuracy."""

    losses: LossBreakdown
    accuracy: float


@dataclass
class EvalReport:
    accuracy: float
    confusion: np.ndarray  # (K, K) counts, rows = true class
    per_class_accuracy: np.ndarray  # (K,)


def evaluate(params: ParamGroups, cfg: HeadConfig, data: FeatureDataset) -> EvalReport:
    """Argmax-of-logits evaluation; mutates nothing.

    np.argmax breaks ties toward the lowest class index, so predictions are
    deterministic.
    """
    if len(data) < 1:
        raise ContractViolation("evaluate needs a non-empty dataset")
    cache = forward(data.features, params, cfg)
    predictions = np.argmax(cache.logits, axis=1)
    K = cfg.n_classes
    confusion = np.zeros((K, K), dtype=np.int64)
    np.add.at(confusion, (data.labels, predictions), 1)
    totals = confusion.sum(axis=1)
    per_class = np.divide(
        np.diag(confusion), totals, out=np.zeros(K, dtype=np.float64), where=totals > 0
    )
    accuracy = float(np.trace(confusion) / len(data))
    return EvalReport(accuracy=accuracy, confusion=confusion, per_class_accuracy=per_class)


def train_epoch(
    state: TrainerState,
    data: FeatureDataset,
    cfg: HeadConfig,
    schedule: Schedule,
    epoch: int,
    sequential: bool = True,
) -> EpochSummary:
    """One pass over the shuffled dataset; returns the epoch summary.

    The summary's loss components are means over the epoch's batches
    (weighted by batch size); its accuracy is a full evaluation pass on
    `data` with the end-of-epoch parameters, so it matches a subsequent
    `evaluate` call exactly.
    """
    n = len(data)
    if n < 1:
        raise ContractViolation("train_epoch needs a non-empty dataset")
    if schedule.batch_size > n:
        raise ContractViolation(
            f"batch size {schedule.batch_size} exceeds dataset size {n}"
        )
    lr = schedule.lr_at(epoch)
    order = state.rng.permutation(n)
    sums = np.zeros(5)
    for start in range(0, n, schedule.batch_size):
        batch_idx = order[start : start + schedule.batch_size]
        X = data.features[batch_idx]
        labels = data.labels[batch_idx]
        try:
            fwd = forward_sequential if sequential else forward
            cache = fwd(X, state.params, cfg)
            grads, losses = backward(
                cache, labels, state.params, state.centers, cfg, sequential=sequential
            )
        except TrainingError as err:
            raise TrainingError(
                f"epoch {epoch}, batch starting at {start}: {err}"
            ) from err
        adam_step(state.params, grads, state.adam, lr)
        state.centers.latent.update(cache.latents)
        state.centers.by_class.update(cache.weights, labels)
        weight = len(batch_idx)
        sums += weight * np.array(
            [losses.cls, losses.compact, losses.balance, losses.distribution, losses.total]
        )
    mean = sums / n
    losses = LossBreakdown(*mean)
    report = evaluate(state.params, cfg, data)
    return EpochSummary(losses=losses, accuracy=report.accuracy)


CHECKPOINT_MAGIC = b"FDRM"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str, state: TrainerState, cfg: HeadConfig) -> None:
    """Binary little-endian checkpoint.

    Layout: magic 'FDRM', u32 version, u32 P/D/M/K, then float64 arrays in
    fixed order (decomp, gate, message, classifier weights; latent centers;
    class centers; Adam first then second moments in the same group order),
    then u64 step count and u64 RNG state.
    """
    arrays = _checkpoint_arrays(state)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(
            struct.pack(
                "<5I",
                CHECKPOINT_VERSION,
                cfg.input_dim,
                cfg.latent_dim,
                cfg.n_latents,
                cfg.n_classes,
            )
        )
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        fh.write(struct.pack("<QQ", state.adam.step_count, state.rng.state))


def peek_checkpoint_dims(path: str) -> tuple[int, int, int, int]:
    """Read (P, D, M, K) from a checkpoint header without loading arrays."""
    with open(path, "rb") as fh:
        head = fh.read(24)
    if head[:4] != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: bad magic {head[:4]!r}")
    if len(head) < 24:
        raise DataFormatError(f"{path}: truncated header")
    version, P, D, M, K = struct.unpack_from("<5I", head, 4)
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    return P, D, M, K


def load_checkpoint(path: str, cfg: HeadConfig) -> TrainerState:
    """Read a checkpoint, validating magic, version, and dimensions."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise DataFormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 24:
        raise DataFormatError(f"{path}: truncated header")
    version, P, D, M, K = struct.unpack_from("<5I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    if (P, D, M, K) != (cfg.input_dim, cfg.latent_dim, cfg.n_latents, cfg.n_classes):
        raise DataFormatError(
            f"{path}: checkpoint dimensions P={P} D={D} M={M} K={K} do not match "
            f"configuration P={cfg.input_dim} D={cfg.latent_dim} "
            f"M={cfg.n_latents} K={cfg.n_classes}"
        )
    rng = SplitMix64(0)
    params = ParamGroups(
        decomp=np.empty((M, P, D)),
        gate=np.empty((M, D, D)),
        message=np.empty((M, D, D)),
        classifier=np.empty((D, K)),
    )
    state = TrainerState(
        params=params,
        centers=Centers(
            latent=LatentCenters(np.empty((M, D)), cfg.center_rate),
            by_class=ClassCenters(np.empty((K, M)), cfg.center_rate),
        ),
        adam=AdamState(first=params.zeros_like(), second=params.zeros_like()),
        rng=rng,
    )
    offset = 24
    for arr in _checkpoint_arrays(state):
        nbytes = arr.size * 8
        if offset + nbytes > len(blob):
            raise DataFormatError(f"{path}: truncated at byte {offset}")
        arr[...] = np.frombuffer(blob, dtype="<f8", count=arr.size, offset=offset).reshape(
            arr.shape
        )
        offset += nbytes
    if offset + 16 != len(blob):
        raise DataFormatError(
            f"{path}: expected {offset + 16} bytes, found {len(blob)}"
        )
    step_count, rng_state = struct.unpack_from("<QQ", blob, offset)
    state.adam.step_count = step_count
    state.rng.set_state(rng_state)
    return state


def _checkpoint_arrays(state: TrainerState) -> list[np.ndarray]:
    arrays = [arr for _, arr in state.params.items()]
    arrays.append(state.centers.latent.centers)
    arrays.append(state.centers.by_class.centers)
    arrays.extend(arr for _, arr in state.adam.first.items())
    arrays.extend(arr for _, arr in state.adam.second.items())
    return arrays
