"""Feature datasets: synthetic generator and CSV/binary persistence.

The generator stands in for a backbone network. It bakes in the premise the
head is built around: a small set of shared "action" directions in feature
space, mixed with class-specific nonnegative profiles, so the decomposition
has recoverable structure to find. Samples are ReLU-clamped because backbone
features are post-ReLU.

On-disk formats: CSV stores float64 at full precision (17 significant
digits); the binary table stores float32 (features are classification
inputs, f32 is plenty) and promotes back to float64 on load.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, DataFormatError
from .numerics import SplitMix64

EXPRESSION_CLASSES = (
    "angry",
    "disgust",
    "fear",
    "happy",
    "sad",
    "surprise",
    "neutral",
)


@dataclass
class FeatureDataset:
    """N basic features with class labels."""

    features: np.ndarray  # (N, P) float64
    labels: np.ndarray    # (N,) int64 in [0, K)
    class_names: tuple[str, ...] = EXPRESSION_CLASSES

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise ContractViolation(
                f"dataset needs (N, P) features and (N,) labels, got "
                f"{self.features.shape} / {self.labels.shape}"
            )
        if self.features.shape[0] != self.labels.shape[0]:
            raise ContractViolation(
                f"{self.features.shape[0]} features vs {self.labels.shape[0]} labels"
            )
        k = len(self.class_names)
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= k):
            raise ContractViolation(
                f"labels must lie in [0, {k}), got range "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


@dataclass
class SynthSpec:
    """Recipe for a synthetic feature dataset.

    Each sample of class k is sum_a profiles[k, a] * (1 + u_a) * dirs[a] plus
    isotropic Gaussian noise, ReLU-clamped; u_a is uniform in +-jitter per
    sample and action (0.3 by default; 0 makes every sample of a class
    identical when noise_sigma is also 0).
    """

    action_dirs: np.ndarray     # (n_actions, P), unit rows
    class_profiles: np.ndarray  # (K, n_actions), nonnegative, rows distinct
    noise_sigma: float = 0.05
    samples_per_class: int = 300
    seed: int = 0
    jitter: float = 0.3
    class_names: tuple[str, ...] = EXPRESSION_CLASSES

    def __post_init__(self):
        self.action_dirs = np.asarray(self.action_dirs, dtype=np.float64)
        self.class_profiles = np.asarray(self.class_profiles, dtype=np.float64)

    @property
    def n_actions(self) -> int:
        return self.action_dirs.shape[0]

    def validate(self) -> None:
        if self.action_dirs.ndim != 2 or self.class_profiles.ndim != 2:
            raise ContractViolation("action_dirs and class_profiles must be 2-D")
        if self.class_profiles.shape != (len(self.class_names), self.n_actions):
            raise ContractViolation(
                f"class_profiles shape {self.class_profiles.shape} does not match "
                f"{len(self.class_names)} classes x {self.n_actions} actions"
            )
        norms = np.linalg.norm(self.action_dirs, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-9):
            raise ContractViolation("action directions must be unit-norm")
        if np.any(self.class_profiles < 0):
            raise ContractViolation("class profiles must be nonnegative")
        profiles = self.class_profiles
        for a in range(profiles.shape[0]):
            for b in range(a + 1, profiles.shape[0]):
                if np.array_equal(profiles[a], profiles[b]):
                    raise ContractViolation(
                        f"classes {a} and {b} have identical profiles"
                    )
        if self.noise_sigma < 0:
            raise ContractViolation(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.jitter < 0:
            raise ContractViolation(f"jitter must be >= 0, got {self.jitter}")
        if self.samples_per_class < 1:
            raise ContractViolation("samples_per_class must be >= 1")


def default_action_dirs(n_actions: int, feature_dim: int, rng: SplitMix64) -> np.ndarray:
    """Nonnegative unit directions on disjoint coordinate blocks.

    Disjoint supports make the directions exactly orthonormal, and
    nonnegativity means the ReLU clamp only ever acts on the noise.
    """
    if n_actions > feature_dim:
        raise ContractViolation(
            f"need feature_dim >= n_actions, got {feature_dim} < {n_actions}"
        )
    dirs = np.zeros((n_actions, feature_dim))
    bounds = np.linspace(0, feature_dim, n_actions + 1).astype(int)
    for a in range(n_actions):
        lo, hi = bounds[a], bounds[a + 1]
        block = rng.uniform(0.2, 1.0, hi - lo)
        dirs[a, lo:hi] = block / np.linalg.norm(block)
    return dirs


def default_class_profiles(n_classes: int, n_actions: int, rng: SplitMix64) -> np.ndarray:
    """Shared low-level mix plus a signature set of emphasized actions per class.

    Signature sets are distinct translations of one pattern, so neighboring
    classes share some emphasized actions (the premise the head exploits)
    while every class stays identifiable.
    """
    profiles = rng.uniform(0.1, 0.4, (n_classes, n_actions))
    offsets = (0, 1, 1 + n_actions // 2) if n_actions >= 5 else (0,)
    for k in range(n_classes):
        for t in offsets:
            profiles[k, (k + t) % n_actions] += rng.uniform(0.6, 1.0, 1)[0]
    return profiles


def make_synth_spec(
    n_classes: int = 7,
    n_actions: int = 9,
    feature_dim: int = 512,
    noise_sigma: float = 0.05,
    samples_per_class: int = 300,
    seed: int = 0,
    structure_seed: int = 0,
    class_names: tuple[str, ...] | None = None,
) -> SynthSpec:
    """SynthSpec with the default direction/profile construction.

    `seed` drives the per-sample draws; `structure_seed` drives the action
    directions and class profiles. Train and test sets from the same
    population share structure_seed and differ in seed.
    """
    if class_names is None:
        class_names = (
            EXPRESSION_CLASSES
            if n_classes == len(EXPRESSION_CLASSES)
            else tuple(f"class_{k}" for k in range(n_classes))
        )
    rng = SplitMix64(structure_seed ^ 0xD1F7)
    return SynthSpec(
        action_dirs=default_action_dirs(n_actions, feature_dim, rng),
        class_profiles=default_class_profiles(n_classes, n_actions, rng),
        noise_sigma=noise_sigma,
        samples_per_class=samples_per_class,
        seed=seed,
        class_names=class_names,
    )


def generate(spec: SynthSpec) -> FeatureDataset:
    """Deterministic synthetic dataset: samples_per_class rows for each class."""
    spec.validate()
    rng = SplitMix64(spec.seed)
    K = len(spec.class_names)
    P = spec.action_dirs.shape[1]
    n_total = K * spec.samples_per_class
    features = np.empty((n_total, P))
    labels = np.empty(n_total, dtype=np.int64)
    row = 0
    for k in range(K):
        jitter = rng.uniform(-spec.jitter, spec.jitter, (spec.samples_per_class, spec.n_actions))
        mixed = (spec.class_profiles[k][None, :] * (1.0 + jitter)) @ spec.action_dirs
        if spec.noise_sigma > 0:
            mixed = mixed + spec.noise_sigma * rng.normal((spec.samples_per_class, P))
        features[row : row + spec.samples_per_class] = np.maximum(mixed, 0.0)
        labels[row : row + spec.samples_per_class] = k
        row += spec.samples_per_class
    return FeatureDataset(features, labels, spec.class_names)


def save_csv(path: str, data: FeatureDataset) -> None:
    """Header label,f_1..f_P; float64 at 17 significant digits (round-trip exact)."""
    with open(path, "w", encoding="utf-8") as fh:
        header = "label," + ",".join(f"f_{i + 1}" for i in range(data.feature_dim))
        fh.write(header + "\n")
        for label, row in zip(data.labels, data.features):
            fh.write(str(int(label)) + "," + ",".join(f"{v:.17g}" for v in row) + "\n")


def load_csv(path: str, class_names: tuple[str, ...] = EXPRESSION_CLASSES) -> FeatureDataset:
    """Parse a label,f_1..f_P table; errors carry 1-based line numbers."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        columns = header.split(",")
        if len(columns) < 2 or columns[0] != "label":
            raise DataFormatError(f"{path}:1: expected header label,f_1..f_P")
        p = len(columns) - 1
        features = []
        labels = []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != p + 1:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {p + 1} columns, found {len(parts)}"
                )
            try:
                labels.append(int(parts[0]))
                features.append([float(v) for v in parts[1:]])
            except ValueError as err:
                raise DataFormatError(f"{path}:{lineno}: {err}") from None
    if not features:
        raise DataFormatError(f"{path}: no data rows")
    labels_arr = np.asarray(labels, dtype=np.int64)
    if labels_arr.min() < 0 or labels_arr.max() >= len(class_names):
        bad = int(np.argmax((labels_arr < 0) | (labels_arr >= len(class_names))))
        raise DataFormatError(
            f"{path}:{bad + 2}: label {labels_arr[bad]} out of range "
            f"[0, {len(class_names)})"
        )
    return FeatureDataset(np.asarray(features), labels_arr, class_names)


TABLE_MAGIC = b"FDRL"
TABLE_VERSION = 1


def save_bin(path: str, data: FeatureDataset) -> None:
    """Little-endian binary table: magic, u32 version/N/P/K, f32 rows, u32 labels."""
    with open(path, "wb") as fh:
        fh.write(TABLE_MAGIC)
        fh.write(
            struct.pack("<4I", TABLE_VERSION, len(data), data.feature_dim, data.n_classes)
        )
        fh.write(np.ascontiguousarray(data.features, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(data.labels, dtype="<u4").tobytes())


def load_bin(path: str, class_names: tuple[str, ...] | None = None) -> FeatureDataset:
    """Read the binary table, promoting features f32 -> f64."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != TABLE_MAGIC:
        raise DataFormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 20:
        raise DataFormatError(f"{path}: truncated header")
    version, n, p, k = struct.unpack_from("<4I", blob, 4)
    if version != TABLE_VERSION:
        raise DataFormatError(f"{path}: unsupported version {version}")
    expected = 20 + n * p * 4 + n * 4
    if len(blob) != expected:
        raise DataFormatError(
            f"{path}: expected {expected} bytes for N={n} P={p}, found {len(blob)}"
        )
    features = (
        np.frombuffer(blob, dtype="<f4", count=n * p, offset=20)
        .astype(np.float64)
        .reshape(n, p)
    )
    labels = np.frombuffer(blob, dtype="<u4", count=n, offset=20 + n * p * 4).astype(
        np.int64
    )
    if class_names is None:
        class_names = (
            EXPRESSION_CLASSES
            if k == len(EXPRESSION_CLASSES)
            else tuple(f"class_{i}" for i in range(k))
        )
    if len(class_names) != k:
        raise DataFormatError(
            f"{path}: file declares {k} classes, caller supplied {len(class_names)} names"
        )
    return FeatureDataset(features, labels, class_names)
