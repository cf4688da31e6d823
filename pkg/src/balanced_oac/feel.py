"""Federated training loop over the simulated aggregation link.

Each round, every device computes a mini-batch gradient on its local
partition, the gradients are averaged over the configured link (ideal,
quantization-only, or the full chain), and all devices apply the same
momentum update to their synchronized model copy.  Models are small
numpy-only classifiers; data is either synthetic Gaussian blobs or MNIST in
IDX format.
"""

import gzip
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, DivergenceError
from .link import LinkConfig, oac_round

__all__ = [
    "Dataset",
    "LearnConfig",
    "RoundReport",
    "SoftmaxClassifier",
    "MlpClassifier",
    "make_model",
    "synthetic_dataset",
    "load_mnist",
    "partition_homogeneous",
    "partition_heterogeneous_concentric",
    "local_gradients",
    "train",
]


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (n, d) with integer labels (n,)."""

    x: np.ndarray
    y: np.ndarray
    num_classes: int

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise ConfigError("features and labels disagree in length")
        if len(self.x) == 0:
            raise ConfigError("dataset is empty")


def standardize(train_x: np.ndarray, *others: np.ndarray):
    """Shift/scale features to zero mean and unit variance (train statistics).

    Constant features are mapped to zero.  Returns the transformed arrays
    in input order.
    """
    mean = train_x.mean(axis=0)
    std = train_x.std(axis=0)
    safe = np.where(std > 0, std, 1.0)
    out = [np.where(std > 0, (a - mean) / safe, 0.0) for a in (train_x, *others)]
    return out[0] if not others else tuple(out)


def synthetic_dataset(
    classes: int = 10,
    features: int = 20,
    train_size: int = 5000,
    test_size: int = 2000,
    seed: int = 0,
    separation: float = 3.0,
) -> tuple[Dataset, Dataset]:
    """Gaussian-blob classification task with balanced labels.

    Class means sit at ``separation`` times random unit vectors; samples add
    unit-variance isotropic noise.  Features are standardized with training
    statistics.
    """
    if classes < 2 or features < 1:
        raise ConfigError("need at least 2 classes and 1 feature")
    rng = rngmod.stream(seed, rngmod.ROLE_DATA, 0)
    means = rng.standard_normal((classes, features))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)

    def draw(n):
        y = np.arange(n) % classes
        rng.shuffle(y)
        x = means[y] + rng.standard_normal((n, features))
        return x, y

    train_x, train_y = draw(train_size)
    test_x, test_y = draw(test_size)
    train_x, test_x = standardize(train_x, test_x)
    return Dataset(train_x, train_y, classes), Dataset(test_x, test_y, classes)


def _read_idx(path: Path) -> np.ndarray:
    """Read one IDX-format array (images or labels, optionally gzipped)."""
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        raw = f.read()
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or dtype_code != 0x08:
        raise ConfigError(f"{path} is not an unsigned-byte IDX file")
    dims = struct.unpack(f">{ndim}I", raw[4 : 4 + 4 * ndim])
    data = np.frombuffer(raw, dtype=np.uint8, offset=4 + 4 * ndim)
    if data.size != int(np.prod(dims)):
        raise ConfigError(f"{path} is truncated")
    return data.reshape(dims)


def _find_idx(directory: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        candidate = directory / name
        if candidate.exists():
            return candidate
    raise ConfigError(f"missing {stem}[.gz] under {directory}")


def load_mnist(directory) -> tuple[Dataset, Dataset]:
    """Load the four standard MNIST IDX files from ``directory``.

    Pixels are scaled to [0, 1], flattened, and standardized with training
    statistics.
    """
    directory = Path(directory)
    train_x = _read_idx(_find_idx(directory, "train-images-idx3-ubyte"))
    train_y = _read_idx(_find_idx(directory, "train-labels-idx1-ubyte"))
    test_x = _read_idx(_find_idx(directory, "t10k-images-idx3-ubyte"))
    test_y = _read_idx(_find_idx(directory, "t10k-labels-idx1-ubyte"))
    train_x = train_x.reshape(len(train_x), -1).astype(np.float64) / 255.0
    test_x = test_x.reshape(len(test_x), -1).astype(np.float64) / 255.0
    train_x, test_x = standardize(train_x, test_x)
    return (
        Dataset(train_x, train_y.astype(np.int64), 10),
        Dataset(test_x, test_y.astype(np.int64), 10),
    )


class SoftmaxClassifier:
    """Multinomial logistic regression on a flat feature vector."""

    def __init__(self, features: int, classes: int):
        self.features = features
        self.classes = classes

    @property
    def num_params(self) -> int:
        return (self.features + 1) * self.classes

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(self.num_params)

    def _unpack(self, params):
        split = self.features * self.classes
        return params[:split].reshape(self.features, self.classes), params[split:]

    def _logits(self, params, x):
        weights, bias = self._unpack(params)
        return x @ weights + bias

    def loss_grad(self, params, x, y):
        """Mean cross-entropy over the batch and its gradient."""
        logits = self._logits(params, x)
        logits = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        n = len(y)
        loss = -np.mean(np.log(p[np.arange(n), y] + 1e-300))
        d = p.copy()
        d[np.arange(n), y] -= 1.0
        d /= n
        return loss, np.concatenate([(x.T @ d).ravel(), d.sum(axis=0)])

    def predict(self, params, x):
        return np.argmax(self._logits(params, x), axis=1)


class MlpClassifier:
    """One-hidden-layer ReLU network."""

    def __init__(self, features: int, hidden: int, classes: int):
        self.features = features
        self.hidden = hidden
        self.classes = classes

    @property
    def num_params(self) -> int:
        return (self.features + 1) * self.hidden + (self.hidden + 1) * self.classes

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        w1 = rng.standard_normal((self.features, self.hidden))
        w1 *= np.sqrt(2.0 / self.features)
        rest = np.zeros(self.hidden + (self.hidden + 1) * self.classes)
        return np.concatenate([w1.ravel(), rest])

    def _unpack(self, params):
        f, h, c = self.features, self.hidden, self.classes
        i = 0
        w1 = params[i : i + f * h].reshape(f, h)
        i += f * h
        b1 = params[i : i + h]
        i += h
        w2 = params[i : i + h * c].reshape(h, c)
        i += h * c
        b2 = params[i:]
        return w1, b1, w2, b2

    def loss_grad(self, params, x, y):
        w1, b1, w2, b2 = self._unpack(params)
        pre = x @ w1 + b1
        act = np.maximum(pre, 0.0)
        logits = act @ w2 + b2
        logits = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        p /= p.sum(axis=1, keepdims=True)
        n = len(y)
        loss = -np.mean(np.log(p[np.arange(n), y] + 1e-300))
        d = p.copy()
        d[np.arange(n), y] -= 1.0
        d /= n
        g_w2 = act.T @ d
        g_b2 = d.sum(axis=0)
        back = (d @ w2.T) * (pre > 0)
        g_w1 = x.T @ back
        g_b1 = back.sum(axis=0)
        return loss, np.concatenate(
            [g_w1.ravel(), g_b1, g_w2.ravel(), g_b2]
        )

    def predict(self, params, x):
        w1, b1, w2, b2 = self._unpack(params)
        act = np.maximum(x @ w1 + b1, 0.0)
        return np.argmax(act @ w2 + b2, axis=1)


def make_model(features: int, classes: int, hidden: int = 0):
    """Softmax classifier, or a one-hidden-layer network when hidden > 0."""
    if hidden > 0:
        return MlpClassifier(features, hidden, classes)
    return SoftmaxClassifier(features, classes)


def partition_homogeneous(labels, num_devices: int, seed: int) -> list:
    """Split every label's samples evenly across all devices.

    Returns one index array per device.  Leftover samples (label count not
    divisible by the device count) go to the lowest-numbered devices.
    """
    labels = np.asarray(labels)
    rng = rngmod.stream(seed, rngmod.ROLE_DATA, 1)
    shares: list = [[] for _ in range(num_devices)]
    for label in np.unique(labels):
        idx = np.flatnonzero(labels == label)
        rng.shuffle(idx)
        for k in range(num_devices):
            shares[k].append(idx[k::num_devices])
    return [np.sort(np.concatenate(s)) for s in shares]


def partition_heterogeneous_concentric(labels, num_devices: int, seed: int) -> list:
    """Label-skewed partition over 5 concentric areas of 5 devices each.

    Area u (u = 1..5) holds labels u-1 .. u+4, so each device sees 6 of the
    10 labels and boundary labels live in few areas.  Requires 25 devices
    and 10 classes.
    """
    labels = np.asarray(labels)
    if num_devices != 25:
        raise ConfigError("the concentric partition is defined for 25 devices")
    present = set(np.unique(labels))
    if present != set(range(10)):
        raise ConfigError("the concentric partition needs every label 0..9 present")
    rng = rngmod.stream(seed, rngmod.ROLE_DATA, 1)
    shares: list = [[] for _ in range(num_devices)]
    for label in range(10):
        idx = np.flatnonzero(labels == label)
        rng.shuffle(idx)
        areas = [u for u in range(1, 6) if u - 1 <= label <= u + 4]
        pieces = np.array_split(idx, len(areas))
        for area, piece in zip(areas, pieces):
            devices = range((area - 1) * 5, area * 5)
            for j, dev in enumerate(devices):
                shares[dev].append(piece[j::5])
    return [np.sort(np.concatenate(s)) if s else np.array([], dtype=np.int64) for s in shares]


def local_gradients(
    model,
    params: np.ndarray,
    data: Dataset,
    partition,
    batch_size: int,
    seed: int,
    round_index: int,
):
    """Per-device mini-batch gradients (K, Q) and batch losses (K,).

    Device k draws ``batch_size`` samples from its partition (without
    replacement when the partition is large enough) using a stream keyed by
    (seed, round, device).
    """
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    num_devices = len(partition)
    grads = np.empty((num_devices, model.num_params))
    losses = np.empty(num_devices)
    for k, pool in enumerate(partition):
        if len(pool) == 0:
            raise ConfigError(f"device {k} has an empty partition")
        rng = rngmod.stream(seed, rngmod.ROLE_DATA, 2, round_index, k)
        take = rng.choice(len(pool), size=batch_size, replace=len(pool) < batch_size)
        batch = pool[take]
        losses[k], grads[k] = model.loss_grad(params, data.x[batch], data.y[batch])
    return grads, losses


@dataclass(frozen=True)
class LearnConfig:
    """Optimization hyperparameters for the federated loop."""

    learning_rate: float = 0.001
    batch_size: int = 64
    momentum: float = 0.9
    rounds: int = 100
    v_max_policy: str = "fixed"  # "fixed" | "adaptive"

    def __post_init__(self):
        if not (self.learning_rate > 0):
            raise ConfigError("learning rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch size must be >= 1")
        if not (0 <= self.momentum < 1):
            raise ConfigError("momentum must be in [0, 1)")
        if self.rounds < 1:
            raise ConfigError("need at least one round")
        if self.v_max_policy not in ("fixed", "adaptive"):
            raise ConfigError(f"unknown v_max policy {self.v_max_policy!r}")


@dataclass(frozen=True)
class RoundReport:
    """Per-round diagnostics of the federated loop."""

    round: int
    loss: float  # mean local batch loss before the update
    accuracy: float  # test accuracy after the update
    true_norm: float  # ||mean gradient||
    oac_error: float  # ||estimate - mean gradient||
    quant_error: float  # ||quantized average - mean gradient||
    clipped: int  # gradient entries beyond +-v_max
    v_max: float  # clip level used this round


def train(
    model,
    train_set: Dataset,
    test_set: Dataset,
    partition,
    link: LinkConfig,
    learn: LearnConfig,
    seed: int,
) -> list:
    """Run the federated loop and report every round.

    All devices share one synchronized model state; the momentum update
    v <- m v + g_hat, w <- w - eta v uses the broadcast estimate, so
    applying it per device or once is identical.  Raises
    :class:`DivergenceError` on non-finite losses or parameters.
    """
    params = model.init_params(rngmod.stream(seed, rngmod.ROLE_INIT))
    velocity = np.zeros_like(params)
    v_max = link.codec.v_max
    reports = []
    for t in range(learn.rounds):
        grads, losses = local_gradients(
            model, params, train_set, partition, learn.batch_size, seed, t
        )
        if not np.all(np.isfinite(grads)) or not np.all(np.isfinite(losses)):
            raise DivergenceError(f"non-finite local loss or gradient at round {t}")
        round_link = link
        if v_max != link.codec.v_max:
            round_link = replace(link, codec=replace(link.codec, v_max=v_max))
        estimate = oac_round(grads, round_link, seed, t)
        true_avg = grads.mean(axis=0)
        quant_avg = oac_round(grads, replace(round_link, mode="quantized"), seed, t)
        velocity = learn.momentum * velocity + estimate
        params = params - learn.learning_rate * velocity
        if not np.all(np.isfinite(params)):
            raise DivergenceError(f"non-finite model state at round {t}")
        accuracy = float(np.mean(model.predict(params, test_set.x) == test_set.y))
        reports.append(
            RoundReport(
                round=t,
                loss=float(losses.mean()),
                accuracy=accuracy,
                true_norm=float(np.linalg.norm(true_avg)),
                oac_error=float(np.linalg.norm(estimate - true_avg)),
                quant_error=float(np.linalg.norm(quant_avg - true_avg)),
                clipped=int(np.sum(np.abs(grads) > v_max)),
                v_max=float(v_max),
            )
        )
        if learn.v_max_policy == "adaptive":
            peak = float(np.max(np.abs(grads)))
            if peak > 0:
                v_max = peak
    return reports
