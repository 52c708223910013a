"""Synthetic classification tasks with exact per-sample gradients.

The data generator draws class-conditional Gaussian blobs around fixed,
mutually orthogonal class means (the means depend only on the feature
dimension and class count, never on the sampling seed), shuffles, and
partitions the samples into equally sized disjoint node shards.

Two model families cover the convex and non-convex regimes:

* ``logistic``: binary logistic regression with a bias term, parameters
  flattened as (weights..., bias), trained with sigmoid cross-entropy.
* ``mlp``: one tanh hidden layer into a softmax output, parameters
  flattened as (W1, b1, W2, b2), trained with softmax cross-entropy.

Gradients are hand-derived and vectorized; ``full_objective`` averages the
loss and gradient over every sample on every node and is the quantity the
engine logs at the average iterate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MEANS_SEED = 1799  # class means are fixed across dataset seeds


@dataclass(frozen=True)
class Dataset:
    """Disjoint node shards: features (n, J, d_in) and integer labels (n, J)."""

    features: np.ndarray
    labels: np.ndarray
    classes: int
    seed: int

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def J(self) -> int:
        return self.features.shape[1]

    @property
    def d_in(self) -> int:
        return self.features.shape[2]

    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        """All samples pooled: features (n*J, d_in), labels (n*J,)."""
        return (
            self.features.reshape(-1, self.d_in),
            self.labels.reshape(-1),
        )


def _class_means(d_in: int, classes: int, separation: float) -> np.ndarray:
    """Orthonormal directions scaled to ``separation``, fixed for all seeds."""
    if classes > d_in:
        raise ValueError("need at least as many feature dimensions as classes")
    rng = np.random.default_rng(_MEANS_SEED)
    raw = rng.standard_normal((d_in, classes))
    q, _ = np.linalg.qr(raw)
    return separation * q[:, :classes].T


def synth_dataset(
    seed: int,
    n: int,
    J: int,
    d_in: int = 10,
    classes: int = 2,
    separation: float = 3.0,
) -> Dataset:
    """Sample, shuffle, and shard a blob classification problem.

    Labels are balanced up to rounding before the shuffle, every shard gets
    exactly J samples, and the draw is fully determined by ``seed`` (the blob
    means are shared across seeds so different seeds resample the same task).
    """
    if n < 1 or J < 1:
        raise ValueError("need at least one node and one sample per node")
    means = _class_means(d_in, classes, separation)
    rng = np.random.default_rng(seed)
    total = n * J
    labels = np.arange(total) % classes
    features = means[labels] + rng.standard_normal((total, d_in))
    order = rng.permutation(total)
    features, labels = features[order], labels[order]
    return Dataset(
        features=features.reshape(n, J, d_in),
        labels=labels.reshape(n, J),
        classes=classes,
        seed=seed,
    )


@dataclass(frozen=True)
class Model:
    """Architecture descriptor; parameters travel as one flat float vector."""

    kind: str
    d_in: int
    classes: int = 2
    hidden: int = 0

    def __post_init__(self):
        if self.kind not in ("logistic", "mlp"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == "logistic" and self.classes != 2:
            raise ValueError("logistic model is binary; use the mlp for more classes")
        if self.kind == "mlp" and self.hidden < 1:
            raise ValueError("mlp needs a positive hidden width")

    @property
    def dim(self) -> int:
        if self.kind == "logistic":
            return self.d_in + 1
        h = self.hidden
        return h * self.d_in + h + self.classes * h + self.classes

    def unflatten(self, params: np.ndarray):
        """Views into the flat vector; writing through them is intentional."""
        if params.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} parameters, got {params.shape}")
        if self.kind == "logistic":
            return params[: self.d_in], params[self.d_in]
        h, d, c = self.hidden, self.d_in, self.classes
        ofs = 0
        W1 = params[ofs : ofs + h * d].reshape(h, d)
        ofs += h * d
        b1 = params[ofs : ofs + h]
        ofs += h
        W2 = params[ofs : ofs + c * h].reshape(c, h)
        ofs += c * h
        b2 = params[ofs : ofs + c]
        return W1, b1, W2, b2


def _batch_loss_grad(
    model: Model, params: np.ndarray, X: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy loss and flat gradient over a batch."""
    N = X.shape[0]
    if model.kind == "logistic":
        w, b = model.unflatten(params)
        z = X @ w + b
        # log(1 + e^z) - y z, stable for either sign of z
        loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
        coeff = _sigmoid(z) - y
        grad = np.empty(model.dim)
        grad[: model.d_in] = X.T @ coeff / N
        grad[model.d_in] = coeff.mean()
        return loss, grad
    W1, b1, W2, b2 = model.unflatten(params)
    hidden = np.tanh(X @ W1.T + b1)
    logits = hidden @ W2.T + b2
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_norm - shifted[np.arange(N), y]))
    dlogits = np.exp(shifted)
    dlogits /= dlogits.sum(axis=1, keepdims=True)
    dlogits[np.arange(N), y] -= 1.0
    dlogits /= N
    dhidden = dlogits @ W2
    dpre = dhidden * (1.0 - hidden**2)
    grad = np.empty(model.dim)
    gW1, gb1, gW2, gb2 = model.unflatten(grad)
    gW1[:] = dpre.T @ X
    gb1[:] = dpre.sum(axis=0)
    gW2[:] = dlogits.T @ hidden
    gb2[:] = dlogits.sum(axis=0)
    return loss, grad


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def per_sample_loss(model: Model, params: np.ndarray, x: np.ndarray, y: int) -> float:
    loss, _ = _batch_loss_grad(model, params, x[None, :], np.asarray([y]))
    return loss


def per_sample_gradient(model: Model, params: np.ndarray, x: np.ndarray, y: int) -> np.ndarray:
    """Exact flat gradient of the cross-entropy loss at one sample."""
    _, grad = _batch_loss_grad(model, params, x[None, :], np.asarray([y]))
    return grad


def full_objective(model: Model, dataset: Dataset, params: np.ndarray) -> tuple[float, np.ndarray]:
    """Loss and gradient averaged over every sample on every node."""
    X, y = dataset.flat()
    return _batch_loss_grad(model, params, X, y)


def predictions(model: Model, params: np.ndarray, X: np.ndarray) -> np.ndarray:
    if model.kind == "logistic":
        w, b = model.unflatten(params)
        return (X @ w + b > 0).astype(int)
    W1, b1, W2, b2 = model.unflatten(params)
    logits = np.tanh(X @ W1.T + b1) @ W2.T + b2
    return logits.argmax(axis=1)


def evaluate(model: Model, dataset: Dataset, params: np.ndarray) -> tuple[float, np.ndarray, float]:
    """Loss, gradient, and accuracy over the pooled dataset in one pass."""
    X, y = dataset.flat()
    loss, grad = _batch_loss_grad(model, params, X, y)
    acc = float(np.mean(predictions(model, params, X) == y))
    return loss, grad, acc


@dataclass(frozen=True)
class Task:
    """A model bound to a sharded dataset; what one engine run optimizes."""

    model: Model
    dataset: Dataset

    def __post_init__(self):
        if self.model.d_in != self.dataset.d_in:
            raise ValueError("model and dataset disagree on the feature dimension")
        if self.model.kind == "mlp" and self.model.classes != self.dataset.classes:
            raise ValueError("model and dataset disagree on the class count")


def dataset_to_csv(dataset: Dataset, path) -> None:
    """Audit export: one row per sample with node and within-shard index."""
    d = dataset.d_in
    header = ",".join(["node", "index", "label"] + [f"f{j}" for j in range(d)])
    lines = [
        f"# seed={dataset.seed} n={dataset.n} J={dataset.J} d_in={d} classes={dataset.classes}",
        header,
    ]
    for node in range(dataset.n):
        for idx in range(dataset.J):
            feats = ",".join(repr(float(v)) for v in dataset.features[node, idx])
            lines.append(f"{node},{idx},{int(dataset.labels[node, idx])},{feats}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def dataset_from_csv(path) -> Dataset:
    """Inverse of ``dataset_to_csv``; round-trips exactly."""
    with open(path) as fh:
        meta_line = fh.readline().strip()
        fh.readline()  # column header
        body = [line.strip() for line in fh if line.strip()]
    meta = dict(item.split("=") for item in meta_line.lstrip("# ").split())
    n, J, d = int(meta["n"]), int(meta["J"]), int(meta["d_in"])
    features = np.empty((n, J, d))
    labels = np.empty((n, J), dtype=int)
    for line in body:
        parts = line.split(",")
        node, idx = int(parts[0]), int(parts[1])
        labels[node, idx] = int(parts[2])
        features[node, idx] = [float(v) for v in parts[3:]]
    return Dataset(features=features, labels=labels, classes=int(meta["classes"]), seed=int(meta["seed"]))
