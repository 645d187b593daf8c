"""Tiny differentiable classifiers and the online adaptation loop.

Two architectures cover the experiments: a linear softmax head and a
one-hidden-layer rectifier MLP.  Backpropagation is written out by hand:
every loss in this package exposes exact per-sample gradients with
respect to the logits, and ``backward`` chains them into parameter
gradients with mean reduction over the batch, so the learning-rate scale
is batch-size invariant.

``adapt_stream`` is the online protocol: for each unlabeled batch the
model first predicts (metrics are recorded from these pre-update
predictions), then the loss plugin turns the logits into per-sample
gradients, and one SGD step is applied.  Plugins wrap the loss family:
cross-entropy (supervised plumbing for source training and oracle
baselines), classical EM, decoupled EM, and AdaDEM, which threads its
calibrator state through the whole stream.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import adadem as _adadem
from . import em_losses as _em
from .numkit import as_matrix, as_vector, logsumexp, logsumexp_rows, softmax_rows

__all__ = [
    "LinearSoftmax",
    "Mlp",
    "init_linear",
    "init_mlp",
    "forward",
    "backward",
    "cross_entropy_eval",
    "SgdConfig",
    "SgdState",
    "sgd_step",
    "train_source",
    "adapt_stream",
    "CrossEntropyPlugin",
    "EmPlugin",
    "DemPlugin",
    "AdaDemPlugin",
    "param_distance",
]


@dataclass
class LinearSoftmax:
    """Logits = W x + b with W of shape C x d."""

    W: np.ndarray
    b: np.ndarray

    def params(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}

    def head_param_names(self) -> tuple[str, ...]:
        return ("W", "b")

    def copy(self) -> "LinearSoftmax":
        return LinearSoftmax(self.W.copy(), self.b.copy())

    @property
    def C(self) -> int:
        return self.W.shape[0]


@dataclass
class Mlp:
    """Logits = W2 relu(W1 x + b1) + b2."""

    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def params(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def head_param_names(self) -> tuple[str, ...]:
        return ("W2", "b2")

    def copy(self) -> "Mlp":
        return Mlp(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy())

    @property
    def C(self) -> int:
        return self.W2.shape[0]


def init_linear(C: int, d: int, rng=None, scale: float = 0.0) -> LinearSoftmax:
    """Linear model; zero-initialized by default (uniform predictions)."""
    if rng is not None and scale > 0.0:
        W = scale * rng.normals(C * d).reshape(C, d)
    else:
        W = np.zeros((C, d))
    return LinearSoftmax(W, np.zeros(C))


def init_mlp(C: int, d: int, hidden: int, rng, scale: float = 0.5) -> Mlp:
    """MLP with normal-initialized weights and zero biases.

    The output layer is scaled down by sqrt(hidden) so initial logits
    stay O(1) regardless of width.
    """
    if hidden < 1:
        raise ValueError(f"hidden width must be positive, got {hidden}")
    W1 = scale * rng.normals(hidden * d).reshape(hidden, d)
    W2 = scale * rng.normals(C * hidden).reshape(C, hidden) / np.sqrt(hidden)
    return Mlp(W1, np.zeros(hidden), W2, np.zeros(C))


def _forward_mlp(model: Mlp, X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    H = X @ model.W1.T + model.b1
    A = np.maximum(H, 0.0)
    return A @ model.W2.T + model.b2, H, A


def forward(model, X) -> np.ndarray:
    """Batch logits, shape n x C."""
    X = as_matrix(X)
    if isinstance(model, LinearSoftmax):
        if X.shape[1] != model.W.shape[1]:
            raise ValueError("input dimension does not match the model")
        return X @ model.W.T + model.b
    if isinstance(model, Mlp):
        if X.shape[1] != model.W1.shape[1]:
            raise ValueError("input dimension does not match the model")
        return _forward_mlp(model, X)[0]
    raise TypeError(f"unknown model type {type(model).__name__}")


def backward(model, X, dlogits) -> dict[str, np.ndarray]:
    """Parameter gradients of the batch-mean loss.

    ``dlogits`` holds per-sample loss gradients with respect to the
    logits; the result is the gradient of ``mean_s loss_s`` for every
    parameter, keyed like ``model.params()``.
    """
    X = as_matrix(X)
    dlogits = as_matrix(dlogits)
    n = X.shape[0]
    if dlogits.shape[0] != n:
        raise ValueError("dlogits and X disagree on batch size")
    G = dlogits / n
    if isinstance(model, LinearSoftmax):
        return {"W": G.T @ X, "b": G.sum(axis=0)}
    if isinstance(model, Mlp):
        _, H, A = _forward_mlp(model, X)
        dW2 = G.T @ A
        db2 = G.sum(axis=0)
        dA = G @ model.W2
        dH = dA * (H > 0.0)
        return {"W1": dH.T @ X, "b1": dH.sum(axis=0), "W2": dW2, "b2": db2}
    raise TypeError(f"unknown model type {type(model).__name__}")


def cross_entropy_eval(z, target: int) -> _em.LossEval:
    """Supervised cross-entropy: ``logsumexp(z) - z_target``."""
    z = as_vector(z, min_len=2)
    if not 0 <= target < z.shape[0]:
        raise ValueError(f"target {target} out of range for {z.shape[0]} classes")
    grad = softmax_rows(z[None, :])[0]
    grad[target] -= 1.0
    return _em.LossEval(logsumexp(z) - float(z[target]), grad)


def _ce_rows(Z: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    values = logsumexp_rows(Z) - Z[np.arange(Z.shape[0]), targets]
    grads = softmax_rows(Z)
    grads[np.arange(Z.shape[0]), targets] -= 1.0
    return values, grads


@dataclass(frozen=True)
class SgdConfig:
    """SGD with optional heavy-ball momentum.

    ``scope = "head"`` restricts updates to the final linear layer (for
    the MLP; the linear model is all head).  ``lr = 0`` is allowed and
    leaves the model untouched, which gives the no-adapt baseline.
    """

    lr: float
    momentum: float = 0.0
    scope: str = "all"

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError(f"learning rate must be non-negative, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.scope not in ("all", "head"):
            raise ValueError(f"unknown scope {self.scope!r}")


@dataclass
class SgdState:
    """Per-parameter velocity buffers, created lazily on first use."""

    velocities: dict[str, np.ndarray] = field(default_factory=dict)


def sgd_step(model, grads: dict[str, np.ndarray], cfg: SgdConfig, state: SgdState) -> None:
    """One in-place step: ``v <- momentum v + g``, ``theta <- theta - lr v``."""
    params = model.params()
    active = set(params if cfg.scope == "all" else model.head_param_names())
    for name, p in params.items():
        g = grads[name]
        v = state.velocities.get(name)
        if v is None:
            v = np.zeros_like(p)
            state.velocities[name] = v
        v *= cfg.momentum
        v += g
        if name in active:
            p -= cfg.lr * v


class CrossEntropyPlugin:
    """Supervised loss on fixed targets; plumbing for oracles and tests."""

    def __init__(self, targets):
        self.targets = np.asarray(targets, dtype=np.int64)

    def batch_eval(self, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if Z.shape[0] != self.targets.shape[0]:
            raise ValueError("batch size does not match the stored targets")
        return _ce_rows(Z, self.targets)


class EmPlugin:
    """Classical entropy minimization."""

    def __init__(self, direction: str = "minimize"):
        self.direction = direction

    def batch_eval(self, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _em.em_rows(Z, self.direction)


class DemPlugin:
    """Decoupled EM at a fixed (tau, alpha)."""

    def __init__(self, cfg: _em.DemConfig):
        if not _em.validate_config(cfg.tau, cfg.alpha):
            raise _em.ConfigError(f"invalid config tau={cfg.tau}, alpha={cfg.alpha}")
        self.cfg = cfg

    def batch_eval(self, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return _em.dem_rows(Z, self.cfg)


class AdaDemPlugin:
    """AdaDEM; owns a MecState threaded across every batch it sees."""

    def __init__(
        self,
        variant: _adadem.AdaDemVariant = _adadem.AdaDemVariant(),
        pi: float = 0.1,
        direction: str = "minimize",
        state: _adadem.MecState | None = None,
    ):
        self.variant = variant
        self.pi = pi
        self.direction = direction
        self.state = state

    def batch_eval(self, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.state is None:
            self.state = _adadem.mec_init(Z.shape[1], pi=self.pi)
        return _adadem.adadem_rows(Z, self.state, self.variant, self.direction)


def param_distance(a, b) -> float:
    """Euclidean distance between two models' stacked parameters."""
    pa, pb = a.params(), b.params()
    return float(
        np.sqrt(sum(float(np.sum((pa[k] - pb[k]) ** 2)) for k in pa))
    )


def train_source(model, X, y, epochs: int, cfg: SgdConfig, rng, batch_size: int = 64):
    """Mini-batch supervised training on labeled data; returns the model.

    Shuffles with the supplied generator each epoch, so a fixed seed
    yields bit-identical parameters.  ``epochs = 0`` leaves the model
    unchanged.
    """
    X = as_matrix(X)
    y = np.asarray(y, dtype=np.int64)
    n = X.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    state = SgdState()
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            Z = forward(model, X[idx])
            _, dlogits = _ce_rows(Z, y[idx])
            grads = backward(model, X[idx], dlogits)
            sgd_step(model, grads, cfg, state)
    return model


def adapt_stream(model, batches, plugin, cfg: SgdConfig):
    """Online adaptation: predict, record, update, repeat.

    ``batches`` yields ``(X, y)`` pairs; labels feed metrics only, never
    the loss.  Returns ``(model, trace)`` where each trace entry (one
    per batch) records the pre-update predictions: hit count, prediction
    sums (for marginals), argmax counts, mean loss, mean max probability,
    and the parameter movement caused by the update.
    """
    state = SgdState()
    trace = []
    for X, y in batches:
        Z = forward(model, X)
        P = softmax_rows(Z)
        preds = np.argmax(P, axis=1)
        values, dlogits = plugin.batch_eval(Z)
        before = copy.deepcopy(model)
        grads = backward(model, X, dlogits)
        sgd_step(model, grads, cfg, state)
        trace.append(
            {
                "n": int(X.shape[0]),
                "hits": int(np.sum(preds == np.asarray(y))),
                "pred_sum": P.sum(axis=0),
                "argmax_counts": np.bincount(preds, minlength=Z.shape[1]),
                "probs": P,
                "labels": np.asarray(y, dtype=np.int64),
                "mean_loss": float(np.mean(values)),
                "avg_max_prob": float(np.mean(np.max(P, axis=1))),
                "movement": param_distance(model, before),
            }
        )
    return model, trace
