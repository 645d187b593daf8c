"""AdaDEM: self-normalized entropy minimization with a marginal calibrator.

AdaDEM removes the two hyperparameters of the decoupled loss by

* dividing each sample's gradient by ``delta``, the norm of that sample's
  CADF reward vector, which keeps the update magnitude alive even where
  the classical EM reward collapses (confident predictions), and
* replacing the GMC penalty with the MEC (marginal entropy calibrator):
  a per-pseudo-class exponential moving average of past predictions that
  penalizes classes in proportion to how strongly they have recently
  dominated, counteracting drift toward dominant and easy classes.

The loss for one sample with logits ``z``, probabilities ``p`` and
pseudo-label ``k = argmax p`` is

    L(z) = -(1/delta) * sum_i (p_i - c_i) z_i

where ``c`` is row ``k`` of the calibrator table (scaled by
``mec_alpha``), and both ``c`` and ``delta`` are treated as constants
under differentiation.  Variants: ``norm_only`` replaces ``c`` by a
constant copy of ``p`` (pure rescaling, exactly the classical EM gradient
divided by ``delta``); ``mec_only`` fixes ``delta = 1``.

State updates happen before the loss is evaluated on a batch, so the
calibrator always reflects the batch it is about to judge.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .em_losses import LossEval, _sign
from .numkit import as_vector, softmax, softmax_rows

__all__ = [
    "MecState",
    "AdaDemVariant",
    "NORM_KINDS",
    "DELTA_SOURCES",
    "VARIANT_KINDS",
    "delta",
    "mec_init",
    "mec_update",
    "pseudo_label",
    "adadem_eval",
    "adadem_rows",
    "DELTA_FLOOR",
]

NORM_KINDS = ("L1", "L2", "Linf")
DELTA_SOURCES = ("cadf", "full_entropy")
VARIANT_KINDS = ("full", "norm_only", "mec_only")

# Lower clamp applied before dividing by delta.  The full-entropy source
# vanishes at exactly uniform logits; the clamp turns that into a finite
# (if large) gradient instead of an Inf.
DELTA_FLOOR = 1e-8


@dataclass
class MecState:
    """Per-pseudo-class EMA of prediction vectors.

    ``table`` is C x C; row k is the running average of softmax outputs
    over samples pseudo-labeled k, updated with momentum ``pi`` (new
    observations weighted ``pi``, history ``1 - pi``).  Rows start at the
    uniform distribution and remain on the simplex because every update
    is a convex combination of simplex vectors.
    """

    table: np.ndarray
    pi: float = 0.1
    steps: int = 0

    @property
    def C(self) -> int:
        return self.table.shape[0]

    def copy(self) -> "MecState":
        return MecState(self.table.copy(), self.pi, self.steps)

    def reset(self) -> None:
        """Return every row to the uniform distribution (episodic restart)."""
        self.table[:] = 1.0 / self.C
        self.steps = 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "C": self.C,
                "pi": self.pi,
                "steps": self.steps,
                "table": [float(x) for x in self.table.ravel()],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "MecState":
        obj = json.loads(text)
        C = int(obj["C"])
        table = np.asarray(obj["table"], dtype=np.float64).reshape(C, C)
        return cls(table, float(obj["pi"]), int(obj["steps"]))


@dataclass(frozen=True)
class AdaDemVariant:
    """Which pieces of AdaDEM are active.

    ``kind``: "full" (delta scaling and MEC), "norm_only" (delta scaling
    with the calibrator replaced by a constant copy of p) or "mec_only"
    (MEC with delta fixed to 1).  ``mec_alpha`` scales the calibrator row;
    ``delta_source`` picks the reward vector whose ``norm``-norm defines
    delta ("cadf" is the default; "full_entropy" is the ablation that
    uses the classical EM gradient instead).
    """

    kind: str = "full"
    mec_alpha: float = 1.0
    delta_source: str = "cadf"
    norm: str = "L1"

    def __post_init__(self):
        if self.kind not in VARIANT_KINDS:
            raise ValueError(f"unknown variant kind {self.kind!r}")
        if self.delta_source not in DELTA_SOURCES:
            raise ValueError(f"unknown delta source {self.delta_source!r}")
        if self.norm not in NORM_KINDS:
            raise ValueError(f"unknown norm {self.norm!r}")
        if self.mec_alpha < 0:
            raise ValueError(f"mec_alpha must be non-negative, got {self.mec_alpha}")


def _reward_vector(z: np.ndarray, source: str) -> np.ndarray:
    p = softmax(z)
    s = float(np.dot(p, z))
    if source == "cadf":
        return p * (z + 1.0 - s)
    if source == "full_entropy":
        return p * (z - s)
    raise ValueError(f"unknown delta source {source!r}")


def delta(z, kind: str = "L1", source: str = "cadf") -> float:
    """Norm of a sample's reward vector, the AdaDEM gradient scale.

    The L1 norm is accumulated with ``math.fsum`` so that the uniform-
    logits case comes out as exactly 1.0 whenever the rounding of 1/C
    permits it.  The returned value is not clamped; callers dividing by
    it apply ``DELTA_FLOOR``.
    """
    if kind not in NORM_KINDS:
        raise ValueError(f"unknown norm {kind!r}")
    r = _reward_vector(as_vector(z, min_len=2), source)
    if kind == "L1":
        return math.fsum(abs(x) for x in r.tolist())
    if kind == "L2":
        return math.sqrt(math.fsum(x * x for x in r.tolist()))
    return float(np.max(np.abs(r)))


def mec_init(C: int, pi: float = 0.1) -> MecState:
    """Fresh calibrator: a C x C table with every entry 1/C."""
    if C < 2:
        raise ValueError(f"need at least two classes, got {C}")
    if not 0.0 < pi <= 1.0:
        raise ValueError(f"momentum pi must lie in (0, 1], got {pi}")
    return MecState(np.full((C, C), 1.0 / C), pi=pi, steps=0)


def mec_update(state: MecState, probs, pseudo_labels) -> MecState:
    """One EMA step: each class present in the batch pulls its row
    toward the mean prediction of its samples; absent classes keep their
    rows.  Mutates ``state`` in place and returns it.
    """
    P = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    labels = np.asarray(pseudo_labels, dtype=np.int64).ravel()
    if P.shape[0] != labels.shape[0]:
        raise ValueError("probs and pseudo_labels disagree on batch size")
    if P.shape[1] != state.C:
        raise ValueError(f"expected {state.C} classes, got {P.shape[1]}")
    if labels.size and (labels.min() < 0 or labels.max() >= state.C):
        raise ValueError("pseudo-label out of range")
    for k in np.unique(labels):
        mean_k = P[labels == k].mean(axis=0)
        state.table[k] = (1.0 - state.pi) * state.table[k] + state.pi * mean_k
    state.steps += 1
    return state


def pseudo_label(p) -> int:
    """Argmax class of a probability vector; ties go to the lowest index."""
    return int(np.argmax(as_vector(p)))


def _deltas_rows(Z: np.ndarray, P: np.ndarray, variant: AdaDemVariant) -> np.ndarray:
    """Per-row delta values, matching the scalar ``delta`` bit for bit."""
    n = Z.shape[0]
    if variant.kind == "mec_only":
        return np.ones(n)
    S = np.sum(P * Z, axis=1, keepdims=True)
    if variant.delta_source == "cadf":
        R = P * (Z + 1.0 - S)
    else:
        R = P * (Z - S)
    if variant.norm == "L1":
        A = np.abs(R)
        out = np.fromiter(
            (math.fsum(A[i].tolist()) for i in range(n)), dtype=np.float64, count=n
        )
    elif variant.norm == "L2":
        out = np.fromiter(
            (math.sqrt(math.fsum((R[i] * R[i]).tolist())) for i in range(n)),
            dtype=np.float64,
            count=n,
        )
    else:
        out = np.max(np.abs(R), axis=1)
    return out


def adadem_rows(
    Z: np.ndarray,
    state: MecState,
    variant: AdaDemVariant = AdaDemVariant(),
    direction: str = "minimize",
) -> tuple[np.ndarray, np.ndarray]:
    """Batched AdaDEM: updates ``state``, returns per-row values and grads.

    Ordering contract: the calibrator absorbs this batch first, then the
    loss is evaluated against the updated rows.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Z.shape[1] != state.C:
        raise ValueError(f"expected {state.C} classes, got {Z.shape[1]}")
    sign = _sign(direction)
    P = softmax_rows(Z)
    labels = np.argmax(P, axis=1)
    mec_update(state, P, labels)

    if variant.kind == "norm_only":
        Cmat = P
    else:
        Cmat = variant.mec_alpha * state.table[labels]
    d = np.maximum(_deltas_rows(Z, P, variant), DELTA_FLOOR)[:, None]
    S = np.sum(P * Z, axis=1, keepdims=True)
    values = -np.sum((P - Cmat) * Z, axis=1, keepdims=True) / d
    grads = -(P * (Z + 1.0 - S) - Cmat) / d
    return sign * values[:, 0], sign * grads


def adadem_eval(
    z_batch,
    state: MecState,
    variant: AdaDemVariant = AdaDemVariant(),
    direction: str = "minimize",
) -> list[LossEval]:
    """Per-sample AdaDEM evaluations for a batch of logit vectors.

    Accepts a list of vectors or an ``n x C`` matrix; updates ``state``
    (one EMA step for the whole batch) before evaluating, and treats the
    calibrator rows and delta as constants in the gradients.
    """
    Z = np.asarray(
        [as_vector(z, min_len=2) for z in z_batch]
        if not isinstance(z_batch, np.ndarray)
        else z_batch,
        dtype=np.float64,
    )
    Z = np.atleast_2d(Z)
    values, grads = adadem_rows(Z, state, variant, direction)
    return [LossEval(float(v), g) for v, g in zip(values, grads.copy())]
