"""Entropy-minimization loss family with exact analytic gradients.

The classical entropy-minimization (EM) objective is the Shannon entropy
of the softmax prediction,

    H(z) = -sum_i p_i(z) log p_i(z),    p = softmax(z).

It decomposes exactly into two parts with opposite roles,

    H(z) = T(z) + Q(z),
    T(z) = -sum_i p_i z_i   (CADF, cluster aggregation driving factor),
    Q(z) = logsumexp(z)     (GMC, gradient mitigation calibrator),

and the whole family implemented here is built from them:

* ``em_eval``            - classical EM, value and gradient,
* ``detached_em_eval``   - gradient-equivalent surrogate whose value is 0,
* ``cadf_tempered_eval`` - CADF at temperature tau,
* ``dem_eval``           - decoupled EM, ``T_tau + alpha * Q``,
* ``reward_curve``       - the one-hot-direction reward profile of a config.

The *reward* of class i is the negative partial derivative of the loss
with respect to logit i; positive rewards drive that logit up under
gradient descent.  ``validate_config`` and ``boundary_second_derivative``
implement the validity region of the (tau, alpha) plane: for alpha > 0
the decoupled loss keeps the argmax direction locally rewarded only while
tau <= 2/alpha.

Every gradient here is hand-derived and exact; the test suite checks each
one against a central finite-difference oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numkit import as_vector, logsumexp, logsumexp_rows, softmax, softmax_rows

__all__ = [
    "LossEval",
    "DemConfig",
    "ConfigError",
    "conditional_entropy",
    "cadf",
    "gmc",
    "cadf_reward",
    "gmc_reward",
    "em_eval",
    "detached_em_eval",
    "cadf_tempered_eval",
    "dem_eval",
    "validate_config",
    "boundary_second_derivative",
    "reward_curve",
    "REWARD_CURVE_HEADER",
    "em_rows",
    "dem_rows",
]

VALIDITY_SLACK = 1e-12

REWARD_CURVE_HEADER = "m,p_max,reward"


@dataclass
class LossEval:
    """A scalar loss value together with its gradient w.r.t. the logits."""

    value: float
    grad: np.ndarray


class ConfigError(ValueError):
    """Raised when a (tau, alpha) pair violates the validity region."""


@dataclass(frozen=True)
class DemConfig:
    """Decoupled-EM configuration: temperature, GMC weight, direction.

    ``alpha = 0`` (pure tempered CADF) is always admitted; for
    ``alpha > 0`` the pair must satisfy ``tau <= 2/alpha``.
    ``direction = "maximize"`` flips the sign of value and gradient,
    turning the minimizer into an entropy-maximization objective.
    """

    tau: float
    alpha: float
    direction: str = "minimize"

    def __post_init__(self):
        if self.direction not in ("minimize", "maximize"):
            raise ValueError(f"unknown direction {self.direction!r}")


def _logits(z) -> np.ndarray:
    return as_vector(z, min_len=2)


def _sign(direction: str) -> float:
    if direction == "minimize":
        return 1.0
    if direction == "maximize":
        return -1.0
    raise ValueError(f"unknown direction {direction!r}")


def conditional_entropy(z) -> float:
    """Shannon entropy of softmax(z), computed from log-probabilities.

    Working with ``logp = z - logsumexp(z)`` instead of ``p * log(p)``
    keeps extreme logits from producing ``0 * -inf``.
    """
    z = _logits(z)
    logp = z - logsumexp(z)
    return float(-np.sum(np.exp(logp) * logp))


def cadf(z) -> float:
    """Cluster aggregation driving factor ``T(z) = -sum_i p_i z_i``."""
    z = _logits(z)
    return float(-np.dot(softmax(z), z))


def gmc(z) -> float:
    """Gradient mitigation calibrator ``Q(z) = logsumexp(z)``."""
    return logsumexp(_logits(z))


def cadf_reward(z) -> np.ndarray:
    """Per-class reward of the CADF term, ``p_i (T + z_i + 1)``."""
    z = _logits(z)
    p = softmax(z)
    t = -np.dot(p, z)
    return p * (t + z + 1.0)


def gmc_reward(z) -> np.ndarray:
    """Per-class reward of the GMC term, ``-p_i`` (a uniform penalty)."""
    return -softmax(_logits(z))


def em_eval(z, direction: str = "minimize") -> LossEval:
    """Classical EM: value ``H(z)``, gradient ``-p_i (T + z_i)``."""
    z = _logits(z)
    sign = _sign(direction)
    p = softmax(z)
    t = -np.dot(p, z)
    grad = -p * (t + z)
    return LossEval(sign * conditional_entropy(z), sign * grad)


def detached_em_eval(z, direction: str = "minimize") -> LossEval:
    """Surrogate ``-sum_i (p_i - const(p_i)) z_i``.

    The constant copy cancels at the evaluation point, so the value is
    exactly 0 while the gradient equals the classical EM gradient.
    """
    z = _logits(z)
    return LossEval(0.0, em_eval(z, direction).grad)


def cadf_tempered_eval(z, tau: float, direction: str = "minimize") -> LossEval:
    """Tempered CADF: value ``-sum_i p_{tau,i} z_i``.

    The gradient is ``-(1/tau) p_{tau,i} (T_tau + z_i + tau)`` where
    ``p_tau = softmax(z / tau)``; at ``tau = 1`` this reduces to the
    negated CADF reward.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z = _logits(z)
    sign = _sign(direction)
    p_tau = softmax(z / tau)
    t_tau = -np.dot(p_tau, z)
    grad = -(p_tau / tau) * (t_tau + z + tau)
    return LossEval(sign * t_tau, sign * grad)


def validate_config(tau: float, alpha: float) -> bool:
    """Whether (tau, alpha) lies in the valid region.

    True iff ``tau > 0`` and either ``alpha = 0`` (the pure-CADF
    ablation, always admitted) or ``tau <= 2/alpha`` with a 1e-12 slack
    so grids that land exactly on the boundary are kept.
    """
    if tau <= 0:
        return False
    if alpha == 0:
        return True
    return tau <= 2.0 / alpha + VALIDITY_SLACK


def boundary_second_derivative(tau: float, alpha: float, C: int) -> float:
    """Curvature of the decoupled loss along a logit at the uniform point.

    Returns ``(1 - 1/C) (alpha/C - 2/(tau C))``, which is non-positive
    exactly on the valid side ``tau <= 2/alpha``: negative curvature at
    the uniform point means a unique argmax stays locally rewarded.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if C < 2:
        raise ValueError(f"need at least two classes, got {C}")
    return (1.0 - 1.0 / C) * (alpha / C - 2.0 / (tau * C))


def dem_eval(z, cfg: DemConfig) -> LossEval:
    """Decoupled EM: ``T_tau(z) + alpha * Q(z)``.

    At ``(tau=1, alpha=1)`` this is classical EM exactly.  Invalid
    configurations raise ``ConfigError`` naming the violated bound.
    """
    if not validate_config(cfg.tau, cfg.alpha):
        raise ConfigError(
            f"invalid config tau={cfg.tau}, alpha={cfg.alpha}: requires "
            f"tau > 0 and, for alpha > 0, tau <= 2/alpha = {2.0 / cfg.alpha if cfg.alpha else float('inf'):.6g}"
        )
    z = _logits(z)
    sign = _sign(cfg.direction)
    base = cadf_tempered_eval(z, cfg.tau)
    value = base.value + cfg.alpha * gmc(z)
    grad = base.grad + cfg.alpha * softmax(z)
    return LossEval(sign * value, sign * grad)


def reward_curve(C: int, cfg: DemConfig, m_grid) -> list[tuple[float, float, float]]:
    """Reward of the leading class along the one-hot logit direction.

    For each margin ``m`` in ``m_grid`` the logits are
    ``z = (m, 0, ..., 0)`` with ``C`` entries; the row reports
    ``(m, p_max, reward)`` where ``p_max = softmax(z)_1`` and the reward
    is the negative gradient of the configured loss at that coordinate.
    Scanning m from below 0 to large values traces how the loss treats
    samples from maximally uncertain to fully confident.
    """
    if C < 2:
        raise ValueError(f"need at least two classes, got {C}")
    rows = []
    for m in m_grid:
        z = np.zeros(C)
        z[0] = float(m)
        p_max = float(softmax(z)[0])
        reward = -float(dem_eval(z, cfg).grad[0])
        rows.append((float(m), p_max, reward))
    return rows


def em_rows(Z: np.ndarray, direction: str = "minimize") -> tuple[np.ndarray, np.ndarray]:
    """Batched classical EM: per-row values and gradients for ``n x C`` logits."""
    sign = _sign(direction)
    lse = logsumexp_rows(Z)
    logp = Z - lse[:, None]
    P = np.exp(logp)
    values = -np.sum(P * logp, axis=1)
    S = np.sum(P * Z, axis=1, keepdims=True)
    grads = -P * (Z - S)
    return sign * values, sign * grads


def dem_rows(Z: np.ndarray, cfg: DemConfig) -> tuple[np.ndarray, np.ndarray]:
    """Batched decoupled EM: per-row values and gradients."""
    if not validate_config(cfg.tau, cfg.alpha):
        raise ConfigError(f"invalid config tau={cfg.tau}, alpha={cfg.alpha}")
    sign = _sign(cfg.direction)
    P_tau = softmax_rows(Z / cfg.tau)
    S_tau = np.sum(P_tau * Z, axis=1, keepdims=True)
    values = -S_tau[:, 0] + cfg.alpha * logsumexp_rows(Z)
    grads = -(P_tau / cfg.tau) * (Z - S_tau + cfg.tau) + cfg.alpha * softmax_rows(Z)
    return sign * values, sign * grads
