"""Hyperparameter search: the (tau, alpha) grid and the lr sensitivity sweep.

``grid_search`` exhaustively scores every valid point of a rectangular
(tau, alpha) grid.  Validity gating is exactly ``validate_config``: the
tau = 0 row is excluded, alpha = 0 is admitted with any positive tau, and
alpha > 0 requires tau <= 2/alpha.  The default grid spans 0.0-2.0 at
step 0.1 on both axes and always contains the classical point
(1.0, 1.0), so the best found score can never fall below classical EM's
on the scoring data.

``lr_sweep`` runs one protocol per learning rate and reports the
tolerance count: how many rates end at or above the no-adapt baseline.
Both helpers accept a thread count (default: the DEMKIT_THREADS
environment variable) and assemble results in grid order regardless of
completion order, so output is deterministic.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .em_losses import ConfigError, validate_config

__all__ = [
    "GridSpec",
    "TrialResult",
    "LrSweepResult",
    "DEFAULT_LR_GRID",
    "grid_points",
    "grid_search",
    "lr_sweep",
]

DEFAULT_LR_GRID = (1e-4, 2.5e-4, 5e-4, 1e-3, 2.5e-3, 5e-3, 1e-2, 2.5e-2, 5e-2, 1e-1)


@dataclass(frozen=True)
class GridSpec:
    """Rectangular search grid and the labeled-subset fraction for scoring."""

    tau_min: float = 0.0
    tau_max: float = 2.0
    alpha_min: float = 0.0
    alpha_max: float = 2.0
    step: float = 0.1
    subset_fraction: float = 0.2

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError(f"step must be positive, got {self.step}")
        if not 0.0 < self.subset_fraction <= 1.0:
            raise ValueError(
                f"subset_fraction must lie in (0, 1], got {self.subset_fraction}"
            )
        if self.tau_max < self.tau_min or self.alpha_max < self.alpha_min:
            raise ValueError("grid bounds are inverted")

    def axis(self, lo: float, hi: float) -> np.ndarray:
        n = int(round((hi - lo) / self.step))
        return np.round(lo + self.step * np.arange(n + 1), 12)


@dataclass
class TrialResult:
    """One grid point; invalid points carry no accuracy."""

    tau: float
    alpha: float
    valid: bool
    accuracy: float | None


@dataclass
class LrSweepResult:
    """Sweep table plus the no-adapt baseline and the tolerance count."""

    rows: list
    baseline: float
    tolerance_count: int


def _threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("DEMKIT_THREADS", "1"))
    return max(1, threads)


def grid_points(grid: GridSpec):
    """All (tau, alpha, valid) triples of the grid, in row-major order.

    tau = 0 rows are dropped outright (no temperature to evaluate);
    remaining validity is decided by ``validate_config`` alone.
    """
    points = []
    for tau in grid.axis(grid.tau_min, grid.tau_max):
        if tau <= 0.0:
            continue
        for alpha in grid.axis(grid.alpha_min, grid.alpha_max):
            points.append((float(tau), float(alpha), validate_config(tau, alpha)))
    return points


def grid_search(protocol, grid: GridSpec = GridSpec(), threads: int | None = None):
    """Score every valid grid point with ``protocol(tau, alpha)``.

    Returns ``(best, table)`` where the table lists every point
    (including invalid ones, unscored) in grid order.  Ties on accuracy
    prefer the point closest to classical EM: smallest ``|tau - 1|``,
    then smallest ``|alpha - 1|``, then grid order.
    """
    points = grid_points(grid)
    valid = [(t, a) for t, a, ok in points if ok]
    if not valid:
        raise ConfigError("the grid contains no valid (tau, alpha) points")

    workers = _threads(threads)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(lambda p: float(protocol(*p)), valid))
    else:
        scores = [float(protocol(t, a)) for t, a in valid]

    by_pair = dict(zip(valid, scores))
    table = [
        TrialResult(t, a, ok, by_pair.get((t, a)) if ok else None)
        for t, a, ok in points
    ]
    best = max(
        (r for r in table if r.valid),
        key=lambda r: (r.accuracy, -abs(r.tau - 1.0), -abs(r.alpha - 1.0)),
    )
    return best, table


def lr_sweep(protocol, lrs=DEFAULT_LR_GRID, threads: int | None = None) -> LrSweepResult:
    """Run ``protocol(lr)`` per rate; count rates at or above the baseline.

    The baseline is the protocol at lr = 0 (no parameter movement), so
    the count answers: at how many of these rates does adapting not hurt?
    """
    lrs = list(lrs)
    if not lrs:
        raise ValueError("need at least one learning rate")
    if any(lr < 0 for lr in lrs):
        raise ValueError("learning rates must be non-negative")
    baseline = float(protocol(0.0))

    workers = _threads(threads)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            accs = list(pool.map(lambda lr: float(protocol(lr)), lrs))
    else:
        accs = [float(protocol(lr)) for lr in lrs]

    rows = list(zip(lrs, accs))
    count = sum(1 for _, acc in rows if acc >= baseline)
    return LrSweepResult(rows=rows, baseline=baseline, tolerance_count=count)
