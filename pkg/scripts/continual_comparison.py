"""EM, tuned DEM, and AdaDEM on the continual rotation ladder.

The continual task chains three rotations of growing angle with no
reset between them, so early mistakes compound.  Per seed this script
reports the best learning rate and accuracy for EM and AdaDEM, and for
DEM it first grid-searches (tau, alpha) on a leading subset of each
shift's batches at a fixed rate, then scores the winner on the full
stream next to the classical point tau = alpha = 1.

Run:
    python3 scripts/continual_comparison.py --seeds 3
"""

import argparse
import statistics

from demkit.bench import (
    default_continual,
    default_mixture,
    make_stream,
    run_protocol,
    sample_batch,
)
from demkit.em_losses import DemConfig
from demkit.model import (
    AdaDemPlugin,
    DemPlugin,
    EmPlugin,
    SgdConfig,
    init_mlp,
    train_source,
)
from demkit.numkit import Rng
from demkit.search import DEFAULT_LR_GRID, GridSpec, grid_search, lr_sweep

MOMENTUM = 0.9
GRID_LR = 1e-3
SUBSET_FRACTION = 0.2


def prepared(seed: int):
    mix = default_mixture()
    rng = Rng(seed)
    X, y = sample_batch(mix, mix.priors, 5000, rng.derive("source-data"))
    model = init_mlp(mix.C, mix.d, 32, rng.derive("source-init"), 0.5)
    train_source(model, X, y, 300, SgdConfig(0.05, 0.9), rng.derive("source-train"), 64)
    data = make_stream(mix, default_continual(), Rng(seed).derive("stream"))
    return model, data


def best_lr(model, data, factory):
    def protocol(lr: float) -> float:
        cfg = SgdConfig(lr=lr, momentum=MOMENTUM)
        return run_protocol(model, data, "continual", factory, cfg).overall.accuracy

    res = lr_sweep(protocol, DEFAULT_LR_GRID)
    finite = [row for row in res.rows if row[1] == row[1]]
    lr, acc = max(finite, key=lambda row: row[1])
    return lr, acc


def dem_accuracy(model, data, tau: float, alpha: float) -> float:
    cfg = SgdConfig(lr=GRID_LR, momentum=MOMENTUM)
    factory = lambda: DemPlugin(DemConfig(tau, alpha))
    return run_protocol(model, data, "continual", factory, cfg).overall.accuracy


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args()

    em_accs, ada_accs, dem_accs = [], [], []
    for seed in range(args.seeds):
        model, data = prepared(seed)
        k = max(1, round(len(data[0]) * SUBSET_FRACTION))
        subset = [batches[:k] for batches in data]

        lr_em, acc_em = best_lr(model, data, lambda: EmPlugin())
        lr_ada, acc_ada = best_lr(model, data, lambda: AdaDemPlugin())
        best, _ = grid_search(
            lambda t, a: dem_accuracy(model, subset, t, a), GridSpec()
        )
        acc_dem = dem_accuracy(model, data, best.tau, best.alpha)
        acc_classical = dem_accuracy(model, data, 1.0, 1.0)

        em_accs.append(acc_em)
        ada_accs.append(acc_ada)
        dem_accs.append(acc_dem)
        print(
            f"seed {seed}: em {acc_em:.4f} (lr {lr_em:g}), "
            f"adadem {acc_ada:.4f} (lr {lr_ada:g}), "
            f"dem* {acc_dem:.4f} (tau {best.tau:g}, alpha {best.alpha:g}, "
            f"lr {GRID_LR:g}), classical {acc_classical:.4f}"
        )

    print(
        f"medians: em {statistics.median(em_accs):.4f}, "
        f"adadem {statistics.median(ada_accs):.4f}, "
        f"dem* {statistics.median(dem_accs):.4f}"
    )


if __name__ == "__main__":
    main()
