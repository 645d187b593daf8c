"""Learning-rate robustness of EM versus AdaDEM on the rotation task.

Sweeps a log-spaced learning-rate grid for both losses on the default
single-domain stream (three repeats of a 0.5 rad rotation) and counts,
per seed, how many rates keep online accuracy at or above the no-adapt
baseline.  A wider tolerated band means less tuning risk.

Run:
    python3 scripts/lr_robustness.py --seeds 3 --out lr_robustness.csv
"""

import argparse
import csv
import statistics

from demkit.bench import (
    default_mixture,
    default_single_domain,
    make_stream,
    run_protocol,
    sample_batch,
)
from demkit.model import AdaDemPlugin, EmPlugin, SgdConfig, init_mlp, train_source
from demkit.numkit import Rng
from demkit.search import DEFAULT_LR_GRID, lr_sweep

MOMENTUM = 0.9


def prepared(seed: int):
    """Source model plus stream data for one seed, the standard recipe."""
    mix = default_mixture()
    rng = Rng(seed)
    X, y = sample_batch(mix, mix.priors, 5000, rng.derive("source-data"))
    model = init_mlp(mix.C, mix.d, 32, rng.derive("source-init"), 0.5)
    train_source(model, X, y, 300, SgdConfig(0.05, 0.9), rng.derive("source-train"), 64)
    spec = default_single_domain()
    data = make_stream(mix, spec, Rng(seed).derive("stream"))
    return model, data


def sweep(model, data, factory):
    def protocol(lr: float) -> float:
        cfg = SgdConfig(lr=lr, momentum=MOMENTUM)
        return run_protocol(model, data, "single_domain", factory, cfg).overall.accuracy

    return lr_sweep(protocol, DEFAULT_LR_GRID)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--out", default=None, help="optional CSV path")
    args = ap.parse_args()

    factories = {"em": lambda: EmPlugin(), "adadem": lambda: AdaDemPlugin()}
    rows = []
    counts = {name: [] for name in factories}
    print(f"{'seed':>4} {'loss':>7} {'baseline':>9} {'best acc':>9} {'tolerated':>10}")
    for seed in range(args.seeds):
        model, data = prepared(seed)
        for name, factory in factories.items():
            res = sweep(model, data, factory)
            counts[name].append(res.tolerance_count)
            finite = [acc for _, acc in res.rows if acc == acc]
            best = max(finite) if finite else float("nan")
            print(
                f"{seed:>4} {name:>7} {res.baseline:>9.4f} "
                f"{best:>9.4f} {res.tolerance_count:>10}"
            )
            for lr, acc in res.rows:
                rows.append([seed, name, f"{lr:g}", f"{acc:.6f}"])

    for name in factories:
        print(f"median tolerated rates, {name}: {statistics.median(counts[name])}")

    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["seed", "loss", "lr", "accuracy"])
            w.writerows(rows)
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
