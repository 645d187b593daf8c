"""Command-line interface.

Subcommands:

* ``reward-curve``  - write the (m, p_max, reward) profile of a config,
* ``gradcheck``     - run the analytic-vs-finite-difference oracle suite,
* ``run``           - one adaptation experiment from a JSON config,
* ``grid-search``   - exhaustive (tau, alpha) search from a JSON config,
* ``lr-sweep``      - learning-rate sensitivity sweep from a JSON config.

Exit codes: 0 success, 2 invalid hyperparameters (the (tau, alpha)
validity region), 3 numeric or assertion failure, 64 usage or schema
error.  All floats are printed with 9 significant digits and files are
written atomically, so re-running a command with the same config yields
byte-identical outputs.  ``DEMKIT_THREADS`` caps internal parallelism.

Configs are JSON objects validated against a strict schema (unknown keys
are rejected); every section is optional and falls back to the default
experiment.  The ``loss`` section admits the unsupervised family only
(em, dem, adadem) - the adaptation loop never sees labels, which flow
exclusively to metrics and, for grid search scoring, to the held subset.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
import tempfile

import numpy as np
from jsonschema import Draft202012Validator

from . import adadem as _ad
from . import bench as _bench
from . import em_losses as _em
from . import model as _model
from . import search as _search
from .numkit import Rng, finite_diff_grad, rel_err, softmax, softmax_rows

EXIT_OK = 0
EXIT_BAD_HYPERPARAMS = 2
EXIT_NUMERIC = 3
EXIT_USAGE = 64

GRADCHECK_TOLERANCE = 1e-5


def fmt9(x: float) -> str:
    """Canonical float rendering: 9 significant digits, no negative zero."""
    x = float(x)
    if x == 0.0:
        x = 0.0
    return f"{x:.9g}"


def jround(x: float) -> float:
    """Round-trip a float through the canonical rendering for JSON."""
    return float(fmt9(x))


def write_text_atomic(path: str, text: str) -> None:
    """Write via a temp file and rename, so rerun outputs swap atomically."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: str, header: str, rows) -> None:
    lines = [header]
    for row in rows:
        lines.append(",".join(row))
    write_text_atomic(path, "\n".join(lines) + "\n")


def write_json(path: str, obj) -> None:
    write_text_atomic(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def vec9(v) -> str:
    """Semicolon-joined vector cell for CSV rows."""
    return ";".join(fmt9(x) for x in v)


# --------------------------------------------------------------------------
# Config schema and defaults
# --------------------------------------------------------------------------

_NUM = {"type": "number"}
_POSINT = {"type": "integer", "minimum": 1}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "output_dir": {"type": "string", "minLength": 1},
        "mixture": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "C": {"type": "integer", "minimum": 2},
                "d": {"type": "integer", "minimum": 1},
                "radius": {"type": "number", "exclusiveMinimum": 0},
                "sigma": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "source": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "arch": {"enum": ["linear", "mlp"]},
                "hidden": _POSINT,
                "epochs": {"type": "integer", "minimum": 0},
                "n": _POSINT,
                "lr": {"type": "number", "minimum": 0},
                "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "batch_size": _POSINT,
                "init_scale": {"type": "number", "minimum": 0},
            },
        },
        "stream": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["single_domain", "continual"]},
                "shifts": {
                    "type": "array",
                    "minItems": 1,
                    "items": {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["kind"],
                        "properties": {
                            "kind": {"enum": list(_bench.SHIFT_KINDS)},
                            "magnitude": _NUM,
                            "level": {"type": "integer", "minimum": 1, "maximum": 5},
                        },
                    },
                },
                "batches_per_shift": _POSINT,
                "batch_size": _POSINT,
                "label_rho": {"type": "number", "minimum": 1},
                "label_priors": {
                    "type": "array",
                    "minItems": 2,
                    "items": {"type": "number", "minimum": 0},
                },
            },
        },
        "optimizer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lr": {"type": "number", "minimum": 0},
                "momentum": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "scope": {"enum": ["all", "head"]},
            },
        },
        "loss": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "name": {"enum": ["em", "dem", "adadem"]},
                "tau": {"type": "number"},
                "alpha": {"type": "number", "minimum": 0},
                "variant": {"enum": list(_ad.VARIANT_KINDS)},
                "norm": {"enum": list(_ad.NORM_KINDS)},
                "pi": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "mec_alpha": {"type": "number", "minimum": 0},
                "delta_source": {"enum": list(_ad.DELTA_SOURCES)},
                "direction": {"enum": ["minimize", "maximize"]},
            },
        },
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tau_min": {"type": "number", "minimum": 0},
                "tau_max": {"type": "number", "minimum": 0},
                "alpha_min": {"type": "number", "minimum": 0},
                "alpha_max": {"type": "number", "minimum": 0},
                "step": {"type": "number", "exclusiveMinimum": 0},
                "subset_fraction": {
                    "type": "number",
                    "exclusiveMinimum": 0,
                    "maximum": 1,
                },
            },
        },
        "lrs": {
            "type": "array",
            "minItems": 1,
            "items": {"type": "number", "minimum": 0},
        },
    },
}

DEFAULT_CONFIG = {
    "seed": 0,
    "output_dir": "demkit-out",
    "mixture": {"C": 10, "d": 2, "radius": 4.0, "sigma": 1.0},
    "source": {
        "arch": "mlp",
        "hidden": 32,
        "epochs": 300,
        "n": 5000,
        "lr": 0.05,
        "momentum": 0.9,
        "batch_size": 64,
        "init_scale": 0.5,
    },
    "stream": {
        "mode": "single_domain",
        "shifts": [
            {"kind": "rotate2d", "magnitude": 0.5, "level": 2},
            {"kind": "rotate2d", "magnitude": 0.5, "level": 2},
            {"kind": "rotate2d", "magnitude": 0.5, "level": 2},
        ],
        "batches_per_shift": 60,
        "batch_size": 64,
        "label_rho": 1.0,
    },
    "optimizer": {"lr": 0.001, "momentum": 0.9, "scope": "all"},
    "loss": {
        "name": "em",
        "tau": 1.0,
        "alpha": 1.0,
        "variant": "full",
        "norm": "L1",
        "pi": 0.1,
        "mec_alpha": 1.0,
        "delta_source": "cadf",
        "direction": "minimize",
    },
    "grid": {
        "tau_min": 0.0,
        "tau_max": 2.0,
        "alpha_min": 0.0,
        "alpha_max": 2.0,
        "step": 0.1,
        "subset_fraction": 0.2,
    },
    "lrs": list(_search.DEFAULT_LR_GRID),
}


class UsageError(Exception):
    """Config problems that are the caller's fault: exit 64."""


def load_config(path: str) -> dict:
    try:
        with open(path) as fh:
            user = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from exc
    errors = sorted(
        Draft202012Validator(SCHEMA).iter_errors(user), key=lambda e: list(e.path)
    )
    if errors:
        where = "/".join(str(p) for p in errors[0].path) or "<root>"
        raise UsageError(f"config schema violation at {where}: {errors[0].message}")
    if "stream" in user and "label_rho" in user["stream"] and "label_priors" in user["stream"]:
        raise UsageError("config sets both label_rho and label_priors; pick one")
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    for key, value in user.items():
        if isinstance(value, dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    if "stream" in user and "shifts" in user["stream"]:
        cfg["stream"]["shifts"] = user["stream"]["shifts"]
    return cfg


# --------------------------------------------------------------------------
# Experiment assembly
# --------------------------------------------------------------------------


def build_mixture(cfg: dict) -> _bench.MixtureSpec:
    m = cfg["mixture"]
    C, d = m["C"], m["d"]
    if d != 2:
        raise UsageError("the circle mixture is two-dimensional; d must be 2")
    return _bench.MixtureSpec(
        C=C,
        d=d,
        means=_bench.circle_means(C, m["radius"]),
        sigma=m["sigma"],
        priors=np.full(C, 1.0 / C),
    )


def build_stream_spec(cfg: dict, C: int) -> _bench.StreamSpec:
    s = cfg["stream"]
    shifts = tuple(
        _bench.ShiftSpec(
            kind=sh["kind"],
            magnitude=sh.get("magnitude", 1.0),
            level=sh.get("level", 2),
        )
        for sh in s["shifts"]
    )
    if "label_priors" in s:
        priors = np.asarray(s["label_priors"], dtype=np.float64)
        if priors.shape[0] != C:
            raise UsageError("label_priors length must equal the class count")
        total = float(np.sum(priors))
        if total <= 0:
            raise UsageError("label_priors must have positive mass")
        priors = priors / total
    elif s.get("label_rho", 1.0) > 1.0:
        priors = _bench.long_tail_priors(C, s["label_rho"])
    else:
        priors = None
    return _bench.StreamSpec(
        mode=s["mode"],
        shifts=shifts,
        batches_per_shift=s["batches_per_shift"],
        batch_size=s["batch_size"],
        label_priors=priors,
    )


def build_source_model(cfg: dict, mix: _bench.MixtureSpec, rng: Rng):
    s = cfg["source"]
    X, y = _bench.sample_batch(mix, mix.priors, s["n"], rng.derive("source-data"))
    if s["arch"] == "linear":
        model = _model.init_linear(mix.C, mix.d)
    else:
        model = _model.init_mlp(
            mix.C, mix.d, s["hidden"], rng.derive("source-init"), s["init_scale"]
        )
    train_cfg = _model.SgdConfig(lr=s["lr"], momentum=s["momentum"])
    _model.train_source(
        model, X, y, s["epochs"], train_cfg, rng.derive("source-train"), s["batch_size"]
    )
    return model


def plugin_factory_from(cfg: dict):
    """A zero-argument factory building a fresh loss plugin per call."""
    loss = cfg["loss"]
    name = loss["name"]
    if name == "em":
        return lambda: _model.EmPlugin(loss["direction"])
    if name == "dem":
        dem_cfg = _em.DemConfig(loss["tau"], loss["alpha"], loss["direction"])
        if not _em.validate_config(dem_cfg.tau, dem_cfg.alpha):
            raise _em.ConfigError(
                f"invalid hyperparameters tau={dem_cfg.tau}, alpha={dem_cfg.alpha}: "
                f"alpha > 0 requires tau <= 2/alpha"
            )
        return lambda: _model.DemPlugin(dem_cfg)
    variant = _ad.AdaDemVariant(
        kind=loss["variant"],
        mec_alpha=loss["mec_alpha"],
        delta_source=loss["delta_source"],
        norm=loss["norm"],
    )
    return lambda: _model.AdaDemPlugin(variant, pi=loss["pi"], direction=loss["direction"])


def prepared_experiment(cfg: dict):
    """Mixture, stream data, and source model for a config, deterministically."""
    rng = Rng(cfg["seed"])
    mix = build_mixture(cfg)
    sspec = build_stream_spec(cfg, mix.C)
    model = build_source_model(cfg, mix, rng)
    data = _bench.make_stream(mix, sspec, rng.derive("stream"))
    return mix, sspec, model, data


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_reward_curve(args) -> int:
    if not _em.validate_config(args.tau, args.alpha):
        print(
            f"invalid hyperparameters: tau={args.tau}, alpha={args.alpha} "
            f"(need tau > 0 and, for alpha > 0, tau <= 2/alpha)",
            file=sys.stderr,
        )
        return EXIT_BAD_HYPERPARAMS
    if args.m_step <= 0 or args.m_max < args.m_min or args.c < 2:
        print("bad grid: need m-step > 0, m-max >= m-min, c >= 2", file=sys.stderr)
        return EXIT_USAGE
    cfg = _em.DemConfig(args.tau, args.alpha)
    n = int(math.floor((args.m_max - args.m_min) / args.m_step + 1e-9))
    m_grid = [args.m_min + i * args.m_step for i in range(n + 1)]
    rows = _em.reward_curve(args.c, cfg, m_grid)
    write_csv(
        args.out,
        _em.REWARD_CURVE_HEADER,
        ([fmt9(m), fmt9(p), fmt9(r)] for m, p, r in rows),
    )
    print(f"reward-curve: wrote {len(rows)} points to {args.out}")
    return EXIT_OK


def _gradcheck_cases(rng: Rng, trials: int):
    """Yield (loss name, analytic grad, oracle grad) triples."""
    for _ in range(trials):
        C = int(rng.integers(1, 2, 9)[0])
        z = (rng.uniforms(C) - 0.5) * 16.0

        yield "em", _em.em_eval(z).grad, finite_diff_grad(_em.conditional_entropy, z)
        yield "detached_em", _em.detached_em_eval(z).grad, _em.em_eval(z).grad

        tau = 0.3 + 2.2 * rng.uniforms(1)[0]
        yield (
            "cadf_tempered",
            _em.cadf_tempered_eval(z, tau).grad,
            finite_diff_grad(lambda v: _em.cadf_tempered_eval(v, tau).value, z),
        )

        alpha = 2.0 * rng.uniforms(1)[0]
        tau_hi = min(2.0 / alpha, 2.5) if alpha > 0 else 2.5
        dtau = 0.2 + (tau_hi - 0.2) * rng.uniforms(1)[0]
        dem_cfg = _em.DemConfig(dtau, alpha)
        yield (
            "dem",
            _em.dem_eval(z, dem_cfg).grad,
            finite_diff_grad(lambda v: _em.dem_eval(v, dem_cfg).value, z),
        )

        target = int(rng.integers(1, 0, C)[0])
        yield (
            "cross_entropy",
            _model.cross_entropy_eval(z, target).grad,
            finite_diff_grad(lambda v: _model.cross_entropy_eval(v, target).value, z),
        )

        state = _ad.mec_init(C)
        batch = (rng.uniforms(3 * C).reshape(3, C) - 0.5) * 10.0
        _ad.adadem_rows(batch, state)
        frozen = state.copy()
        analytic = _ad.adadem_rows(z[None, :], state)[1][0]
        p = softmax(z)
        k = int(np.argmax(p))
        _ad.mec_update(frozen, p[None, :], [k])
        c_row = frozen.table[k].copy()
        d_val = max(_ad.delta(z), _ad.DELTA_FLOOR)

        def frozen_value(v, c_row=c_row, d_val=d_val):
            return float(-np.dot(softmax(v) - c_row, v) / d_val)

        yield "adadem", analytic, finite_diff_grad(frozen_value, z)


def _end_to_end_cases(rng: Rng):
    """Parameter-space gradient checks through both architectures."""
    C, d, h, n = 4, 3, 5, 6
    X = (rng.uniforms(n * d).reshape(n, d) - 0.5) * 4.0
    targets = rng.integers(n, 0, C)
    models = {
        "linear": _model.init_linear(C, d, rng, scale=0.7),
        "mlp": _model.init_mlp(C, d, h, rng, scale=0.7),
    }
    plugins = {
        "em": _model.EmPlugin(),
        "dem": _model.DemPlugin(_em.DemConfig(1.3, 0.4)),
        "cross_entropy": _model.CrossEntropyPlugin(targets),
    }

    def param_fd(model, objective, analytic_grads):
        for pname, p in model.params().items():
            oracle = np.zeros_like(p)
            it = np.nditer(p, flags=["multi_index"])
            while not it.finished:
                idx = it.multi_index
                orig = p[idx]
                p[idx] = orig + 1e-5
                hi = objective()
                p[idx] = orig - 1e-5
                lo = objective()
                p[idx] = orig
                oracle[idx] = (hi - lo) / 2e-5
                it.iternext()
            yield analytic_grads[pname], oracle

    for mname, model in models.items():
        for lname, plugin in plugins.items():
            Z = _model.forward(model, X)
            _, dlogits = plugin.batch_eval(Z)
            grads = _model.backward(model, X, dlogits)
            objective = lambda m=model, pl=plugin: float(
                np.mean(pl.batch_eval(_model.forward(m, X))[0])
            )
            for analytic, oracle in param_fd(model, objective, grads):
                yield f"{mname}/{lname}", analytic, oracle

        # AdaDEM end to end: the calibrator rows and per-sample deltas are
        # constants under differentiation, so the oracle perturbs the
        # parameters of an objective that keeps them frozen at the values
        # the analytic gradient used.
        state = _ad.mec_init(C)
        warm = (rng.uniforms(4 * C).reshape(4, C) - 0.5) * 6.0
        _ad.adadem_rows(warm, state)
        Z0 = _model.forward(model, X)
        _, dlogits = _ad.adadem_rows(Z0, state.copy())
        grads = _model.backward(model, X, dlogits)
        P0 = softmax_rows(Z0)
        labels0 = np.argmax(P0, axis=1)
        replay = state.copy()
        _ad.mec_update(replay, P0, labels0)
        c_rows = replay.table[labels0]
        d_vals = np.maximum(
            np.asarray([_ad.delta(z) for z in Z0]), _ad.DELTA_FLOOR
        )[:, None]

        def frozen_objective(m=model, c_rows=c_rows, d_vals=d_vals):
            Zt = _model.forward(m, X)
            Pt = softmax_rows(Zt)
            return float(np.mean(-np.sum((Pt - c_rows) * Zt, axis=1, keepdims=True) / d_vals))

        for analytic, oracle in param_fd(model, frozen_objective, grads):
            yield f"{mname}/adadem", analytic, oracle


def cmd_gradcheck(args) -> int:
    if args.trials < 1:
        print("gradcheck: --trials must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    rng = Rng(args.seed)
    worst: dict[str, float] = {}
    for name, analytic, oracle in _gradcheck_cases(rng, args.trials):
        if args.corrupt and name == "em":
            analytic = analytic + 1e-3
        worst[name] = max(worst.get(name, 0.0), rel_err(analytic, oracle))
    for name, analytic, oracle in _end_to_end_cases(rng.derive("end-to-end")):
        worst[name] = max(worst.get(name, 0.0), rel_err(analytic, oracle))

    failed = []
    for name in sorted(worst):
        status = "ok" if worst[name] < GRADCHECK_TOLERANCE else "FAIL"
        print(f"gradcheck {name}: max rel err {fmt9(worst[name])} [{status}]")
        if status == "FAIL":
            failed.append(name)
    if failed:
        print(f"gradcheck failed for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _metrics_row(label: str, shift, report, baseline: float) -> list[str]:
    kind = shift.kind if shift is not None else "-"
    level = str(shift.level) if shift is not None else "-"
    return [
        label,
        kind,
        level,
        fmt9(report.accuracy),
        fmt9(report.macro_f1),
        fmt9(report.marginal_entropy),
        fmt9(report.kl_output_vs_label),
        fmt9(report.avg_max_prob),
        fmt9(baseline),
        vec9(report.per_class_f1),
        vec9(report.sorted_class_proportions),
    ]


METRICS_HEADER = (
    "shift,kind,level,accuracy,macro_f1,marginal_entropy,kl_output_vs_label,"
    "avg_max_prob,baseline_accuracy,per_class_f1,sorted_class_proportions"
)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    mix, sspec, model, data = prepared_experiment(cfg)
    factory = plugin_factory_from(cfg)
    sgd = _model.SgdConfig(**cfg["optimizer"])
    result = _bench.run_protocol(model, data, sspec.mode, factory, sgd)

    if not math.isfinite(result.overall.accuracy) or not math.isfinite(
        result.overall.marginal_entropy
    ):
        print("run: numeric failure (non-finite metrics)", file=sys.stderr)
        return EXIT_NUMERIC

    out = cfg["output_dir"]
    rows = [
        _metrics_row(f"shift{i}", sspec.shifts[i], rep, result.baseline_per_shift[i])
        for i, rep in enumerate(result.per_shift)
    ]
    rows.append(_metrics_row("overall", None, result.overall, result.baseline_overall))
    write_csv(os.path.join(out, "metrics.csv"), METRICS_HEADER, rows)
    summary = {
        "mode": sspec.mode,
        "loss": cfg["loss"]["name"],
        "seed": cfg["seed"],
        "accuracy": jround(result.overall.accuracy),
        "baseline_accuracy": jround(result.baseline_overall),
        "marginal_entropy": jround(result.overall.marginal_entropy),
        "kl_output_vs_label": jround(result.overall.kl_output_vs_label),
        "per_shift_accuracy": [jround(r.accuracy) for r in result.per_shift],
        "per_shift_baseline": [jround(b) for b in result.baseline_per_shift],
    }
    write_json(os.path.join(out, "summary.json"), summary)
    print(
        f"run[{cfg['loss']['name']}/{sspec.mode}]: accuracy {fmt9(result.overall.accuracy)} "
        f"vs baseline {fmt9(result.baseline_overall)}"
    )
    return EXIT_OK


def _subset(data, fraction: float):
    """The leading fraction of each shift's batches (at least one)."""
    k = max(1, round(len(data[0]) * fraction))
    return [batches[:k] for batches in data]


def cmd_grid_search(args) -> int:
    cfg = load_config(args.config)
    mix, sspec, model, data = prepared_experiment(cfg)
    sgd = _model.SgdConfig(**cfg["optimizer"])
    grid = _search.GridSpec(**cfg["grid"])
    subset = _subset(data, grid.subset_fraction)

    def protocol(tau: float, alpha: float) -> float:
        dem_cfg = _em.DemConfig(tau, alpha)
        factory = lambda: _model.DemPlugin(dem_cfg)
        return _bench.run_protocol(model, subset, sspec.mode, factory, sgd).overall.accuracy

    best, table = _search.grid_search(protocol, grid)

    def full_accuracy(tau: float, alpha: float) -> float:
        dem_cfg = _em.DemConfig(tau, alpha)
        factory = lambda: _model.DemPlugin(dem_cfg)
        return _bench.run_protocol(model, data, sspec.mode, factory, sgd).overall.accuracy

    best_full = full_accuracy(best.tau, best.alpha)
    classical_subset = next(
        (r.accuracy for r in table if r.tau == 1.0 and r.alpha == 1.0 and r.valid),
        None,
    )
    classical_full = full_accuracy(1.0, 1.0) if classical_subset is not None else None
    if not math.isfinite(best_full):
        print("grid-search: numeric failure (non-finite accuracy)", file=sys.stderr)
        return EXIT_NUMERIC

    out = cfg["output_dir"]
    write_csv(
        os.path.join(out, "grid.csv"),
        "tau,alpha,valid,accuracy",
        (
            [
                fmt9(r.tau),
                fmt9(r.alpha),
                "1" if r.valid else "0",
                fmt9(r.accuracy) if r.accuracy is not None else "",
            ]
            for r in table
        ),
    )
    summary = {
        "best": {
            "tau": jround(best.tau),
            "alpha": jround(best.alpha),
            "subset_accuracy": jround(best.accuracy),
            "full_accuracy": jround(best_full),
        },
        "classical": (
            {
                "tau": 1.0,
                "alpha": 1.0,
                "subset_accuracy": jround(classical_subset),
                "full_accuracy": jround(classical_full),
            }
            if classical_subset is not None
            else None
        ),
        "valid_points": sum(1 for r in table if r.valid),
        "total_points": len(table),
        "seed": cfg["seed"],
    }
    write_json(os.path.join(out, "summary.json"), summary)
    classical_note = (
        f" (classical full {fmt9(classical_full)})" if classical_full is not None else ""
    )
    print(
        f"grid-search: best (tau={fmt9(best.tau)}, alpha={fmt9(best.alpha)}) "
        f"subset {fmt9(best.accuracy)} full {fmt9(best_full)}{classical_note}"
    )
    return EXIT_OK


def cmd_lr_sweep(args) -> int:
    cfg = load_config(args.config)
    mix, sspec, model, data = prepared_experiment(cfg)
    factory = plugin_factory_from(cfg)
    scope = cfg["optimizer"]["scope"]
    momentum = cfg["optimizer"]["momentum"]

    def protocol(lr: float) -> float:
        sgd = _model.SgdConfig(lr=lr, momentum=momentum, scope=scope)
        return _bench.run_protocol(model, data, sspec.mode, factory, sgd).overall.accuracy

    # A diverged run at an aggressive rate is a legitimate sweep outcome:
    # its (possibly non-finite) accuracy simply counts below the baseline.
    result = _search.lr_sweep(protocol, cfg["lrs"])
    if not math.isfinite(result.baseline):
        print("lr-sweep: numeric failure (non-finite baseline)", file=sys.stderr)
        return EXIT_NUMERIC

    out = cfg["output_dir"]
    write_csv(
        os.path.join(out, "lr_sweep.csv"),
        "lr,accuracy",
        ([fmt9(lr), fmt9(acc)] for lr, acc in result.rows),
    )
    summary = {
        "loss": cfg["loss"]["name"],
        "baseline_accuracy": jround(result.baseline),
        "tolerance_count": result.tolerance_count,
        "lrs": [jround(lr) for lr, _ in result.rows],
        "accuracies": [jround(acc) for _, acc in result.rows],
        "seed": cfg["seed"],
    }
    write_json(os.path.join(out, "summary.json"), summary)
    print(
        f"lr-sweep[{cfg['loss']['name']}]: tolerance count {result.tolerance_count}"
        f"/{len(result.rows)} (baseline {fmt9(result.baseline)})"
    )
    return EXIT_OK


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="demkit",
        description="Decoupled entropy-minimization losses and experiments.",
        epilog="exit codes: 0 ok, 2 invalid hyperparameters, 3 numeric failure, 64 usage",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    rc = sub.add_parser("reward-curve", help="write a (m, p_max, reward) CSV")
    rc.add_argument("--c", type=int, default=10, help="number of classes")
    rc.add_argument("--tau", type=float, default=1.0)
    rc.add_argument("--alpha", type=float, default=1.0)
    rc.add_argument("--m-min", type=float, default=0.0)
    rc.add_argument("--m-max", type=float, default=30.0)
    rc.add_argument("--m-step", type=float, default=0.05)
    rc.add_argument("--out", default="reward_curve.csv")
    rc.set_defaults(func=cmd_reward_curve)

    gc = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--trials", type=int, default=100)
    gc.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
    gc.set_defaults(func=cmd_gradcheck)

    for name, func in (
        ("run", cmd_run),
        ("grid-search", cmd_grid_search),
        ("lr-sweep", cmd_lr_sweep),
    ):
        cp = sub.add_parser(name, help=f"{name} from a JSON config")
        cp.add_argument("--config", required=True)
        cp.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"demkit: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _em.ConfigError as exc:
        print(f"demkit: {exc}", file=sys.stderr)
        return EXIT_BAD_HYPERPARAMS
    except (FloatingPointError, ArithmeticError) as exc:
        print(f"demkit: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"demkit: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
