"""Command-line operator surface.

One JSON config file plus ``--key=value`` overrides drives every subcommand.
Unknown config keys are a hard error (no silent typos). Reports embed the
fully resolved config, the seeds, and a content hash of the input data, so a
report alone suffices to re-run the experiment. Exit codes: 0 success,
1 validation error, 2 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time as _time

import numpy as np

from . import reports
from .autodiff import lipschitz_upper_bound
from .data import (CorruptionSpec, inject_missing, load_csv, normalize,
                   save_csv, synth, uniform_scale)
from .errors import NumericalExplosion, AbortNonFinite, StableSdeError
from .models import ModelConfig, build_model, load_checkpoint, save_checkpoint
from .solvers import SolveConfig, strong_error
from .stability import (check_moment_bound, check_positivity_and_absorption,
                        diffusion_comparison, robustness_curve)
from .training import TrainConfig, derive_seed, evaluate, split, train

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2

DEFAULTS = {
    # model
    "kind": "lnsde",
    "d_z": 32,
    "d_t": 8,
    "n_layers": 2,
    "n_hidden": 32,
    "sigma_form": "mlp",
    "readout_hidden": 32,
    "dropout": 0.1,
    "use_control": True,
    # solver
    "solver_scheme": "euler",
    "n_steps": 50,
    "t_end": 1.0,
    # training
    "max_epochs": 40,
    "batch_size": 32,
    "lr": 1e-3,
    "readout_lr_multiplier": 100.0,
    "patience": 10,
    "early_stopping": True,
    "path_scheme": "natural-cubic",
    "task": "classification",
    # data
    "data_values": "",        # long CSV path; empty -> synthetic
    "data_labels": "",
    "synth_kind": "spirals",
    "n_samples": 200,
    "length": 32,
    "noise": 0.05,
    "missing_rate": 0.0,
    "target_len": 0,          # 0 -> no uniform rescaling
    "normalize": True,
    # experiment knobs
    "rho": 0.1,
    "depths": [1, 2, 4, 8],
    "rates": [0.0, 0.3, 0.5, 0.7],
    "n_exp_seeds": 3,
    "checkpoint": "",
}


def resolve_config(config_path, overrides):
    cfg = dict(DEFAULTS)
    if config_path:
        with open(config_path) as fh:
            user = json.load(fh)
        unknown = sorted(set(user) - set(DEFAULTS))
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(unknown)}")
        cfg.update(user)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        key, _, raw = item.partition("=")
        if key not in DEFAULTS:
            raise ValueError(f"unknown config keys: {key}")
        cfg[key] = _coerce(raw, DEFAULTS[key])
    return cfg


def _coerce(raw, default):
    if isinstance(default, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"cannot parse boolean from {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, list):
        return json.loads(raw)
    return raw


def _model_config(cfg, seed):
    return ModelConfig(kind=cfg["kind"], d_x=0, d_z=cfg["d_z"], d_t=cfg["d_t"],
                       n_layers=cfg["n_layers"], n_hidden=cfg["n_hidden"],
                       sigma_form=cfg["sigma_form"],
                       readout_hidden=cfg["readout_hidden"],
                       dropout=cfg["dropout"], use_control=cfg["use_control"],
                       seed=seed)


def _solve_config(cfg):
    return SolveConfig(scheme=cfg["solver_scheme"], n_steps=cfg["n_steps"],
                       t_end=cfg["t_end"])


def _train_config(cfg, seed):
    return TrainConfig(max_epochs=cfg["max_epochs"], batch_size=cfg["batch_size"],
                       lr=cfg["lr"],
                       readout_lr_multiplier=cfg["readout_lr_multiplier"],
                       patience=cfg["patience"],
                       early_stopping=cfg["early_stopping"],
                       path_scheme=cfg["path_scheme"], task=cfg["task"],
                       split_seed=derive_seed(seed, 101), root_seed=seed)


def _load_dataset(cfg, seed):
    """Raw dataset from file or synthetic generator (no corruption yet)."""
    if cfg["data_values"]:
        labels = cfg["data_labels"] or None
        return load_csv(cfg["data_values"], labels)
    return synth(cfg["synth_kind"], cfg["n_samples"], cfg["length"],
                 noise=cfg["noise"], seed=derive_seed(seed, 7))


def _prepare(cfg, seed):
    """Pipeline: load -> corrupt -> scale -> split -> normalize (train stats)."""
    ds = _load_dataset(cfg, seed)
    if cfg["missing_rate"] > 0.0:
        ds = inject_missing(ds, CorruptionSpec(cfg["missing_rate"],
                                               derive_seed(seed, 11)))
    if cfg["target_len"] > 0:
        ds = uniform_scale(ds, cfg["target_len"])
    tcfg = _train_config(cfg, seed)
    tr, va, te = split(ds, tcfg.split_seed, tcfg.ratios)
    if cfg["normalize"]:
        ds, _ = normalize(ds, tr)
    return ds, tcfg, (tr, va, te)


def _report_base(cfg, seed, dataset):
    return {"config": cfg, "seed": seed, "data_hash": dataset.content_hash(),
            "data_provenance": dataset.provenance}


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_synth(cfg, seed, out):
    ds = synth(cfg["synth_kind"], cfg["n_samples"], cfg["length"],
               noise=cfg["noise"], seed=derive_seed(seed, 7))
    save_csv(ds, os.path.join(out, "values.csv"),
             os.path.join(out, "labels.csv"))
    reports.write_json(os.path.join(out, "report.json"),
                       _report_base(cfg, seed, ds))
    print(f"wrote {len(ds)} samples to {out}")
    return EXIT_OK


def cmd_corrupt(cfg, seed, out):
    ds = _load_dataset(cfg, seed)
    corrupted = inject_missing(ds, CorruptionSpec(cfg["missing_rate"],
                                                  derive_seed(seed, 11)))
    save_csv(corrupted, os.path.join(out, "values.csv"),
             os.path.join(out, "labels.csv"))
    reports.write_json(os.path.join(out, "report.json"),
                       _report_base(cfg, seed, corrupted))
    print(f"corrupted at rate {cfg['missing_rate']} -> {out}")
    return EXIT_OK


def cmd_train(cfg, seed, out):
    ds, tcfg, (tr, va, te) = _prepare(cfg, seed)
    mcfg = _model_config(cfg, derive_seed(seed, 3))
    mcfg.d_x = ds.n_channels
    mcfg.n_out = max(ds.n_classes, 1)
    model = build_model(mcfg)
    scfg = _solve_config(cfg)
    t0 = _time.perf_counter()
    model, history = train(model, ds, tcfg, scfg, train_idx=tr, val_idx=va)
    wall = _time.perf_counter() - t0
    if history.aborted:
        print("training aborted after repeated numerical explosions",
              file=sys.stderr)
        return EXIT_NUMERICAL
    save_checkpoint(model, os.path.join(out, "checkpoint.json"))
    history.to_csv(os.path.join(out, "history.csv"))
    reports.render_history(history, os.path.join(out, "loss_curves.png"))
    metrics = evaluate(model, ds, tcfg, scfg, indices=te)
    report = _report_base(cfg, seed, ds)
    report.update({"metrics": metrics, "best_epoch": history.best_epoch,
                   "stopped_early": history.stopped_early,
                   "epochs_run": len(history.train_loss),
                   "drift_lipschitz_upper_bound":
                       lipschitz_upper_bound(model.gamma)})
    reports.write_json(os.path.join(out, "metrics.json"), report)
    reports.write_json(os.path.join(out, "timing.json"),
                       {"train_seconds": wall,
                        "epoch_seconds": history.epoch_seconds})
    print(f"test metrics: {metrics}")
    return EXIT_OK


def cmd_eval(cfg, seed, out):
    if not cfg["checkpoint"]:
        raise ValueError("eval requires checkpoint=PATH in the config")
    model = load_checkpoint(cfg["checkpoint"])
    ds, tcfg, (_, _, te) = _prepare(cfg, seed)
    if model.cfg.d_x != ds.n_channels:
        raise ValueError(
            f"checkpoint expects {model.cfg.d_x} channels, data has "
            f"{ds.n_channels}")
    metrics = evaluate(model, ds, tcfg, _solve_config(cfg), indices=te)
    report = _report_base(cfg, seed, ds)
    report["metrics"] = metrics
    reports.write_json(os.path.join(out, "metrics.json"), report)
    print(f"test metrics: {metrics}")
    return EXIT_OK


def cmd_stability(cfg, seed, out):
    pos = check_positivity_and_absorption(seed=seed, include_naive_control=True)
    grid = [(1.0, 0.0, 0.1, 2), (1.0, 0.0, 0.5, 2), (2.0, 0.0, 0.5, 2)]
    moments = [check_moment_bound(m, b, s, d, z0=np.ones(d), t_end=2.0,
                                  seed=derive_seed(seed, i))
               for i, (m, b, s, d) in enumerate(grid)]
    report = {"config": cfg, "seed": seed,
              "positivity_absorption": pos, "moment_bounds": moments}
    reports.write_json(os.path.join(out, "report.json"), report)
    reports.write_table(os.path.join(out, "moment_bounds.csv"),
                        ["m", "b", "sigma", "d", "sup_moment", "bound", "passed"],
                        [[g[0], g[1], g[2], g[3], r["sup_moment"], r["bound"],
                          r["passed"]] for g, r in zip(grid, moments)])
    ok = pos["passed"] and all(r["passed"] for r in moments)
    print(f"positivity/absorption passed={pos['passed']}; "
          f"moment bounds passed={[r['passed'] for r in moments]}")
    return EXIT_OK if ok else EXIT_NUMERICAL


def cmd_robustness(cfg, seed, out):
    ds = _load_dataset(cfg, seed)
    if cfg["normalize"]:
        ds, _ = normalize(ds)
    curves = []
    rows = []
    for kind in ("lsde", "lnsde", "gsde"):
        for s in range(cfg["n_exp_seeds"]):
            curve = robustness_curve(kind, ds, cfg["rho"],
                                     depths=tuple(cfg["depths"]),
                                     seed=derive_seed(seed, s))
            curves.append(curve)
            for t, w1, se in zip(curve.depths, curve.w1, curve.se):
                rows.append([kind, s, t, w1, se, curve.spearman])
    reports.write_table(os.path.join(out, "robustness.csv"),
                        ["kind", "seed", "T", "w1", "se", "spearman"], rows)
    reports.render_robustness(curves, os.path.join(out, "robustness.png"))
    reports.write_json(os.path.join(out, "report.json"),
                       {"config": cfg, "seed": seed, "data_hash": ds.content_hash(),
                        "curves": [{"kind": c.kind, "rho": c.rho,
                                    "depths": c.depths, "w1": c.w1, "se": c.se,
                                    "spearman": c.spearman,
                                    "invalid_depths": c.invalid}
                                   for c in curves]})
    spearmans = [c.spearman for c in curves]
    print(f"spearman(depth, W1) per curve: {spearmans}")
    return EXIT_OK


def cmd_diffusion_compare(cfg, seed, out):
    ds = _load_dataset(cfg, seed)
    ds = inject_missing(ds, CorruptionSpec(0.5, derive_seed(seed, 11)))
    if cfg["normalize"]:
        ds, _ = normalize(ds)
    results = diffusion_comparison(ds, seed=seed, epochs=cfg["max_epochs"],
                                   scfg=_solve_config(cfg))
    for variant, res in results.items():
        reports.write_table(
            os.path.join(out, f"loss_{variant}.csv"),
            ["epoch", "test_loss", "aborted"],
            [[e, l, res["aborted"]] for e, l in enumerate(res["test_loss"])])
    reports.render_diffusion_comparison(results,
                                        os.path.join(out, "diffusion.png"))
    reports.write_json(os.path.join(out, "report.json"),
                       {"config": cfg, "seed": seed,
                        "data_hash": ds.content_hash(), "results": results})
    print({v: ("aborted" if r["aborted"] else round(r["final_test_loss"], 4))
           for v, r in results.items()})
    return EXIT_OK


def cmd_convergence(cfg, seed, out):
    dts = [2.0 ** -k for k in range(4, 10)]
    results = {}
    for scheme in ("euler", "milstein"):
        slope, pairs = strong_error(scheme, mu=0.05, sigma=0.5, z0=1.0,
                                    t_end=1.0, dt_list=dts, n_paths=2000,
                                    seed=seed)
        results[scheme] = (slope, pairs)
        reports.write_table(os.path.join(out, f"convergence_{scheme}.csv"),
                            ["dt", "strong_error"], pairs)
    reports.render_convergence(results, os.path.join(out, "convergence.png"))
    reports.write_json(os.path.join(out, "report.json"),
                       {"config": cfg, "seed": seed,
                        "slopes": {k: v[0] for k, v in results.items()}})
    print({k: round(v[0], 3) for k, v in results.items()})
    return EXIT_OK


def cmd_gradcheck(cfg, seed, out):
    from .diagnostics import gradcheck_suite
    worst = gradcheck_suite(seed)
    reports.write_json(os.path.join(out, "report.json"),
                       {"config": cfg, "seed": seed, "max_rel_error": worst})
    print(f"max relative error: {worst:.3e}")
    return EXIT_OK if worst < 1e-4 else EXIT_NUMERICAL


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "corrupt": cmd_corrupt,
    "synth": cmd_synth,
    "stability": cmd_stability,
    "robustness": cmd_robustness,
    "diffusion-compare": cmd_diffusion_compare,
    "convergence": cmd_convergence,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="stablesde",
        description="Stable neural SDEs for irregular time series")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", default="", help="JSON config file")
    parser.add_argument("--seed", type=int, default=0, help="root seed")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--threads", type=int, default=0,
                        help="cap worker threads (0 = library default)")
    parser.add_argument("overrides", nargs="*", metavar="key=value",
                        help="config overrides")
    args, extra = parser.parse_known_args(argv)
    for item in extra:
        if item.startswith("-"):
            parser.error(f"unrecognized argument: {item}")
    args.overrides = list(args.overrides) + extra

    if args.threads > 0:
        os.environ.setdefault("OMP_NUM_THREADS", str(args.threads))
        os.environ.setdefault("OPENBLAS_NUM_THREADS", str(args.threads))

    try:
        cfg = resolve_config(args.config, args.overrides)
        reports.ensure_dir(args.out)
        return COMMANDS[args.command](cfg, args.seed, args.out)
    except (NumericalExplosion, AbortNonFinite) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (StableSdeError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
