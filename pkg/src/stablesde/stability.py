"""Experiment suite turning the stability and robustness theory into
runnable pass/fail checks: positivity and absorption of the geometric class,
dissipative moment bounds, Wasserstein decay in depth, the six-diffusion
comparison, and missing-rate sweeps.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats as sps

from . import autodiff as ad
from .autodiff import Tensor, mlp_init
from .data import CorruptionSpec, inject_missing, normalize
from .errors import NumericalExplosion
from .models import ModelConfig, SdeModel, build_model
from .paths import IrregularSeries
from .solvers import BrownianGrid, SolveConfig, sample_brownian, solve
from .training import (PathCache, TrainConfig, batch_forward, derive_seed,
                       evaluate, split, train)


# ---------------------------------------------------------------------------
# Empirical Wasserstein estimators
# ---------------------------------------------------------------------------

@dataclass
class WassersteinEstimate:
    value: float
    method: str
    n_projections: int = 0
    sample_sizes: tuple = ()
    resampled: bool = False


def _downsample_sorted(x, m):
    """Evenly spaced order statistics: deterministic down-resampling."""
    x = np.sort(x)
    if len(x) == m:
        return x
    pos = (np.arange(m) + 0.5) / m * len(x)
    return x[np.clip(pos.astype(int), 0, len(x) - 1)]


def w1_sorted(a, b):
    """Exact empirical 1-D W1: mean absolute gap of sorted samples."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if len(a) == 0 or len(b) == 0:
        raise ValueError("empty sample")
    m = min(len(a), len(b))
    resampled = len(a) != len(b)
    av = _downsample_sorted(a, m)
    bv = _downsample_sorted(b, m)
    return WassersteinEstimate(float(np.abs(av - bv).mean()), "sorted-1d",
                               sample_sizes=(len(a), len(b)),
                               resampled=resampled)


def w1_sliced(a, b, n_proj=50, seed=0):
    """Sliced W1: average of sorted-W1 over uniform sphere directions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if b.ndim == 1:
        b = b[:, None]
    d = a.shape[1]
    if d == 1:
        est = w1_sorted(a[:, 0], b[:, 0])
        return WassersteinEstimate(est.value, "sliced", n_projections=1,
                                   sample_sizes=est.sample_sizes)
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed & (2**64 - 1))))
    dirs = rng.standard_normal((n_proj, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    vals = [w1_sorted(a @ u, b @ u).value for u in dirs]
    return WassersteinEstimate(float(np.mean(vals)), "sliced",
                               n_projections=n_proj,
                               sample_sizes=(a.shape[0], b.shape[0]))


# ---------------------------------------------------------------------------
# Positivity / absorption (geometric class)
# ---------------------------------------------------------------------------

def _replicated_solve(model, series, scfg, n_paths, seed, z0_override=None,
                      scheme="natural-cubic"):
    from .paths import build_path, eval_grid
    path = build_path(series, scheme)
    times = np.linspace(0.0, scfg.t_end, scfg.n_steps + 1)
    grid = eval_grid(path, times)
    path_grid = np.repeat(grid[:, None, :], n_paths, axis=1)
    dt = scfg.t_end / scfg.n_steps
    inc = np.empty((scfg.n_steps, n_paths * model.cfg.d_z))
    for j in range(n_paths):
        g = sample_brownian(derive_seed(seed, j), scfg.n_steps, model.cfg.d_z, dt)
        inc[:, j * model.cfg.d_z:(j + 1) * model.cfg.d_z] = g.increments
    bm = BrownianGrid(seed, scfg.n_steps, n_paths * model.cfg.d_z, dt, inc)
    z0 = z0_override
    if z0 is None:
        x0 = np.repeat(grid[0:1, 1:], n_paths, axis=0)
        z0 = model.init_state(x0)
    return solve(model, None, bm, scfg, z0=z0, path_grid=path_grid)


def _random_series(d_x, length, rng):
    times = np.sort(rng.uniform(0, 1, length))
    times[0], times[-1] = 0.0, 1.0
    values = rng.standard_normal((length, d_x))
    mask = np.ones((length, d_x), dtype=bool)
    return IrregularSeries(times, values, mask)


def check_positivity_and_absorption(n_models=20, n_paths=50, seed=0,
                                    include_naive_control=False):
    """Exact checks on the geometric class; optional naive control group."""
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed & (2**64 - 1))))
    scfg = SolveConfig(n_steps=50)
    report = {"passed": True, "min_state": np.inf, "violations": [],
              "absorption_ok": True, "naive_min_state": None}
    with ad.no_grad():
        for mi in range(n_models):
            cfg = ModelConfig(kind="gsde", d_x=2, d_z=6, n_layers=1, n_hidden=16,
                              seed=derive_seed(seed, mi))
            model = build_model(cfg)
            series = _random_series(cfg.d_x, 10, rng)
            traj = _replicated_solve(model, series, scfg, n_paths,
                                     derive_seed(seed, mi, 1))
            lo = min(float(s.data.min()) for s in traj.states)
            report["min_state"] = min(report["min_state"], lo)
            if lo < 0.0:
                report["passed"] = False
                report["violations"].append({"model_seed": cfg.seed, "min": lo})
            # absorbing state: zero out component 0 of every path at t=0
            z0 = model.init_state(np.repeat(series.values[0:1], n_paths, axis=0))
            z0d = z0.data.copy()
            z0d[:, 0] = 0.0
            traj0 = _replicated_solve(model, series, scfg, n_paths,
                                      derive_seed(seed, mi, 2),
                                      z0_override=Tensor(z0d))
            for s in traj0.states:
                if np.any(s.data[:, 0] != 0.0):
                    report["absorption_ok"] = False
                    report["passed"] = False
                    report["violations"].append({"model_seed": cfg.seed,
                                                 "absorption": False})
                    break
        if include_naive_control:
            cfg = ModelConfig(kind="naive-sde", d_x=2, d_z=6, n_layers=1,
                              n_hidden=16, seed=derive_seed(seed, 999))
            model = build_model(cfg)
            series = _random_series(cfg.d_x, 10, rng)
            traj = _replicated_solve(model, series, scfg, n_paths,
                                     derive_seed(seed, 999, 1))
            report["naive_min_state"] = min(float(s.data.min())
                                            for s in traj.states)
    return report


# ---------------------------------------------------------------------------
# Dissipative moment bound
# ---------------------------------------------------------------------------

def check_moment_bound(m, b, sigma, d, z0, t_end, n_paths=10_000, n_steps=2000,
                       seed=0):
    """Simulate dX = -m X dt + sigma X dW (componentwise) and compare the
    sup-grid sample second moment against (E|X0|^2 + b/m) exp(d sigma^2 / 2m)."""
    z0 = np.asarray(z0, dtype=np.float64)
    bound = (float(z0 @ z0) + (b / m if m > 0 else 0.0)) * np.exp(
        d * sigma * sigma / (2.0 * m))
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed & (2**64 - 1))))
    dt = t_end / n_steps
    x = np.tile(z0, (n_paths, 1))
    sup_moment = float((x ** 2).sum(axis=1).mean())
    sup_se = 0.0
    for _ in range(n_steps):
        dw = rng.standard_normal((n_paths, d)) * np.sqrt(dt)
        x = x - m * x * dt + sigma * x * dw
        sq = (x ** 2).sum(axis=1)
        mom = float(sq.mean())
        if mom > sup_moment:
            sup_moment = mom
            sup_se = float(sq.std(ddof=1) / np.sqrt(n_paths))
    passed = sup_moment <= bound + 3.0 * sup_se
    return {"bound": bound, "sup_moment": sup_moment, "sup_se": sup_se,
            "passed": bool(passed), "params": {"m": m, "b": b, "sigma": sigma,
                                               "d": d, "t_end": t_end}}


# ---------------------------------------------------------------------------
# Robustness (Wasserstein decay in depth)
# ---------------------------------------------------------------------------

@dataclass
class RobustnessCurve:
    depths: list
    rho: float
    w1: list
    se: list
    kind: str
    spearman: float = np.nan
    invalid: list = field(default_factory=list)


def make_robustness_model(kind, d_x, seed=0, d_z=8):
    """Model whose init satisfies the decay hypotheses: weak drift coupling
    and, for the Langevin kind, an inward-pointing drift; sigma near 1.2 for
    the multiplicative-noise kinds so the noise itself contracts differences."""
    cfg = ModelConfig(kind=kind, d_x=d_x, d_z=d_z, n_layers=0, n_hidden=d_z,
                      sigma_form="affine", seed=seed)
    model = build_model(cfg)
    d_t = cfg.d_t
    # zeta: single affine layer; pass z through, weak coupling to X
    w = np.zeros_like(model.zeta.layers[0].weight.data)
    w[d_t:d_t + d_z, :] = np.eye(d_z)
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed & (2**64 - 1))))
    w[d_t + d_z:, :] = 0.05 * rng.standard_normal((d_x + 1, d_z))
    model.zeta.layers[0].weight.data = w
    model.sigma_w.data = np.zeros_like(model.sigma_w.data)
    if kind == "lsde":
        model.gamma.layers[0].weight.data = -1.5 * np.eye(d_z)
        model.sigma_b.data = np.full(d_z, 0.5)
    elif kind == "lnsde":
        # gamma input is [enc, zbar]; -zbar drift contracts pairs toward 0
        gw = np.zeros((d_t + d_z, d_z))
        gw[d_t:, :] = -np.eye(d_z)
        model.gamma.layers[0].weight.data = gw
        model.sigma_b.data = np.full(d_z, 0.3)
    else:  # gsde: relative drift with a stable fixed point near z = 1
        sig = 0.2
        gw = np.zeros((d_t + d_z, d_z))
        gw[d_t:, :] = -np.eye(d_z)
        model.gamma.layers[0].weight.data = gw
        model.gamma.layers[0].bias.data = np.full(
            d_z, np.tanh(1.0) + sig * sig / 2.0)
        model.sigma_b.data = np.full(d_z, sig)
    return model


def perturb_dataset(dataset, rho, seed):
    """x~ = x + rho * (unit-norm Gaussian direction) on observed cells, so the
    per-sample RMS perturbation equals rho exactly (rho = 0 is the identity)."""
    if rho == 0.0:
        return dataset
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed & (2**64 - 1))))
    out = []
    for s in dataset.samples:
        g = rng.standard_normal(s.values.shape) * s.mask
        nrm = np.linalg.norm(g)
        values = s.values + (rho * g / nrm if nrm > 0 else 0.0)
        out.append(IrregularSeries(s.times.copy(), values, s.mask.copy(), s.label))
    return replace(dataset, samples=out)


def robustness_curve(kind, dataset, rho, depths=(1, 2, 4, 8), n_samples=64,
                     seed=0, steps_per_unit=25, n_proj=50, model=None):
    """Sliced W1 between clean and perturbed readouts at each depth, with
    shared Brownian paths (common random numbers)."""
    if model is None:
        model = make_robustness_model(kind, dataset.n_channels, seed=seed)
    indices = list(range(min(n_samples, len(dataset.samples))))
    perturbed = perturb_dataset(dataset, rho, derive_seed(seed, 4242))
    tcfg = TrainConfig(root_seed=seed)
    w1_vals, se_vals, invalid = [], [], []
    with ad.no_grad():
        for depth in depths:
            scfg = SolveConfig(n_steps=int(steps_per_unit * depth), t_end=float(depth))
            cache_c = PathCache(dataset, tcfg.path_scheme)
            cache_p = PathCache(perturbed, tcfg.path_scheme)
            bm_seeds = [derive_seed(seed, depth, i) for i in indices]
            try:
                out_c = batch_forward(model, cache_c, indices, scfg, bm_seeds,
                                      mode="eval").data
                out_p = batch_forward(model, cache_p, indices, scfg, bm_seeds,
                                      mode="eval").data
            except NumericalExplosion:
                invalid.append(depth)
                w1_vals.append(np.nan)
                se_vals.append(np.nan)
                continue
            if rho == 0.0:
                # identical inputs and shared noise give identical outputs
                est = w1_sliced(out_c, out_p, n_proj=n_proj, seed=seed)
                w1_vals.append(est.value)
                se_vals.append(0.0)
                continue
            d = out_c.shape[1]
            rng = np.random.Generator(np.random.Philox(
                key=np.uint64(derive_seed(seed, 777) & (2**64 - 1))))
            if d == 1:
                w1_vals.append(w1_sorted(out_c, out_p).value)
                se_vals.append(0.0)
                continue
            dirs = rng.standard_normal((n_proj, d))
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            per_proj = np.array([w1_sorted(out_c @ u, out_p @ u).value
                                 for u in dirs])
            w1_vals.append(float(per_proj.mean()))
            se_vals.append(float(per_proj.std(ddof=1) / np.sqrt(n_proj)))
    valid = [(t, v) for t, v in zip(depths, w1_vals) if np.isfinite(v)]
    rho_corr = np.nan
    if len(valid) >= 3 and rho > 0.0:
        ts, vs = zip(*valid)
        rho_corr = float(sps.spearmanr(ts, vs).statistic)
    return RobustnessCurve(list(depths), rho, w1_vals, se_vals, kind,
                           spearman=rho_corr, invalid=invalid)


# ---------------------------------------------------------------------------
# Six-diffusion comparison
# ---------------------------------------------------------------------------

DIFFUSION_VARIANTS = ("sqrt", "cube", "const", "sigma_t", "sigma_t_z", "network")


class DiffusionVariantModel(SdeModel):
    """Common lnsde-style drift with a swappable diffusion function."""

    def __init__(self, base, variant):
        super().__init__(base.cfg, base.w_h, base.b_h, base.zeta, base.gamma,
                         base.sigma_w, base.sigma_b, base.sigma_mlp,
                         base.readout_net, base.cde_field)
        if variant not in DIFFUSION_VARIANTS:
            raise ValueError(f"unknown diffusion variant {variant!r}")
        self.variant = variant
        self.const_sigma = Tensor(np.full(base.cfg.d_z, 0.2), is_param=True)
        self.g_net = mlp_init(base.cfg.d_t + base.cfg.d_z,
                              [base.cfg.n_hidden] * max(base.cfg.n_layers, 1),
                              base.cfg.d_z, activation="relu", final_tanh=True,
                              seed=base.cfg.seed + 17)

    def parameters(self):
        params = super().parameters()
        if self.variant == "const":
            params.append(self.const_sigma)
        if self.variant == "network":
            params += self.g_net.parameters()
        return params

    def diffusion(self, t, z):
        v = self.variant
        if v == "sqrt":
            return ad.sqrt(ad.relu(z) + 1e-8)
        if v == "cube":
            return ad.powc(ad.absval(z), 3)
        if v == "const":
            return ad.mul(self.const_sigma, Tensor(np.ones_like(z.data)))
        if v == "sigma_t":
            return self.sigma_t(t)
        if v == "sigma_t_z":
            return ad.mul(self.sigma_t(t), z)
        batch = z.data.shape[0]
        enc = np.broadcast_to(self.encoding(t), (batch, self.cfg.d_t))
        return ad.forward(self.g_net, ad.concat([Tensor(enc), z], axis=-1))

    def diffusion_dz_diag(self, t, z):
        if self.variant in ("const", "sigma_t"):
            return np.zeros_like(z.data)
        if self.variant == "sigma_t_z":
            return np.broadcast_to(self.sigma_t(t).data, z.data.shape)
        return None


def diffusion_comparison(dataset, seed=0, epochs=100, scfg=None, tcfg=None):
    """Train each diffusion variant for a fixed epoch budget without early
    stopping; record per-epoch test loss and abort events."""
    scfg = scfg or SolveConfig(n_steps=50)
    results = {}
    for vi, variant in enumerate(DIFFUSION_VARIANTS):
        cfg = ModelConfig(kind="lnsde", d_x=dataset.n_channels, d_z=16,
                          n_layers=1, n_hidden=32, n_out=dataset.n_classes,
                          seed=derive_seed(seed, vi))
        model = DiffusionVariantModel(build_model(cfg), variant)
        vt = tcfg or TrainConfig(max_epochs=epochs, early_stopping=False,
                                 root_seed=derive_seed(seed, 5, 5))
        vt = replace(vt, max_epochs=epochs, early_stopping=False)
        tr, va, te = split(dataset, vt.split_seed, vt.ratios)
        test_losses = []

        cache = PathCache(dataset, vt.path_scheme)

        def on_epoch(epoch, history, _model=model, _te=te, _cache=cache,
                     _vt=vt, _losses=test_losses):
            from .training import evaluate_split
            loss, _ = evaluate_split(_model, dataset, _cache, _te, _vt, scfg)
            _losses.append(loss)

        aborted = False
        try:
            model, history = train(model, dataset, vt, scfg, train_idx=tr,
                                   val_idx=va, progress=on_epoch)
            aborted = history.aborted
        except NumericalExplosion:
            aborted = True
            history = None
        results[variant] = {
            "aborted": aborted,
            "test_loss": test_losses,
            "final_test_loss": test_losses[-1] if test_losses else np.nan,
            "epochs_completed": len(test_losses),
        }
    return results


# ---------------------------------------------------------------------------
# Missing-rate sweep
# ---------------------------------------------------------------------------

def missing_rate_sweep(kind, dataset, rates=(0.0, 0.3, 0.5, 0.7), seeds=(0, 1, 2),
                       scfg=None, max_epochs=40, d_z=16, use_control=True):
    """Train and evaluate per missing rate; accuracy mean and SD over seeds.

    Hyperparameters are fixed across rates (tuned on the regular setting)."""
    scfg = scfg or SolveConfig(n_steps=50)
    table = {}
    for rate in rates:
        accs = []
        for s in seeds:
            acc = _train_once(kind, dataset, rate, s, scfg, max_epochs, d_z,
                              use_control)
            accs.append(acc)
        table[rate] = {"mean": float(np.mean(accs)), "sd": float(np.std(accs)),
                       "per_seed": accs}
    return table


def _train_once(kind, dataset, rate, seed, scfg, max_epochs, d_z, use_control):
    corrupted = inject_missing(dataset, CorruptionSpec(rate, derive_seed(seed, 1)))
    tcfg = TrainConfig(max_epochs=max_epochs, split_seed=derive_seed(seed, 2),
                       root_seed=derive_seed(seed, 3))
    tr, va, te = split(corrupted, tcfg.split_seed, tcfg.ratios)
    normed, stats = normalize(corrupted, tr)
    cfg = ModelConfig(kind=kind, d_x=dataset.n_channels, d_z=d_z, n_layers=1,
                      n_hidden=32, n_out=dataset.n_classes,
                      use_control=use_control, seed=derive_seed(seed, 4))
    model = build_model(cfg)
    model, _ = train(model, normed, tcfg, scfg, train_idx=tr, val_idx=va)
    metrics = evaluate(model, normed, tcfg, scfg, indices=te)
    return metrics["accuracy"]
