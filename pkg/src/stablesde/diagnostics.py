"""Finite-difference gradient checks for the whole pipeline.

Two tiers: pure-network checks (smooth activations, tight tolerance) and
backprop-through-solve checks (2-step rollout, every SDE kind, differentiated
with respect to the initial latent state).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import grad_check, mlp_init
from .models import ModelConfig, build_model
from .solvers import SolveConfig, sample_brownian, solve


def _smooth(model):
    """Swap relu hidden activations for tanh so central differences are clean."""
    for mlp in (model.zeta, model.gamma, model.sigma_mlp, model.readout_net,
                model.cde_field):
        if mlp is None:
            continue
        for layer in mlp.layers:
            if layer.activation == "relu":
                layer.activation = "tanh"
    return model


def gradcheck_network(seed=0):
    """Max relative error of a pure MLP scalar loss vs central differences."""
    mlp = mlp_init(4, [8, 8], 3, activation="tanh", final_tanh=True, seed=seed)
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed & (2**64 - 1))))
    x = rng.standard_normal((2, 4))

    def f(xt):
        out = ad.forward(mlp, xt)
        return ad.tsum(ad.mul(out, out))

    return grad_check(f, x)


def gradcheck_through_solve(kind, seed=0, d_z=3, d_x=2, n_steps=2):
    """Differentiate a 2-step rollout with respect to z(0)."""
    cfg = ModelConfig(kind=kind, d_x=d_x, d_z=d_z, n_layers=1, n_hidden=5,
                      dropout=0.0, seed=seed)
    model = _smooth(build_model(cfg))
    scfg = SolveConfig(n_steps=n_steps, t_end=0.2)
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed & (2**64 - 1))))
    times = np.linspace(0.0, scfg.t_end, n_steps + 1)
    grid = np.concatenate([((times - times[0]) / (times[-1] - times[0]))[:, None],
                           rng.standard_normal((n_steps + 1, d_x))], axis=1)
    path_grid = grid[:, None, :]  # batch of one
    stochastic = kind in ("naive-sde", "lsde", "lnsde", "gsde")
    bm = sample_brownian(seed + 1, n_steps, d_z, scfg.t_end / n_steps) \
        if stochastic else None
    z0_data = np.array([[0.5, 1.0, 1.5]])[:, :d_z]  # positive (gsde-safe)

    def f(z0):
        traj = solve(model, None, bm, scfg, z0=z0, path_grid=path_grid)
        out = model.readout(traj.terminal)
        return ad.tsum(ad.mul(out, out))

    return grad_check(f, z0_data)


SOLVE_KINDS = ("naive-sde", "lsde", "lnsde", "gsde")


def gradcheck_suite(seed=0):
    """Worst relative error over the pure-network and through-solve checks."""
    worst = gradcheck_network(seed)
    for kind in SOLVE_KINDS:
        worst = max(worst, gradcheck_through_solve(kind, seed=seed))
    return worst
