"""Seeded Brownian grids and fixed-step Euler-Maruyama / Milstein integration.

Gradients flow through the whole discrete rollout (discretize-then-optimize):
every solver step is an ordinary tape operation, so ``backward`` on a loss of
the terminal state differentiates the exact trajectory that was computed.

The geometric kind is integrated in log space, which makes nonnegativity and
the absorbing state at 0 exact properties of the discretization rather than
approximate ones.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import NumericalExplosion
from .paths import eval_grid, deriv_grid


@dataclass
class BrownianGrid:
    seed: int
    n_steps: int
    dim: int
    dt: float
    increments: np.ndarray  # (n_steps, dim), each ~ Normal(0, dt)


def _row_generator(seed, k):
    key = np.array([seed & (2**64 - 1), k], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sample_brownian(seed, n_steps, dim, dt):
    """Counter-based grid: row k depends only on (seed, k), so any single
    step is reproducible in isolation via `brownian_increment`."""
    if n_steps < 1 or dim < 1 or dt <= 0:
        raise ValueError("n_steps, dim >= 1 and dt > 0 required")
    root = np.sqrt(dt)
    rows = np.empty((n_steps, dim))
    for k in range(n_steps):
        rows[k] = _row_generator(seed, k).standard_normal(dim)
    return BrownianGrid(seed, n_steps, dim, dt, rows * root)


def brownian_increment(seed, k, dim, dt):
    """Regenerate increment row k without materializing the whole grid."""
    return _row_generator(seed, k).standard_normal(dim) * np.sqrt(dt)


@dataclass
class SolveConfig:
    scheme: str = "euler"          # "euler" | "milstein"
    n_steps: int = 100
    t_end: float = 1.0
    explosion_threshold: float = 1e6

    def __post_init__(self):
        if self.scheme not in ("euler", "milstein"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.n_steps < 1 or self.t_end <= 0:
            raise ValueError("n_steps >= 1 and t_end > 0 required")


@dataclass
class Trajectory:
    times: np.ndarray
    states: list              # list of Tensors, (B, d_z) each
    exploded: bool = False
    warnings: list = field(default_factory=list)

    @property
    def terminal(self):
        return self.states[-1]


def _check_finite(z_data, threshold, step):
    norms = np.linalg.norm(z_data, axis=-1)
    if not np.all(np.isfinite(z_data)) or np.any(norms > threshold):
        raise NumericalExplosion(step)


def solve(model, path, bm, cfg, mode="eval", z0=None, path_grid=None):
    """Integrate the model over [0, t_end] on a uniform grid.

    The Brownian grid's dim must be B * d_z with B the batch size; increments
    are reshaped to (B, d_z) per step. `path_grid` optionally supplies
    precomputed X(t_k) values of shape (n_steps + 1, B, d_x + 1).
    """
    kind = model.cfg.kind
    d_z = model.cfg.d_z
    n = cfg.n_steps
    dt = cfg.t_end / n
    times = np.linspace(0.0, cfg.t_end, n + 1)
    stochastic = kind in ("naive-sde", "lsde", "lnsde", "gsde")
    if stochastic:
        if bm.n_steps != n or bm.dim % d_z != 0:
            raise ValueError("Brownian grid incompatible with solve config")
        batch = bm.dim // d_z
    else:
        batch = z0.data.shape[0] if z0 is not None else 1

    if path_grid is None and path is not None:
        grid = eval_grid(path, times)          # (n+1, d_x+1)
        path_grid = np.repeat(grid[:, None, :], batch, axis=1)
    dgrid = None
    if kind == "ncde":
        dgrid = deriv_grid(path, times)
        dgrid = np.repeat(dgrid[:, None, :], batch, axis=1)

    if z0 is None:
        z0 = model.init_state(path_grid[0][:, 1:])   # drop the clock channel
    z = z0

    scheme = cfg.scheme
    traj_warnings = []
    if scheme == "milstein" and kind == "naive-sde":
        traj_warnings.append("milstein unavailable for naive-sde; fell back to euler")
        warnings.warn(traj_warnings[-1])
        scheme = "euler"

    if kind == "gsde":
        return _solve_gsde_log(model, bm, cfg, z, path_grid, times, dt, batch,
                               traj_warnings)

    states = [z]
    for k in range(n):
        t = times[k]
        x_t = path_grid[k] if path_grid is not None else None
        if kind == "ncde":
            flat = model.cde_matrix(t, z)                       # (B, d_z*(d_x+1))
            dx = dgrid[k]                                       # (B, d_x+1)
            z = z + _contract_cde(flat, dx, batch, d_z, dt)
        else:
            f = model.drift(t, z, x_t)
            if stochastic:
                g = model.diffusion(t, z)
                dw = Tensor(bm.increments[k].reshape(batch, d_z))
                z_new = z + f * dt + ad.mul(g, dw)
                if scheme == "milstein":
                    z_new = z_new + _milstein_term(model, t, z, g, dw, dt)
                z = z_new
            else:
                z = z + f * dt
        _check_finite(z.data, cfg.explosion_threshold, k + 1)
        states.append(z)
    return Trajectory(times, states, warnings=traj_warnings)


def _contract_cde(flat, dx, batch, d_z, dt):
    """(f(t,z) dX/dt) dt with f given row-major as (B, d_z*(d_x+1))."""
    d_ctrl = dx.shape[-1]
    fmat = flat.data.reshape(batch, d_z, d_ctrl)
    out = np.einsum("bij,bj->bi", fmat, dx) * dt

    def bw(g):
        gm = np.einsum("bi,bj->bij", g * dt, dx)
        flat.grad += gm.reshape(batch, d_z * d_ctrl)

    return Tensor(out, (flat,), bw)


def _milstein_term(model, t, z_prev, g, dw, dt):
    """Diagonal-noise Milstein correction 0.5 * g * (dg/dz)_diag * (dW^2 - dt).

    The diagonal derivative is analytic: 0 for additive noise (term vanishes,
    Milstein == Euler bitwise), sigma(t) for linear multiplicative noise.
    """
    diag = model.diffusion_dz_diag(t, z_prev)
    factor = 0.5 * (dw.data ** 2 - dt)
    if not np.any(diag):
        return Tensor(np.zeros_like(z_prev.data))
    # g = sigma(t) * z  =>  correction = 0.5 * sigma(t) * g * (dW^2 - dt),
    # kept on the tape through g so gradients see the correction too.
    return ad.mul(ad.mul(Tensor(diag), g), Tensor(factor))


def _solve_gsde_log(model, bm, cfg, z0, path_grid, times, dt, batch, traj_warnings):
    """Log-space rollout: y' = y + (gamma_rel - sigma^2/2) dt + sigma dW,
    z = exp(y). Components starting at exactly 0 are frozen at 0."""
    n = cfg.n_steps
    d_z = model.cfg.d_z
    zero_mask = z0.data == 0.0
    live = Tensor((~zero_mask).astype(np.float64))
    # frozen components get y = log(1) = 0 and are masked out of every state
    y = ad.log(ad.mul(z0, live) + Tensor(zero_mask.astype(np.float64)))
    states = [ad.mul(z0, live)]
    for k in range(n):
        t = times[k]
        z = states[-1]
        x_t = path_grid[k] if path_grid is not None else None
        gamma_rel = model.relative_drift(t, z, x_t)
        sig = model.sigma_t(t)
        dw = Tensor(bm.increments[k].reshape(batch, d_z))
        y = y + (gamma_rel - ad.mul(sig, sig) * 0.5) * dt + ad.mul(sig, dw)
        z_next = ad.mul(ad.exp(y), live)
        _check_finite(z_next.data, cfg.explosion_threshold, k + 1)
        states.append(z_next)
    return Trajectory(times, states, warnings=traj_warnings)


# ---------------------------------------------------------------------------
# Strong-convergence study
# ---------------------------------------------------------------------------

def _gbm_step_euler(z, mu, sigma, dt, dw):
    return z + mu * z * dt + sigma * z * dw


def _gbm_step_milstein(z, mu, sigma, dt, dw):
    return _gbm_step_euler(z, mu, sigma, dt, dw) + 0.5 * sigma * sigma * z * (dw * dw - dt)


def strong_error(scheme, mu, sigma, z0, t_end, dt_list, n_paths, seed=0):
    """Fitted slope of log E|z_dt(T) - z_exact(T)| vs log dt on a GBM oracle.

    One fine Brownian path per sample is refined consistently: coarse
    increments are block sums of the finest increments, and the closed-form
    solution uses the same W(T).
    """
    dt_list = sorted(dt_list, reverse=True)
    n_fine = int(round(t_end / dt_list[-1]))
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed & (2**64 - 1))))
    fine_dw = rng.standard_normal((n_paths, n_fine)) * np.sqrt(dt_list[-1])
    w_T = fine_dw.sum(axis=1)
    z_exact = z0 * np.exp((mu - 0.5 * sigma * sigma) * t_end + sigma * w_T)
    step = _gbm_step_euler if scheme == "euler" else _gbm_step_milstein
    errs = []
    for dt in dt_list:
        n = int(round(t_end / dt))
        block = n_fine // n
        dw = fine_dw[:, : n * block].reshape(n_paths, n, block).sum(axis=2)
        z = np.full(n_paths, float(z0))
        for k in range(n):
            z = step(z, mu, sigma, dt, dw[:, k])
        errs.append(np.abs(z - z_exact).mean())
    logs = np.log(np.asarray(dt_list))
    loge = np.log(np.asarray(errs))
    slope = np.polyfit(logs, loge, 1)[0]
    return float(slope), list(zip(dt_list, errs))
