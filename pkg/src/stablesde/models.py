"""Drift and diffusion fields for every model kind.

Kinds: the naive neural SDE baseline, the three stable classes (Langevin-type,
linear-noise, geometric), and the ODE/CDE baselines. The stable classes share
a controlled latent state zbar = zeta(enc(t), z, X(t)) feeding the drift net.

All vector fields operate on batched Tensors of shape (B, d_z) so a whole
mini-batch (or a whole bundle of Monte Carlo paths) moves through one tape.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Mlp, Tensor, mlp_init
from .errors import NegativeStateGSDE

MODEL_KINDS = ("naive-sde", "lsde", "lnsde", "gsde", "ncde", "node")

CHECKPOINT_VERSION = 1


def time_encoding(t, d_t=8):
    """Sinusoidal encoding of scalar t; components interleave sin/cos."""
    if d_t % 2 != 0:
        raise ValueError("encoding dimension must be even")
    i = np.arange(d_t // 2)
    freq = 1.0 / (10000.0 ** (2.0 * i / d_t))
    enc = np.empty(d_t)
    enc[0::2] = np.sin(t * freq)
    enc[1::2] = np.cos(t * freq)
    return enc


@dataclass
class ModelConfig:
    kind: str = "lnsde"
    d_x: int = 1
    d_z: int = 32
    d_t: int = 8
    n_layers: int = 2          # hidden layers in each vector field
    n_hidden: int = 32
    n_out: int = 2             # classes, or regression output dim
    sigma_form: str = "mlp"    # "affine" or "mlp"
    readout_hidden: int = 32
    dropout: float = 0.1
    use_control: bool = True   # ablation switch: drift sees raw z when False
    seed: int = 0

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class SdeModel:
    cfg: ModelConfig
    w_h: Tensor                # (d_x, d_z) initial affine map
    b_h: Tensor                # (d_z,)
    zeta: Mlp                  # control net, final tanh
    gamma: Mlp                 # drift net, final tanh
    sigma_w: Optional[Tensor]  # affine diffusion (d_t, d_z), or None
    sigma_b: Optional[Tensor]
    sigma_mlp: Optional[Mlp]
    readout_net: Mlp
    cde_field: Optional[Mlp] = None   # (d_t + d_z) -> d_z * (d_x + 1), ncde only
    _enc_cache: dict = field(default_factory=dict)

    # ---- parameter bookkeeping ----

    def parameters(self):
        params = [self.w_h, self.b_h]
        params += self.zeta.parameters()
        params += self.gamma.parameters()
        if self.sigma_mlp is not None:
            params += self.sigma_mlp.parameters()
        if self.sigma_w is not None:
            params += [self.sigma_w, self.sigma_b]
        if self.cde_field is not None:
            params += self.cde_field.parameters()
        params += self.readout_net.parameters()
        return params

    def readout_final_layer_params(self):
        last = self.readout_net.layers[-1]
        return [last.weight, last.bias]

    def encoding(self, t):
        key = round(float(t), 12)
        enc = self._enc_cache.get(key)
        if enc is None:
            enc = time_encoding(t, self.cfg.d_t)
            self._enc_cache[key] = enc
        return enc

    # ---- fields ----

    def init_state(self, x0):
        """z(0) = W_h x0 + b_h; for gsde pushed positive via softplus."""
        x0 = x0 if isinstance(x0, Tensor) else Tensor(x0)
        z0 = ad.matmul(x0, self.w_h) + self.b_h
        if self.cfg.kind == "gsde":
            z0 = ad.softplus(z0) + 1e-6
        return z0

    def controlled_state(self, t, z, x_t):
        """zbar = zeta(enc(t), z, X(t)); componentwise in (-1, 1)."""
        batch = z.data.shape[0]
        enc = np.broadcast_to(self.encoding(t), (batch, self.cfg.d_t))
        x_t = np.broadcast_to(np.atleast_2d(x_t), (batch, self.cfg.d_x + 1))
        inp = ad.concat([Tensor(enc), z, Tensor(x_t)], axis=-1)
        return ad.forward(self.zeta, inp)

    def _drift_input(self, t, z, x_t):
        zbar = self.controlled_state(t, z, x_t) if self.cfg.use_control else z
        if self.cfg.kind == "lsde":
            return zbar
        batch = z.data.shape[0]
        enc = np.broadcast_to(self.encoding(t), (batch, self.cfg.d_t))
        return ad.concat([Tensor(enc), zbar], axis=-1)

    def relative_drift(self, t, z, x_t):
        """gamma term alone; for gsde this is the per-unit (relative) drift."""
        return ad.forward(self.gamma, self._drift_input(t, z, x_t))

    def drift(self, t, z, x_t):
        kind = self.cfg.kind
        if kind == "naive-sde":
            batch = z.data.shape[0]
            enc = np.broadcast_to(self.encoding(t), (batch, self.cfg.d_t))
            return ad.forward(self.gamma, ad.concat([Tensor(enc), z], axis=-1))
        if kind == "gsde":
            if np.any(z.data < 0.0):
                raise NegativeStateGSDE("gsde drift requires z >= 0 componentwise")
            return ad.mul(self.relative_drift(t, z, x_t), z)
        # lsde / lnsde / node share the gamma(zbar)-style drift
        return self.relative_drift(t, z, x_t)

    def sigma_t(self, t):
        """sigma(t): state-independent diagonal coefficients, shape (d_z,)."""
        enc = Tensor(self.encoding(t)[None, :])
        if self.sigma_mlp is not None:
            out = ad.forward(self.sigma_mlp, enc)
        else:
            out = ad.matmul(enc, self.sigma_w) + self.sigma_b
        return out  # (1, d_z), broadcasts against (B, d_z)

    def diffusion(self, t, z):
        kind = self.cfg.kind
        if kind in ("node", "ncde"):
            return Tensor(np.zeros_like(z.data))
        if kind == "naive-sde":
            batch = z.data.shape[0]
            enc = np.broadcast_to(self.encoding(t), (batch, self.cfg.d_t))
            return ad.forward(self.sigma_mlp, ad.concat([Tensor(enc), z], axis=-1))
        if kind == "lsde":
            return self.sigma_t(t)
        # lnsde / gsde: linear multiplicative noise
        return ad.mul(self.sigma_t(t), z)

    def diffusion_dz_diag(self, t, z):
        """Analytic diagonal of d(diffusion)/dz; None when unavailable (naive)."""
        kind = self.cfg.kind
        if kind in ("lsde", "node", "ncde"):
            return np.zeros_like(z.data)
        if kind in ("lnsde", "gsde"):
            return np.broadcast_to(self.sigma_t(t).data, z.data.shape)
        return None

    def cde_matrix(self, t, z):
        """CDE field f(t, z) as a (B, d_z, d_x + 1) stack."""
        batch = z.data.shape[0]
        enc = np.broadcast_to(self.encoding(t), (batch, self.cfg.d_t))
        flat = ad.forward(self.cde_field, ad.concat([Tensor(enc), z], axis=-1))
        return flat  # reshaped by the solver

    def readout(self, z_t, mode="eval", dropout_seed=0):
        return ad.forward(self.readout_net, z_t, mode=mode, dropout_seed=dropout_seed)


def build_model(cfg):
    """Wire up the networks for a given kind; deterministic given cfg.seed."""
    if cfg.kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {cfg.kind!r}")
    seed = cfg.seed
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed & (2**64 - 1))))
    bound = np.sqrt(6.0 / (cfg.d_x + cfg.d_z))
    w_h = Tensor(rng.uniform(-bound, bound, size=(cfg.d_x, cfg.d_z)), is_param=True)
    b_h = Tensor(np.zeros(cfg.d_z), is_param=True)

    hidden = [cfg.n_hidden] * cfg.n_layers
    zeta = mlp_init(cfg.d_t + cfg.d_z + cfg.d_x + 1, hidden, cfg.d_z,
                    activation="relu", final_tanh=True, seed=seed + 1)
    # gsde drift must use bounded activations throughout (tanh), others use relu
    gamma_act = "tanh" if cfg.kind == "gsde" else "relu"
    gamma_in = cfg.d_z if cfg.kind == "lsde" else cfg.d_t + cfg.d_z
    if cfg.kind == "naive-sde":
        gamma_in = cfg.d_t + cfg.d_z
    gamma = mlp_init(gamma_in, hidden, cfg.d_z,
                     activation=gamma_act, final_tanh=True, seed=seed + 2)

    sigma_w = sigma_b = sigma_mlp = None
    if cfg.kind == "naive-sde":
        sigma_mlp = mlp_init(cfg.d_t + cfg.d_z, hidden, cfg.d_z,
                             activation="relu", final_tanh=True, seed=seed + 3)
    elif cfg.sigma_form == "affine":
        s_bound = np.sqrt(6.0 / (cfg.d_t + cfg.d_z))
        sigma_w = Tensor(rng.uniform(-s_bound, s_bound, size=(cfg.d_t, cfg.d_z)),
                         is_param=True)
        sigma_b = Tensor(np.zeros(cfg.d_z), is_param=True)
    else:
        sigma_mlp = mlp_init(cfg.d_t, hidden, cfg.d_z,
                             activation="relu", final_tanh=True, seed=seed + 3)

    cde_field = None
    if cfg.kind == "ncde":
        cde_field = mlp_init(cfg.d_t + cfg.d_z, hidden, cfg.d_z * (cfg.d_x + 1),
                             activation="relu", final_tanh=True, seed=seed + 4)

    readout = mlp_init(cfg.d_z, [cfg.readout_hidden], cfg.n_out,
                       activation="relu", final_tanh=False, seed=seed + 5,
                       dropout_rate=cfg.dropout)
    return SdeModel(cfg, w_h, b_h, zeta, gamma, sigma_w, sigma_b, sigma_mlp,
                    readout, cde_field)


# ---------------------------------------------------------------------------
# Checkpoint I/O
# ---------------------------------------------------------------------------

def save_checkpoint(model, path):
    """Single JSON checkpoint: version tag, config echo, flat parameter arrays."""
    blob = {
        "version": CHECKPOINT_VERSION,
        "config": model.cfg.to_dict(),
        "params": [p.data.ravel().tolist() for p in model.parameters()],
    }
    with open(path, "w") as fh:
        json.dump(blob, fh)


def load_checkpoint(path):
    with open(path) as fh:
        blob = json.load(fh)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')}")
    cfg = ModelConfig(**blob["config"])
    model = build_model(cfg)
    params = model.parameters()
    if len(params) != len(blob["params"]):
        raise ValueError("checkpoint parameter count mismatch")
    for p, flat in zip(params, blob["params"]):
        arr = np.asarray(flat, dtype=np.float64)
        if arr.size != p.data.size:
            raise ValueError("checkpoint parameter shape mismatch")
        p.data = arr.reshape(p.data.shape)
    return model
