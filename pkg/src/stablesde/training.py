"""Mini-batch training with early stopping, plus losses and metrics.

One root seed determines everything: the split, Brownian paths (fresh per
epoch/batch/sample, seeds derived deterministically), and dropout masks, so
(root seed, config, dataset) fixes the run bit-for-bit.
"""

from __future__ import annotations

import csv
import time as _time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor, adam_step, clip_global_norm
from .errors import NumericalExplosion
from .paths import build_path, eval_grid
from .solvers import BrownianGrid, sample_brownian, solve


@dataclass
class TrainConfig:
    max_epochs: int = 100
    batch_size: int = 32
    lr: float = 1e-3
    readout_lr_multiplier: float = 100.0
    patience: int = 10
    ratios: tuple = (0.70, 0.15, 0.15)
    split_seed: int = 0
    root_seed: int = 0
    task: str = "classification"   # classification | interpolation | forecasting
    path_scheme: str = "natural-cubic"
    grad_clip: float = 10.0
    early_stopping: bool = True

    def __post_init__(self):
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValueError("split ratios must sum to 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_metric: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False
    aborted: bool = False

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "val_metric"])
            for i in range(len(self.train_loss)):
                writer.writerow([i, repr(self.train_loss[i]),
                                 repr(self.val_loss[i]), repr(self.val_metric[i])])


def derive_seed(root, *indices):
    """Stable 64-bit seed derivation via splitmix-style mixing."""
    x = np.uint64(root & (2**64 - 1))
    for idx in indices:
        x = np.uint64((int(x) + 0x9E3779B97F4A7C15 + idx) & (2**64 - 1))
        v = int(x)
        v ^= (v >> 30); v = (v * 0xBF58476D1CE4E5B9) & (2**64 - 1)
        v ^= (v >> 27); v = (v * 0x94D049BB133111EB) & (2**64 - 1)
        v ^= (v >> 31)
        x = np.uint64(v)
    return int(x)


def split(dataset, seed, ratios=(0.70, 0.15, 0.15)):
    """Deterministic stratified split; classes with < 3 samples go to train."""
    n = len(dataset.samples)
    if n == 0:
        raise ValueError("dataset is empty")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed & (2**64 - 1))))
    labels = dataset.labels()
    train, val, test = [], [], []
    if dataset.n_classes > 0 and all(l is not None for l in labels):
        for c in sorted({int(l) for l in labels}):
            idx = np.flatnonzero(labels == c)
            idx = idx[rng.permutation(len(idx))]
            if len(idx) < 3:
                warnings.warn(f"class {c} has < 3 samples; all go to train")
                train.extend(idx.tolist())
                continue
            n_val = int(len(idx) * ratios[1])
            n_test = int(len(idx) * ratios[2])
            n_train = len(idx) - n_val - n_test  # remainder goes to train
            train.extend(idx[:n_train].tolist())
            val.extend(idx[n_train:n_train + n_val].tolist())
            test.extend(idx[n_train + n_val:].tolist())
    else:
        idx = rng.permutation(n)
        n_val = int(n * ratios[1])
        n_test = int(n * ratios[2])
        n_train = n - n_val - n_test
        train = idx[:n_train].tolist()
        val = idx[n_train:n_train + n_val].tolist()
        test = idx[n_train + n_val:].tolist()
    return sorted(train), sorted(val), sorted(test)


def loss_fn(task, outputs, targets):
    if task == "classification":
        return ad.softmax_cross_entropy(outputs, targets)
    diff = outputs - Tensor(np.asarray(targets, dtype=np.float64))
    return ad.tmean(ad.mul(diff, diff))


# ---------------------------------------------------------------------------
# Batched forward pass
# ---------------------------------------------------------------------------

class PathCache:
    """Controlled paths and their solver-grid values, built once per sample."""

    def __init__(self, dataset, scheme):
        self.dataset = dataset
        self.scheme = scheme
        self._paths = {}
        self._grids = {}

    def path(self, i):
        p = self._paths.get(i)
        if p is None:
            p = build_path(self.dataset.samples[i], self.scheme)
            self._paths[i] = p
        return p

    def grid(self, i, times_key, times):
        key = (i, times_key)
        g = self._grids.get(key)
        if g is None:
            g = eval_grid(self.path(i), times)
            self._grids[key] = g
        return g


def batch_forward(model, cache, indices, scfg, bm_seeds, mode="train",
                  dropout_seed=0):
    """Solve a batch in one vectorized tape and return the readout Tensor."""
    n = scfg.n_steps
    times = np.linspace(0.0, scfg.t_end, n + 1)
    times_key = (scfg.n_steps, scfg.t_end)
    grids = np.stack([cache.grid(i, times_key, times) for i in indices], axis=1)
    batch = len(indices)
    d_z = model.cfg.d_z
    stochastic = model.cfg.kind in ("naive-sde", "lsde", "lnsde", "gsde")
    bm = None
    if stochastic:
        inc = np.empty((n, batch * d_z))
        dt = scfg.t_end / n
        for j, s in enumerate(bm_seeds):
            g = sample_brownian(s, n, d_z, dt)
            inc[:, j * d_z:(j + 1) * d_z] = g.increments
        bm = BrownianGrid(0, n, batch * d_z, dt, inc)
    z0 = model.init_state(grids[0][:, 1:])   # drop the clock channel
    traj = solve(model, None, bm, scfg, mode=mode, z0=z0, path_grid=grids)
    return model.readout(traj.terminal, mode=mode, dropout_seed=dropout_seed)


# ---------------------------------------------------------------------------
# Train loop
# ---------------------------------------------------------------------------

def _snapshot(model):
    return [p.data.copy() for p in model.parameters()]


def _restore(model, snap):
    for p, d in zip(model.parameters(), snap):
        p.data = d.copy()


def train(model, dataset, tcfg, scfg, train_idx=None, val_idx=None,
          progress=None):
    """Algorithm-style loop: per batch solve, loss, backward, clip, Adam with
    the readout-final-layer multiplier; best-epoch restore; early stopping."""
    if train_idx is None or val_idx is None:
        train_idx, val_idx, _ = split(dataset, tcfg.split_seed, tcfg.ratios)
    cache = PathCache(dataset, tcfg.path_scheme)
    final = set(p.uid for p in model.readout_final_layer_params())
    base_group = [p for p in model.parameters() if p.uid not in final]
    state = AdamState([(base_group, 1.0),
                       (model.readout_final_layer_params(), tcfg.readout_lr_multiplier)],
                      lr=tcfg.lr)
    history = TrainHistory()
    best_snap = _snapshot(model)
    best_val = np.inf
    labels = dataset.labels()
    consec_explosions = 0

    for epoch in range(tcfg.max_epochs):
        t0 = _time.perf_counter()
        order = np.random.Generator(np.random.Philox(
            key=np.uint64(derive_seed(tcfg.root_seed, epoch, 10_000)))
        ).permutation(len(train_idx))
        epoch_losses = []
        for b in range(0, len(order), tcfg.batch_size):
            batch_pos = order[b:b + tcfg.batch_size]
            indices = [train_idx[j] for j in batch_pos]
            bm_seeds = [derive_seed(tcfg.root_seed, epoch, b, j)
                        for j in range(len(indices))]
            try:
                out = batch_forward(model, cache, indices, scfg, bm_seeds,
                                    mode="train",
                                    dropout_seed=derive_seed(tcfg.root_seed,
                                                             epoch, b, 77))
                loss = loss_fn(tcfg.task, out, labels[indices])
            except NumericalExplosion:
                consec_explosions += 1
                if consec_explosions >= 3:
                    history.aborted = True
                    _restore(model, best_snap)
                    return model, history
                continue
            consec_explosions = 0
            grads = loss.backward()
            clip_global_norm(grads, tcfg.grad_clip)
            adam_step(state, grads)
            epoch_losses.append(float(loss.data))

        val_loss, val_metric = evaluate_split(model, dataset, cache, val_idx,
                                              tcfg, scfg)
        history.train_loss.append(float(np.mean(epoch_losses)) if epoch_losses
                                  else np.nan)
        history.val_loss.append(val_loss)
        history.val_metric.append(val_metric)
        history.epoch_seconds.append(_time.perf_counter() - t0)
        if progress is not None:
            progress(epoch, history)
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            history.best_epoch = epoch
            best_snap = _snapshot(model)
        elif (tcfg.early_stopping and
              epoch - history.best_epoch >= tcfg.patience):
            history.stopped_early = True
            break
    _restore(model, best_snap)
    return model, history


def evaluate_split(model, dataset, cache, indices, tcfg, scfg, n_mc=1):
    """Validation/test loss and metric with eval-mode dropout and fixed noise."""
    if not indices:
        return np.nan, np.nan
    labels = dataset.labels()
    logits_sum = None
    with ad.no_grad():
        for draw in range(n_mc):
            bm_seeds = [derive_seed(tcfg.root_seed, 999_983, draw, i)
                        for i in indices]
            out = batch_forward(model, cache, indices, scfg, bm_seeds,
                                mode="eval").data
            logits_sum = out if logits_sum is None else logits_sum + out
    logits = logits_sum / n_mc
    if tcfg.task == "classification":
        y = labels[indices].astype(np.int64)
        z = logits - logits.max(axis=-1, keepdims=True)
        log_probs = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        ce = float(-log_probs[np.arange(len(y)), y].mean())
        acc = float((logits.argmax(axis=-1) == y).mean())
        return ce, acc
    y = np.stack([dataset.samples[i].values[-1] for i in indices])
    mse = float(((logits - y) ** 2).mean())
    return mse, mse


def evaluate(model, dataset, tcfg, scfg, indices=None, n_mc=1):
    """Metrics dict on the given indices (default: all samples)."""
    if indices is None:
        indices = list(range(len(dataset.samples)))
    cache = PathCache(dataset, tcfg.path_scheme)
    loss, metric = evaluate_split(model, dataset, cache, indices, tcfg, scfg,
                                  n_mc=n_mc)
    out = {"loss": loss}
    if tcfg.task == "classification":
        out["accuracy"] = metric
        out["cross_entropy"] = loss
        if dataset.n_classes == 2:
            labels = dataset.labels()[indices].astype(np.int64)
            with ad.no_grad():
                bm_seeds = [derive_seed(tcfg.root_seed, 999_983, 0, i)
                            for i in indices]
                logits = batch_forward(model, cache, indices, scfg, bm_seeds,
                                       mode="eval").data
            scores = logits[:, 1] - logits[:, 0]
            out["auroc"] = auroc(scores, labels)
    else:
        out["mse"] = metric
    return out


def auroc(scores, labels):
    """Rank-sum (Mann-Whitney) AUROC for binary labels; ties get midranks."""
    labels = np.asarray(labels)
    if set(np.unique(labels)) - {0, 1}:
        raise ValueError("auroc requires binary labels")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        return np.nan
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = np.asarray(scores)[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    r_pos = ranks[labels == 1].sum()
    return float((r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))
