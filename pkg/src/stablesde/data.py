"""Dataset ingestion, corruption, length normalization, scaling, and synthetic
generators for desk-scale experiments.

On-disk format is long CSV: ``sample_id,time,channel,value`` with a sibling
labels file ``sample_id,label``. Absent (time, channel) cells are missing.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .paths import IrregularSeries


@dataclass
class Dataset:
    samples: list
    n_channels: int
    n_classes: int            # 0 for regression
    name: str = "unnamed"
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    def labels(self):
        return np.array([s.label for s in self.samples])

    def content_hash(self):
        h = hashlib.sha256()
        for s in self.samples:
            h.update(s.times.tobytes())
            h.update(s.values.tobytes())
            h.update(s.mask.tobytes())
            h.update(str(s.label).encode())
        return h.hexdigest()


@dataclass
class CorruptionSpec:
    rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ValueError("missing rate must lie in [0, 1)")


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

def load_csv(values_path, labels_path=None):
    """Load long-format CSV; duplicate (sample, time, channel) triples error."""
    cells = {}
    n_channels = 0
    with open(values_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header] != ["sample_id", "time", "channel", "value"]:
            raise ValueError(f"unexpected header {header} in {values_path}")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise ValueError(f"{values_path}:{lineno}: malformed row {row}")
            try:
                sid, t, ch, val = row[0], float(row[1]), int(row[2]), float(row[3])
            except ValueError as exc:
                raise ValueError(f"{values_path}:{lineno}: {exc}") from exc
            key = (sid, t, ch)
            if key in cells:
                raise ValueError(
                    f"{values_path}:{lineno}: duplicate (sample, time, channel) "
                    f"triple {key}")
            cells[key] = val
            n_channels = max(n_channels, ch + 1)

    labels = {}
    n_classes = 0
    if labels_path is not None:
        with open(labels_path, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for row in reader:
                labels[row[0]] = int(row[1])
        if labels:
            n_classes = max(labels.values()) + 1

    by_sample = {}
    for (sid, t, ch), val in cells.items():
        by_sample.setdefault(sid, {}).setdefault(t, {})[ch] = val

    samples = []
    for sid in sorted(by_sample):
        times = np.array(sorted(by_sample[sid]))
        if len(np.unique(times)) != len(times):
            raise ValueError(f"sample {sid}: duplicate timestamps")
        values = np.zeros((len(times), n_channels))
        mask = np.zeros((len(times), n_channels), dtype=bool)
        for i, t in enumerate(times):
            for ch, val in by_sample[sid][t].items():
                values[i, ch] = val
                mask[i, ch] = True
        samples.append(IrregularSeries(times, values, mask, labels.get(sid)))
    return Dataset(samples, n_channels, n_classes, name=str(values_path),
                   provenance={"source": str(values_path)})


def save_csv(dataset, values_path, labels_path=None):
    with open(values_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "time", "channel", "value"])
        for i, s in enumerate(dataset.samples):
            sid = f"s{i:05d}"
            for k, t in enumerate(s.times):
                for ch in range(dataset.n_channels):
                    if s.mask[k, ch]:
                        writer.writerow([sid, repr(float(t)), ch,
                                         repr(float(s.values[k, ch]))])
    if labels_path is not None:
        with open(labels_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_id", "label"])
            for i, s in enumerate(dataset.samples):
                if s.label is not None:
                    writer.writerow([f"s{i:05d}", s.label])


# ---------------------------------------------------------------------------
# Transformations
# ---------------------------------------------------------------------------

def inject_missing(dataset, spec):
    """Independently mask observed cells with probability spec.rate, keeping at
    least one observation per channel per sample. Values are never altered."""
    rng = np.random.Generator(np.random.Philox(key=np.uint64(spec.seed & (2**64 - 1))))
    out = []
    for s in dataset.samples:
        mask = s.mask.copy()
        if spec.rate > 0.0:
            drop = rng.random(mask.shape) < spec.rate
            new_mask = mask & ~drop
            for ch in range(mask.shape[1]):
                if mask[:, ch].any() and not new_mask[:, ch].any():
                    survivors = np.flatnonzero(mask[:, ch])
                    keep = survivors[rng.integers(len(survivors))]
                    new_mask[keep, ch] = True
            mask = new_mask
        out.append(IrregularSeries(s.times.copy(), s.values.copy(), mask, s.label))
    prov = dict(dataset.provenance)
    prov["corruption"] = {"rate": spec.rate, "seed": spec.seed}
    return replace(dataset, samples=out, provenance=prov)


def uniform_scale(dataset, target_len):
    """Affinely rescale each sample onto a shared [0, 1] grid of target_len
    points; observations snap to nearest grid point (ties to the earlier one,
    collisions keep the later observation and are counted)."""
    max_len = max(len(s.times) for s in dataset.samples)
    if target_len < max_len:
        raise ValueError(f"target_len {target_len} < longest series {max_len}")
    grid = np.linspace(0.0, 1.0, target_len)
    collisions = 0
    out = []
    for s in dataset.samples:
        span = s.times[-1] - s.times[0]
        pos = (s.times - s.times[0]) / span
        # nearest grid index, ties to the earlier point
        idx = np.searchsorted(grid, pos - 0.5 / (target_len - 1), side="left")
        idx = np.clip(idx, 0, target_len - 1)
        values = np.zeros((target_len, dataset.n_channels))
        mask = np.zeros((target_len, dataset.n_channels), dtype=bool)
        for k in range(len(s.times)):
            g = idx[k]
            for ch in range(dataset.n_channels):
                if s.mask[k, ch]:
                    if mask[g, ch]:
                        collisions += 1
                    values[g, ch] = s.values[k, ch]
                    mask[g, ch] = True
        out.append(IrregularSeries(grid.copy(), values, mask, s.label))
    prov = dict(dataset.provenance)
    prov["uniform_scale"] = {"target_len": target_len, "collisions": collisions}
    return replace(dataset, samples=out, provenance=prov)


def normalize(dataset, train_indices=None):
    """Per-channel z-score from observed training cells; zero-variance
    channels pass through unscaled. Returns (dataset, stats)."""
    idx = range(len(dataset.samples)) if train_indices is None else train_indices
    d = dataset.n_channels
    mean = np.zeros(d)
    std = np.ones(d)
    constant = []
    for ch in range(d):
        cells = np.concatenate([
            dataset.samples[i].values[dataset.samples[i].mask[:, ch], ch]
            for i in idx])
        mean[ch] = cells.mean()
        s = cells.std()
        if s == 0.0:
            constant.append(ch)
        else:
            std[ch] = s
    out = []
    for s in dataset.samples:
        values = (s.values - mean) / std
        out.append(IrregularSeries(s.times.copy(), values, s.mask.copy(), s.label))
    stats = {"mean": mean, "std": std, "constant_channels": constant}
    prov = dict(dataset.provenance)
    prov["normalized"] = {"constant_channels": constant}
    return replace(dataset, samples=out, provenance=prov), stats


def apply_stats(dataset, stats):
    """Apply previously computed normalization stats (train stats on test)."""
    out = []
    for s in dataset.samples:
        values = (s.values - stats["mean"]) / stats["std"]
        out.append(IrregularSeries(s.times.copy(), values, s.mask.copy(), s.label))
    return replace(dataset, samples=out)


# ---------------------------------------------------------------------------
# Synthetic generators
# ---------------------------------------------------------------------------

SYNTH_KINDS = ("spirals", "damped-oscillator", "ou-vs-gbm")


def synth(kind, n_samples, length, noise=0.05, seed=0):
    """Desk-scale binary classification datasets with irregular timestamps."""
    if kind not in SYNTH_KINDS:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    if n_samples < 4 or length < 8:
        raise ValueError("need n_samples >= 4 and length >= 8")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed & (2**64 - 1))))
    samples = []
    for i in range(n_samples):
        label = i % 2
        times = np.sort(rng.uniform(0.0, 1.0, size=length))
        times[0], times[-1] = 0.0, 1.0
        # guard against duplicate draws
        times = np.unique(times)
        while len(times) < length:
            extra = rng.uniform(0.0, 1.0, size=length - len(times))
            times = np.unique(np.concatenate([times, extra]))
        times = times[:length]
        times[-1] = max(times[-1], 1.0)

        if kind == "spirals":
            theta = 2.0 * np.pi * times
            direction = 1.0 if label == 0 else -1.0
            r = 0.5 + times
            values = np.stack([r * np.cos(direction * theta),
                               r * np.sin(direction * theta)], axis=1)
        elif kind == "damped-oscillator":
            damping = 0.5 if label == 0 else 3.0
            values = (np.exp(-damping * times) *
                      np.sin(4.0 * np.pi * times))[:, None]
        else:  # ou-vs-gbm
            values = _path_sample(label, times, rng)[:, None]

        values = values + noise * rng.standard_normal(values.shape)
        mask = np.ones_like(values, dtype=bool)
        samples.append(IrregularSeries(times, values, mask, label))
    d = samples[0].values.shape[1]
    return Dataset(samples, d, 2, name=f"synth-{kind}",
                   provenance={"generator": kind, "seed": seed,
                               "n_samples": n_samples, "length": length,
                               "noise": noise})


def _path_sample(label, times, rng):
    """One irregularly-observed path: OU (label 0) or GBM (label 1)."""
    n = len(times)
    x = np.empty(n)
    if label == 0:
        theta, sig = 3.0, 1.0
        x[0] = rng.standard_normal() * sig / np.sqrt(2 * theta)
        for k in range(1, n):
            dt = times[k] - times[k - 1]
            x[k] = x[k - 1] - theta * x[k - 1] * dt + sig * np.sqrt(dt) * rng.standard_normal()
    else:
        mu, sig = 0.2, 0.8
        x[0] = 1.0
        for k in range(1, n):
            dt = times[k] - times[k - 1]
            x[k] = x[k - 1] * np.exp((mu - sig * sig / 2) * dt +
                                     sig * np.sqrt(dt) * rng.standard_normal())
    return x
