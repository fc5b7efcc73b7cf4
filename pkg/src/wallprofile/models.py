"""FC-NN, CNN and GAN inverse models, their training loops and inference."""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_write_json
from .nn import (AdamState, LayerSpec, NonFiniteError, Sequential, adam_step, bce_loss,
                 load_weights, save_weights)
from .scene import (CONDUCTIVITY, DIELECTRIC, EPS_MAX, PROFILE_KINDS, RASTER_SIZE, SIGMA_FLOOR,
                    SIGMA_MAX)
from .signal import FEATURE_LEN, FeatureStats, standardize_features

ARCHES = ("fcnn", "cnn", "gan")
N_OUT = RASTER_SIZE * RASTER_SIZE
FILTERS = 64
KERNEL = 3
MODEL_FORMAT_VERSION = 1

# parameter counts by summation over the layer shapes
FCNN_PARAMS = (FEATURE_LEN * 256 + 256) + (256 * 512 + 512) + (512 * N_OUT + N_OUT)
_CONV_PARAMS = (1 * KERNEL * FILTERS + FILTERS) + (FILTERS * KERNEL * FILTERS + FILTERS)
CNN_PARAMS = _CONV_PARAMS + (FILTERS * FEATURE_LEN * 512 + 512) + (512 * N_OUT + N_OUT)
CRITIC_PARAMS = _CONV_PARAMS + (FILTERS * N_OUT + 1)


class TrainingError(RuntimeError):
    pass


class InputError(ValueError):
    pass


def fcnn_specs() -> list[LayerSpec]:
    return [LayerSpec("dense", FEATURE_LEN, 256), LayerSpec("relu"),
            LayerSpec("dense", 256, 512), LayerSpec("relu"),
            LayerSpec("dense", 512, N_OUT), LayerSpec("sigmoid")]


def _conv_trunk() -> list[LayerSpec]:
    return [LayerSpec("conv1d", 1, FILTERS, KERNEL), LayerSpec("relu"),
            LayerSpec("conv1d", FILTERS, FILTERS, KERNEL), LayerSpec("relu"),
            LayerSpec("flatten")]


def cnn_specs(output: str = "sigmoid") -> list[LayerSpec]:
    return _conv_trunk() + [
        LayerSpec("dense", FILTERS * FEATURE_LEN, 512), LayerSpec("relu"),
        LayerSpec("dense", 512, N_OUT), LayerSpec(output)]


def generator_specs() -> list[LayerSpec]:
    return cnn_specs(output="tanh")


def critic_specs() -> list[LayerSpec]:
    return _conv_trunk() + [LayerSpec("dense", FILTERS * N_OUT, 1), LayerSpec("sigmoid")]


def build_network(arch: str, seed: int, dtype=np.float32) -> Sequential:
    if arch == "fcnn":
        return Sequential(fcnn_specs(), seed=seed, dtype=dtype)
    if arch == "cnn":
        return Sequential(cnn_specs(), seed=seed, dtype=dtype)
    if arch == "gan":
        return Sequential(generator_specs(), seed=seed, dtype=dtype)
    raise ValueError(f"unknown architecture {arch!r}; choose from {ARCHES}")


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    lr: float = 2e-4
    seed: int = 0
    lambda_rec: float = 100.0  # GAN only
    critic_seed_offset: int = 1
    shuffle: bool = True  # False keeps one fixed batch order for every epoch

    @classmethod
    def for_arch(cls, arch: str, **overrides) -> "TrainConfig":
        base = {"fcnn": dict(epochs=100, lr=2e-4), "cnn": dict(epochs=100, lr=1e-4),
                "gan": dict(epochs=500, lr=2e-4)}[arch]
        base.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**base)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class TrainData:
    """Standardized features and flattened labels in ``[0, 1]``."""

    X: np.ndarray
    Y: np.ndarray
    X_val: np.ndarray | None = None
    Y_val: np.ndarray | None = None


@dataclass
class TrainedModel:
    arch: str
    profile: str
    net: Sequential
    stats: FeatureStats
    config: TrainConfig
    record: dict = field(default_factory=dict)
    critic: Sequential | None = None
    split: dict | None = None

    @property
    def lambda_rec(self):
        return self.config.lambda_rec if self.arch == "gan" else None


def prepare_data(dataset, split, profile: str, stats: FeatureStats | None = None):
    """Standardize features with training-split statistics; returns ``(TrainData, stats)``."""
    if profile not in PROFILE_KINDS:
        raise ValueError(f"profile must be one of {PROFILE_KINDS}")
    X = dataset.features.astype(np.float64)
    Y = dataset.labels(profile).reshape(len(dataset), -1)
    if len(split.train) == 0:
        raise TrainingError("training split is empty")
    stats = stats or FeatureStats.fit(X[split.train])
    Xs = standardize_features(X, stats).astype(np.float32)
    val = split.validation
    data = TrainData(Xs[split.train], Y[split.train],
                     Xs[val] if len(val) else None, Y[val] if len(val) else None)
    return data, stats


def _batches(n, batch_size, rng, shuffle=True):
    order = rng.permutation(n) if shuffle else np.arange(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _check_labels(Y):
    if Y.min() < 0 or Y.max() > 1:
        raise TrainingError("labels must lie in [0, 1]")


def _epoch_loss(net, X, Y, batch_size=64):
    total = 0.0
    for i in range(0, len(X), batch_size):
        pred = net.forward(X[i:i + batch_size], record=False)
        total += bce_loss(pred, Y[i:i + batch_size])[0] * pred.size
    return total / Y.size


def train_supervised(arch: str, data: TrainData, profile: str, cfg: TrainConfig,
                     stats: FeatureStats | None = None, progress=None) -> TrainedModel:
    """Mini-batch Adam on mean BCE between sigmoid outputs and flattened rasters."""
    if arch not in ("fcnn", "cnn"):
        raise ValueError(f"supervised training supports fcnn and cnn, not {arch!r}")
    _check_labels(data.Y)
    net = build_network(arch, cfg.seed)
    opt = AdamState(lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 2])
    record = {"train_loss": [], "val_loss": [], "epoch_seconds": []}
    X = np.asarray(data.X, dtype=np.float32)
    Y = np.asarray(data.Y, dtype=np.float32)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        total = 0.0
        try:
            for idx in _batches(len(X), cfg.batch_size, rng, cfg.shuffle):
                pred = net.forward(X[idx])
                loss, grad = bce_loss(pred, Y[idx])
                if not np.isfinite(loss):
                    raise TrainingError(f"loss diverged at epoch {epoch}")
                net.backward(grad)
                adam_step(net.params, net.grads, opt)
                total += loss * len(idx)
        except NonFiniteError as exc:
            raise TrainingError(f"training diverged at epoch {epoch}: {exc}") from exc
        record["train_loss"].append(total / len(X))
        if data.X_val is not None:
            record["val_loss"].append(_epoch_loss(net, data.X_val, data.Y_val))
        record["epoch_seconds"].append(time.perf_counter() - t0)
        if progress:
            progress(epoch, record)
    record["train_seconds"] = float(sum(record["epoch_seconds"]))
    return TrainedModel(arch, profile, net, stats, cfg, record)


def train_gan(data: TrainData, profile: str, cfg: TrainConfig,
              stats: FeatureStats | None = None, progress=None) -> TrainedModel:
    """Alternating critic/generator updates.

    Labels are remapped to ``[-1, 1]``. The critic minimizes
    ``BCE(C(real), 1) + BCE(C(G(E)), 0)``; the generator minimizes
    ``BCE(C(G(E)), 1) + lambda_rec * mean((G(E) - real)^2)``.
    """
    _check_labels(data.Y)
    gen = build_network("gan", cfg.seed)
    critic = Sequential(critic_specs(), seed=cfg.seed + cfg.critic_seed_offset)
    g_opt, c_opt = AdamState(lr=cfg.lr), AdamState(lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 2])
    X = np.asarray(data.X, dtype=np.float32)
    Y = (2.0 * np.asarray(data.Y, dtype=np.float32) - 1.0).astype(np.float32)
    keys = ("g_adv", "g_rec", "c_real", "c_fake")
    record = {k: [] for k in keys}
    record.update(val_rec=[], epoch_seconds=[])
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        sums = dict.fromkeys(keys, 0.0)
        try:
            for idx in _batches(len(X), cfg.batch_size, rng, cfg.shuffle):
                b = len(idx)
                real = Y[idx]
                fake = gen.forward(X[idx])

                # critic: one batch holding real then fake profiles
                d = critic.forward(np.concatenate([real, fake]))
                l_real, g_real = bce_loss(d[:b], np.ones((b, 1)))
                l_fake, g_fake = bce_loss(d[b:], np.zeros((b, 1)))
                critic.backward(np.concatenate([g_real, g_fake]))
                adam_step(critic.params, critic.grads, c_opt)

                # generator: adversarial term through the updated critic plus reconstruction
                d_fake = critic.forward(fake)
                l_adv, g_adv = bce_loss(d_fake, np.ones((b, 1)))
                grad_fake = critic.backward(g_adv, need_input_grad=True)
                diff = fake.astype(np.float64) - real
                l_rec = float(np.mean(diff * diff))
                if cfg.lambda_rec:
                    grad_fake = grad_fake + (cfg.lambda_rec * 2.0 / diff.size * diff).astype(np.float32)
                gen.backward(grad_fake)
                adam_step(gen.params, gen.grads, g_opt)

                for k, v in zip(keys, (l_adv, l_rec, l_real, l_fake)):
                    if not np.isfinite(v):
                        raise TrainingError(f"GAN loss {k} diverged at epoch {epoch}")
                    sums[k] += v * b
        except NonFiniteError as exc:
            raise TrainingError(f"GAN training diverged at epoch {epoch}: {exc}") from exc
        for k in keys:
            record[k].append(sums[k] / len(X))
        if data.X_val is not None:
            pv = gen.predict(data.X_val)
            record["val_rec"].append(float(np.mean((pv - (2.0 * data.Y_val - 1.0)) ** 2)))
        record["epoch_seconds"].append(time.perf_counter() - t0)
        if progress:
            progress(epoch, record)
    record["train_seconds"] = float(sum(record["epoch_seconds"]))
    return TrainedModel("gan", profile, gen, stats, cfg, record, critic=critic)


def train(arch: str, data: TrainData, profile: str, cfg: TrainConfig, stats=None, progress=None):
    if arch == "gan":
        return train_gan(data, profile, cfg, stats, progress)
    return train_supervised(arch, data, profile, cfg, stats, progress)


# --- inference -----------------------------------------------------------------

def predict(model: TrainedModel, x, standardized: bool = False) -> np.ndarray:
    """Raster(s) in ``[0, 1]`` of shape ``(32, 32)`` or ``(n, 32, 32)``.

    Samples are evaluated one at a time so that a sample's output never
    depends on what else is in the batch.
    """
    x = np.asarray(x)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[-1] != FEATURE_LEN:
        raise InputError(f"feature vector must have length {FEATURE_LEN}, got {x.shape[-1]}")
    if not standardized:
        if model.stats is None:
            raise InputError("model has no normalization statistics")
        x = standardize_features(x, model.stats)
    x = x.astype(np.float32)
    out = np.stack([model.net.forward(row[None, :], record=False)[0] for row in x])
    if model.arch == "gan":
        out = (out + 1.0) * 0.5
    out = np.clip(out, 0.0, 1.0).reshape(-1, RASTER_SIZE, RASTER_SIZE)
    return out[0] if single else out


def denormalize(raster, kind: str) -> np.ndarray:
    """Label units back to eps_r or sigma (S/m). Conductivity at ``u <= 0`` is 0."""
    u = np.asarray(raster, dtype=np.float64)
    if kind == DIELECTRIC:
        return 1.0 + u * (EPS_MAX - 1.0)
    if kind == CONDUCTIVITY:
        decades = np.log10(SIGMA_MAX / SIGMA_FLOOR)
        return np.where(u > 0, SIGMA_FLOOR * 10.0 ** (u * decades), 0.0)
    raise ValueError(f"unknown profile kind {kind!r}")


# --- persistence ---------------------------------------------------------------

def save_model(model: TrainedModel, directory) -> Path:
    """``weights.bin`` (plus ``critic.bin`` for a GAN) and a ``model.json`` manifest."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    extra = {"arch": model.arch, "profile": model.profile,
             "normalization": model.stats.to_dict() if model.stats else None}
    save_weights(d / "weights.bin", model.net, extra)
    if model.critic is not None:
        save_weights(d / "critic.bin", model.critic, {"arch": "gan-critic", "profile": model.profile})
    manifest = {
        "format_version": MODEL_FORMAT_VERSION,
        "arch": model.arch,
        "profile": model.profile,
        "lambda_rec": model.lambda_rec,
        "seeds": {"init": model.config.seed, "shuffle": [model.config.seed, 2],
                  "critic_init": model.config.seed + model.config.critic_seed_offset
                  if model.arch == "gan" else None},
        "init": "glorot-uniform",
        "train_config": model.config.to_dict(),
        "n_params": model.net.n_params(),
        "split": model.split,
        "record": model.record,
    }
    atomic_write_json(d / "model.json", manifest)
    return d


def load_model(directory) -> TrainedModel:
    d = Path(directory)
    manifest = json.loads((d / "model.json").read_text(encoding="utf-8"))
    if manifest.get("format_version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"{d}: unsupported model format {manifest.get('format_version')!r}")
    net, header = load_weights(d / "weights.bin")
    norm = header["extra"].get("normalization")
    stats = FeatureStats.from_dict(norm) if norm else None
    cfg = TrainConfig(**manifest["train_config"])
    critic = None
    if (d / "critic.bin").exists():
        critic, _ = load_weights(d / "critic.bin")
    return TrainedModel(manifest["arch"], manifest["profile"], net, stats, cfg,
                        manifest.get("record", {}), critic, manifest.get("split"))
