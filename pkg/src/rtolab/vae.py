"""Fully connected variational autoencoder over topology images.

The decoder ends in a linear layer of image width, a same-size average pool
(the anti-checkerboard design filter) and a sigmoid, so every decoded pixel
lies in (0, 1).  The encoder's last layer emits ``[mu, log_var]``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kvfile
from .nn import Adam, AvgPool, Mlp, init_params, load_mlp, save_mlp, sigmoid

log = logging.getLogger(__name__)

FULL_INPUT_DIM = 10_000
FULL_ENCODER_WIDTHS = (5000, 2500, 1000, 500, 100, 50, 10)
FULL_DECODER_WIDTHS = (10, 50, 100, 500, 1000, 2500, 5000)
# extra leading layers for large images, as fractions of the input width
EXTRA_WIDTH_FRACTIONS = (0.75, 0.625)
MIN_WIDTH = 8


class DivergenceError(RuntimeError):
    pass


def scaled_widths(input_dim: int, extra_layers: bool = False) -> tuple[int, ...]:
    """Encoder hidden widths: the 100x100 schedule scaled by
    ``input_dim / 10000`` and floored at 8."""
    scale = input_dim / FULL_INPUT_DIM
    widths = [max(MIN_WIDTH, int(round(w * scale))) for w in FULL_ENCODER_WIDTHS]
    if extra_layers:
        widths = [max(MIN_WIDTH, int(round(f * input_dim))) for f in EXTRA_WIDTH_FRACTIONS] + widths
    return tuple(widths)


def pool_window_for(n: int) -> int:
    """Odd window closest to 9 pixels per 100."""
    w = 9 * n / 100
    return max(1, 2 * int(round((w - 1) / 2)) + 1)


@dataclass(frozen=True)
class VaeArchitecture:
    shape: tuple[int, int]
    encoder_widths: tuple[int, ...]
    latent_dim: int
    decoder_widths: tuple[int, ...]
    window: int

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError("pooling window must be odd")

    @property
    def input_dim(self) -> int:
        return self.shape[0] * self.shape[1]

    @classmethod
    def scaled(cls, shape, latent_dim: int = 2, window: int | None = None,
               extra_layers: bool = False) -> "VaeArchitecture":
        ny, nx = shape
        enc = scaled_widths(ny * nx, extra_layers)
        dec = tuple(reversed(enc))
        return cls((ny, nx), enc, latent_dim, dec, window or pool_window_for(max(ny, nx)))


@dataclass
class VaeTrainConfig:
    epochs: int = 300
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0


class VaeModel:
    def __init__(self, encoder: Mlp, decoder: Mlp, arch: VaeArchitecture, seed: int = 0):
        if encoder.out_dim != 2 * arch.latent_dim or decoder.in_dim != arch.latent_dim:
            raise ValueError("encoder/decoder widths do not match the latent dimension")
        if encoder.in_dim != arch.input_dim or decoder.out_dim != arch.input_dim:
            raise ValueError("encoder/decoder widths do not match the image size")
        self.encoder = encoder
        self.decoder = decoder
        self.arch = arch
        self.seed = seed
        self.pool = AvgPool(arch.shape, arch.window)

    @classmethod
    def init(cls, arch: VaeArchitecture, seed: int = 0, dtype=np.float32) -> "VaeModel":
        ss = np.random.SeedSequence(seed).spawn(2)
        enc_dims = [arch.input_dim, *arch.encoder_widths, 2 * arch.latent_dim]
        dec_dims = [arch.latent_dim, *arch.decoder_widths, arch.input_dim]
        encoder = init_params(enc_dims, ["relu"] * len(arch.encoder_widths) + ["linear"], ss[0], dtype)
        decoder = init_params(dec_dims, ["relu"] * len(arch.decoder_widths) + ["linear"], ss[1], dtype)
        return cls(encoder, decoder, arch, seed)

    @property
    def dtype(self):
        return self.encoder.dtype

    @property
    def latent_dim(self) -> int:
        return self.arch.latent_dim

    def params(self) -> list[np.ndarray]:
        return self.encoder.params() + self.decoder.params()

    def astype(self, dtype) -> "VaeModel":
        return VaeModel(self.encoder.astype(dtype), self.decoder.astype(dtype), self.arch, self.seed)

    def _flat(self, theta):
        theta = np.asarray(theta, dtype=self.dtype)
        if theta.ndim == 1 or theta.ndim == 2 and theta.shape == self.arch.shape:
            theta = theta.reshape(1, -1)
        theta = theta.reshape(theta.shape[0], -1)
        if theta.shape[1] != self.arch.input_dim:
            raise ValueError(f"image width {theta.shape[1]} != {self.arch.input_dim}")
        return theta

    def encode(self, theta):
        """``(mu, log_var)`` for a batch of images."""
        out = self.encoder(self._flat(theta))
        return out[:, :self.latent_dim], out[:, self.latent_dim:]

    def decode_logits(self, z):
        z = np.atleast_2d(np.asarray(z, dtype=self.dtype))
        if z.shape[1] != self.latent_dim:
            raise ValueError(f"latent width {z.shape[1]} != {self.latent_dim}")
        pre, cache = self.decoder.forward(z)
        return self.pool(pre), cache

    def decode(self, z) -> np.ndarray:
        """Decoded images, flattened to ``(batch, input_dim)``."""
        logits, _ = self.decode_logits(z)
        return sigmoid(logits)

    def decode_vjp(self, z, d_theta):
        """Decoded images and the pull-back of ``d_theta`` to latent space."""
        logits, cache = self.decode_logits(z)
        theta = sigmoid(logits)
        d_logits = np.asarray(d_theta, dtype=self.dtype) * theta * (1 - theta)
        _, dz = self.decoder.backward(cache, self.pool.backward(d_logits))
        return theta, dz

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_mlp(self.encoder, directory / "encoder.rtom")
        save_mlp(self.decoder, directory / "decoder.rtom")
        a = self.arch
        kvfile.dump({
            "kind": "vae", "ny": a.shape[0], "nx": a.shape[1], "latent_dim": a.latent_dim,
            "window": a.window, "encoder_widths": list(a.encoder_widths),
            "decoder_widths": list(a.decoder_widths), "seed": self.seed,
        }, directory / "vae.cfg")

    @classmethod
    def load(cls, directory) -> "VaeModel":
        directory = Path(directory)
        meta = kvfile.load(directory / "vae.cfg")
        widths = lambda v: tuple(int(x) for x in str(v).split(",")) if v is not None else ()
        arch = VaeArchitecture((int(meta["ny"]), int(meta["nx"])), widths(meta["encoder_widths"]),
                               int(meta["latent_dim"]), widths(meta["decoder_widths"]), int(meta["window"]))
        return cls(load_mlp(directory / "encoder.rtom"), load_mlp(directory / "decoder.rtom"),
                   arch, int(meta["seed"]))


def reparametrize(mu, log_var, eps):
    return mu + np.exp(0.5 * log_var) * eps


def kl_divergence(mu, log_var):
    """KL(N(mu, diag(exp(log_var))) || N(0, I)) per sample."""
    return -0.5 * np.sum(1 + log_var - mu ** 2 - np.exp(log_var), axis=-1)


def bce_with_logits(logits, target):
    """Bernoulli negative log-likelihood summed over pixels, per sample."""
    return np.sum(np.logaddexp(0, logits) - target * logits, axis=-1)


@dataclass
class VaeLoss:
    total: float
    recon: float
    kl: float

    def __iter__(self):
        return iter((self.total, self.recon, self.kl))


def _noise(model, n, seed):
    if isinstance(seed, np.random.Generator):
        rng = seed
    else:
        rng = np.random.default_rng(seed)
    return rng.standard_normal((n, model.latent_dim)).astype(model.dtype)


def vae_loss(model: VaeModel, batch, seed=0, eps=None, with_grads: bool = False):
    """Batch-mean ELBO loss with one reparametrized draw per sample.

    Returns a :class:`VaeLoss`, plus gradients aligned with ``model.params()``
    when ``with_grads`` is set.
    """
    x = model._flat(batch)
    n = x.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if eps is None:
        eps = _noise(model, n, seed)
    enc_out, enc_cache = model.encoder.forward(x)
    d = model.latent_dim
    mu, log_var = enc_out[:, :d], enc_out[:, d:]
    std = np.exp(0.5 * log_var)
    z = mu + std * eps
    pre, dec_cache = model.decoder.forward(z)
    logits = model.pool(pre)
    recon = bce_with_logits(logits, x)
    kl = kl_divergence(mu, log_var)
    loss = VaeLoss(float(np.mean(recon + kl)), float(np.mean(recon)), float(np.mean(kl)))
    if not with_grads:
        return loss

    d_logits = (sigmoid(logits) - x) / n
    dec_grads, dz = model.decoder.backward(dec_cache, model.pool.backward(d_logits))
    d_mu = dz + mu / n
    d_log_var = dz * eps * std * 0.5 + 0.5 * (np.exp(log_var) - 1) / n
    enc_grads, _ = model.encoder.backward(enc_cache, np.concatenate([d_mu, d_log_var], axis=1))
    return loss, enc_grads + dec_grads


def _eval_loss(model, images, seed):
    """Deterministic loss on a held-out set (fixed noise seed)."""
    if len(images) == 0:
        return VaeLoss(math.nan, math.nan, math.nan)
    return vae_loss(model, images, seed=seed)


def train_vae(train_images, test_images, arch: VaeArchitecture, cfg: VaeTrainConfig | None = None,
              progress=None):
    """Adam on mini-batches.  Returns ``(model, history)``; history has one
    record per epoch plus the untrained epoch 0."""
    cfg = cfg or VaeTrainConfig()
    train = np.asarray(train_images, dtype=np.float32).reshape(len(train_images), -1)
    test = np.asarray(test_images, dtype=np.float32).reshape(len(test_images), -1) if len(test_images) else np.zeros((0, arch.input_dim), np.float32)
    if len(train) < 10:
        raise ValueError("need at least 10 training images")
    model = VaeModel.init(arch, cfg.seed)
    opt = Adam(model.params(), lr=cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    eval_seed = cfg.seed + 7919

    def record(epoch, tr):
        te = _eval_loss(model, test, eval_seed)
        history.append({"epoch": epoch, "train_total": tr.total, "train_recon": tr.recon,
                        "train_kl": tr.kl, "test_total": te.total, "test_recon": te.recon,
                        "test_kl": te.kl})

    history: list[dict] = []
    record(0, _eval_loss(model, train, eval_seed))
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train))
        totals = np.zeros(3)
        for start in range(0, len(train), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = vae_loss(model, train[idx], seed=rng, with_grads=True)
            if not np.isfinite(loss.total):
                raise DivergenceError(f"non-finite VAE loss at epoch {epoch}: {loss}")
            opt.step(grads)
            totals += np.array(tuple(loss)) * len(idx)
        totals /= len(train)
        record(epoch, VaeLoss(*totals))
        if progress:
            progress(epoch, history[-1])
    return model, history


def generate(model: VaeModel, n: int, seed) -> np.ndarray:
    """Decode ``n`` draws from the standard-normal prior; ``(n, ny, nx)``."""
    z = _noise(model, n, seed)
    return model.decode(z).reshape(n, *model.arch.shape)
