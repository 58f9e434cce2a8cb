"""Neural regressor for the robust compliance of a topology image."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kvfile
from .nn import Adam, Mlp, init_params, load_mlp, save_mlp
from .vae import DivergenceError, scaled_widths

log = logging.getLogger(__name__)


@dataclass
class SurrogateConfig:
    epochs: int = 400
    batch_size: int = 32
    lr: float = 1e-4
    seed: int = 0
    extra_layers: bool = False


@dataclass
class RegressionReport:
    ids: list
    true: np.ndarray
    predicted: np.ndarray
    mse: float
    r2: float
    pearson: float

    @classmethod
    def compute(cls, true, predicted, ids=None) -> "RegressionReport":
        true = np.asarray(true, dtype=np.float64)
        predicted = np.asarray(predicted, dtype=np.float64)
        resid = true - predicted
        mse = float(np.mean(resid ** 2))
        ss_tot = float(np.sum((true - true.mean()) ** 2))
        r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else float("nan")
        if len(true) > 1 and true.std() > 0 and predicted.std() > 0:
            pearson = float(np.corrcoef(true, predicted)[0, 1])
        else:
            pearson = float("nan")
        return cls(list(ids) if ids is not None else list(range(len(true))), true, predicted, mse, r2, pearson)


class SurrogateModel:
    """``net`` maps a flattened image to a standardized label; predictions
    are returned in original units."""

    def __init__(self, net: Mlp, mean: float, std: float, shape):
        if net.out_dim != 1:
            raise ValueError("surrogate output width must be 1")
        if not std > 0:
            raise ValueError("label std must be positive")
        self.net = net
        self.mean = float(mean)
        self.std = float(std)
        self.shape = tuple(shape)

    @property
    def input_dim(self) -> int:
        return self.net.in_dim

    def astype(self, dtype) -> "SurrogateModel":
        return SurrogateModel(self.net.astype(dtype), self.mean, self.std, self.shape)

    def _flat(self, theta):
        theta = np.asarray(theta, dtype=self.net.dtype)
        if theta.ndim == 1 or theta.shape == self.shape:
            theta = theta.reshape(1, -1)
        theta = theta.reshape(theta.shape[0], -1)
        if theta.shape[1] != self.input_dim:
            raise ValueError(f"image width {theta.shape[1]} != {self.input_dim}")
        return theta

    def normalized(self, theta) -> np.ndarray:
        return self.net(self._flat(theta))[:, 0]

    def predict(self, theta) -> np.ndarray:
        return self.normalized(theta) * self.std + self.mean

    def value_and_input_grad(self, theta):
        """Predictions and d(prediction)/d(pixel), one row per image."""
        x = self._flat(theta)
        out, cache = self.net.forward(x)
        _, dx = self.net.backward(cache, np.full_like(out, self.std))
        return out[:, 0] * self.std + self.mean, dx

    def input_gradient(self, theta) -> np.ndarray:
        theta = np.asarray(theta)
        _, dx = self.value_and_input_grad(theta)
        return dx.reshape(theta.shape) if theta.size == self.input_dim else dx

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_mlp(self.net, directory / "surrogate.rtom")
        kvfile.dump({"kind": "surrogate", "ny": self.shape[0], "nx": self.shape[1],
                     "label_mean": self.mean, "label_std": self.std}, directory / "surrogate.cfg")

    @classmethod
    def load(cls, directory) -> "SurrogateModel":
        directory = Path(directory)
        meta = kvfile.load(directory / "surrogate.cfg")
        return cls(load_mlp(directory / "surrogate.rtom"), meta["label_mean"], meta["label_std"],
                   (int(meta["ny"]), int(meta["nx"])))


def surrogate_net(input_dim: int, seed, extra_layers: bool = False) -> Mlp:
    widths = scaled_widths(input_dim, extra_layers)
    return init_params([input_dim, *widths, 1], ["relu"] * len(widths) + ["linear"], seed)


def train_surrogate(images, labels, cfg: SurrogateConfig | None = None, holdout=None, progress=None):
    """MSE regression on z-scored labels.

    ``holdout`` is an optional ``(images, labels, ids)`` tuple for the report;
    without it the report is computed on the training data.  Returns
    ``(model, report, history)``.
    """
    cfg = cfg or SurrogateConfig()
    x = np.asarray(images, dtype=np.float32)
    shape = x.shape[1:] if x.ndim == 3 else (1, x.shape[1])
    x = x.reshape(len(x), -1)
    y = np.asarray(labels, dtype=np.float64)
    if len(x) < 10:
        raise ValueError("need at least 10 labelled samples")
    mean = float(y.mean())
    std = float(y.std())
    if std == 0:
        std = max(abs(mean), 1.0)
    y_n = ((y - mean) / std).astype(np.float32)[:, None]

    net = surrogate_net(x.shape[1], np.random.SeedSequence([cfg.seed, 2]), cfg.extra_layers)
    opt = Adam(net.params(), lr=cfg.lr)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 3]))
    history = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            out, cache = net.forward(x[idx])
            resid = out - y_n[idx]
            loss = float(np.mean(resid ** 2))
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite surrogate loss at epoch {epoch}")
            grads, _ = net.backward(cache, 2.0 * resid / len(idx))
            opt.step(grads)
            total += loss * len(idx)
        history.append({"epoch": epoch, "train_mse": total / len(x)})
        if progress:
            progress(epoch, history[-1])

    model = SurrogateModel(net, mean, std, shape)
    if holdout is not None and len(holdout[0]):
        hx, hy, hid = holdout
        report = RegressionReport.compute(hy, model.predict(np.asarray(hx).reshape(len(hx), -1)), hid)
    else:
        report = RegressionReport.compute(y, model.predict(x))
    return model, report, history
