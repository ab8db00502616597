"""Minibatch Adam training on MSE and windowed inference."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from ..dataset import TokenDataset, window_words, words_to_bits
from ..txrx import SymbolFrame
from .autodiff import Tensor, default_dtype, mse_loss
from .checkpoint import ModelCheckpoint
from .layers import Dropout, Module
from .optim import Adam

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 1024
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 100
    seed: int = 0
    loss: str = "mse"
    dtype: str = "float64"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.loss != "mse":
            raise ValueError(f"unsupported loss {self.loss!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")


@dataclass
class TrainResult:
    checkpoint: ModelCheckpoint
    history: list[float] = field(default_factory=list)
    best_epoch: int = 0


def _seed_dropout(model: Module, seed: int) -> None:
    rng = np.random.default_rng(seed)
    for m in model.modules():
        if isinstance(m, Dropout):
            m.rng = rng


def train(
    model: Module,
    ds: TokenDataset,
    cfg: TrainConfig = TrainConfig(),
    *,
    metadata: dict | None = None,
    dataset_hash: str | None = None,
) -> TrainResult:
    """Train ``model`` on ``ds`` and return the best-loss checkpoint.

    Shuffling and dropout draw from generators seeded by ``cfg.seed``, so a
    fixed (model seed, dataset, config) reproduces the checkpoint bytes.
    The recorded per-epoch loss is the sample-weighted mean batch MSE seen
    during that epoch (dropout active). With ``cfg.dtype == "float32"`` the
    arithmetic runs in single precision; the checkpoint is stored in float64
    either way.
    """
    if len(ds) == 0:
        raise ValueError("cannot train on an empty dataset")
    with default_dtype(cfg.dtype):
        return _train(model, ds, cfg, metadata, dataset_hash)


def _train(model, ds, cfg, metadata, dataset_hash) -> TrainResult:
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    _seed_dropout(model, cfg.seed)
    model.train()
    model.astype(cfg.dtype)
    opt = Adam(model.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    history: list[float] = []
    best_loss, best_epoch, best_state = math.inf, 0, model.state_dict()
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(ds))
        total = 0.0
        for start in range(0, len(ds), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x = Tensor(ds.features(idx))
            y = Tensor(ds.targets[idx])
            loss = mse_loss(y, model(x))
            if not math.isfinite(float(loss.data)):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch}, batch starting {start}"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.data) * idx.size
        epoch_loss = total / len(ds)
        history.append(epoch_loss)
        log.info("epoch %d loss %.6g", epoch, epoch_loss)
        if epoch_loss < best_loss:
            best_loss, best_epoch, best_state = epoch_loss, epoch, model.state_dict()
    model.load_state_dict(best_state)
    model.eval()
    meta = {
        "epochs": cfg.epochs,
        "best_epoch": best_epoch,
        "final_loss": history[-1],
        "best_loss": best_loss,
        "train_config": asdict(cfg),
        "window_n": ds.n,
        "normalization": ds.normalization,
        "dataset_sha256": dataset_hash,
        **(metadata or {}),
    }
    return TrainResult(ModelCheckpoint.from_model(model, meta), history, best_epoch)


def predict(model: Module, features: np.ndarray, batch_size: int = 4096) -> np.ndarray:
    """Evaluation-mode forward over ``(count, seq, 32)`` features in batches."""
    model.eval()
    out = [model(Tensor(features[i : i + batch_size])).data for i in range(0, len(features), batch_size)]
    return np.concatenate(out, axis=0)


def equalize(model: Module, rx: SymbolFrame, n: int, normalization: float,
             batch_size: int = 4096) -> SymbolFrame:
    """Replace every symbol with a full window by the model's (I, Q) estimate.

    The first and last ``n`` symbols have no full window; they are passed
    through (scaled by ``normalization``) and should be excluded from metrics.
    """
    r = np.asarray(rx.symbols) * normalization
    if r.size <= 2 * n:
        raise ValueError(f"frame of {r.size} symbols too short for half-width {n}")
    words = window_words(r, n)
    model.eval()
    out = np.empty((len(words), 2))
    for i in range(0, len(words), batch_size):
        feats = words_to_bits(words[i : i + batch_size]).astype(np.float64)
        out[i : i + batch_size] = model(Tensor(feats)).data
    eq = r.copy()
    eq[n : r.size - n] = out[:, 0] + 1j * out[:, 1]
    return SymbolFrame(eq, rx.modulation)
