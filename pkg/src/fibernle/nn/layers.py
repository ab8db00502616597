"""Layers and the two equalizer models built on the autodiff engine."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import ShapeError, Tensor, dropout, layer_norm, linear, matmul, relu, reshape, softmax, transpose


class Module:
    training: bool = True

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def modules(self):
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def astype(self, dtype) -> "Module":
        """Cast every parameter in place (e.g. to float32 for faster training)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = set(own) - set(state)
        unexpected = set(state) - set(own)
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={sorted(missing)}, unexpected={sorted(unexpected)}")
        for name, p in own.items():
            if state[name].shape != p.data.shape:
                raise ShapeError(f"{name}: checkpoint shape {state[name].shape} != model shape {p.data.shape}")
            p.data = np.array(state[name], dtype=np.float64)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(values: np.ndarray) -> Tensor:
    return Tensor(values, requires_grad=True)


class Linear(Module):
    """``x @ W + b`` with weights and bias drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        bound = 1.0 / math.sqrt(d_in)
        self.weight = _param(rng.uniform(-bound, bound, (d_in, d_out)))
        self.bias = _param(rng.uniform(-bound, bound, (d_out,)))

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise ShapeError(f"Linear: input features {x.shape[-1]} != {self.weight.shape[0]}")
        return linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.scale = _param(np.ones(d))
        self.shift = _param(np.zeros(d))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, -1, self.eps) * self.scale + self.shift


class Dropout(Module):
    def __init__(self, p: float, rng: np.random.Generator):
        self.p = p
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        return dropout(x, self.p, self.rng, self.training)


def positional_encoding(seq_len: int, d_model: int) -> np.ndarray:
    """Sinusoidal table: even columns sin(pos / 10000^(2i/d)), odd columns cos."""
    if d_model % 2:
        raise ValueError(f"d_model must be even, got {d_model}")
    pos = np.arange(seq_len)[:, None]
    i = np.arange(d_model // 2)[None, :]
    angle = pos / 10000.0 ** (2 * i / d_model)
    pe = np.empty((seq_len, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)
    return pe


class MultiHeadAttention(Module):
    """Unmasked scaled dot-product self-attention over ``n_heads`` heads."""

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        if d_model % n_heads:
            raise ValueError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.query = Linear(d_model, d_model, rng)
        self.key = Linear(d_model, d_model, rng)
        self.value = Linear(d_model, d_model, rng)
        self.out = Linear(d_model, d_model, rng)
        self.last_attention: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        b, s, _ = x.shape
        return transpose(reshape(x, (b, s, self.n_heads, self.d_head)), (0, 2, 1, 3))

    def forward(self, x: Tensor) -> Tensor:
        squeeze = x.ndim == 2
        if squeeze:
            x = reshape(x, (1,) + x.shape)
        b, s, d = x.shape
        q = self._split(self.query(x))
        k = self._split(self.key(x))
        v = self._split(self.value(x))
        scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(self.d_head))
        attn = softmax(scores, axis=-1)
        self.last_attention = attn.data
        heads = matmul(attn, v)  # (b, h, s, d_head)
        merged = reshape(transpose(heads, (0, 2, 1, 3)), (b, s, d))
        out = self.out(merged)
        return reshape(out, (s, d)) if squeeze else out


class EncoderLayer(Module):
    """Post-norm encoder block: attention, add & norm, ReLU feed-forward, add & norm."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int, p_drop: float, rng: np.random.Generator):
        self.attention = MultiHeadAttention(d_model, n_heads, rng)
        self.norm1 = LayerNorm(d_model)
        self.ff1 = Linear(d_model, d_ff, rng)
        self.ff2 = Linear(d_ff, d_model, rng)
        self.norm2 = LayerNorm(d_model)
        self.drop1 = Dropout(p_drop, rng)
        self.drop2 = Dropout(p_drop, rng)

    def forward(self, x: Tensor) -> Tensor:
        x = self.norm1(x + self.drop1(self.attention(x)))
        return self.norm2(x + self.drop2(self.ff2(relu(self.ff1(x)))))


@dataclass(frozen=True)
class TransformerConfig:
    seq_len: int = 10
    d_model: int = 32
    n_heads: int = 8
    n_layers: int = 1
    d_ff: int = 1024
    dropout: float = 0.1
    d_out: int = 2

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FCNNConfig:
    seq_len: int = 10
    d_model: int = 32
    hidden: int = 100
    d_out: int = 2

    def as_dict(self) -> dict:
        return asdict(self)


class TransformerEqualizer(Module):
    """Tokens + positional encoding -> encoder stack -> flatten -> linear to (I, Q)."""

    arch = "transformer"

    def __init__(self, cfg: TransformerConfig = TransformerConfig(), seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.pe = positional_encoding(cfg.seq_len, cfg.d_model)
        for i in range(cfg.n_layers):
            setattr(self, f"layer{i}", EncoderLayer(cfg.d_model, cfg.n_heads, cfg.d_ff, cfg.dropout, rng))
        self.head = Linear(cfg.seq_len * cfg.d_model, cfg.d_out, rng)

    @property
    def layers(self) -> list[EncoderLayer]:
        return [getattr(self, f"layer{i}") for i in range(self.cfg.n_layers)]

    def forward(self, tokens) -> Tensor:
        x = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
        single = x.ndim == 2
        if single:
            x = reshape(x, (1,) + x.shape)
        if x.shape[1:] != (self.cfg.seq_len, self.cfg.d_model):
            raise ShapeError(
                f"transformer expects (batch, {self.cfg.seq_len}, {self.cfg.d_model}) tokens, got {x.shape}"
            )
        x = x + self.pe
        for layer in self.layers:
            x = layer(x)
        out = self.head(reshape(x, (x.shape[0], -1)))
        return reshape(out, (self.cfg.d_out,)) if single else out


class FCNN(Module):
    """Flattened tokens -> Linear(hidden) -> ReLU -> Linear(2)."""

    arch = "fcnn"

    def __init__(self, cfg: FCNNConfig = FCNNConfig(), seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.hidden = Linear(cfg.seq_len * cfg.d_model, cfg.hidden, rng)
        self.output = Linear(cfg.hidden, cfg.d_out, rng)

    def forward(self, tokens) -> Tensor:
        x = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
        n_in = self.cfg.seq_len * self.cfg.d_model
        # accepted: (batch, seq, d), (batch, seq*d), (seq, d), (seq*d,)
        single = x.ndim == 1 or (x.ndim == 2 and x.shape[-1] != n_in)
        if single:
            x = reshape(x, (1, -1))
        elif x.ndim == 3:
            x = reshape(x, (x.shape[0], -1))
        if x.shape[-1] != n_in:
            raise ShapeError(f"FCNN expects {n_in} input features, got {x.shape[-1]}")
        out = self.output(relu(self.hidden(x)))
        return reshape(out, (self.cfg.d_out,)) if single else out


def transformer_parameter_count(cfg: TransformerConfig) -> int:
    """Closed-form trainable parameter count for :class:`TransformerEqualizer`."""
    d, f = cfg.d_model, cfg.d_ff
    attention = 4 * (d * d + d)
    feed_forward = (d * f + f) + (f * d + d)
    norms = 2 * (2 * d)
    head = cfg.seq_len * d * cfg.d_out + cfg.d_out
    return cfg.n_layers * (attention + feed_forward + norms) + head


def fcnn_parameter_count(cfg: FCNNConfig) -> int:
    n_in = cfg.seq_len * cfg.d_model
    return n_in * cfg.hidden + cfg.hidden + cfg.hidden * cfg.d_out + cfg.d_out


ARCHITECTURES = {"transformer": (TransformerEqualizer, TransformerConfig),
                 "fcnn": (FCNN, FCNNConfig)}


def build_model(arch: str, config: dict | None = None, seed: int = 0) -> Module:
    try:
        model_cls, cfg_cls = ARCHITECTURES[arch]
    except KeyError:
        raise ValueError(f"unknown architecture {arch!r}; choose from {sorted(ARCHITECTURES)}") from None
    return model_cls(cfg_cls(**(config or {})), seed=seed)
