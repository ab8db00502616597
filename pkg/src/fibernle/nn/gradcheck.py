"""Central finite-difference checks for every autodiff op and both models.

Each check contracts the op output with a fixed random weight ``R`` so the
scalar ``sum(f(x) * R)`` exercises every output element, then compares the
backward gradient with :func:`numerical_grad`. Used by the test suite and the
``selftest`` CLI command.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .layers import Dropout, EncoderLayer, LayerNorm, Linear, Module, MultiHeadAttention, build_model

STEP = 1e-4
# a tensor whose gradient norm is below this fraction of the largest gradient
# norm in the same check is compared in absolute terms against that floor;
# some gradients are exactly zero in theory (the key-projection bias under
# softmax shift invariance) and their round-off has no meaningful scale
NORM_FLOOR = 1e-6


def _relu_signature(scalar: Callable[[], float]) -> tuple[float, bytes]:
    masks: list[np.ndarray] = []
    ad.RELU_OBSERVERS.append(masks.append)
    try:
        value = scalar()
    finally:
        ad.RELU_OBSERVERS.remove(masks.append)
    return value, b"".join(np.packbits(m).tobytes() for m in masks)


def _check(fn: Callable[..., ad.Tensor], inputs: list[np.ndarray], rng: np.random.Generator,
           max_probes: int | None = None) -> float:
    """Worst relative error over all input tensors.

    Probes whose +-h evaluations switch any ReLU unit are skipped: the
    function is not differentiable on that interval and a central
    difference there says nothing about the backward rule.
    """
    tensors = [ad.Tensor(x.copy(), requires_grad=True) for x in inputs]
    out = fn(*tensors)
    weight = rng.normal(size=out.shape)
    ad.sum_(ad.mul(out, weight)).backward()
    floor = NORM_FLOOR * max(np.linalg.norm(t.grad) if t.grad is not None else 0.0 for t in tensors)

    def scalar():
        return float(np.sum(fn(*tensors).data * weight))

    _, base = _relu_signature(scalar)
    worst = 0.0
    for t in tensors:
        flat = t.data.reshape(-1)
        order = rng.permutation(flat.size) if max_probes is not None else np.arange(flat.size)
        want = flat.size if max_probes is None else min(max_probes, flat.size)
        ana = (t.grad if t.grad is not None else np.zeros_like(t.data)).reshape(-1)
        used, num = [], []
        for i in order:
            if len(used) == want:
                break
            old = flat[i]
            flat[i] = old + STEP
            fp, sig_p = _relu_signature(scalar)
            flat[i] = old - STEP
            fm, sig_m = _relu_signature(scalar)
            flat[i] = old
            if sig_p != base or sig_m != base:
                continue
            used.append(i)
            num.append((fp - fm) / (2 * STEP))
        if used:
            worst = max(worst, ad.relative_error(ana[used], np.array(num), floor))
    return worst


def _relu_input(rng, shape):
    # keep entries away from the kink at 0 where the derivative is undefined
    x = rng.uniform(0.1, 1.0, shape)
    return x * rng.choice([-1.0, 1.0], shape)


def op_gradient_errors(seed: int = 0) -> dict[str, float]:
    """Max relative gradient error of each core op on random 5x7 inputs."""
    rng = np.random.default_rng(seed)

    def r(*shape):
        return rng.normal(size=shape)

    def dropout_fn(a):
        return ad.dropout(a, 0.3, np.random.default_rng(1), True)

    cases = {
        "add": (lambda a, b: ad.add(a, b), [r(5, 7), r(5, 7)]),
        "add_broadcast": (lambda a, b: ad.add(a, b), [r(5, 7), r(7)]),
        "neg": (ad.neg, [r(5, 7)]),
        "mul": (lambda a, b: ad.mul(a, b), [r(5, 7), r(5, 7)]),
        "mul_broadcast": (lambda a, b: ad.mul(a, b), [r(5, 7), r(5, 1)]),
        "matmul": (ad.matmul, [r(5, 7), r(7, 4)]),
        "matmul_shared": (ad.matmul, [r(3, 5, 7), r(7, 4)]),
        "matmul_batched": (ad.matmul, [r(2, 3, 5, 7), r(2, 3, 7, 4)]),
        "linear": (ad.linear, [r(3, 5, 7), r(7, 4), r(4)]),
        "relu": (ad.relu, [_relu_input(rng, (5, 7))]),
        "softmax": (lambda a: ad.softmax(a, -1), [r(5, 7)]),
        "softmax_axis0": (lambda a: ad.softmax(a, 0), [r(5, 7)]),
        "layer_norm": (lambda a: ad.layer_norm(a, -1, 1e-5), [r(5, 7)]),
        "dropout": (dropout_fn, [r(5, 7)]),
        "reshape": (lambda a: ad.reshape(a, (7, 5)), [r(5, 7)]),
        "transpose": (lambda a: ad.transpose(a, (1, 0)), [r(5, 7)]),
        "sum": (lambda a: ad.sum_(a, 1), [r(5, 7)]),
        "mean": (lambda a: ad.mean(a, 0, True), [r(5, 7)]),
        "mse_loss": (ad.mse_loss, [r(5, 7), r(5, 7)]),
    }
    return {name: _check(fn, inputs, rng) for name, (fn, inputs) in cases.items()}


def _module_check(module: Module, x: np.ndarray, rng: np.random.Generator, max_probes: int) -> float:
    """Relative error over the input and every parameter (sub-sampled when large)."""
    params = dict(module.named_parameters())
    names = list(params)

    def reseed():
        for m in module.modules():
            if isinstance(m, Dropout):
                m.rng = np.random.default_rng(7)

    def fn(xt, *ps):
        reseed()
        # route gradients to the probe tensors by substituting them in place
        originals = {}
        for name, p in zip(names, ps):
            owner, attr = _resolve(module, name)
            originals[name] = getattr(owner, attr)
            setattr(owner, attr, p)
        try:
            return module(xt)
        finally:
            for name in names:
                owner, attr = _resolve(module, name)
                setattr(owner, attr, originals[name])

    return _check(fn, [x] + [params[n].data for n in names], rng, max_probes)


def _resolve(module: Module, dotted: str):
    *path, attr = dotted.split(".")
    owner = module
    for part in path:
        owner = getattr(owner, part)
    return owner, attr


def layer_gradient_errors(seed: int = 0) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    init = np.random.default_rng(seed + 1)
    cases = {
        "linear": (Linear(7, 4, init), rng.normal(size=(5, 7))),
        "layer_norm_affine": (LayerNorm(7), rng.normal(size=(5, 7))),
        "attention": (MultiHeadAttention(32, 8, init), rng.normal(size=(10, 32))),
        "encoder_layer": (EncoderLayer(32, 8, 64, 0.1, init).train(), rng.normal(size=(2, 10, 32))),
    }
    return {name: _module_check(m, x, rng, 40) for name, (m, x) in cases.items()}


def model_gradient_errors(seed: int = 0, batch: int = 3, max_probes: int = 30) -> dict[str, float]:
    """End-to-end checks of both equalizers (training mode, fixed dropout masks)."""
    rng = np.random.default_rng(seed)
    out = {}
    for arch in ("transformer", "fcnn"):
        model = build_model(arch, seed=seed).train()
        x = rng.integers(0, 2, (batch, 10, 32)).astype(np.float64)
        out[arch] = _module_check(model, x, rng, max_probes)
    return out
