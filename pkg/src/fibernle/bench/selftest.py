"""Fast analytic-oracle checks run by ``fibernle selftest``.

Each check compares the implementation with a closed form that does not
share code with it and returns ``(name, passed, detail)``.
"""

from __future__ import annotations

import math
import struct
import time
from typing import Callable

import numpy as np

from .. import channel, dataset, metrics
from ..channel import FiberParams
from ..nn import gradcheck
from ..txrx import ComplexWaveform

Check = Callable[[], tuple[bool, str]]


def _gaussian(t0=20e-12, n=4096, fs=2e12, peak_power=1.0):
    t = (np.arange(n) - n // 2) / fs
    field = math.sqrt(peak_power) * np.exp(-(t**2) / (2 * t0**2))
    return ComplexWaveform(field[None, :].astype(complex), fs), t


def attenuation() -> tuple[bool, str]:
    rng = np.random.default_rng(0)
    w = ComplexWaveform(rng.normal(size=(2, 1024)) + 1j * rng.normal(size=(2, 1024)), 80e9)
    f = channel.convert_units(0.2, 0.0, 80.0)
    out = channel.ssfm_propagate(w, f, 1e3)
    err = float(np.max(np.abs(out.samples - w.samples * math.exp(-f.alpha * f.length / 2))))
    return err < 1e-12, f"max field error {err:.2e} (limit 1e-12)"


def broadening() -> tuple[bool, str]:
    t0 = 20e-12
    w, t = _gaussian(t0)
    f = FiberParams(0.0, -21.68e-27, 0.0, 0.0, 40e3)
    out = np.abs(channel.ssfm_propagate(w, f, 1e3).samples[0]) ** 2
    mean = np.sum(t * out) / np.sum(out)
    width = math.sqrt(np.sum((t - mean) ** 2 * out) / np.sum(out))
    expected = t0 / math.sqrt(2) * math.sqrt(1 + (f.beta2 * f.length / t0**2) ** 2)
    rel = abs(width / expected - 1)
    return rel < 0.01, f"RMS width off by {rel:.2%} (limit 1%)"


def spm_phase() -> tuple[bool, str]:
    w, _ = _gaussian(peak_power=0.01)
    f = channel.convert_units(0.2, 0.0, 80.0, gamma_per_w_km=1.3)
    out = channel.ssfm_propagate(w, f, 1e3, "independent-scalar")
    peak = int(np.argmax(np.abs(w.samples[0])))
    expected = f.gamma * 0.01 * f.effective_length
    rel = abs(float(np.angle(out.samples[0, peak])) / expected - 1)
    return rel < 0.005, f"peak phase off by {rel:.3%} (limit 0.5%)"


def step_halving() -> tuple[bool, str]:
    w, _ = _gaussian(t0=10e-12, peak_power=0.05)
    f = channel.convert_units(0.2, 17.0, 80.0, gamma_per_w_km=1.3)
    a, b, c = (channel.ssfm_propagate(w, f, h).samples for h in (8e3, 4e3, 2e3))
    ratio = (np.linalg.norm(a - b) / np.linalg.norm(b)) / (np.linalg.norm(b - c) / np.linalg.norm(c))
    return ratio >= 3.0, f"discrepancy ratio {ratio:.2f} (need >= 3)"


def q_oracles() -> tuple[bool, str]:
    q1 = metrics.q_factor(1e-3)
    q2 = metrics.q_factor(0.5 * math.erfc(3 / math.sqrt(2)))
    ok = abs(q1 - 9.80) <= 0.01 and abs(q2 - 9.54) <= 0.01
    return ok, f"Q(1e-3) = {q1:.3f} dB, Q(Q=3) = {q2:.3f} dB"


def float_bits() -> tuple[bool, str]:
    rng = np.random.default_rng(1)
    x = rng.normal(size=10_000) * 10.0 ** rng.uniform(-30, 30, 10_000)
    round_trip = np.array_equal(dataset.bits_to_float(dataset.float_to_bits(x)), x.astype(np.float32))
    words = [int(dataset.floats_to_words(v)) for v in (0.0, 1.0, -2.0)]
    oracle = [struct.unpack(">I", struct.pack(">f", v))[0] for v in (0.0, 1.0, -2.0)]
    ok = round_trip and words == oracle and words[1] == 0x3F800000
    return ok, "words " + ", ".join(f"0x{w:08X}" for w in words)


def gradients() -> tuple[bool, str]:
    errors = {**gradcheck.op_gradient_errors(0), **gradcheck.model_gradient_errors(0)}
    worst = max(errors, key=errors.get)
    return errors[worst] < 1e-4, f"worst relative error {errors[worst]:.1e} ({worst})"


CHECKS: dict[str, Check] = {
    "attenuation": attenuation,
    "dispersive-broadening": broadening,
    "spm-phase": spm_phase,
    "ssfm-step-halving": step_halving,
    "q-factor": q_oracles,
    "float-to-bits": float_bits,
    "gradients": gradients,
}


def run_selftest(echo: Callable[[str], None] = print) -> bool:
    ok = True
    for name, check in CHECKS.items():
        t0 = time.perf_counter()
        try:
            passed, detail = check()
        except Exception as exc:  # a crash is a failure, report and continue
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        echo(f"{'PASS' if passed else 'FAIL'}  {name:<22} {detail}  [{time.perf_counter() - t0:.1f}s]")
        ok &= passed
    return ok
