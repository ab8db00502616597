"""Receiver DSP: CDC, digital backpropagation, matched filter, BPS carrier
recovery, frequency-offset estimation and data-aided constellation alignment."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter1d

from .channel import (
    FiberParams,
    LinkConfig,
    PropagationError,
    angular_frequency,
    linear_operator,
    split_step,
)
from .txrx import ComplexWaveform, PulseShape, SymbolFrame, cyclic_filter, qam16_decide


class AlignmentError(RuntimeError):
    """Two alignment candidates are indistinguishable."""


@dataclass(frozen=True)
class DspChainConfig:
    mode: str = "linear-eq"
    dbp_steps_per_span: int = 10
    dbp_nl_scaling: float = 1.0
    cpr_test_phases: int = 64
    cpr_window: int = 32

    def __post_init__(self):
        if self.mode not in ("linear-eq", "dbp"):
            raise ValueError(f"unknown DSP mode {self.mode!r}")
        if self.mode == "dbp" and self.dbp_steps_per_span < 1:
            raise ValueError("dbp_steps_per_span must be >= 1")
        if self.cpr_test_phases < 4:
            raise ValueError("cpr_test_phases must be >= 4")
        if self.cpr_window < 1:
            raise ValueError("cpr_window must be >= 1")


@dataclass(frozen=True)
class Alignment:
    delay: int
    rotation: int  # multiples of pi/2 applied to the input
    conjugate: bool
    score: float
    runner_up: float


def cdc(w: ComplexWaveform, f: FiberParams, total_length: float) -> ComplexWaveform:
    """Undo the lossless dispersive response of ``total_length`` metres of fiber."""
    if total_length == 0:
        return w
    omega = angular_frequency(w.n_samples, w.sample_rate)
    h = linear_operator(omega, 0.0, -f.beta2, -f.beta3, total_length)
    return w.with_samples(np.fft.ifft(np.fft.fft(w.samples, axis=-1) * h, axis=-1))


def dbp(
    w: ComplexWaveform, link: LinkConfig, steps_per_span: int, xi: float = 1.0
) -> ComplexWaveform:
    """Backpropagate through ``link`` with ``steps_per_span`` symmetric steps.

    Spans are visited last to first: the amplifier gain is divided out, then
    the span is solved with negated dispersion, negated (xi-scaled)
    nonlinearity and gain in place of loss. With ``steps_per_span`` equal to
    the forward step count this is the exact inverse of the noiseless
    forward split-step.
    """
    if steps_per_span < 1:
        raise ValueError("steps_per_span must be >= 1")
    span = link.span
    samples = w.samples
    inv_gain = 1.0 / math.sqrt(link.amplifier.gain)
    for k in reversed(range(link.n_spans)):
        samples = samples * inv_gain
        try:
            samples = split_step(
                samples, w.sample_rate,
                -span.alpha, -span.beta2, -span.beta3, -xi * span.gamma,
                span.length, steps_per_span, link.polarization_model,
            )
        except PropagationError as exc:
            raise PropagationError(f"DBP failed in span {k}: {exc}") from exc
    return w.with_samples(samples)


def matched_filter_downsample(
    w: ComplexWaveform,
    shape: PulseShape,
    timing_offset: int = 0,
    pol: int = 0,
    guard: int | None = None,
) -> SymbolFrame:
    """RRC matched filter, symbol-instant sampling, unit-power normalization.

    ``guard`` symbols (default ``shape.span_symbols``) are dropped at both
    ends, so the frame holds ``n_symbols - 2*guard`` symbols starting at
    transmitted index ``guard``.
    """
    if not -shape.sps < timing_offset < shape.sps:
        raise ValueError(f"timing_offset {timing_offset} outside (-{shape.sps}, {shape.sps})")
    if not 0 <= pol < w.n_pol:
        raise ValueError(f"polarization index {pol} out of range for {w.n_pol} polarizations")
    guard = shape.span_symbols if guard is None else guard
    filtered = cyclic_filter(w.samples[pol], shape.taps())
    symbols = np.roll(filtered, -timing_offset)[:: shape.sps]
    if 2 * guard >= symbols.size:
        raise ValueError("guard removes every symbol")
    symbols = symbols[guard : symbols.size - guard]
    return SymbolFrame(normalize_power(symbols))


def normalize_power(x: np.ndarray) -> np.ndarray:
    return x / math.sqrt(np.mean(np.abs(x) ** 2))


def _bps_costs(symbols: np.ndarray, n_test_phases: int, window: int) -> tuple[np.ndarray, np.ndarray]:
    phases = (np.arange(n_test_phases) / n_test_phases - 0.5) * (np.pi / 2)
    rotated = symbols[None, :] * np.exp(-1j * phases)[:, None]
    dist = np.abs(rotated - qam16_decide(rotated)) ** 2
    costs = uniform_filter1d(dist, size=window, axis=1, mode="nearest")
    return phases, costs


def bps_raw_phase(symbols: np.ndarray, n_test_phases: int = 64, window: int = 32) -> np.ndarray:
    """Per-symbol BPS estimate on the test grid in [-pi/4, pi/4), before unwrapping."""
    phases, costs = _bps_costs(np.asarray(symbols), n_test_phases, window)
    return phases[np.argmin(costs, axis=0)]


def unwrap_quadrant(phase: np.ndarray) -> np.ndarray:
    """Remove pi/2 jumps so the track is continuous."""
    q = np.pi / 2
    jumps = np.round(np.diff(phase) / q)
    return phase - q * np.concatenate([[0.0], np.cumsum(jumps)])


def cpr_bps(
    frame: SymbolFrame, n_test_phases: int = 64, window: int = 32
) -> tuple[SymbolFrame, np.ndarray]:
    """Blind phase search carrier recovery.

    Returns the de-rotated frame and the unwrapped phase track. The global
    pi/2 ambiguity is left for :func:`align_constellation`.
    """
    if n_test_phases < 4:
        raise ValueError("n_test_phases must be >= 4")
    if window < 1:
        raise ValueError("window must be >= 1")
    track = unwrap_quadrant(bps_raw_phase(frame.symbols, n_test_phases, window))
    return SymbolFrame(frame.symbols * np.exp(-1j * track), frame.modulation), track


def _xcorr(x: np.ndarray, ref: np.ndarray) -> np.ndarray:
    # c[d] = sum_k x[k + d] conj(ref[k]) (cyclic)
    return np.fft.ifft(np.fft.fft(x) * np.conj(np.fft.fft(ref)))


def estimate_alignment(frame: SymbolFrame, reference: SymbolFrame) -> Alignment:
    """Pick delay, quarter-turn rotation and conjugation maximizing correlation."""
    x = np.asarray(frame.symbols)
    ref = np.asarray(reference.symbols)
    if x.size != ref.size:
        raise ValueError(f"frame ({x.size}) and reference ({ref.size}) lengths differ")
    candidates = []
    for conj in (False, True):
        c = _xcorr(np.conj(x) if conj else x, ref)
        d = int(np.argmax(np.abs(c)))
        for rot in range(4):
            score = float(np.real(c[d] * np.exp(1j * rot * np.pi / 2))) / x.size
            candidates.append((score, d, rot, conj))
    candidates.sort(key=lambda c: c[0], reverse=True)
    best, second = candidates[0], candidates[1]
    if best[0] <= 0 or (best[0] - second[0]) <= 0.01 * abs(best[0]):
        raise AlignmentError(
            f"ambiguous constellation alignment: best score {best[0]:.4g}, runner-up {second[0]:.4g}"
        )
    delay = best[1] if best[1] <= x.size // 2 else best[1] - x.size
    return Alignment(delay, best[2], best[3], best[0], second[0])


def apply_alignment(frame: SymbolFrame, a: Alignment) -> SymbolFrame:
    x = np.conj(frame.symbols) if a.conjugate else frame.symbols
    x = np.roll(x, -a.delay) * np.exp(1j * a.rotation * np.pi / 2)
    return SymbolFrame(x, frame.modulation)


def align_constellation(frame: SymbolFrame, reference: SymbolFrame) -> SymbolFrame:
    return apply_alignment(frame, estimate_alignment(frame, reference))


def estimate_frequency_offset(frame: SymbolFrame, reference: SymbolFrame, symbol_rate: float,
                              oversample: int = 8) -> float:
    """Data-aided estimate: FFT peak of ``rx * conj(tx)``, zero-padded for resolution."""
    z = np.asarray(frame.symbols) * np.conj(reference.symbols)
    n = z.size * oversample
    spec = np.abs(np.fft.fft(z, n))
    k = int(np.argmax(spec))
    return float(np.fft.fftfreq(n, d=1.0 / symbol_rate)[k])


def compensate_frequency_offset(frame: SymbolFrame, offset: float, symbol_rate: float) -> SymbolFrame:
    k = np.arange(len(frame))
    return SymbolFrame(frame.symbols * np.exp(-2j * np.pi * offset * k / symbol_rate), frame.modulation)


def receive(
    w: ComplexWaveform,
    link: LinkConfig,
    shape: PulseShape,
    cfg: DspChainConfig,
    reference: SymbolFrame,
    pol: int = 0,
    guard: int | None = None,
) -> SymbolFrame:
    """Full chain for one polarization: CDC or DBP, matched filter, CPR, alignment.

    ``reference`` is the transmitted frame of that polarization already
    trimmed to the same guard.
    """
    if cfg.mode == "dbp":
        w = dbp(w, link, cfg.dbp_steps_per_span, cfg.dbp_nl_scaling)
    else:
        w = cdc(w, link.span, link.total_length)
    frame = matched_filter_downsample(w, shape, pol=pol, guard=guard)
    frame, _ = cpr_bps(frame, cfg.cpr_test_phases, cfg.cpr_window)
    return align_constellation(frame, reference)

