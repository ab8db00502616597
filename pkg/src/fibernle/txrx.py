"""Transmitter side: PRBS bits, Gray-coded 16QAM, RRC pulse shaping, laser impairments.

All quantities are SI (s, Hz, W, m). Waveforms are stored as a 2-D complex
array of shape ``(n_pol, n_samples)`` so that dual-polarization signals keep
both tributaries time-aligned.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0

# Gray code per quadrature axis: 2 bits -> amplitude level.
# 00 -> -3, 01 -> -1, 11 -> +1, 10 -> +3 ; first bit pair drives I, second pair Q.
_GRAY_LEVELS = {(0, 0): -3.0, (0, 1): -1.0, (1, 1): 1.0, (1, 0): 3.0}
_LEVELS = np.array([-3.0, -1.0, 1.0, 3.0])
_LEVEL_BITS = np.array([[0, 0], [0, 1], [1, 1], [1, 0]], dtype=np.uint8)
QAM16_SCALE = 1.0 / np.sqrt(10.0)


@dataclass(frozen=True)
class BitStream:
    bits: np.ndarray
    seed: int | None = None

    def __len__(self) -> int:
        return int(self.bits.size)


@dataclass(frozen=True)
class SymbolFrame:
    symbols: np.ndarray
    modulation: str = "16QAM"

    def __len__(self) -> int:
        return int(self.symbols.size)


@dataclass(frozen=True)
class ComplexWaveform:
    """Sampled complex baseband field, amplitude in sqrt(W).

    ``samples`` has shape ``(n_pol, n_samples)``.
    """

    samples: np.ndarray
    sample_rate: float
    center_wavelength: float = 1550e-9

    def __post_init__(self):
        s = np.asarray(self.samples)
        if s.ndim == 1:
            s = s[None, :]
        if s.ndim != 2:
            raise ValueError(f"waveform samples must be 1-D or 2-D, got shape {s.shape}")
        object.__setattr__(self, "samples", s.astype(np.complex128, copy=False))

    @property
    def n_pol(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def center_frequency(self) -> float:
        return SPEED_OF_LIGHT / self.center_wavelength

    def power(self) -> float:
        """Total mean power summed over polarizations, in W."""
        return float(np.sum(np.mean(np.abs(self.samples) ** 2, axis=1)))

    def with_samples(self, samples: np.ndarray) -> "ComplexWaveform":
        return ComplexWaveform(samples, self.sample_rate, self.center_wavelength)


@dataclass(frozen=True)
class PulseShape:
    rolloff: float = 0.18
    sps: int = 8
    span_symbols: int = 16

    def __post_init__(self):
        if not 0.0 <= self.rolloff <= 1.0:
            raise ValueError(f"rolloff must lie in [0, 1], got {self.rolloff}")
        if self.sps < 2:
            raise ValueError(f"sps must be >= 2, got {self.sps}")
        if self.span_symbols < 1:
            raise ValueError("span_symbols must be >= 1")

    def taps(self) -> np.ndarray:
        return rrc_taps(self.rolloff, self.sps, self.span_symbols)


def dbm_to_watt(p_dbm: float) -> float:
    return 10.0 ** ((p_dbm - 30.0) / 10.0)


def watt_to_dbm(p_w: float) -> float:
    return 10.0 * np.log10(p_w) + 30.0


def prbs_generate(seed: int, n_bits: int) -> BitStream:
    """Seeded pseudo-random bit stream.

    Bits are drawn with numpy's PCG64 generator (``default_rng(seed)``), so a
    given ``(seed, n_bits)`` always reproduces the same stream, and the
    first ``k`` bits do not depend on ``n_bits``.
    """
    if n_bits <= 0:
        raise ValueError(f"cannot generate an empty bit stream (n_bits={n_bits})")
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, size=int(n_bits), dtype=np.uint8)
    return BitStream(bits, seed)


def gray_table() -> dict[tuple[int, int, int, int], complex]:
    """Full 4-bit label -> unit-power constellation point table."""
    table = {}
    for bi, li in _GRAY_LEVELS.items():
        for bq, lq in _GRAY_LEVELS.items():
            table[bi + bq] = complex(li, lq) * QAM16_SCALE
    return table


def constellation() -> np.ndarray:
    """The 16 unit-average-power points, ordered by label value 0..15."""
    table = gray_table()
    labels = sorted(table, key=lambda b: int("".join(map(str, b)), 2))
    return np.array([table[b] for b in labels])


def qam16_map(bits: BitStream | np.ndarray) -> SymbolFrame:
    b = np.asarray(bits.bits if isinstance(bits, BitStream) else bits, dtype=np.uint8)
    if b.size % 4:
        raise ValueError(f"16QAM mapping needs a multiple of 4 bits, got {b.size}")
    b = b.reshape(-1, 4)
    # Gray index per axis: 00->0, 01->1, 11->2, 10->3
    idx_i = 2 * b[:, 0] + (b[:, 0] ^ b[:, 1])
    idx_q = 2 * b[:, 2] + (b[:, 2] ^ b[:, 3])
    symbols = (_LEVELS[idx_i] + 1j * _LEVELS[idx_q]) * QAM16_SCALE
    return SymbolFrame(symbols)


def _slice_axis(x: np.ndarray) -> np.ndarray:
    # argmin returns the first minimum, i.e. ties resolve toward the smaller level
    d = np.abs(x[..., None] - _LEVELS * QAM16_SCALE)
    return np.argmin(d, axis=-1)


def qam16_decide(symbols: np.ndarray) -> np.ndarray:
    """Nearest constellation point for every complex value."""
    s = np.asarray(symbols)
    return (_LEVELS[_slice_axis(s.real)] + 1j * _LEVELS[_slice_axis(s.imag)]) * QAM16_SCALE


def qam16_demap(frame: SymbolFrame | np.ndarray) -> BitStream:
    """Minimum-distance hard decision followed by the inverse Gray table.

    The square grid makes the nearest point separable per axis. Ties are
    broken toward the smaller real part, then the smaller imaginary part,
    so the origin decides to ``(-1-1j)/sqrt(10)``.
    """
    s = np.asarray(frame.symbols if isinstance(frame, SymbolFrame) else frame).ravel()
    bi = _LEVEL_BITS[_slice_axis(s.real)]
    bq = _LEVEL_BITS[_slice_axis(s.imag)]
    return BitStream(np.concatenate([bi, bq], axis=1).ravel())


def rrc_taps(rolloff: float, sps: int, span_symbols: int) -> np.ndarray:
    """Root-raised-cosine impulse response, unit energy, ``2*span*sps + 1`` taps."""
    beta = float(rolloff)
    t = np.arange(-span_symbols * sps, span_symbols * sps + 1) / sps
    h = np.empty_like(t)
    for k, tk in enumerate(t):
        if abs(tk) < 1e-12:
            h[k] = 1.0 + beta * (4.0 / np.pi - 1.0)
        elif beta > 0 and abs(abs(tk) - 1.0 / (4.0 * beta)) < 1e-12:
            h[k] = (beta / np.sqrt(2.0)) * (
                (1 + 2 / np.pi) * np.sin(np.pi / (4 * beta))
                + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta))
            )
        else:
            num = np.sin(np.pi * tk * (1 - beta)) + 4 * beta * tk * np.cos(np.pi * tk * (1 + beta))
            den = np.pi * tk * (1 - (4 * beta * tk) ** 2)
            h[k] = num / den
    return h / np.sqrt(np.sum(h**2))


def cyclic_filter(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Circular convolution with a centered, odd-length FIR along the last axis."""
    n = x.shape[-1]
    if taps.size > n:
        raise ValueError(f"filter ({taps.size} taps) longer than signal ({n} samples)")
    centered = np.zeros(n)
    half = taps.size // 2
    centered[: half + 1] = taps[half:]
    centered[n - half :] = taps[:half]
    return np.fft.ifft(np.fft.fft(x, axis=-1) * np.fft.fft(centered), axis=-1)


def shape_pulse(
    frames: SymbolFrame | Sequence[SymbolFrame],
    shape: PulseShape,
    symbol_rate: float,
    launch_power_dbm: float | None = None,
    center_wavelength: float = 1550e-9,
) -> ComplexWaveform:
    """Zero-stuff each polarization to ``sps`` and filter with RRC taps.

    The symbol block is treated as one period of a cyclic signal, which keeps
    the waveform consistent with the FFT-based channel. With
    ``launch_power_dbm`` set, the total power (summed over polarizations) is
    scaled to that value; otherwise the unit-energy taps leave the symbol
    energy untouched.
    """
    if isinstance(frames, SymbolFrame):
        frames = [frames]
    lengths = {len(f) for f in frames}
    if len(lengths) != 1:
        raise ValueError(f"polarizations carry different symbol counts: {sorted(lengths)}")
    n_sym = lengths.pop()
    up = np.zeros((len(frames), n_sym * shape.sps), dtype=np.complex128)
    for p, f in enumerate(frames):
        up[p, :: shape.sps] = f.symbols
    samples = cyclic_filter(up, shape.taps())
    if launch_power_dbm is not None:
        total = np.sum(np.mean(np.abs(samples) ** 2, axis=1))
        samples = samples * np.sqrt(dbm_to_watt(launch_power_dbm) / total)
    return ComplexWaveform(samples, shape.sps * symbol_rate, center_wavelength)


def wiener_phase(n: int, linewidth: float, dt: float, rng_seed: int) -> np.ndarray:
    """Random-walk phase with increment variance ``2*pi*linewidth*dt``; starts at 0."""
    if linewidth < 0:
        raise ValueError(f"linewidth must be >= 0, got {linewidth}")
    if linewidth == 0:
        return np.zeros(n)
    rng = np.random.default_rng(rng_seed)
    steps = rng.normal(0.0, np.sqrt(2 * np.pi * linewidth * dt), size=n)
    steps[0] = 0.0
    return np.cumsum(steps)


def apply_laser_phase_noise(w: ComplexWaveform, linewidth: float, rng_seed: int) -> ComplexWaveform:
    """Common laser phase noise on all polarizations (single carrier laser)."""
    if linewidth < 0:
        raise ValueError(f"linewidth must be >= 0, got {linewidth}")
    if linewidth == 0:
        return w
    theta = wiener_phase(w.n_samples, linewidth, w.dt, rng_seed)
    return w.with_samples(w.samples * np.exp(1j * theta))


def apply_frequency_offset(w: ComplexWaveform, offset: float) -> ComplexWaveform:
    if offset == 0:
        return w
    t = np.arange(w.n_samples) * w.dt
    return w.with_samples(w.samples * np.exp(2j * np.pi * offset * t))
