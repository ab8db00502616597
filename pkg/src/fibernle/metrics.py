"""BER / SER / EVM counting and the Q factor derived from BER."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .txrx import BitStream, SymbolFrame, qam16_decide

FEC_THRESHOLD_Q_DB = 8.53


@dataclass(frozen=True)
class MetricsReport:
    n_symbols: int
    n_bits: int
    ser: float
    ber: float
    q_db: float
    evm_pct: float
    ber_is_floor: bool

    def as_dict(self) -> dict:
        return asdict(self)


def erfcinv(y: float) -> float:
    """Inverse complementary error function for ``0 < y < 2``.

    A rational/asymptotic initial guess is refined by Halley iterations on
    ``erfc(x) - y``; the result has relative error below 1e-12 over the range
    used for Q-factor work.
    """
    if not 0.0 < y < 2.0:
        raise ValueError(f"erfcinv is defined on (0, 2), got {y}")
    if y == 1.0:
        return 0.0
    if y > 1.0:
        return -erfcinv(2.0 - y)
    # initial guess (y in (0, 1))
    if y > 0.0625:
        # Winitzki's approximation of erf^-1
        a = 0.147
        z = 1.0 - y
        ln = math.log(1.0 - z * z)
        t = 2.0 / (math.pi * a) + ln / 2.0
        x = math.copysign(math.sqrt(math.sqrt(t * t - ln / a) - t), z)
    else:
        # leading terms of the asymptotic expansion of erfc
        t = math.sqrt(-math.log(y * math.sqrt(math.pi)))
        x = t
        for _ in range(3):
            x = math.sqrt(-math.log(y * math.sqrt(math.pi) * x))
    for _ in range(50):
        f = math.erfc(x) - y
        dfdx = -2.0 / math.sqrt(math.pi) * math.exp(-x * x)
        step = f / dfdx
        # Halley correction: f'' = -2 x f'
        step = step / (1.0 + x * step)
        x -= step
        if abs(step) <= 1e-15 * max(1.0, abs(x)):
            break
    return x


def q_factor(ber: float, n_bits: int | None = None) -> float:
    """Q in dB: ``20 log10(sqrt(2) * erfcinv(2 ber))``.

    ``ber == 0`` is replaced by the floor ``1 / (2 n_bits)``, which requires
    ``n_bits``; the caller is expected to flag the result as a lower bound.
    """
    if ber < 0:
        raise ValueError(f"negative BER {ber}")
    if ber == 0:
        if not n_bits:
            raise ValueError("BER of 0 needs n_bits to compute the floor Q")
        ber = 1.0 / (2.0 * n_bits)
    if ber >= 0.5:
        raise ValueError(f"Q factor is undefined for BER >= 0.5 (got {ber})")
    return 20.0 * math.log10(math.sqrt(2.0) * erfcinv(2.0 * ber))


def ber_from_q(q_db: float) -> float:
    return 0.5 * math.erfc(10.0 ** (q_db / 20.0) / math.sqrt(2.0))


def evm(rx: SymbolFrame | np.ndarray, ref: SymbolFrame | np.ndarray) -> float:
    """RMS error vector magnitude in percent of the reference RMS."""
    r = np.asarray(rx.symbols if isinstance(rx, SymbolFrame) else rx)
    s = np.asarray(ref.symbols if isinstance(ref, SymbolFrame) else ref)
    if r.shape != s.shape:
        raise ValueError(f"EVM needs equal lengths, got {r.shape} and {s.shape}")
    return 100.0 * math.sqrt(np.mean(np.abs(r - s) ** 2) / np.mean(np.abs(s) ** 2))


def _arr(x) -> np.ndarray:
    if isinstance(x, BitStream):
        return x.bits
    if isinstance(x, SymbolFrame):
        return x.symbols
    return np.asarray(x)


def count_errors(tx_bits, rx_bits, tx_syms, rx_syms) -> MetricsReport:
    """Exact bit/symbol mismatch counts.

    ``rx_syms`` may be soft (undecided) values; they are sliced to the
    nearest constellation point before counting, and EVM is measured on
    the soft values.
    """
    tb, rb = _arr(tx_bits), _arr(rx_bits)
    ts, rs = _arr(tx_syms), _arr(rx_syms)
    if tb.shape != rb.shape:
        raise ValueError(f"bit stream lengths differ: {tb.size} vs {rb.size}")
    if ts.shape != rs.shape:
        raise ValueError(f"symbol stream lengths differ: {ts.size} vs {rs.size}")
    n_bits, n_sym = int(tb.size), int(ts.size)
    ber = float(np.count_nonzero(tb != rb)) / n_bits
    ser = float(np.count_nonzero(~np.isclose(qam16_decide(rs), ts, atol=1e-9))) / n_sym
    floor = ber == 0.0
    q = q_factor(ber, n_bits) if ber < 0.5 else float("nan")
    return MetricsReport(n_sym, n_bits, ser, ber, q, evm(rs, ts), floor)


def mean_distance_to_grid(symbols: np.ndarray) -> float:
    """Average distance from each point to its nearest ideal 16QAM point."""
    s = np.asarray(symbols)
    return float(np.mean(np.abs(s - qam16_decide(s))))


def theory_ser_16qam(snr_db: float) -> float:
    """Symbol error rate of Gray 16QAM on AWGN at Es/N0 = ``snr_db``."""
    snr = 10.0 ** (snr_db / 10.0)
    p_axis = 0.75 * math.erfc(math.sqrt(snr / 10.0))
    return 1.0 - (1.0 - p_axis) ** 2


def theory_ber_16qam(snr_db: float) -> float:
    """Nearest-neighbour BER approximation for Gray 16QAM at Es/N0 = ``snr_db``."""
    snr = 10.0 ** (snr_db / 10.0)
    return 0.375 * math.erfc(math.sqrt(snr / 10.0))
