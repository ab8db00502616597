"""Equalizer training corpus: symbol windows expanded to single-precision bit tokens.

Each sequence covers ``2n + 1`` received symbols centred on time ``t``. Every
symbol contributes two tokens, I then Q, and every token is the 32-bit
IEEE-754 single-precision pattern of that value, MSB first (sign, 8
exponent bits, 23 mantissa bits), presented as 0.0/1.0 features.

Binary layout (all little-endian)::

    magic  b"NLEQDS\\0\\0"          8 bytes
    version                         uint32
    n (window half-width)           uint32
    count                           uint64
    normalization                   float64
    source_seed                     int64
    polarization                    uint8 (0 = x, 1 = y)
    record * count:
        tokens  2(2n+1) x uint32    binary32 words in token order
        target  2 x float64         (I, Q)
        center  uint64              symbol index t
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .txrx import SymbolFrame

BITS = 32
FORMAT_VERSION = 1
_MAGIC = b"NLEQDS\0\0"
_HEADER = struct.Struct("<8sIIQdqB")
POLARIZATIONS = ("x", "y")


def floats_to_words(x: np.ndarray) -> np.ndarray:
    """Round to single precision and return the raw uint32 words."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("float-to-bit expansion needs finite inputs")
    with np.errstate(over="ignore"):
        single = x.astype(np.float32)
    if not np.all(np.isfinite(single)):
        raise ValueError("value overflows single precision")
    return single.view(np.uint32)


def words_to_bits(words: np.ndarray) -> np.ndarray:
    """uint32 words -> (..., 32) uint8 bits, MSB first."""
    w = np.asarray(words, dtype=np.uint32)
    shifts = np.arange(BITS - 1, -1, -1, dtype=np.uint32)
    return ((w[..., None] >> shifts) & 1).astype(np.uint8)


def bits_to_words(bits: np.ndarray) -> np.ndarray:
    b = np.asarray(bits).astype(np.uint32)
    shifts = np.arange(BITS - 1, -1, -1, dtype=np.uint32)
    return np.bitwise_or.reduce(b << shifts, axis=-1).astype(np.uint32)


def float_to_bits(x) -> np.ndarray:
    """Single value (or array) -> 32 features of 0.0/1.0 per value."""
    return words_to_bits(floats_to_words(x)).astype(np.float64)


def bits_to_float(bits: np.ndarray) -> np.ndarray:
    """Inverse of :func:`float_to_bits`, widened back to float64."""
    return bits_to_words(np.rint(bits)).view(np.float32).astype(np.float64)


@dataclass(frozen=True)
class TokenSequence:
    tokens: np.ndarray  # (2(2n+1), 32) of 0.0/1.0
    target: np.ndarray  # (2,)
    n: int


@dataclass
class TokenDataset:
    """Windows stored compactly as binary32 words; bits are expanded on demand."""

    words: np.ndarray  # (count, 2(2n+1)) uint32
    targets: np.ndarray  # (count, 2) float64
    centers: np.ndarray  # (count,) symbol index of each window centre
    n: int
    normalization: float = 1.0
    source_seed: int = 0
    polarization: str = "x"

    def __len__(self) -> int:
        return int(self.words.shape[0])

    @property
    def seq_len(self) -> int:
        return 2 * (2 * self.n + 1)

    def __getitem__(self, i: int) -> TokenSequence:
        return TokenSequence(words_to_bits(self.words[i]).astype(np.float64), self.targets[i].copy(), self.n)

    def features(self, idx=slice(None)) -> np.ndarray:
        """Float64 token features of shape ``(batch, seq_len, 32)``."""
        return words_to_bits(self.words[idx]).astype(np.float64)

    def subset(self, idx: np.ndarray) -> "TokenDataset":
        return TokenDataset(
            self.words[idx], self.targets[idx], self.centers[idx],
            self.n, self.normalization, self.source_seed, self.polarization,
        )

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(_HEADER.pack(
            _MAGIC, FORMAT_VERSION, self.n, len(self), float(self.normalization),
            int(self.source_seed), POLARIZATIONS.index(self.polarization),
        ))
        rec = np.dtype([
            ("tokens", "<u4", (self.seq_len,)),
            ("target", "<f8", (2,)),
            ("center", "<u8"),
        ])
        records = np.empty(len(self), dtype=rec)
        records["tokens"] = self.words
        records["target"] = self.targets
        records["center"] = self.centers
        buf.write(records.tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "TokenDataset":
        magic, version, n, count, norm, seed, pol = _HEADER.unpack_from(data)
        if magic != _MAGIC:
            raise ValueError("not a token dataset file (bad magic)")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported dataset format version {version}")
        seq_len = 2 * (2 * n + 1)
        rec = np.dtype([("tokens", "<u4", (seq_len,)), ("target", "<f8", (2,)), ("center", "<u8")])
        records = np.frombuffer(data, dtype=rec, count=count, offset=_HEADER.size)
        return cls(
            records["tokens"].astype(np.uint32), records["target"].astype(np.float64),
            records["center"].astype(np.int64), n, norm, seed, POLARIZATIONS[pol],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "TokenDataset":
        return cls.from_bytes(Path(path).read_bytes())

    def sha256(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def to_text(self, path: str | Path, limit: int | None = None) -> None:
        """Debug dump: one line per window with the decoded floats and the target."""
        rows = len(self) if limit is None else min(limit, len(self))
        with open(path, "w") as fh:
            fh.write(f"# n={self.n} count={len(self)} normalization={self.normalization!r}\n")
            fh.write("center\t" + "\t".join(
                f"{c}{k:+d}" for k in range(-self.n, self.n + 1) for c in "IQ") + "\ttarget_I\ttarget_Q\n")
            values = self.words[:rows].view(np.float32)
            for i in range(rows):
                fh.write(f"{self.centers[i]}\t" + "\t".join(f"{v:.8g}" for v in values[i])
                         + f"\t{self.targets[i, 0]:.8g}\t{self.targets[i, 1]:.8g}\n")


def _symbols(x) -> np.ndarray:
    return np.asarray(x.symbols if isinstance(x, SymbolFrame) else x)


def window_words(rx: np.ndarray, n: int) -> np.ndarray:
    """(L - 2n, 2(2n+1)) binary32 words for all full windows of ``rx``."""
    iq = np.stack([rx.real, rx.imag], axis=-1).reshape(-1)  # I0 Q0 I1 Q1 ...
    words = floats_to_words(iq)
    width = 2 * (2 * n + 1)
    count = rx.size - 2 * n
    idx = 2 * np.arange(count)[:, None] + np.arange(width)[None, :]
    return words[idx]


def build_windows(
    rx: SymbolFrame | np.ndarray,
    tx: SymbolFrame | np.ndarray,
    n: int,
    *,
    normalization: float | None = None,
    source_seed: int = 0,
    polarization: str = "x",
) -> TokenDataset:
    """Pair every full received window with the transmitted centre symbol.

    ``rx`` is scaled to unit average power unless ``normalization`` (the
    multiplicative factor) is given, e.g. the one stored from training.
    """
    r, t = _symbols(rx), _symbols(tx)
    if r.size != t.size:
        raise ValueError(f"rx ({r.size}) and tx ({t.size}) are not aligned to equal length")
    if n < 0:
        raise ValueError("window half-width must be >= 0")
    if r.size <= 2 * n:
        raise ValueError(f"frame of {r.size} symbols too short for half-width {n}")
    if normalization is None:
        normalization = float(1.0 / np.sqrt(np.mean(np.abs(r) ** 2)))
    words = window_words(r * normalization, n)
    centers = np.arange(n, r.size - n)
    targets = np.stack([t[centers].real, t[centers].imag], axis=1)
    return TokenDataset(words, targets, centers, n, normalization, source_seed, polarization)


def split_shuffle(ds: TokenDataset, seed: int, fraction: float) -> tuple[TokenDataset, TokenDataset]:
    """Seeded permutation split into ``round(fraction * len)`` and the rest."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    perm = np.random.default_rng(seed).permutation(len(ds))
    k = int(round(fraction * len(ds)))
    return ds.subset(perm[:k]), ds.subset(perm[k:])
