import struct

import numpy as np
import pytest

from fibernle import dataset, txrx
from fibernle.dataset import TokenDataset, build_windows, float_to_bits, split_shuffle


def _struct_bits(x: float) -> list[int]:
    """Oracle via the struct module: big-endian binary32 gives MSB first."""
    (word,) = struct.unpack(">I", struct.pack(">f", x))
    return [(word >> (31 - k)) & 1 for k in range(32)]


class TestFloatToBits:
    def test_zero(self):
        assert np.all(float_to_bits(0.0) == 0)

    def test_one(self):
        bits = float_to_bits(1.0)
        assert list(bits.astype(int)) == [0, 0, 1, 1, 1, 1, 1, 1, 1] + [0] * 23
        assert int(dataset.floats_to_words(1.0)) == 0x3F800000

    def test_minus_two(self):
        bits = float_to_bits(-2.0).astype(int)
        assert bits[0] == 1
        assert list(bits[1:9]) == [1, 0, 0, 0, 0, 0, 0, 0]
        assert not bits[9:].any()

    def test_features_are_binary_floats(self):
        bits = float_to_bits(np.array([0.3, -1.7]))
        assert bits.dtype == np.float64 and bits.shape == (2, 32)
        assert set(np.unique(bits)) <= {0.0, 1.0}

    def test_matches_struct_oracle(self):
        rng = np.random.default_rng(0)
        for x in rng.normal(size=200) * 10.0 ** rng.integers(-8, 8, 200):
            assert list(float_to_bits(x).astype(int)) == _struct_bits(float(x))

    def test_exhaustive_round_trip(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=100_000) * 10.0 ** rng.uniform(-30, 30, 100_000)
        back = dataset.bits_to_float(float_to_bits(x))
        assert np.array_equal(back, x.astype(np.float32).astype(np.float64))

    @pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf, 1e300])
    def test_rejects_non_representable(self, bad):
        with pytest.raises(ValueError):
            float_to_bits(bad)


def _frames(L=100, seed=3):
    tx = txrx.qam16_map(txrx.prbs_generate(seed, 4 * L)).symbols
    rng = np.random.default_rng(seed)
    rx = 2.5 * (tx + 0.05 * (rng.normal(size=L) + 1j * rng.normal(size=L)))
    return rx, tx


class TestBuildWindows:
    def test_sequence_length_ten(self):
        rx, tx = _frames()
        ds = build_windows(rx, tx, 2)
        assert ds[0].tokens.shape == (10, 32)
        assert ds.seq_len == 10

    def test_count(self):
        rx, tx = _frames(100)
        assert len(build_windows(rx, tx, 2)) == 96
        ds0 = build_windows(rx, tx, 0)
        assert len(ds0) == 100 and ds0.seq_len == 2

    def test_token_order_and_centre(self):
        rx, tx = _frames(50)
        n = 3
        ds = build_windows(rx, tx, n)
        r = rx * ds.normalization
        for i in (0, 7, len(ds) - 1):
            t = int(ds.centers[i])
            decoded = dataset.bits_to_float(ds[i].tokens)
            expected = np.stack([r[t - n : t + n + 1].real, r[t - n : t + n + 1].imag], axis=1).reshape(-1)
            assert np.array_equal(decoded, expected.astype(np.float32).astype(np.float64))
            # tokens 2n and 2n+1 are the centre symbol whose tx value is the target
            assert decoded[2 * n] == np.float32(r[t].real)
            assert decoded[2 * n + 1] == np.float32(r[t].imag)
            assert ds.targets[i, 0] == tx[t].real and ds.targets[i, 1] == tx[t].imag

    def test_unit_power_normalization_recorded(self):
        rx, tx = _frames(400)
        ds = build_windows(rx, tx, 1)
        assert np.mean(np.abs(rx * ds.normalization) ** 2) == pytest.approx(1.0, rel=1e-12)
        again = build_windows(rx, tx, 1, normalization=0.5)
        assert again.normalization == 0.5

    def test_deterministic(self):
        rx, tx = _frames(200)
        assert build_windows(rx, tx, 2).sha256() == build_windows(rx, tx, 2).sha256()

    def test_errors(self):
        rx, tx = _frames(10)
        with pytest.raises(ValueError, match="too short"):
            build_windows(rx, tx, 5)
        with pytest.raises(ValueError, match="aligned"):
            build_windows(rx, tx[:-1], 1)


class TestSplit:
    def _ds(self, L=1004):
        rx, tx = _frames(L)
        return build_windows(rx, tx, 2)

    def test_sizes_disjoint_cover(self):
        ds = self._ds()
        a, b = split_shuffle(ds, 4, 0.8)
        assert (len(a), len(b)) == (800, 200)
        assert not set(a.centers) & set(b.centers)
        assert sorted(np.concatenate([a.centers, b.centers])) == list(ds.centers)

    def test_same_seed_same_split(self):
        ds = self._ds()
        a1, _ = split_shuffle(ds, 9, 0.5)
        a2, _ = split_shuffle(ds, 9, 0.5)
        assert np.array_equal(a1.centers, a2.centers)

    @pytest.mark.parametrize("fraction", [0.0, 1.0, 1.5])
    def test_bad_fraction(self, fraction):
        with pytest.raises(ValueError):
            split_shuffle(self._ds(20), 0, fraction)


class TestSerialization:
    def test_binary_round_trip(self, tmp_path):
        rx, tx = _frames(64)
        ds = build_windows(rx, tx, 2, source_seed=77, polarization="y")
        path = tmp_path / "windows.bin"
        ds.save(path)
        back = TokenDataset.load(path)
        assert np.array_equal(back.words, ds.words)
        assert np.array_equal(back.targets, ds.targets)
        assert np.array_equal(back.centers, ds.centers)
        assert (back.n, back.normalization, back.source_seed, back.polarization) == (2, ds.normalization, 77, "y")
        assert back.sha256() == ds.sha256()

    def test_header_layout(self):
        rx, tx = _frames(20)
        ds = build_windows(rx, tx, 1)
        raw = ds.to_bytes()
        magic, version, n, count = struct.unpack_from("<8sIIQ", raw)
        assert (magic, version, n, count) == (b"NLEQDS\0\0", 1, 1, 18)
        record = 6 * 4 + 2 * 8 + 8
        assert len(raw) == struct.calcsize("<8sIIQdqB") + 18 * record

    def test_bad_magic(self):
        with pytest.raises(ValueError, match="magic"):
            TokenDataset.from_bytes(b"X" * 64)

    def test_text_dump(self, tmp_path):
        rx, tx = _frames(20)
        ds = build_windows(rx, tx, 1)
        path = tmp_path / "windows.tsv"
        ds.to_text(path, limit=3)
        lines = path.read_text().splitlines()
        assert len(lines) == 2 + 3
        assert lines[1].split("\t")[:3] == ["center", "I-1", "Q-1"]
