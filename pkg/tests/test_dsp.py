import math

import numpy as np
import pytest

from fibernle import channel, dsp, metrics, txrx
from fibernle.channel import LinkConfig
from fibernle.dsp import AlignmentError, DspChainConfig
from fibernle.txrx import ComplexWaveform, PulseShape, SymbolFrame

SHAPE = PulseShape(0.18, 8, 16)
RATE = 10e9


def _tx(n_sym=4096, p_dbm=0.0, seed=1, n_pol=1):
    bits = [txrx.prbs_generate(seed + k, 4 * n_sym) for k in range(n_pol)]
    frames = [txrx.qam16_map(b) for b in bits]
    return bits, frames, txrx.shape_pulse(frames, SHAPE, RATE, launch_power_dbm=p_dbm)


def _noisy_symbols(symbols, snr_db, seed):
    rng = np.random.default_rng(seed)
    sigma = math.sqrt(10 ** (-snr_db / 10) / 2)
    return symbols + sigma * (rng.normal(size=symbols.size) + 1j * rng.normal(size=symbols.size))


def _q_of(rx, tx_frame, tx_bits):
    rep = metrics.count_errors(tx_bits, txrx.qam16_demap(rx), tx_frame, rx)
    return rep.q_db


class TestConfig:
    def test_defaults(self):
        cfg = DspChainConfig()
        assert (cfg.mode, cfg.cpr_test_phases, cfg.cpr_window, cfg.dbp_nl_scaling) == ("linear-eq", 64, 32, 1.0)

    @pytest.mark.parametrize(
        "kwargs", [{"mode": "cma"}, {"mode": "dbp", "dbp_steps_per_span": 0}, {"cpr_test_phases": 3}, {"cpr_window": 0}]
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            DspChainConfig(**kwargs)


class TestCdc:
    def test_inverts_dispersion_only_channel(self):
        _, frames, w = _tx()
        f = channel.convert_units(0.0, 17.0, 320.0)
        out = dsp.cdc(channel.ssfm_propagate(w, f, 80e3), f, f.length)
        assert metrics.evm(out.samples[0], w.samples[0]) < 1e-6

    def test_energy_preserved_and_identity(self):
        _, _, w = _tx()
        f = channel.convert_units(0.2, 17.0, 80.0)
        out = dsp.cdc(w, f, 640e3)
        assert abs(np.sum(np.abs(out.samples) ** 2) / np.sum(np.abs(w.samples) ** 2) - 1) < 1e-10
        assert dsp.cdc(w, f, 0.0) is w

    def test_inverse_pair(self):
        _, _, w = _tx(1024)
        f = channel.convert_units(0.2, 17.0, 80.0, beta3_ps3_per_km=0.1)
        back = dsp.cdc(dsp.cdc(w, f, 500e3), f, -500e3)
        assert np.max(np.abs(back.samples - w.samples)) < 1e-12


def _nl_link(n_spans=2, step=2e3):
    return LinkConfig(channel.convert_units(0.2, 17.0, 80.0, gamma_per_w_km=1.3), n_spans, ssfm_step=step,
                      polarization_model="independent-scalar")


class TestDbp:
    def test_inverts_noiseless_link(self):
        bits, frames, w = _tx(4096, p_dbm=3.0)
        link = channel.without_noise(_nl_link())
        rx = channel.link_propagate(w, link, 0)
        back = dsp.dbp(rx, link, link.steps_per_span)
        assert metrics.evm(back.samples[0], w.samples[0]) < 1e-6
        frame = dsp.matched_filter_downsample(back, SHAPE, guard=0)
        assert np.array_equal(txrx.qam16_demap(frame).bits, bits[0].bits)

    def test_forward_after_backward(self):
        _, _, w = _tx(2048, p_dbm=3.0)
        link = channel.without_noise(_nl_link())
        pre = dsp.dbp(w, link, link.steps_per_span)
        out = channel.link_propagate(pre, link, 0)
        assert metrics.evm(out.samples[0], w.samples[0]) < 1.0

    def test_xi_zero_equals_cdc(self):
        _, _, w = _tx(2048, p_dbm=3.0)
        link = _nl_link(3)
        a = dsp.dbp(w, link, 5, xi=0.0).samples
        # gain bookkeeping aside: dbp also removes the amplifier gain and restores span loss
        b = dsp.cdc(w, link.span, link.total_length).samples
        scale = (math.exp(link.span.alpha * link.span.length / 2) / math.sqrt(link.amplifier.gain)) ** link.n_spans
        assert np.max(np.abs(a - b * scale)) / np.max(np.abs(b)) < 1e-9

    def test_steps_validated(self):
        _, _, w = _tx(256)
        with pytest.raises(ValueError):
            dsp.dbp(w, _nl_link(), 0)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_names_span(self):
        samples = np.ones((1, 256), dtype=complex)
        samples[0, 0] = np.inf
        with pytest.raises(channel.PropagationError, match="span 1"):
            dsp.dbp(ComplexWaveform(samples, 80e9), _nl_link(2), 2)


class TestMatchedFilter:
    def test_back_to_back(self):
        _, frames, w = _tx(2048)
        rx = dsp.matched_filter_downsample(w, SHAPE)
        g = SHAPE.span_symbols
        ref = frames[0].symbols[g:-g]
        assert len(rx) == 2048 - 2 * g
        assert np.mean(np.abs(rx.symbols) ** 2) == pytest.approx(1.0, abs=1e-6)
        scale = math.sqrt(np.mean(np.abs(ref) ** 2))
        assert metrics.evm(rx.symbols * scale, ref) < 0.5

    @pytest.mark.parametrize("offset", [8, -8, 12])
    def test_offset_range(self, offset):
        _, _, w = _tx(256)
        with pytest.raises(ValueError):
            dsp.matched_filter_downsample(w, SHAPE, timing_offset=offset)

    def test_timing_offset_shifts_sampling(self):
        _, _, w = _tx(256)
        shifted = w.with_samples(np.roll(w.samples, 3, axis=-1))
        a = dsp.matched_filter_downsample(w, SHAPE).symbols
        b = dsp.matched_filter_downsample(shifted, SHAPE, timing_offset=3).symbols
        assert np.allclose(a, b, atol=1e-12)


class TestBps:
    def test_constant_offset_recovered(self):
        s = txrx.qam16_map(txrx.prbs_generate(3, 4 * 2048)).symbols
        out, track = dsp.cpr_bps(SymbolFrame(s * np.exp(1j * np.pi / 16)), 64, 32)
        assert np.max(np.abs(track - np.pi / 16)) <= np.pi / (2 * 64) + 1e-12
        # the residual rotation keeps every decision correct
        assert np.array_equal(txrx.qam16_decide(out.symbols), s)

    @pytest.mark.parametrize("window", [1, 33])
    def test_exhaustive_search_oracle(self, window):
        # brute force over every test phase with an explicit centred window sum
        s = txrx.qam16_map(txrx.prbs_generate(4, 4 * 512)).symbols
        r = _noisy_symbols(s * np.exp(0.3j), 20, 0)
        phases = (np.arange(64) / 64 - 0.5) * np.pi / 2
        dist = np.array([np.abs(r * np.exp(-1j * p) - txrx.qam16_decide(r * np.exp(-1j * p))) ** 2 for p in phases])
        raw = dsp.bps_raw_phase(r, 64, window)
        h = window // 2
        for k in range(h, r.size - h, 7):
            best = int(np.argmin(dist[:, k - h : k + h + 1].sum(axis=1)))
            assert raw[k] == phases[best]

    def test_zero_offset_identity(self):
        s = txrx.qam16_map(txrx.prbs_generate(5, 4 * 1024)).symbols
        out, track = dsp.cpr_bps(SymbolFrame(s))
        assert np.max(np.abs(track)) <= np.pi / (2 * 64) + 1e-12
        assert np.array_equal(txrx.qam16_decide(out.symbols), s)

    def test_raw_phase_in_range(self):
        s = _noisy_symbols(txrx.qam16_map(txrx.prbs_generate(6, 4 * 4096)).symbols, 18, 1)
        theta = txrx.wiener_phase(s.size, 1e6, 1 / RATE, 2)
        raw = dsp.bps_raw_phase(s * np.exp(1j * theta))
        assert np.all(raw >= -np.pi / 4) and np.all(raw < np.pi / 4)

    @pytest.mark.parametrize("snr_db", [30.0, 17.0])
    def test_laser_phase_noise_penalty(self, snr_db):
        n = 2**15
        bits = txrx.prbs_generate(7, 4 * n)
        s = txrx.qam16_map(bits)
        r = _noisy_symbols(s.symbols, snr_db, 3)
        theta = txrx.wiener_phase(n, 100e3, 1 / RATE, 4)
        q_ref = _q_of(dsp.align_constellation(dsp.cpr_bps(SymbolFrame(r))[0], s).symbols, s.symbols, bits)
        rx = dsp.align_constellation(dsp.cpr_bps(SymbolFrame(r * np.exp(1j * theta)))[0], s)
        assert abs(_q_of(rx.symbols, s.symbols, bits) - q_ref) <= 1.0

    @pytest.mark.parametrize("kwargs", [{"n_test_phases": 3}, {"window": 0}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            dsp.cpr_bps(SymbolFrame(np.ones(8, dtype=complex)), **kwargs)


class TestAlignment:
    @pytest.mark.parametrize("rot", [1, 2, 3])
    def test_rotation(self, rot):
        ref = txrx.qam16_map(txrx.prbs_generate(8, 4 * 1024))
        x = SymbolFrame(ref.symbols * np.exp(1j * rot * np.pi / 2))
        out = dsp.align_constellation(x, ref)
        assert np.allclose(out.symbols, ref.symbols, atol=1e-12)

    def test_conjugate(self):
        ref = txrx.qam16_map(txrx.prbs_generate(9, 4 * 1024))
        a = dsp.estimate_alignment(SymbolFrame(np.conj(ref.symbols)), ref)
        assert a.conjugate and a.delay == 0

    def test_delay(self):
        ref = txrx.qam16_map(txrx.prbs_generate(10, 4 * 1024))
        a = dsp.estimate_alignment(SymbolFrame(np.roll(ref.symbols, 3)), ref)
        assert a.delay == 3 and a.rotation == 0
        assert np.allclose(dsp.apply_alignment(SymbolFrame(np.roll(ref.symbols, 3)), a).symbols, ref.symbols)

    def test_monte_carlo_margin(self):
        for trial in range(20):
            ref = txrx.qam16_map(txrx.prbs_generate(100 + trial, 4 * 1024))
            rot = trial % 4
            x = _noisy_symbols(ref.symbols * np.exp(-1j * rot * np.pi / 2), 20, trial)
            a = dsp.estimate_alignment(SymbolFrame(x), ref)
            assert (a.rotation, a.conjugate, a.delay) == (rot, False, 0)
            assert a.score >= 10 * abs(a.runner_up)

    def test_ambiguous_raises(self):
        ref = SymbolFrame(np.ones(64, dtype=complex))
        with pytest.raises(AlignmentError):
            dsp.estimate_alignment(SymbolFrame(np.ones(64, dtype=complex)), ref)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            dsp.estimate_alignment(SymbolFrame(np.ones(4, dtype=complex)), SymbolFrame(np.ones(5, dtype=complex)))


class TestFrequencyOffset:
    def test_estimate_and_compensate(self):
        ref = txrx.qam16_map(txrx.prbs_generate(12, 4 * 4096))
        offset = 25e6
        k = np.arange(len(ref))
        rx = SymbolFrame(ref.symbols * np.exp(2j * np.pi * offset * k / RATE))
        est = dsp.estimate_frequency_offset(rx, ref, RATE)
        assert abs(est - offset) <= RATE / (4096 * 8)
        fixed = dsp.compensate_frequency_offset(rx, est, RATE)
        assert metrics.evm(dsp.cpr_bps(fixed)[0], ref) < 2.0


class TestLinearChain:
    def test_awgn_dispersion_only_matches_theory(self):
        n, snr_db = 2**14, 14.0
        bits, frames, w = _tx(n, p_dbm=0.0)
        link = LinkConfig(channel.convert_units(0.0, 17.0, 80.0), 4, ssfm_step=80e3)
        rx = w
        for _ in range(link.n_spans):
            rx = channel.ssfm_propagate(rx, link.span, link.ssfm_step)
        # white noise over the simulation bandwidth: Es/N0 = P * sps / sigma^2
        sigma2 = w.power() * SHAPE.sps / 10 ** (snr_db / 10)
        rng = np.random.default_rng(0)
        rx = rx.with_samples(rx.samples + channel.ase_noise(rx.samples.shape, sigma2, rng))
        g = SHAPE.span_symbols
        ref = SymbolFrame(frames[0].symbols[g:-g])
        out = dsp.receive(rx, link, SHAPE, DspChainConfig(), ref)
        tb = txrx.BitStream(bits[0].bits[4 * g : -4 * g], 1)
        rep = metrics.count_errors(tb, txrx.qam16_demap(out), ref, out)
        lo, hi = 0.0, 30.0
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if metrics.theory_ber_16qam(mid) > rep.ber:
                lo = mid
            else:
                hi = mid
        assert abs(mid - snr_db) <= 1.0
