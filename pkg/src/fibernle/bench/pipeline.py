"""End-to-end experiment: transmit, propagate, receive, equalize, score.

One pipeline run simulates two independent transmissions of the same link:
a *training* transmission whose CDC output feeds the neural equalizers and
a *test* transmission (different PRBS, laser and ASE seeds) on which every
method is scored. All methods see the identical received test waveform and
are scored on the identical symbol range.
"""

from __future__ import annotations

import contextlib
import dataclasses
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .. import channel, dsp, metrics, txrx
from ..dataset import TokenDataset, build_windows
from ..nn import ModelCheckpoint, build_model, equalize, train
from .config import ExperimentConfig

log = logging.getLogger(__name__)

NN_METHODS = ("fcnn", "transformer")
_ROLES = {"train": 1, "test": 2}
_STREAMS = {"bits": 1, "laser": 2, "ase": 3, "init": 4, "shuffle": 5}


class PipelineError(RuntimeError):
    """A pipeline stage failed; the message names the stage and config hash."""


def derive_seed(master: int, *path: int) -> int:
    """Independent 63-bit seed for the stream addressed by ``path``."""
    state = np.random.SeedSequence([master, *path]).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 31 | int(state[1]) >> 1


@contextlib.contextmanager
def stage(name: str, cfg: ExperimentConfig):
    try:
        yield
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(f"stage {name!r} failed (config {cfg.digest()}): {exc}") from exc


@dataclass
class Transmission:
    """Reference and received x-polarization symbols after the guard cut."""

    tx: np.ndarray
    received: dict[str, np.ndarray]
    runtime: dict[str, float]


def simulate(cfg: ExperimentConfig, seed: int, role: str = "test",
             modes: tuple[str, ...] = ("linear-eq",), chains: dict | None = None) -> Transmission:
    """Transmit a fresh DP-16QAM frame over the configured link and run the DSP chain.

    Both polarizations are transmitted and propagated; the x-polarization is
    received and scored (the y-polarization is statistically identical).

    Parameters
    ----------
    modes : tuple of str
        Receiver modes configured from ``cfg.dsp``.
    chains : dict of str to DspChainConfig, optional
        Extra receivers with explicit settings, keyed by label. They all see
        the same propagated waveform as ``modes``.
    """
    r = _ROLES[role]
    link = cfg.link.build()
    shape = cfg.tx.pulse()
    n_sym, guard = cfg.run.n_symbols, cfg.run.guard_symbols
    with stage(f"{role}/transmit", cfg):
        frames = [txrx.qam16_map(txrx.prbs_generate(derive_seed(seed, r, _STREAMS["bits"], p), 4 * n_sym))
                  for p in range(2)]
        w = txrx.shape_pulse(frames, shape, cfg.tx.symbol_rate, cfg.tx.launch_power_dbm,
                             cfg.link.wavelength_nm * 1e-9)
        if cfg.tx.linewidth_hz > 0:
            w = txrx.apply_laser_phase_noise(w, cfg.tx.linewidth_hz, derive_seed(seed, r, _STREAMS["laser"]))
    with stage(f"{role}/channel", cfg):
        w = channel.link_propagate(w, link, derive_seed(seed, r, _STREAMS["ase"]))
    ref = txrx.SymbolFrame(frames[0].symbols[guard : n_sym - guard])
    received, runtime = {}, {}
    todo = {mode: cfg.dsp.chain(mode) for mode in modes}
    todo.update(chains or {})
    for label, chain in todo.items():
        with stage(f"{role}/dsp-{label}", cfg):
            t0 = time.perf_counter()
            received[label] = dsp.receive(w, link, shape, chain, ref, pol=0, guard=guard).symbols
            runtime[label] = time.perf_counter() - t0
    return Transmission(ref.symbols, received, runtime)


def score(tx: np.ndarray, rx: np.ndarray) -> metrics.MetricsReport:
    return metrics.count_errors(txrx.qam16_demap(tx), txrx.qam16_demap(rx), tx, rx)


def training_windows(cfg: ExperimentConfig, tr: Transmission, seed: int) -> TokenDataset:
    return build_windows(tr.received["linear-eq"], tr.tx, cfg.model.window_n, source_seed=seed, polarization="x")


def train_equalizer(cfg: ExperimentConfig, arch: str, ds: TokenDataset, seed: int) -> ModelCheckpoint:
    """Train ``arch`` with seeds derived from the master seed and the configured seed."""
    overrides, tcfg = cfg.model.architecture(arch)
    k = NN_METHODS.index(arch)
    model = build_model(arch, overrides, seed=derive_seed(seed, _STREAMS["init"], k, tcfg.seed))
    tcfg = dataclasses.replace(tcfg, seed=derive_seed(seed, _STREAMS["shuffle"], k, tcfg.seed))
    result = train(model, ds, tcfg, dataset_hash=ds.sha256(), metadata={"master_seed": seed})
    return result.checkpoint


@dataclass
class PipelineResult:
    seed: int
    reports: dict[str, metrics.MetricsReport]
    runtime: dict[str, float]
    tx: np.ndarray
    symbols: dict[str, np.ndarray]
    checkpoints: dict[str, ModelCheckpoint] = field(default_factory=dict)

    @property
    def unequalized(self) -> np.ndarray:
        """The CDC-only symbols over the scored range (the 'before' constellation)."""
        return self.symbols["linear-eq"]


def run_pipeline(cfg: ExperimentConfig, seed: int | None = None) -> PipelineResult:
    """Run every method in ``cfg.run.methods`` on one shared received test waveform.

    Each method is scored on the symbols ``window_n .. L - window_n`` of the
    guard-trimmed frame, the range where a full equalizer window exists.
    """
    seed = cfg.run.seed if seed is None else seed
    methods = cfg.run.methods
    modes = ("linear-eq", "dbp") if "dbp" in methods else ("linear-eq",)
    test = simulate(cfg, seed, "test", modes)
    n = cfg.model.window_n
    keep = slice(n, test.tx.size - n)
    symbols = {"linear-eq": test.received["linear-eq"][keep]}
    runtime = dict(test.runtime)
    checkpoints = {}
    if any(m in NN_METHODS for m in methods):
        tr = simulate(cfg, seed, "train", ("linear-eq",))
        ds = training_windows(cfg, tr, seed)
        for arch in (m for m in methods if m in NN_METHODS):
            with stage(f"train-{arch}", cfg):
                t0 = time.perf_counter()
                ckpt = train_equalizer(cfg, arch, ds, seed)
                eq = equalize(ckpt.build(), txrx.SymbolFrame(test.received["linear-eq"]), n, ds.normalization)
                runtime[arch] = time.perf_counter() - t0 + test.runtime["linear-eq"]
            checkpoints[arch] = ckpt
            symbols[arch] = eq.symbols[keep]
    if "dbp" in methods:
        symbols["dbp"] = test.received["dbp"][keep]
    tx = test.tx[keep]
    reports = {}
    for m in methods:
        with stage(f"metrics-{m}", cfg):
            reports[m] = score(tx, symbols[m])
        log.info("seed %d %s: Q %.2f dB, BER %.3g", seed, m, reports[m].q_db, reports[m].ber)
    return PipelineResult(seed, reports, {m: runtime[m] for m in methods}, tx, symbols, checkpoints)
