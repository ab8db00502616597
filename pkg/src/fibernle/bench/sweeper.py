"""Power and length sweeps over :func:`run_pipeline`."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from .config import METHODS, ConfigError, ExperimentConfig
from .pipeline import run_pipeline

log = logging.getLogger(__name__)

_SECTION = {"launch_power_dbm": "tx", "n_spans": "link"}


@dataclass(frozen=True)
class SweepRow:
    sweep_var: float
    method: str
    ber: float
    ser: float
    q_db: float
    evm_pct: float
    ber_is_floor: bool
    runtime_s: float
    seed: int


@dataclass
class SweepResult:
    variable: str
    rows: list[SweepRow] = field(default_factory=list)
    failures: list[tuple[float, str]] = field(default_factory=list)

    def methods(self) -> list[str]:
        present = {r.method for r in self.rows}
        return [m for m in METHODS if m in present] + sorted(present - set(METHODS))

    def series(self, method: str) -> tuple[list[float], list[float]]:
        pts = [(r.sweep_var, r.q_db) for r in self.rows if r.method == method]
        return [p[0] for p in pts], [p[1] for p in pts]


def point_config(cfg: ExperimentConfig, variable: str, value: float) -> ExperimentConfig:
    if variable not in _SECTION:
        raise ConfigError(f"cannot sweep {variable!r}; choose from {sorted(_SECTION)}")
    if variable == "n_spans":
        if value != int(value):
            raise ConfigError(f"n_spans sweep value {value} is not an integer")
        value = int(value)
    return cfg.replace(**{f"{_SECTION[variable]}.{variable}": value})


def _run_point(args):
    cfg, variable, value, seed = args
    try:
        result = run_pipeline(point_config(cfg, variable, value), seed)
    except Exception as exc:  # recorded, the sweep carries on
        return value, None, f"{type(exc).__name__}: {exc}"
    rows = []
    for m in cfg.run.methods:
        r = result.reports[m]
        runtime = round(result.runtime[m], 3) if cfg.run.record_runtime else math.nan
        rows.append(SweepRow(float(value), m, r.ber, r.ser, r.q_db, r.evm_pct, r.ber_is_floor, runtime, seed))
    return value, rows, None


def sweep(cfg: ExperimentConfig, variable: str | None = None, values=None, seed: int | None = None) -> SweepResult:
    """Run the pipeline at every sweep value.

    Every point reuses the master seed (common random numbers), so the
    PRBS data, laser phase walk and ASE draws are shared across points and
    curve differences reflect the swept parameter rather than seed noise. A
    failing point is logged, recorded in ``failures`` with rows of NaN
    metrics, and the sweep continues. Rows are sorted by sweep value, then
    method.
    """
    variable = variable or cfg.run.sweep_variable
    values = list(cfg.run.sweep_values if values is None else values)
    if not values:
        raise ConfigError("sweep needs at least one value")
    seed = cfg.run.seed if seed is None else seed
    for v in values:
        point_config(cfg, variable, float(v))  # reject malformed points before any work
    jobs = [(cfg, variable, float(v), seed) for v in values]
    if cfg.run.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.run.workers) as pool:
            outcomes = list(pool.map(_run_point, jobs))
    else:
        outcomes = [_run_point(j) for j in jobs]
    result = SweepResult(variable)
    order = {m: i for i, m in enumerate(cfg.run.methods)}
    for value, rows, error in outcomes:
        if error is not None:
            log.error("sweep point %s=%s failed: %s", variable, value, error)
            result.failures.append((value, error))
            nan = math.nan
            rows = [SweepRow(value, m, nan, nan, nan, nan, False, nan, seed) for m in cfg.run.methods]
        result.rows.extend(rows)
    result.rows.sort(key=lambda r: (r.sweep_var, order[r.method]))
    result.failures.sort()
    return result
