"""CSV, constellation and SVG emission.

All writers are byte-deterministic: numbers use a fixed format and the SVG
renderer runs with a fixed hash salt and without a date stamp.
"""

from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import numpy as np

from ..metrics import FEC_THRESHOLD_Q_DB
from .sweeper import SweepResult, SweepRow

HEADER = ("sweep_var", "method", "ber", "ser", "q_db", "evm_pct", "ber_is_floor", "runtime_s", "seed")


class EmitError(OSError):
    pass


def _num(x: float) -> str:
    return "nan" if math.isnan(x) else format(x, ".10g")


def _write(path: str | Path, text: str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise EmitError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def format_csv(result: SweepResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for r in result.rows:
        w.writerow([_num(r.sweep_var), r.method, _num(r.ber), _num(r.ser), _num(r.q_db), _num(r.evm_pct),
                    "true" if r.ber_is_floor else "false", _num(r.runtime_s), r.seed])
    return buf.getvalue()


def emit_csv(result: SweepResult, path: str | Path) -> Path:
    return _write(path, format_csv(result))


def read_csv(path: str | Path, variable: str = "launch_power_dbm") -> SweepResult:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise EmitError(f"cannot read {path}: {exc.strerror or exc}") from exc
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != HEADER:
        raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
    rows = [
        SweepRow(float(d["sweep_var"]), d["method"], float(d["ber"]), float(d["ser"]), float(d["q_db"]),
                 float(d["evm_pct"]), d["ber_is_floor"] == "true", float(d["runtime_s"]), int(d["seed"]))
        for d in reader
    ]
    return SweepResult(variable, rows)


def emit_constellation(before: np.ndarray, after: np.ndarray, path: str | Path) -> Path:
    """Write (I, Q) pairs before and after equalization, one symbol per line."""
    before, after = np.asarray(before), np.asarray(after)
    if before.shape != after.shape:
        raise ValueError(f"before {before.shape} and after {after.shape} differ in length")
    lines = ["i_before,q_before,i_after,q_after"]
    lines += [f"{b.real:.8g},{b.imag:.8g},{a.real:.8g},{a.imag:.8g}" for b, a in zip(before, after)]
    return _write(path, "\n".join(lines) + "\n")


_LABELS = {"launch_power_dbm": "Launch power (dBm)", "n_spans": "Number of 80 km spans"}


def render_svg(result: SweepResult, title: str | None = None) -> str:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "fibernle", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        for method in result.methods():
            x, q = result.series(method)
            ax.plot(x, q, marker="o", label=method)
        ax.axhline(FEC_THRESHOLD_Q_DB, color="0.5", linestyle="--", linewidth=0.8, label="HD-FEC")
        ax.set_xlabel(_LABELS.get(result.variable, result.variable))
        ax.set_ylabel("Q factor (dB)")
        if title:
            ax.set_title(title)
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()


def emit_plot(result: SweepResult, path: str | Path, title: str | None = None) -> Path:
    return _write(path, render_svg(result, title))
