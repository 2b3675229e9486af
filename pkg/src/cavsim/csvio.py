"""Deterministic CSV emission for traces and sweep summaries.

All numeric fields are written with 12 significant digits ('.' decimal
separator, newline-terminated final row), so files re-parse to the in-memory
values within rounding at that precision and identical runs produce
byte-identical files.  Writes go to a temporary file in the target directory
followed by an atomic rename.
"""

from __future__ import annotations

import os
import tempfile

import numpy as np

from .core import DomainError
from .particles import ParticleTrace

ADIABATIC_COLUMNS = ("t_s", "tau", "re_a", "im_a", "chi_minus", "phi_rad",
                     "n_atoms", "loc_factor")
PARTICLE_COLUMNS = ADIABATIC_COLUMNS + ("sigma_theta", "sigma_rho",
                                        "sigma_prho", "mean_energy")


def _fmt(x: float) -> str:
    return f"{x:.12g}"


def _atomic_write(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".cavsim-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _trace_columns(trace) -> list[np.ndarray]:
    cols = [trace.t, trace.tau, trace.a.real, trace.a.imag, trace.chi_minus,
            trace.phi, trace.n_atoms, trace.loc]
    if isinstance(trace, ParticleTrace):
        cols += [trace.sigma_theta, trace.sigma_rho, trace.sigma_prho,
                 trace.mean_energy]
    return cols


def write_trace(path: str, trace) -> None:
    """Trace CSV: header row then one row per sample, strictly increasing t."""
    header = PARTICLE_COLUMNS if isinstance(trace, ParticleTrace) \
        else ADIABATIC_COLUMNS
    cols = _trace_columns(trace)
    lines = [",".join(header)]
    for i in range(len(trace.t)):
        lines.append(",".join(_fmt(float(c[i])) for c in cols))
    _atomic_write(path, "\n".join(lines) + "\n")


def read_trace(path: str) -> dict[str, np.ndarray]:
    """Columns of a trace CSV keyed by header name."""
    with open(path, "r") as fh:
        header = fh.readline().strip().split(",")
        data = np.loadtxt(fh, delimiter=",", ndmin=2)
    if data.shape[1] != len(header):
        raise DomainError(f"{path}: column count mismatch")
    return {name: data[:, i] for i, name in enumerate(header)}


def write_summary(path: str, key: str, rows, columns, comment: str = "") -> None:
    """Sweep summary CSV: '#'-prefixed column documentation, then rows."""
    lines = []
    if comment:
        lines.append(f"# {comment}")
    lines.append("# columns: " + ",".join(columns))
    lines.append(",".join(columns))
    for row in rows:
        vals = []
        for c in columns:
            v = row.get(c, "")
            if isinstance(v, bool):
                vals.append("1" if v else "0")
            elif isinstance(v, (int, np.integer)):
                vals.append(str(int(v)))
            elif isinstance(v, (float, np.floating)):
                vals.append(_fmt(float(v)))
            else:
                vals.append(str(v))
        lines.append(",".join(vals))
    _atomic_write(path, "\n".join(lines) + "\n")
