"""CSV and Touchstone (v1) writers for sweep results."""

from __future__ import annotations

import csv

import numpy as np

from .sweep import SweepResult

DB_FLOOR = -200.0
TOUCHSTONE_OPTION_LINE = "# GHz S RI R 50"


def _label(i: int, j: int, n_ports: int) -> str:
    return f"S{i + 1}{j + 1}" if n_ports < 10 else f"S{i + 1}_{j + 1}"


def to_db(s) -> np.ndarray:
    """``20 log10 |S|`` with -inf clamped to ``DB_FLOOR``."""
    mag = np.abs(np.asarray(s))
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(mag)
    return np.maximum(db, DB_FLOOR)


def to_deg(s) -> np.ndarray:
    return np.degrees(np.angle(np.asarray(s)))


def csv_header(n_ports: int) -> list[str]:
    cols = ["freq_ghz"]
    for i in range(n_ports):
        for j in range(n_ports):
            lab = _label(i, j, n_ports)
            cols += [f"{lab}_db", f"{lab}_deg"]
    return cols + ["flags"]


def write_csv(result: SweepResult, path) -> None:
    """One row per frequency: dB magnitude and degrees for every ``Sij``, then flags."""
    P = result.n_ports
    db, deg = to_db(result.S), to_deg(result.S)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(csv_header(P))
        for k, f in enumerate(result.frequencies):
            row = [repr(float(f) / 1e9)]
            for i in range(P):
                for j in range(P):
                    row += [repr(float(db[k, i, j])), repr(float(deg[k, i, j]))]
            row.append(";".join(sorted(result.flags[k])))
            w.writerow(row)


def read_csv(path) -> tuple[np.ndarray, np.ndarray, list[frozenset[str]]]:
    """Inverse of :func:`write_csv`: ``(freq_hz, S, flags)``; S is rebuilt from dB/deg."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    n_cols = len(header) - 2
    P = int(round(np.sqrt(n_cols / 2)))
    if 2 * P * P != n_cols or header[0] != "freq_ghz" or header[-1] != "flags":
        raise ValueError(f"{path}: not a sweep CSV")
    freqs = np.array([float(r[0]) * 1e9 for r in body])
    vals = np.array([[float(x) for x in r[1:-1]] for r in body]).reshape(len(body), P, P, 2)
    S = 10.0 ** (vals[..., 0] / 20.0) * np.exp(1j * np.radians(vals[..., 1]))
    flags = [frozenset(x for x in r[-1].split(";") if x) for r in body]
    return freqs, S, flags


def write_touchstone(result: SweepResult, path) -> None:
    """Version-1 Touchstone file (``.s1p`` / ``.s2p``) in real/imaginary format."""
    P = result.n_ports
    if P not in (1, 2):
        raise ValueError(f"Touchstone v1 output supports 1 or 2 ports, got {P}; use the CSV writer")
    # v1 two-port data order is 11, 21, 12, 22
    order = [(0, 0)] if P == 1 else [(0, 0), (1, 0), (0, 1), (1, 1)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"! {P}-port S-parameters, ports {', '.join(str(p) for p in result.port_ids)}\n")
        fh.write(TOUCHSTONE_OPTION_LINE + "\n")
        for k, f in enumerate(result.frequencies):
            parts = [repr(float(f) / 1e9)]
            for i, j in order:
                s = result.S[k, i, j]
                parts += [repr(float(s.real)), repr(float(s.imag))]
            fh.write(" ".join(parts) + "\n")
