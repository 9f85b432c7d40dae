"""TE/TM magnetic vector mode functions of the rectangular box cross section.

Conventions (fixed by orthonormality over ``[0, a] x [0, b]``):

* TE(m, n): Neumann potential ``psi = N cos(m pi x / a) cos(n pi y / b)``,
  ``h = grad(psi) / kc``.
* TM(m, n): Dirichlet potential ``phi = N sin(m pi x / a) sin(n pi y / b)``,
  ``h = z x grad(phi) / kc``.

Both families then share the scalar building blocks
``Sx = sin(m pi x/a) cos(n pi y/b)`` and ``Sy = cos(m pi x/a) sin(n pi y/b)``:
``h = (Ax * Sx, Ay * Sy)`` with family-dependent amplitudes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .geometry import Box, Port

TE = "TE"
TM = "TM"

# Relative tolerance under which two cutoffs count as degenerate.
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class BoxMode:
    family: str
    m: int
    n: int
    kc: float
    norm: float
    a: float
    b: float

    def __post_init__(self):
        if self.family == TM and (self.m < 1 or self.n < 1):
            raise ValueError(f"TM({self.m},{self.n}) does not exist")
        if self.family == TE and self.m == 0 and self.n == 0:
            raise ValueError("TE(0,0) does not exist")

    @property
    def amplitudes(self) -> tuple[float, float]:
        """Coefficients ``(Ax, Ay)`` multiplying ``Sx`` and ``Sy``."""
        kx = self.m * math.pi / self.a
        ky = self.n * math.pi / self.b
        s = self.norm / self.kc
        if self.family == TE:
            return (-kx * s, -ky * s)
        return (-ky * s, kx * s)

    def __str__(self):
        return f"{self.family}({self.m},{self.n})"


def _make_mode(family: str, m: int, n: int, a: float, b: float) -> BoxMode:
    kc = math.pi * math.hypot(m / a, n / b)
    if family == TM:
        norm = 2.0 / math.sqrt(a * b)
    else:
        em = 1.0 if m == 0 else 2.0
        en = 1.0 if n == 0 else 2.0
        norm = math.sqrt(em * en / (a * b))
    return BoxMode(family, m, n, kc, norm, a, b)


def _order_key(kc: np.ndarray, fam: np.ndarray, m: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Sort permutation: ascending kc, ties by family (TE first), m, n."""
    order = np.lexsort((n, m, fam, kc))
    kc_s = kc[order]
    # merge near-equal cutoffs into one rank so the tie-break applies
    rank = np.zeros(len(order), dtype=np.int64)
    if len(order):
        jumps = np.diff(kc_s) > _TIE_RTOL * kc_s[1:]
        rank[1:] = np.cumsum(jumps)
    rank_of = np.empty_like(rank)
    rank_of[order] = rank
    return np.lexsort((n, m, fam, rank_of))


def enumerate_modes(box: Box, count: int) -> list[BoxMode]:
    """The first ``count`` box modes in cutoff order."""
    if count < 1:
        raise ValueError("count must be >= 1")
    a, b = box.a, box.b
    # Weyl estimate of the cutoff that encloses `count` modes, then grow until safe
    kmax = math.sqrt(2.0 * math.pi * count / (a * b)) * 1.2 + 2 * math.pi / min(a, b)
    while True:
        mmax = int(kmax * a / math.pi) + 1
        nmax = int(kmax * b / math.pi) + 1
        mm, nn = np.meshgrid(np.arange(mmax + 1), np.arange(nmax + 1), indexing="ij")
        mm, nn = mm.ravel(), nn.ravel()
        kc = math.pi * np.hypot(mm / a, nn / b)
        te = (mm + nn) > 0
        tm = (mm > 0) & (nn > 0)
        fam = np.concatenate([np.zeros(te.sum(), int), np.ones(tm.sum(), int)])
        M = np.concatenate([mm[te], mm[tm]])
        N = np.concatenate([nn[te], nn[tm]])
        K = np.concatenate([kc[te], kc[tm]])
        inside = K <= kmax
        if inside.sum() >= count:
            break
        kmax *= 1.3
    fam, M, N, K = fam[inside], M[inside], N[inside], K[inside]
    order = _order_key(K, fam, M, N)[:count]
    return [_make_mode(TE if fam[i] == 0 else TM, int(M[i]), int(N[i]), a, b) for i in order]


def mode_arrays(modes: Sequence[BoxMode]) -> dict[str, np.ndarray]:
    """Vectorized view of a mode list (indices, cutoffs, amplitudes, TE flag)."""
    amps = np.array([md.amplitudes for md in modes], dtype=float).reshape(-1, 2)
    return {
        "m": np.array([md.m for md in modes], dtype=int),
        "n": np.array([md.n for md in modes], dtype=int),
        "kc": np.array([md.kc for md in modes], dtype=float),
        "is_te": np.array([md.family == TE for md in modes], dtype=bool),
        "ax": amps[:, 0],
        "ay": amps[:, 1],
    }


def eval_mode(mode: BoxMode, point: tuple[float, float]) -> np.ndarray:
    """Normalized transverse magnetic mode function ``(hx, hy)`` at a point."""
    x, y = point
    tol = 1e-12 * max(mode.a, mode.b)
    if not (-tol <= x <= mode.a + tol and -tol <= y <= mode.b + tol):
        raise ValueError(f"point {point} is outside the box")
    return eval_mode_grid(mode, np.asarray(x, float), np.asarray(y, float))


def eval_mode_grid(mode: BoxMode, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Broadcasting evaluation; returns an array with a leading axis of 2."""
    ax, ay = mode.amplitudes
    px = mode.m * np.pi * x / mode.a
    py = mode.n * np.pi * y / mode.b
    hx = ax * np.sin(px) * np.cos(py)
    hy = ay * np.cos(px) * np.sin(py)
    return np.stack(np.broadcast_arrays(hx, hy))


def _int_cos(k: float, lo: float, hi: float) -> float:
    if k == 0.0:
        return hi - lo
    return (math.sin(k * hi) - math.sin(k * lo)) / k


def _int_sin(k: float, lo: float, hi: float) -> float:
    if k == 0.0:
        return 0.0
    return (math.cos(k * lo) - math.cos(k * hi)) / k


def pulse_overlap(mode: BoxMode, port: Port) -> float:
    """Integral of ``h . p / width`` over the port footprint (closed form).

    ``p`` is the port's pulse direction (``Port.direction``).
    """
    x0, y0, x1, y1 = port.rect()
    kx = mode.m * math.pi / mode.a
    ky = mode.n * math.pi / mode.b
    ax, ay = mode.amplitudes
    if port.orientation == "x":
        val = ay * _int_cos(kx, x0, x1) * _int_sin(ky, y0, y1)
    else:
        val = -ax * _int_sin(kx, x0, x1) * _int_cos(ky, y0, y1)
    return val / port.width


def pulse_overlaps(modes: Sequence[BoxMode], port: Port) -> np.ndarray:
    """Vectorized :func:`pulse_overlap` over a mode list."""
    arr = mode_arrays(modes)
    x0, y0, x1, y1 = port.rect()
    a, b = modes[0].a, modes[0].b
    kx = arr["m"] * np.pi / a
    ky = arr["n"] * np.pi / b
    with np.errstate(divide="ignore", invalid="ignore"):
        icx = np.where(kx == 0, x1 - x0, (np.sin(kx * x1) - np.sin(kx * x0)) / kx)
        isx = np.where(kx == 0, 0.0, (np.cos(kx * x0) - np.cos(kx * x1)) / kx)
        icy = np.where(ky == 0, y1 - y0, (np.sin(ky * y1) - np.sin(ky * y0)) / ky)
        isy = np.where(ky == 0, 0.0, (np.cos(ky * y0) - np.cos(ky * y1)) / ky)
    if port.orientation == "x":
        val = arr["ay"] * icx * isy
    else:
        val = -arr["ax"] * isx * icy
    return val / port.width


def write_mode_table(modes: Iterable[BoxMode], path) -> None:
    """Debug dump of a mode table as CSV (family, m, n, kc)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["family", "m", "n", "kc"])
        for md in modes:
            w.writerow([md.family, md.m, md.n, repr(md.kc)])
