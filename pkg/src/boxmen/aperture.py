"""Modes of the arbitrarily shaped aperture and their box-mode expansion.

The aperture modes are computed with a cell-centered finite-difference
Helmholtz eigensolver on the raster mask:

* TM modes: Dirichlet Laplacian (antisymmetric ghost cells across metal and
  box walls, so the boundary sits on the cell faces);
* TE modes: Neumann Laplacian (reflecting ghost cells); the constant
  potentials (kc = 0, one per connected component) are discarded.

Gradients live on cell faces (a staggered layout), so the unit-power
normalization of ``h`` reduces to ``sum(phi^2) * cell_area = 1`` and the
box-mode projections are exact discrete inner products.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage

from .boxmodes import TE, TM, BoxMode, enumerate_modes, eval_mode_grid, mode_arrays
from .geometry import Box, RegionMask

log = logging.getLogger(__name__)

# eigenvalues closer than this (relative) are treated as one degenerate cluster
DEGENERACY_RTOL = 1e-8
PARSEVAL_BOUNDS = (0.98, 1.0)
MIN_FEATURE_CELLS = 4
_DENSE_LIMIT = 600


class ApertureError(RuntimeError):
    pass


class ParsevalError(ApertureError):
    def __init__(self, rows, sums):
        self.rows = list(rows)
        self.sums = np.asarray(sums)
        super().__init__(
            f"coupling rows {self.rows[:10]} violate the Parseval bound "
            f"{PARSEVAL_BOUNDS} (sums {np.round(self.sums[:10], 4).tolist()})"
        )


@dataclass(frozen=True, eq=False)
class ApertureMode:
    family: str
    kc: float
    potential: np.ndarray | None = None  # (nx, ny) samples; zero on metal
    coeff_row: np.ndarray | None = None


@dataclass(eq=False)
class ApertureModes:
    """A set of aperture modes sharing one raster."""

    family: np.ndarray  # "TE"/"TM" strings
    kc: np.ndarray
    mask: RegionMask | None = None
    potentials: np.ndarray | None = None  # (n_cells, n_modes) on aperture cells
    analytic: "RectAperture | None" = None
    local_modes: list[BoxMode] | None = None

    def __len__(self):
        return len(self.kc)

    def __getitem__(self, i) -> ApertureMode:
        pot = None
        if self.potentials is not None and self.mask is not None:
            pot = np.zeros(self.mask.grid.shape)
            pot[self.mask.grid] = self.potentials[:, i]
        return ApertureMode(str(self.family[i]), float(self.kc[i]), pot)

    def __iter__(self):
        return (self[i] for i in range(len(self)))


# ---------------------------------------------------------------- grid operators


def _laplacians(mask: np.ndarray, hx: float, hy: float):
    """Dirichlet and Neumann 5-point Laplacians on the aperture cells.

    Returns ``(LD, LN, LDx, LNx)``; the ``x`` variants contain only the
    x-direction face terms (used to order degenerate eigenvectors).
    """
    nx, ny = mask.shape
    idx = -np.ones(mask.shape, dtype=np.int64)
    n = int(mask.sum())
    idx[mask] = np.arange(n)
    pad = np.zeros((nx + 2, ny + 2), bool)
    pad[1:-1, 1:-1] = mask
    pidx = -np.ones((nx + 2, ny + 2), dtype=np.int64)
    pidx[1:-1, 1:-1] = idx

    out = {}
    for name, dirichlet in (("D", True), ("N", False)):
        for axis_only in (False, True):
            rows, cols, vals = [], [], []
            diag = np.zeros(n)
            shifts = [((1, 0), hx), ((-1, 0), hx)]
            if not axis_only:
                shifts += [((0, 1), hy), ((0, -1), hy)]
            for (di, dj), h in shifts:
                nb = pad[1 + di : nx + 1 + di, 1 + dj : ny + 1 + dj][mask]
                nb_idx = pidx[1 + di : nx + 1 + di, 1 + dj : ny + 1 + dj][mask]
                w = 1.0 / h**2
                diag += np.where(nb, w, 2.0 * w if dirichlet else 0.0)
                me = np.nonzero(nb)[0]
                rows.append(me)
                cols.append(nb_idx[nb])
                vals.append(np.full(me.size, -w))
            rows.append(np.arange(n))
            cols.append(np.arange(n))
            vals.append(diag)
            L = sp.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
            )
            out[(name, axis_only)] = L
    return out[("D", False)], out[("N", False)], out[("D", True)], out[("N", True)]


def _min_feature_ok(mask: np.ndarray) -> bool:
    """Every aperture cell belongs to a MIN_FEATURE_CELLS-wide square of aperture."""
    k = MIN_FEATURE_CELLS
    st = np.ones((k, k), bool)
    opened = ndimage.binary_opening(np.pad(mask, k, constant_values=False), structure=st)
    return bool(opened[k:-k, k:-k][mask].all())


def _eigs(L, k: int, sigma: float, n: int):
    if n <= _DENSE_LIMIT:
        w, v = sla.eigh(L.toarray())
        return w[:k], v[:, :k]
    v0 = np.cos(0.37 * np.arange(n)) + 1.0  # fixed start vector for determinism
    try:
        w, v = spla.eigsh(L.tocsc(), k=k, sigma=sigma, which="LM", v0=v0)
    except spla.ArpackNoConvergence as exc:
        raise ApertureError(f"aperture eigensolver did not converge: {exc}") from exc
    order = np.argsort(w)
    return w[order], v[:, order]


def _canonicalize(w, v, Lx, first_cells):
    """Deterministic basis inside degenerate clusters and a fixed sign convention."""
    k = len(w)
    i = 0
    while i < k:
        j = i + 1
        while j < k and abs(w[j] - w[i]) <= DEGENERACY_RTOL * max(abs(w[i]), 1e-300):
            j += 1
        if j - i > 1:
            block = v[:, i:j]
            q, _ = np.linalg.qr(block)
            moment = q.T @ (Lx @ q)
            mw, mv = np.linalg.eigh(0.5 * (moment + moment.T))
            v[:, i:j] = q @ mv[:, np.argsort(mw, kind="stable")]
            w[i:j] = np.mean(w[i:j])
        i = j
    for c in range(k):
        col = v[:, c]
        big = np.abs(col) >= 0.5 * np.abs(col).max()
        first = first_cells[big].argmin()
        if col[big][first] < 0:
            v[:, c] = -col
    return w, v


def _merge_order(wN, wD, n_modes):
    """Indices into ``concat(wN, wD)`` of the n_modes lowest, TE first on ties."""
    lam = np.concatenate([wN, wD])
    famcode = np.concatenate([np.zeros(len(wN), int), np.ones(len(wD), int)])
    pos = np.concatenate([np.arange(len(wN)), np.arange(len(wD))])
    o = np.lexsort((pos, famcode, lam))
    ls = lam[o]
    rank = np.zeros(len(o), np.int64)
    rank[1:] = np.cumsum(np.diff(ls) > DEGENERACY_RTOL * np.maximum(ls[1:], 1e-300))
    r = np.empty_like(rank)
    r[o] = rank
    return lam, np.lexsort((pos, famcode, r))[:n_modes]


def solve_aperture_modes(mask: RegionMask, n_modes: int, check_features: bool = True) -> ApertureModes:
    """The ``n_modes`` lowest TE+TM aperture modes, sorted by cutoff.

    Ties between families are broken TE first, matching the box-mode order.
    """
    grid = mask.grid
    n = int(grid.sum())
    if n == 0:
        raise ApertureError("aperture is empty")
    if check_features and not _min_feature_ok(grid):
        raise ApertureError(
            f"insufficient grid resolution: some aperture feature spans fewer than "
            f"{MIN_FEATURE_CELLS} cells"
        )
    LD, LN, LDx, LNx = _laplacians(grid, mask.hx, mask.hy)
    ii, jj = np.nonzero(grid)
    first_cells = ii * grid.shape[1] + jj  # raster order of aperture cells
    kscale = math.pi / max(mask.box.a, mask.box.b)
    kcap = n if n <= _DENSE_LIMIT else n - 2

    kD = kN = min(kcap, int(math.ceil(0.6 * n_modes)) + 6)
    while True:
        wD, vD = _eigs(LD, kD, 0.0, n)
        wN, vN = _eigs(LN, kN, -0.25 * kscale**2, n)
        keep = wN > 1e-6 * kscale**2  # constant potentials of each component
        wN, vN = wN[keep], vN[:, keep]
        lam, order = _merge_order(wN, wD, n_modes)
        if len(order) < n_modes:
            if kD == kcap and kN == kcap:
                raise ApertureError("grid too coarse for the requested number of aperture modes")
            kD, kN = min(kcap, int(kD * 1.3) + 4), min(kcap, int(kN * 1.3) + 4)
            continue
        last = lam[order[-1]]
        okD = kD == kcap or wD[-1] >= last
        okN = kN == kcap or (len(wN) and wN[-1] >= last)
        if okD and okN:
            break
        if not okD:
            kD = min(kcap, int(kD * 1.3) + 4)
        if not okN:
            kN = min(kcap, int(kN * 1.3) + 4)
        log.debug("extending aperture eigen-solve to kD=%d kN=%d", kD, kN)

    wN, vN = _canonicalize(wN.copy(), vN.copy(), LNx, first_cells)
    wD, vD = _canonicalize(wD.copy(), vD.copy(), LDx, first_cells)
    lam = np.concatenate([wN, wD])
    fam = np.array([TE] * len(wN) + [TM] * len(wD))
    pots = np.concatenate([vN, vD], axis=1)[:, order] / math.sqrt(mask.cell_area)
    return ApertureModes(family=fam[order], kc=np.sqrt(lam[order]), mask=mask, potentials=pots)


# ------------------------------------------------------------ face fields & projection


def _face_fields(mask: np.ndarray, pots: np.ndarray, is_te: bool, hx: float, hy: float, kc):
    """Face samples of ``h`` for a batch of modes, pre-weighted for projection.

    TE: ``hx`` on x-faces ``(nx+1, ny)``, ``hy`` on y-faces ``(nx, ny+1)``.
    TM: ``hx`` on y-faces, ``hy`` on x-faces.  For TM the antisymmetric ghost
    doubles one-sided differences while the aperture-side half cell halves the
    weight; the two cancel except on box walls, whose 1/2 weight is applied by
    the trapezoid tables instead.
    """
    nx, ny = mask.shape
    phi = np.zeros((nx + 2, ny + 2, pots.shape[-1]))
    phi[1:-1, 1:-1][mask] = pots
    dx = (phi[1:, 1:-1] - phi[:-1, 1:-1]) / hx
    dy = (phi[1:-1, 1:] - phi[1:-1, :-1]) / hy
    if is_te:
        ap = np.zeros((nx + 2, ny + 2), bool)
        ap[1:-1, 1:-1] = mask
        dx *= (ap[:-1, 1:-1] & ap[1:, 1:-1])[..., None]
        dy *= (ap[1:-1, :-1] & ap[1:-1, 1:])[..., None]
        return dx / kc, dy / kc
    dx[[0, -1]] *= 2.0
    dy[:, [0, -1]] *= 2.0
    return -dy / kc, dx / kc


def _trig_tables(n: int, L: float, kmax: int):
    idx = np.arange(kmax + 1)
    centers = (np.arange(n) + 0.5) / n
    nodes = np.arange(n + 1) / n
    sc = np.sin(np.pi * np.outer(centers, idx))
    cc = np.cos(np.pi * np.outer(centers, idx))
    sn = np.sin(np.pi * np.outer(nodes, idx))
    cn = np.cos(np.pi * np.outer(nodes, idx))
    # trapezoid weights on nodes: box-wall faces count half
    trap = np.ones(n + 1)
    trap[[0, -1]] = 0.5
    return sc, cc, sn * trap[:, None], cn * trap[:, None]


def _project_batch(Fx, Fy, is_te, tx, ty):
    """Projections ``Px[b, m, n]`` and ``Py[b, m, n]`` onto Sx and Sy samples."""
    scx, ccx, snx, cnx = tx
    scy, ccy, sny, cny = ty
    if is_te:
        # Fx on x-faces (x nodes, y centers): Sx = sin(node) cos(center)
        px = np.einsum("ijb,im,jn->bmn", Fx, snx, ccy, optimize=True)
        # Fy on y-faces (x centers, y nodes): Sy = cos(center) sin(node)
        py = np.einsum("ijb,im,jn->bmn", Fy, ccx, sny, optimize=True)
    else:
        # Fx on y-faces (x centers, y nodes): Sx = sin(center) cos(node)
        px = np.einsum("ijb,im,jn->bmn", Fx, scx, cny, optimize=True)
        # Fy on x-faces (x nodes, y centers): Sy = cos(node) sin(center)
        py = np.einsum("ijb,im,jn->bmn", Fy, cnx, scy, optimize=True)
    return px, py


@dataclass(eq=False)
class CouplingMatrix:
    C: np.ndarray  # (N_b, N_k)
    box_modes: list[BoxMode] = field(default_factory=list)

    @property
    def shape(self):
        return self.C.shape

    def row_sums(self) -> np.ndarray:
        return np.sum(self.C**2, axis=1)

    def parseval_violations(self, bounds=PARSEVAL_BOUNDS, slack: float = 1e-9) -> np.ndarray:
        s = self.row_sums()
        return np.nonzero((s < bounds[0]) | (s > bounds[1] + slack))[0]


def coupling_matrix(
    ap_modes: ApertureModes,
    box_modes: Sequence[BoxMode],
    check: str = "raise",
    batch: int = 32,
) -> CouplingMatrix:
    """``C[i, m] = integral over the aperture of h_i . h_m``.

    ``check`` is ``"raise"``, ``"warn"`` or ``"off"`` for the Parseval test.
    """
    if len(ap_modes) == 0 or len(box_modes) == 0:
        raise ValueError("need at least one aperture mode and one box mode")
    if len(box_modes) < 4 * len(ap_modes):
        warnings.warn(
            f"N_k={len(box_modes)} < 4*N_b={4 * len(ap_modes)}: coupling rows may be truncated",
            RuntimeWarning,
        )
    if ap_modes.analytic is not None:
        C = rect_coupling(ap_modes.analytic, ap_modes.local_modes, box_modes)
    else:
        C = _grid_coupling(ap_modes, box_modes, batch)
    cm = CouplingMatrix(C=C, box_modes=list(box_modes))
    if check != "off":
        bad = cm.parseval_violations()
        if bad.size:
            err = ParsevalError(bad, cm.row_sums()[bad])
            if check == "raise":
                raise err
            warnings.warn(str(err), RuntimeWarning)
    return cm


def _grid_coupling(ap_modes: ApertureModes, box_modes: Sequence[BoxMode], batch: int) -> np.ndarray:
    mask = ap_modes.mask
    grid = mask.grid
    nx, ny = grid.shape
    arr = mode_arrays(box_modes)
    mmax, nmax = int(arr["m"].max()), int(arr["n"].max())
    if mmax >= nx or nmax >= ny:
        raise ApertureError(
            f"box-mode indices up to ({mmax},{nmax}) exceed the grid resolution {nx}x{ny}"
        )
    tx = _trig_tables(nx, mask.box.a, mmax)
    ty = _trig_tables(ny, mask.box.b, nmax)
    area = mask.cell_area
    C = np.zeros((len(ap_modes), len(box_modes)))
    for fam in (TE, TM):
        sel = np.nonzero(ap_modes.family == fam)[0]
        for s in range(0, len(sel), batch):
            rows = sel[s : s + batch]
            Fx, Fy = _face_fields(
                grid, ap_modes.potentials[:, rows], fam == TE, mask.hx, mask.hy, ap_modes.kc[rows]
            )
            px, py = _project_batch(Fx, Fy, fam == TE, tx, ty)
            C[rows] = area * (
                arr["ax"] * px[:, arr["m"], arr["n"]] + arr["ay"] * py[:, arr["m"], arr["n"]]
            )
    return C


# ------------------------------------------------------------------ analytic rectangle


@dataclass(frozen=True)
class RectAperture:
    """Rectangular aperture ``[x0, x0 + w] x [y0, y0 + l]`` inside a box."""

    box: Box
    x0: float
    y0: float
    w: float
    l: float

    @property
    def local_box(self) -> Box:
        return Box(self.w, self.l)

    def contains(self, x, y):
        return (x >= self.x0) & (x <= self.x0 + self.w) & (y >= self.y0) & (y <= self.y0 + self.l)


def rect_coupling(rect: RectAperture, local_modes, box_modes) -> np.ndarray:
    """Closed-form ``C[i, m]`` between rectangle modes and box modes."""
    la = mode_arrays(local_modes)
    ba = mode_arrays(box_modes)
    a, b = rect.box.a, rect.box.b
    # h_x ~ sin(x) cos(y) and h_y ~ cos(x) sin(y) for both, so C separates
    iss_x = _overlap_1d(la["m"], ba["m"], rect.x0, rect.w, a, "ss")
    icc_y = _overlap_1d(la["n"], ba["n"], rect.y0, rect.l, b, "cc")
    icc_x = _overlap_1d(la["m"], ba["m"], rect.x0, rect.w, a, "cc")
    iss_y = _overlap_1d(la["n"], ba["n"], rect.y0, rect.l, b, "ss")
    return (
        np.outer(la["ax"], ba["ax"]) * iss_x * icc_y + np.outer(la["ay"], ba["ay"]) * icc_x * iss_y
    )


def _overlap_1d(p, m, x0, w, a, kind):
    """Matrix of integrals over [x0, x0+w] of trig(p pi (x-x0)/w) trig(m pi x/a)."""
    p = np.asarray(p, float)[:, None]
    m = np.asarray(m, float)[None, :]
    k1 = p * np.pi / w
    k2 = m * np.pi / a
    ph = -k1 * x0  # local phase offset
    xm = x0 + 0.5 * w

    def seg(kk):
        # integral over [x0, x0 + w] of cos(kk x + ph), stable as kk -> 0
        return w * np.cos(kk * xm + ph) * np.sinc(kk * w / (2.0 * np.pi))

    if kind == "ss":
        # sin A sin B = (cos(A-B) - cos(A+B)) / 2
        return 0.5 * (seg(k1 - k2) - seg(k1 + k2))
    # cos A cos B = (cos(A-B) + cos(A+B)) / 2
    return 0.5 * (seg(k1 - k2) + seg(k1 + k2))


def analytic_rect_aperture(rect: RectAperture, n_modes: int) -> ApertureModes:
    """Closed-form modes of a rectangular aperture (validation provider)."""
    box = rect.box
    tol = 1e-12 * max(box.a, box.b)
    if (
        rect.x0 < -tol
        or rect.y0 < -tol
        or rect.x0 + rect.w > box.a + tol
        or rect.y0 + rect.l > box.b + tol
    ):
        raise ValueError("rectangle must lie inside the box")
    loc = enumerate_modes(rect.local_box, n_modes)
    return ApertureModes(
        family=np.array([md.family for md in loc]),
        kc=np.array([md.kc for md in loc]),
        analytic=rect,
        local_modes=loc,
    )


def rect_mode_field(rect: RectAperture, mode: BoxMode, x, y) -> np.ndarray:
    """Field ``(hx, hy)`` of an analytic rectangle mode at global points, zero outside."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    h = eval_mode_grid(mode, x - rect.x0, y - rect.y0)
    return h * rect.contains(x, y)
