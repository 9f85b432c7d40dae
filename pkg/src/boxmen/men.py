"""Multimode equivalent network core: MoM assembly, solve, impedance matrices.

Unknowns are the coefficients ``alpha`` of the aperture magnetic current
expanded on the aperture modes.  With ``R = [C_ports | C_accessible]`` the
Galerkin system is ``A alpha = R`` and the generalized impedance matrix is
``Z = R^T alpha`` (ports first, then accessible modes).

Kernel term ranges use absolute box-mode indices (0-based, cutoff order):
modes ``[0, N)`` are accessible, the static sum covers ``[N, M_static)`` and
the dynamic correction covers ``[N, M_dynamic)``.  Moving a mode between the
accessible set and the kernel therefore changes nothing else.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy.constants import epsilon_0, mu_0

from .boxmodes import BoxMode, mode_arrays, pulse_overlaps
from .geometry import Layer, LayerStack, Port
from .media import (
    AsymptoticCoeffs,
    asymptotic_admittance,
    asymptotic_coeff_arrays,
    propagation_constant,
    stack_admittance,
    total_admittances,
)

log = logging.getLogger(__name__)

COND_LIMIT = 1e12
RESIDUAL_RTOL = 1e-10

FLAG_RESONANCE = "near_resonance"
FLAG_ILL_CONDITIONED = "ill_conditioned"
FLAG_RESIDUAL = "residual"


class MenError(RuntimeError):
    """Numerical failure in the network solver."""


# ----------------------------------------------------------------------- data types


@dataclass(frozen=True, eq=False)
class KernelSplit:
    """Frequency-free static kernel sums.

    ``A_static(f) = S1 / (j w mu0) + j w eps0 S2``.  ``S2`` is complex only when
    a lossy layer makes the TM asymptotic coefficients complex.
    """

    S1: np.ndarray
    S2: np.ndarray
    n_accessible: int
    m_static: int
    m_dynamic: int

    def static_matrix(self, f: float) -> np.ndarray:
        omega = 2.0 * np.pi * f
        return self.S1 / (1j * omega * mu_0) + (1j * omega * epsilon_0) * self.S2


@dataclass(eq=False)
class MomSystem:
    A: np.ndarray  # (N_b, N_b) complex symmetric
    rhs: np.ndarray  # (N_b, P + N): port columns, then accessible-mode columns
    f: float
    n_ports: int
    flags: set[str] = field(default_factory=set)


@dataclass(frozen=True, eq=False)
class GeneralizedZ:
    """Impedance matrix over ports (first ``n_ports``) and accessible modes."""

    Z: np.ndarray
    n_ports: int

    @property
    def n_accessible(self) -> int:
        return self.Z.shape[0] - self.n_ports

    @property
    def zpp(self):
        return self.Z[: self.n_ports, : self.n_ports]

    @property
    def zpa(self):
        return self.Z[: self.n_ports, self.n_ports :]

    @property
    def zap(self):
        return self.Z[self.n_ports :, : self.n_ports]

    @property
    def zaa(self):
        return self.Z[self.n_ports :, self.n_ports :]


@dataclass(frozen=True, eq=False)
class MenSolution:
    f: float
    alpha: np.ndarray
    zbar: GeneralizedZ
    z_ports: np.ndarray
    flags: frozenset[str]
    condition: float


@dataclass(frozen=True)
class TLSection:
    """Uniform line section joining the accessible modes of two discontinuities."""

    length: float
    gamma: np.ndarray  # per accessible mode
    yc: np.ndarray  # per accessible mode characteristic admittance


# ----------------------------------------------------------------------- assembly


def _coeff_arrays(coeffs, count: int) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(coeffs, tuple) and len(coeffs) == 2 and not isinstance(coeffs[0], AsymptoticCoeffs):
        c1, c2 = (np.asarray(c) for c in coeffs)
    else:
        c1 = np.array([c.c1 for c in coeffs], float)
        c2 = np.array([c.c2 for c in coeffs], complex)
    if len(c1) < count or len(c2) < count:
        raise ValueError(f"need asymptotic coefficients for {count} modes, got {len(c1)}")
    return c1, c2


def assemble_static(
    C: np.ndarray,
    box_modes: Sequence[BoxMode],
    coeffs,
    n_accessible: int,
    m_static: int,
    m_dynamic: int = 0,
) -> KernelSplit:
    """Static sums ``S1 = sum c1 C C^T`` (TE) and ``S2 = sum c2 C C^T`` (TM) over ``[N, M_static)``.

    ``coeffs`` is either a sequence of :class:`AsymptoticCoeffs` or a pair of
    arrays ``(c1, c2)`` indexed like ``box_modes``.
    """
    n_k = min(C.shape[1], len(box_modes))
    if m_static > n_k:
        raise ValueError(f"M_static={m_static} exceeds the {n_k} available box modes")
    if not 0 <= n_accessible < m_static:
        raise ValueError("need 0 <= N < M_static")
    if not 0 <= m_dynamic <= m_static:
        raise ValueError("need 0 <= M_dynamic <= M_static")
    c1, c2 = _coeff_arrays(coeffs, m_static)
    sl = slice(n_accessible, m_static)
    Cs = C[:, sl]
    S1 = (Cs * c1[sl].real) @ Cs.T
    w2 = c2[sl]
    S2 = (Cs * w2.real) @ Cs.T
    if np.any(w2.imag != 0):
        S2 = S2 + 1j * ((Cs * w2.imag) @ Cs.T)
    return KernelSplit(S1=S1, S2=S2, n_accessible=n_accessible, m_static=m_static, m_dynamic=m_dynamic)


def port_columns(C: np.ndarray, box_modes: Sequence[BoxMode], ports: Sequence[Port]) -> np.ndarray:
    """``C_{i,0} = sum_m C_{i,m} * pulse_overlap(m, port)`` over all ``N_k`` box modes."""
    n_k = C.shape[1]
    modes = list(box_modes)[:n_k]
    if not ports:
        return np.zeros((C.shape[0], 0))
    P = np.stack([pulse_overlaps(modes, p) for p in ports], axis=1)
    return C @ P


def assemble_system(
    split: KernelSplit,
    C: np.ndarray,
    box_modes: Sequence[BoxMode],
    stack: LayerStack,
    port_cols: np.ndarray,
    f: float,
    coeffs=None,
) -> MomSystem:
    """MoM matrix at one frequency plus the port and accessible-mode right-hand sides."""
    if not f > 0:
        raise ValueError("frequency must be positive")
    N, Md = split.n_accessible, split.m_dynamic
    A = split.static_matrix(f)
    flags: set[str] = set()
    if Md > N:
        arr = mode_arrays(list(box_modes)[N:Md])
        y, flag = total_admittances(arr["is_te"], arr["kc"], stack, f)
        if coeffs is None:
            c1, c2 = asymptotic_coeff_arrays(arr["is_te"], arr["kc"], stack)
        else:
            c1, c2 = _coeff_arrays(coeffs, Md)
            c1, c2 = c1[N:Md], c2[N:Md]
        dy = y - asymptotic_admittance(c1, c2, f)
        Cd = C[:, N:Md]
        A = A + (Cd * dy) @ Cd.T
        if flag.any():
            flags.add(FLAG_RESONANCE)
    rhs = np.concatenate([port_cols, C[:, :N]], axis=1).astype(complex)
    return MomSystem(A=A, rhs=rhs, f=f, n_ports=port_cols.shape[1], flags=flags)


def direct_system(
    C: np.ndarray,
    box_modes: Sequence[BoxMode],
    stack: LayerStack,
    port_cols: np.ndarray,
    n_accessible: int,
    n_terms: int,
    f: float,
) -> MomSystem:
    """Reference MoM matrix from the plain kernel series ``sum_{m in [N, n_terms)} Y_m^T C C^T``."""
    if n_terms > C.shape[1]:
        raise ValueError(f"{n_terms} kernel terms requested, only {C.shape[1]} box modes")
    arr = mode_arrays(list(box_modes)[n_accessible:n_terms])
    y, flag = total_admittances(arr["is_te"], arr["kc"], stack, f)
    Cs = C[:, n_accessible:n_terms]
    A = (Cs * y) @ Cs.T
    rhs = np.concatenate([port_cols, C[:, :n_accessible]], axis=1).astype(complex)
    flags = {FLAG_RESONANCE} if flag.any() else set()
    return MomSystem(A=A, rhs=rhs, f=f, n_ports=port_cols.shape[1], flags=flags)


# ----------------------------------------------------------------------- solve


def _condition_number(lu_piv, anorm: float) -> float:
    lu, _ = lu_piv
    (gecon,) = sla.get_lapack_funcs(("gecon",), (lu,))
    rcond, info = gecon(lu, anorm, norm="1")
    if info != 0 or rcond == 0:
        return np.inf
    return 1.0 / rcond


def solve(system: MomSystem) -> tuple[np.ndarray, float]:
    """Dense LU solve of ``A alpha = rhs`` with one refinement step.

    Returns ``(alpha, condition_estimate)``; flags on ``system`` are updated.
    """
    A, rhs = system.A, system.rhs
    if not np.all(np.isfinite(A)):
        raise MenError(f"non-finite MoM matrix at f={system.f:g} Hz (exact box resonance?)")
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)  # singularity is reported below
        try:
            lu_piv = sla.lu_factor(A, check_finite=False)
        except (ValueError, np.linalg.LinAlgError) as exc:  # pragma: no cover - LAPACK edge
            raise MenError(f"singular MoM matrix at f={system.f:g} Hz") from exc
    if np.any(np.diag(lu_piv[0]) == 0):
        raise MenError(f"singular MoM matrix at f={system.f:g} Hz")
    cond = _condition_number(lu_piv, np.abs(A).sum(axis=0).max())
    alpha = sla.lu_solve(lu_piv, rhs, check_finite=False)
    alpha = alpha + sla.lu_solve(lu_piv, rhs - A @ alpha, check_finite=False)
    if cond > COND_LIMIT:
        system.flags.add(FLAG_ILL_CONDITIONED)
    res = np.linalg.norm(rhs - A @ alpha, axis=0)
    if np.any(res > RESIDUAL_RTOL * np.maximum(np.linalg.norm(rhs, axis=0), 1e-300)):
        system.flags.add(FLAG_RESIDUAL)
    return alpha, cond


def impedance_matrix(alpha: np.ndarray, rhs: np.ndarray, n_ports: int) -> GeneralizedZ:
    """Compact form ``Z = R^T alpha`` over ports and accessible modes."""
    return GeneralizedZ(Z=rhs.T @ alpha, n_ports=n_ports)


def reduce_to_ports(zbar: GeneralizedZ, y_terminal: np.ndarray | None) -> np.ndarray:
    """Terminate each accessible-mode terminal in admittance ``y_terminal[n]``.

    ``Z_PP - Z_PA (Z_AA + diag(1/Y))^-1 Z_AP``, evaluated in the equivalent form
    ``Z_PP - Z_PA D (I + Z_AA D)^-1 Z_AP`` with ``D = diag(Y)`` so no
    reciprocal of ``Y`` is needed.
    """
    N = zbar.n_accessible
    if N == 0:
        return zbar.zpp.copy()
    y = np.asarray(y_terminal, complex).reshape(-1)
    if y.size != N:
        raise ValueError(f"{N} accessible modes but {y.size} terminal admittances")
    M = np.eye(N) + zbar.zaa * y[None, :]
    try:
        X = np.linalg.solve(M, zbar.zap)
    except np.linalg.LinAlgError as exc:
        raise MenError("singular accessible-mode reduction") from exc
    return zbar.zpp - (zbar.zpa * y[None, :]) @ X


def z_to_s(Z: np.ndarray, z_ref: float = 50.0) -> np.ndarray:
    """``S = (Z - Zref I)(Z + Zref I)^-1``."""
    Z = np.atleast_2d(np.asarray(Z, complex))
    if Z.shape[0] != Z.shape[1]:
        raise ValueError("Z must be square")
    eye = np.eye(Z.shape[0])
    try:
        # (Z - R)(Z + R)^-1 = ((Z + R)^-T (Z - R)^T)^T
        return np.linalg.solve((Z + z_ref * eye).T, (Z - z_ref * eye).T).T
    except np.linalg.LinAlgError as exc:
        raise MenError("singular (Z + Zref) in S conversion") from exc


# ----------------------------------------------------------------------- precomputed model


@dataclass(frozen=True, eq=False)
class MenModel:
    """Frequency-independent data of one discontinuity: everything the sweep reuses."""

    C: np.ndarray  # (N_b, N_k)
    box_modes: tuple[BoxMode, ...]
    stack: LayerStack
    ports: tuple[Port, ...]
    split: KernelSplit
    port_cols: np.ndarray
    c1: np.ndarray
    c2: np.ndarray

    @classmethod
    def build(
        cls,
        C: np.ndarray,
        box_modes: Sequence[BoxMode],
        stack: LayerStack,
        ports: Sequence[Port],
        n_accessible: int,
        m_static: int,
        m_dynamic: int,
    ) -> "MenModel":
        modes = tuple(box_modes)[: C.shape[1]]
        arr = mode_arrays(modes[:m_static])
        c1, c2 = asymptotic_coeff_arrays(arr["is_te"], arr["kc"], stack)
        split = assemble_static(C, modes, (c1, c2), n_accessible, m_static, m_dynamic)
        return cls(
            C=C,
            box_modes=modes,
            stack=stack,
            ports=tuple(ports),
            split=split,
            port_cols=port_columns(C, modes, ports),
            c1=c1,
            c2=c2,
        )

    @property
    def n_accessible(self) -> int:
        return self.split.n_accessible

    def accessible_admittances(self, f: float) -> tuple[np.ndarray, np.ndarray]:
        arr = mode_arrays(self.box_modes[: self.n_accessible])
        return total_admittances(arr["is_te"], arr["kc"], self.stack, f)

    def system(self, f: float) -> MomSystem:
        return assemble_system(
            self.split, self.C, self.box_modes, self.stack, self.port_cols, f, (self.c1, self.c2)
        )

    def solve_at(self, f: float) -> MenSolution:
        return solve_system(self.system(f), self)


def solve_system(system: MomSystem, model: MenModel) -> MenSolution:
    """Solve, build the generalized Z and terminate the accessible modes in their media."""
    alpha, cond = solve(system)
    zbar = impedance_matrix(alpha, system.rhs, system.n_ports)
    flags = set(system.flags)
    if model.n_accessible:
        y_acc, flag = model.accessible_admittances(system.f)
        if flag.any():
            flags.add(FLAG_RESONANCE)
        z_ports = reduce_to_ports(zbar, y_acc)
    else:
        z_ports = zbar.zpp.copy()
    return MenSolution(
        f=system.f, alpha=alpha, zbar=zbar, z_ports=z_ports, flags=frozenset(flags), condition=cond
    )


# ----------------------------------------------------------------------- cascading


def tl_section(modes: Sequence[BoxMode], layer: Layer, length: float, f: float) -> TLSection:
    """Line section of ``layer`` for the given accessible modes at frequency ``f``."""
    arr = mode_arrays(modes)
    omega = 2.0 * np.pi * f
    eps = layer.eps_complex
    g = propagation_constant(arr["kc"], omega, eps)
    yc = np.where(arr["is_te"], g / (1j * omega * mu_0), 1j * omega * epsilon_0 * eps / g)
    return TLSection(length=length, gamma=g, yc=yc)


def shorted_stack_admittance(
    modes: Sequence[BoxMode], layers: Sequence[Layer], f: float
) -> np.ndarray:
    """Admittance of a PEC-backed layer stack for each accessible mode (outer-face load)."""
    arr = mode_arrays(modes)
    y, _ = stack_admittance(arr["is_te"], arr["kc"], layers, f)
    return y


def cascade(discs: Sequence[GeneralizedZ], connections: Sequence[TLSection]) -> GeneralizedZ:
    """Join discontinuities through line sections on their accessible modes.

    Discontinuity ``k`` and ``k + 1`` are linked by ``connections[k]``.  The
    composite keeps every port (in order) and, as accessible terminals, the
    accessible modes of the first and last discontinuities (the outer faces).
    Each line obeys ``V_a = ch V_b + Zc sh I_r`` and ``I_s = Yc sh V_b + ch I_r``
    with ``I_s`` entering at ``a`` and ``I_r`` leaving at ``b``, so a
    zero-length section is an ideal connection.
    """
    discs = list(discs)
    if not discs:
        raise ValueError("need at least one discontinuity")
    if len(connections) != len(discs) - 1:
        raise ValueError("need exactly one connection between consecutive discontinuities")
    if len(discs) == 1:
        return discs[0]
    N = discs[0].n_accessible
    for d in discs:
        if d.n_accessible != N:
            raise ValueError("mode-count mismatch between connected discontinuities")
    for s in connections:
        if len(s.gamma) != N or len(s.yc) != N:
            raise ValueError("mode-count mismatch between a section and its discontinuities")

    sizes = [d.Z.shape[0] for d in discs]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    T = int(offs[-1])
    Zb = sla.block_diag(*[d.Z for d in discs]).astype(complex)
    ports = [offs[k] + i for k, d in enumerate(discs) for i in range(d.n_ports)]
    acc = [offs[k] + discs[k].n_ports + np.arange(N) for k in range(len(discs))]
    ext = ports + list(acc[0]) + list(acc[-1])
    E = np.zeros((T, len(ext)))
    E[ext, np.arange(len(ext))] = 1.0

    n_lines = len(connections) * N
    B = np.zeros((T, 2 * n_lines))  # line currents -> node injections
    GV = np.zeros((2 * n_lines, T), complex)
    GL = np.zeros((2 * n_lines, 2 * n_lines), complex)
    for k, sec in enumerate(connections):
        gl = sec.gamma * sec.length
        ch, sh = np.cosh(gl), np.sinh(gl)
        for n in range(N):
            q = k * N + n
            i_s, i_r = 2 * q, 2 * q + 1
            a, b = acc[k][n], acc[k + 1][n]
            B[a, i_s] = -1.0
            B[b, i_r] = 1.0
            # V_a - ch V_b - Zc sh I_r = 0
            GV[2 * q, a] = 1.0
            GV[2 * q, b] = -ch[n]
            GL[2 * q, i_r] = -sh[n] / sec.yc[n] if sh[n] != 0 else 0.0
            # I_s - Yc sh V_b - ch I_r = 0
            GV[2 * q + 1, b] = -sec.yc[n] * sh[n]
            GL[2 * q + 1, i_s] = 1.0
            GL[2 * q + 1, i_r] = -ch[n]
    M = GV @ Zb @ B + GL
    try:
        K = -np.linalg.solve(M, GV @ Zb @ E)
    except np.linalg.LinAlgError as exc:
        raise MenError("singular cascade connection") from exc
    Zc = E.T @ Zb @ (E + B @ K)
    return GeneralizedZ(Z=Zc, n_ports=len(ports))
