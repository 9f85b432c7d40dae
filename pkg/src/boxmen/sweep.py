"""Precompute once per geometry, then a parallel frequency sweep."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .aperture import coupling_matrix, solve_aperture_modes
from .boxmodes import enumerate_modes
from .geometry import CircuitSpec, build_aperture
from .men import MenError, MenModel, z_to_s

log = logging.getLogger(__name__)

CACHE_VERSION = 1


class SweepError(RuntimeError):
    """Failure attributed to a sweep stage (precompute or a frequency point)."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"{stage}: {message}")


@dataclass(frozen=True, eq=False)
class Precompute:
    """Geometry-dependent data reused across frequencies and sweeps."""

    key: str
    kc_ap: np.ndarray
    family: np.ndarray
    C: np.ndarray  # (N_b, N_k)
    parseval_rows: tuple[int, ...]
    seconds: float
    cache_hit: bool


@dataclass(eq=False)
class SweepResult:
    frequencies: np.ndarray  # Hz, ascending
    S: np.ndarray  # (F, P, P) complex
    port_ids: tuple[int, ...]
    flags: list[frozenset[str]]
    precompute_seconds: float
    point_ms: np.ndarray
    total_seconds: float
    meta: dict = field(default_factory=dict)

    @property
    def n_ports(self) -> int:
        return self.S.shape[1]


def geometry_key(spec: CircuitSpec) -> str:
    """Hash of everything the aperture modes and coupling matrix depend on."""
    n = spec.numerics
    payload = {
        "v": CACHE_VERSION,
        "box": [spec.box.a.hex(), spec.box.b.hex()],
        "metal": [
            {
                "shell": [[x.hex(), y.hex()] for x, y in p.shell],
                "holes": [[[x.hex(), y.hex()] for x, y in h] for h in p.holes],
            }
            for p in spec.metal.polygons
        ],
        "grid": [n.grid_nx, n.grid_ny],
        "n_basis": n.n_basis,
        "n_k": n.box_modes,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:24]


_memory_cache: dict[str, Precompute] = {}
_memory_lock = threading.Lock()


def clear_memory_cache() -> None:
    with _memory_lock:
        _memory_cache.clear()


def _compute(spec: CircuitSpec, key: str) -> Precompute:
    n = spec.numerics
    t0 = time.perf_counter()
    mask = build_aperture(spec.box, spec.metal, n.grid_nx, n.grid_ny)
    ap = solve_aperture_modes(mask, n.n_basis)
    box_modes = enumerate_modes(spec.box, n.box_modes)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cm = coupling_matrix(ap, box_modes, check="off")
    for w in caught:
        log.warning("%s", w.message)
    bad = tuple(int(i) for i in cm.parseval_violations())
    if bad:
        log.warning(
            "%d of %d coupling rows outside the Parseval bound (min row sum %.4f); "
            "raise n_box_modes or the grid resolution",
            len(bad),
            len(ap),
            float(cm.row_sums().min()),
        )
    return Precompute(
        key=key,
        kc_ap=ap.kc,
        family=ap.family,
        C=cm.C,
        parseval_rows=bad,
        seconds=time.perf_counter() - t0,
        cache_hit=False,
    )


def _cache_path(cache_dir, key: str) -> Path:
    return Path(cache_dir) / f"men_{key}.npz"


def _load(path: Path, key: str) -> Precompute | None:
    try:
        with np.load(path, allow_pickle=False) as z:
            if str(z["key"]) != key:
                return None
            return Precompute(
                key=key,
                kc_ap=z["kc_ap"],
                family=z["family"].astype(str),
                C=z["C"],
                parseval_rows=tuple(int(i) for i in z["parseval_rows"]),
                seconds=float(z["seconds"]),
                cache_hit=True,
            )
    except (OSError, KeyError, ValueError) as exc:
        log.warning("ignoring unreadable cache file %s (%s)", path, exc)
        return None


def _store(path: Path, pre: Precompute) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".{os.getpid()}.tmp.npz")
    np.savez(
        tmp,
        key=pre.key,
        kc_ap=pre.kc_ap,
        family=pre.family.astype("U2"),
        C=pre.C,
        parseval_rows=np.array(pre.parseval_rows, dtype=np.int64),
        seconds=pre.seconds,
    )
    os.replace(tmp, path)


def precompute(spec: CircuitSpec, cache_dir=None) -> Precompute:
    """Aperture modes and coupling matrix, from memory/disk cache when available."""
    key = geometry_key(spec)
    with _memory_lock:
        hit = _memory_cache.get(key)
    if hit is not None:
        log.info("precompute cache hit (memory) for geometry %s", key)
        return _replace_hit(hit)
    if cache_dir is not None:
        path = _cache_path(cache_dir, key)
        if path.exists():
            pre = _load(path, key)
            if pre is not None:
                log.info("precompute cache hit (%s) for geometry %s", path, key)
                with _memory_lock:
                    _memory_cache[key] = pre
                return pre
    log.info("precompute for geometry %s", key)
    pre = _compute(spec, key)
    log.info("precompute finished in %.2f s", pre.seconds)
    with _memory_lock:
        _memory_cache[key] = pre
    if cache_dir is not None:
        _store(_cache_path(cache_dir, key), pre)
    return pre


def _replace_hit(pre: Precompute) -> Precompute:
    return Precompute(pre.key, pre.kc_ap, pre.family, pre.C, pre.parseval_rows, pre.seconds, True)


def build_model(spec: CircuitSpec, pre: Precompute) -> MenModel:
    n = spec.numerics
    box_modes = enumerate_modes(spec.box, n.box_modes)
    return MenModel.build(
        pre.C, box_modes, spec.layers, spec.ports, n.n_accessible, n.n_kernel_static, n.n_kernel_dynamic
    )


def default_threads() -> int:
    return os.cpu_count() or 1


def run_sweep(spec: CircuitSpec, threads: int | None = None, cache_dir=None) -> SweepResult:
    """S-parameters of the external ports at every sweep frequency.

    Internal ports are left open (zero impressed current).  Results are
    ordered by frequency regardless of the completion order of workers.
    """
    if spec.sweep is None:
        raise SweepError("setup", "the circuit has no sweep section")
    if not spec.ports:
        raise SweepError("setup", "the circuit has no ports")
    ext = [i for i, p in enumerate(spec.ports) if p.role == "external"]
    if not ext:
        raise SweepError("setup", "the circuit has no external ports")
    t_start = time.perf_counter()
    try:
        pre = precompute(spec, cache_dir)
        model = build_model(spec, pre)
    except (MenError, RuntimeError, ValueError) as exc:
        raise SweepError("precompute", str(exc)) from exc
    t_pre = time.perf_counter() - t_start
    freqs = spec.sweep.frequencies()

    def point(f: float):
        t0 = time.perf_counter()
        try:
            sol = model.solve_at(f)
            S = z_to_s(sol.z_ports[np.ix_(ext, ext)])
        except (MenError, ValueError, np.linalg.LinAlgError) as exc:
            raise SweepError(f"frequency {f / 1e9:.9g} GHz", str(exc)) from exc
        return S, sol.flags, (time.perf_counter() - t0) * 1e3

    n_threads = max(1, threads or default_threads())
    if n_threads == 1 or len(freqs) == 1:
        out = [point(f) for f in freqs]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            out = list(pool.map(point, freqs))
    for f, (_, flags, _) in zip(freqs, out):
        if flags:
            log.warning("f = %.6g GHz flagged: %s", f / 1e9, ", ".join(sorted(flags)))
    return SweepResult(
        frequencies=freqs,
        S=np.stack([o[0] for o in out]),
        port_ids=tuple(spec.ports[i].id for i in ext),
        flags=[o[1] for o in out],
        precompute_seconds=t_pre,
        point_ms=np.array([o[2] for o in out]),
        total_seconds=time.perf_counter() - t_start,
        meta={
            "geometry_key": pre.key,
            "cache_hit": pre.cache_hit,
            "aperture_seconds": pre.seconds,
            "parseval_rows": len(pre.parseval_rows),
            "threads": n_threads,
        },
    )

