"""YAML configuration documents <-> :class:`CircuitSpec`.

Lengths are millimeters and frequencies gigahertz in the document; the
returned spec is in meters and hertz.
"""

from __future__ import annotations

import math
from typing import Any

import yaml

from .geometry import (
    Box,
    CircuitSpec,
    GeometryError,
    Layer,
    LayerStack,
    MetalPolygon,
    Metallization,
    Numerics,
    Port,
    Sweep,
)

_MM = 1e3
_GHZ = 1e9


class ConfigError(ValueError):
    """Schema violation in a configuration document."""


_TOP_KEYS = {"box", "layers_below", "layers_above", "metal", "ports", "numerics", "sweep"}
_NUMERIC_KEYS = {
    "n_basis": int,
    "n_kernel_static": int,
    "n_kernel_dynamic": int,
    "n_accessible": int,
    "grid_nx": int,
    "grid_ny": int,
    "n_box_modes": int,
}


def _need_map(obj, where: str) -> dict:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected a mapping")
    return obj


def _check_keys(obj: dict, allowed: set[str], required: set[str], where: str) -> None:
    for k in obj:
        if k not in allowed:
            raise ConfigError(f"{where}.{k}: unknown key")
    for k in required:
        if k not in obj:
            raise ConfigError(f"{where}.{k}: missing required key")


def _num(obj: dict, key: str, where: str, kind=float):
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {v!r}")
    if kind is int:
        if isinstance(v, float) and not v.is_integer():
            raise ConfigError(f"{where}.{key}: expected an integer, got {v!r}")
        return int(v)
    if not math.isfinite(v):
        raise ConfigError(f"{where}.{key}: must be finite")
    return float(v)


def _mm(obj: dict, key: str, where: str) -> float:
    return _num(obj, key, where) / _MM


def _point(p, where: str) -> tuple[float, float]:
    if not (isinstance(p, (list, tuple)) and len(p) == 2):
        raise ConfigError(f"{where}: expected [x_mm, y_mm]")
    return (_num({"x": p[0]}, "x", where) / _MM, _num({"y": p[1]}, "y", where) / _MM)


def _layers(items, where: str) -> tuple[Layer, ...]:
    if not isinstance(items, list) or not items:
        raise ConfigError(f"{where}: expected a non-empty list of layers")
    out = []
    for i, it in enumerate(items):
        w = f"{where}[{i}]"
        it = _need_map(it, w)
        _check_keys(it, {"eps_r", "tan_delta", "t_mm"}, {"eps_r", "t_mm"}, w)
        tan_d = _num(it, "tan_delta", w) if "tan_delta" in it else 0.0
        out.append(Layer(_num(it, "eps_r", w), _mm(it, "t_mm", w), tan_d))
    return tuple(out)


def parse_config(text: str) -> CircuitSpec:
    """Parse a YAML document into a validated :class:`CircuitSpec`."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed document: {exc}") from exc
    return spec_from_dict(doc)


def spec_from_dict(doc: Any) -> CircuitSpec:
    doc = _need_map(doc, "document")
    _check_keys(doc, _TOP_KEYS, {"box", "layers_below", "layers_above"}, "document")

    bx = _need_map(doc["box"], "box")
    _check_keys(bx, {"a_mm", "b_mm"}, {"a_mm", "b_mm"}, "box")
    box = Box(_mm(bx, "a_mm", "box"), _mm(bx, "b_mm", "box"))
    stack = LayerStack(_layers(doc["layers_below"], "layers_below"), _layers(doc["layers_above"], "layers_above"))

    polys = []
    metal_items = doc.get("metal") or []
    if not isinstance(metal_items, list):
        raise ConfigError("metal: expected a list")
    for i, it in enumerate(metal_items):
        w = f"metal[{i}]"
        it = _need_map(it, w)
        _check_keys(it, {"polygon", "holes"}, {"polygon"}, w)
        if not isinstance(it["polygon"], list) or len(it["polygon"]) < 3:
            raise ConfigError(f"{w}.polygon: expected at least 3 vertices")
        shell = [_point(p, f"{w}.polygon[{j}]") for j, p in enumerate(it["polygon"])]
        holes = []
        for h, hole in enumerate(it.get("holes") or []):
            if not isinstance(hole, list) or len(hole) < 3:
                raise ConfigError(f"{w}.holes[{h}]: expected at least 3 vertices")
            holes.append([_point(p, f"{w}.holes[{h}][{j}]") for j, p in enumerate(hole)])
        polys.append(MetalPolygon(shell, holes))

    ports = []
    port_items = doc.get("ports") or []
    if not isinstance(port_items, list):
        raise ConfigError("ports: expected a list")
    port_keys = {"id", "x_mm", "y_mm", "width_mm", "length_mm", "orientation", "role"}
    for i, it in enumerate(port_items):
        w = f"ports[{i}]"
        it = _need_map(it, w)
        _check_keys(it, port_keys, {"id", "x_mm", "y_mm", "width_mm", "length_mm"}, w)
        orient = it.get("orientation", "x")
        role = it.get("role", "external")
        if orient not in ("x", "y"):
            raise ConfigError(f"{w}.orientation: expected 'x' or 'y', got {orient!r}")
        if role not in ("external", "internal"):
            raise ConfigError(f"{w}.role: expected 'external' or 'internal', got {role!r}")
        ports.append(
            Port(
                id=_num(it, "id", w, int),
                center=(_mm(it, "x_mm", w), _mm(it, "y_mm", w)),
                width=_mm(it, "width_mm", w),
                length=_mm(it, "length_mm", w),
                orientation=orient,
                role=role,
            )
        )

    num_doc = _need_map(doc.get("numerics") or {}, "numerics")
    _check_keys(num_doc, set(_NUMERIC_KEYS), set(), "numerics")
    numerics = Numerics(**{k: _num(num_doc, k, "numerics", t) for k, t in _NUMERIC_KEYS.items() if k in num_doc})

    sweep = None
    if doc.get("sweep") is not None:
        sw = _need_map(doc["sweep"], "sweep")
        keys = {"f_start_ghz", "f_stop_ghz", "n_points"}
        _check_keys(sw, keys, keys, "sweep")
        sweep = Sweep(
            _num(sw, "f_start_ghz", "sweep") * _GHZ,
            _num(sw, "f_stop_ghz", "sweep") * _GHZ,
            _num(sw, "n_points", "sweep", int),
        )

    try:
        return CircuitSpec(box, stack, Metallization(polys), ports, numerics, sweep)
    except GeometryError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


# ----------------------------------------------------------------------- serialization


def _inverse(v: float, scale: float, divide: bool) -> float:
    """A document value x with ``x / scale == v`` (divide) or ``x * scale == v``."""
    fwd = (lambda x: x / scale) if divide else (lambda x: x * scale)
    x = v * scale if divide else v / scale
    if fwd(x) == v:
        return x
    lo = hi = x
    for _ in range(64):
        lo, hi = math.nextafter(lo, -math.inf), math.nextafter(hi, math.inf)
        for c in (lo, hi):
            if fwd(c) == v:
                return c
    return x


def _to_mm(v: float) -> float:
    return _inverse(v, _MM, divide=True)


def spec_to_dict(spec: CircuitSpec) -> dict:
    def pts(seq):
        return [[_to_mm(x), _to_mm(y)] for x, y in seq]

    def layers(ls):
        return [{"eps_r": l.eps_r, "tan_delta": l.tan_delta, "t_mm": _to_mm(l.thickness)} for l in ls]

    n = spec.numerics
    num = {
        "n_basis": n.n_basis,
        "n_kernel_static": n.n_kernel_static,
        "n_kernel_dynamic": n.n_kernel_dynamic,
        "n_accessible": n.n_accessible,
        "grid_nx": n.grid_nx,
        "grid_ny": n.grid_ny,
    }
    if n.n_box_modes is not None:
        num["n_box_modes"] = n.n_box_modes
    doc = {
        "box": {"a_mm": _to_mm(spec.box.a), "b_mm": _to_mm(spec.box.b)},
        "layers_below": layers(spec.layers.below),
        "layers_above": layers(spec.layers.above),
        "metal": [
            {"polygon": pts(p.shell), **({"holes": [pts(h) for h in p.holes]} if p.holes else {})}
            for p in spec.metal.polygons
        ],
        "ports": [
            {
                "id": p.id,
                "x_mm": _to_mm(p.center[0]),
                "y_mm": _to_mm(p.center[1]),
                "width_mm": _to_mm(p.width),
                "length_mm": _to_mm(p.length),
                "orientation": p.orientation,
                "role": p.role,
            }
            for p in spec.ports
        ],
        "numerics": num,
    }
    if spec.sweep is not None:
        s = spec.sweep
        doc["sweep"] = {
            "f_start_ghz": _inverse(s.f_start, _GHZ, divide=False),
            "f_stop_ghz": _inverse(s.f_stop, _GHZ, divide=False),
            "n_points": s.n_points,
        }
    return doc


def serialize_config(spec: CircuitSpec) -> str:
    return yaml.safe_dump(spec_to_dict(spec), sort_keys=False)


def load_config(path) -> CircuitSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
