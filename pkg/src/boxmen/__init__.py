"""Multimode equivalent network solver for shielded zero-thickness planar circuits."""

from .geometry import (
    Box,
    CircuitSpec,
    GeometryError,
    Layer,
    LayerStack,
    Metallization,
    MetalPolygon,
    Numerics,
    Port,
    RegionMask,
    Sweep,
    build_aperture,
)
from .boxmodes import TE, TM, BoxMode, enumerate_modes, eval_mode, pulse_overlap
from .media import asymptotic_coeffs, modal_admittance, total_admittance

__all__ = [
    "Box",
    "BoxMode",
    "CircuitSpec",
    "GeometryError",
    "Layer",
    "LayerStack",
    "Metallization",
    "MetalPolygon",
    "Numerics",
    "Port",
    "RegionMask",
    "Sweep",
    "TE",
    "TM",
    "asymptotic_coeffs",
    "build_aperture",
    "enumerate_modes",
    "eval_mode",
    "modal_admittance",
    "pulse_overlap",
    "total_admittance",
]
