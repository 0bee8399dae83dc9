"""Finite element spaces, assembly and the DPG system."""

from .assembly import (
    AssemblyError,
    assemble_curl,
    assemble_h1_gram,
    assemble_hdiv_gram,
    assemble_pi,
    rt_divergence_l2,
)
from .dpg import DpgSystem, assemble_dpg, h1_error
from .spaces import BROKEN, LAGRANGE, RT, TRACE, FeSpace, SpaceError, build_space

__all__ = [
    "AssemblyError",
    "BROKEN",
    "DpgSystem",
    "FeSpace",
    "LAGRANGE",
    "RT",
    "SpaceError",
    "TRACE",
    "assemble_curl",
    "assemble_dpg",
    "assemble_h1_gram",
    "assemble_hdiv_gram",
    "assemble_pi",
    "build_space",
    "h1_error",
    "rt_divergence_l2",
]
