"""Spectra of matrix-coefficient polynomials in free semicircular variables.

The limiting spectral distribution comes from a linear pencil and the
operator-valued Cauchy transform of the linearized polynomial. Seeded random
matrix experiments check the finite-n behaviour.
"""

from importlib import resources
from pathlib import Path

from .linearize import LinearPencil, factorize, linearize
from .ncpoly import MatrixNCPoly, build_poly, constant, generator, load_poly, save_poly
from .ovcauchy import scalar_g, solve_G
from .spectrum import TestFunction, density, support_components

__all__ = [
    "LinearPencil",
    "MatrixNCPoly",
    "TestFunction",
    "build_poly",
    "constant",
    "density",
    "factorize",
    "fixture_path",
    "generator",
    "linearize",
    "load_poly",
    "save_poly",
    "scalar_g",
    "solve_G",
    "support_components",
]

FIXTURES = ("semicircle", "square", "anticomm", "twoband")


def fixture_path(name: str) -> Path:
    """Path of a shipped fixture polynomial (``semicircle``, ``square``, ...)."""
    stem = name[:-5] if name.endswith(".json") else name
    if stem not in FIXTURES:
        raise ValueError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURES)}")
    return Path(str(resources.files(__package__) / "fixtures" / f"{stem}.json"))
