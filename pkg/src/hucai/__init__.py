"""Numerical laboratory for the pressure/conductance network model on rectangles.

Modules: :mod:`grid` (fields and finite differences), :mod:`model`
(coefficients and auxiliary fields), :mod:`elliptic` (pressure solve),
:mod:`dynamics` (time stepping and energy monitors), :mod:`verify`
(identity and estimate checks), :mod:`heatpot` (Duhamel potentials) and
:mod:`cli`.
"""

from .grid import Grid2D, Matrix2Field, ScalarField, VectorField2
from .model import Params, State

__all__ = ["Grid2D", "Matrix2Field", "Params", "ScalarField", "State", "VectorField2"]
__version__ = "0.1.0"
