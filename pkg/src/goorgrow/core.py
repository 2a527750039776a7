"""Shared domain types: model parameters, the uniform 1-D mesh, fields and states.

Every PDE quantity in the package lives on a :class:`Grid1D` as a
:class:`Field` sampled at cell centres.  Quadrature is a composite trapezoid
over those samples, closed at the domain ends.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class ModelError(ValueError):
    """Raised when parameters or inputs violate a documented precondition."""


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of the coupled cell/nutrient system.

    Growth and consumption rates are normalised to one; they are carried
    only so that callers can switch them off in test modes.
    """

    chi: float = 2.0
    diffusion_n: float = 1.0
    n_threshold: float = 0.5
    epsilon: float = 0.25
    growth_rate: float = 1.0
    consumption_rate: float = 1.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.chi) and self.chi > 0):
            raise ModelError("chi must be positive")
        if not (math.isfinite(self.diffusion_n) and self.diffusion_n > 0):
            raise ModelError("diffusion_n must be positive")
        if not 0 < self.n_threshold < 1:
            raise ModelError("n_threshold must lie in (0, 1)")
        if not (math.isfinite(self.epsilon) and self.epsilon > 0):
            raise ModelError("epsilon must be positive")
        # test modes switch a term off; anything else breaks the normalisation
        if self.growth_rate not in (0.0, 1.0) or self.consumption_rate not in (0.0, 1.0):
            raise ModelError("growth and consumption rates are normalised to 1 (or 0 to disable)")


@dataclass(frozen=True)
class Grid1D:
    """Uniform cell-centred mesh on ``[z_min, z_max]``."""

    z_min: float
    z_max: float
    n_cells: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.z_min) and math.isfinite(self.z_max)):
            raise ModelError("grid bounds must be finite")
        if not self.z_min < self.z_max:
            raise ModelError("z_min must be smaller than z_max")
        if not isinstance(self.n_cells, (int, np.integer)) or self.n_cells < 2:
            raise ModelError("n_cells must be an integer >= 2")

    @property
    def dz(self) -> float:
        return (self.z_max - self.z_min) / self.n_cells

    @property
    def centers(self) -> np.ndarray:
        return self.z_min + (np.arange(self.n_cells) + 0.5) * self.dz

    @property
    def faces(self) -> np.ndarray:
        return self.z_min + np.arange(self.n_cells + 1) * self.dz

    def field(self, values) -> "Field":
        return Field(self, values)

    def sample(self, func) -> "Field":
        """Evaluate ``func`` (vectorised) at the cell centres."""
        return Field(self, np.asarray(func(self.centers), dtype=float))


def build_grid(z_min: float, z_max: float, n_cells: int) -> Grid1D:
    if isinstance(n_cells, float) and n_cells.is_integer():
        n_cells = int(n_cells)
    return Grid1D(float(z_min), float(z_max), n_cells)


@dataclass(frozen=True, eq=False)
class Field:
    """Real samples at the cell centres of ``grid``; read-only."""

    grid: Grid1D
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.grid.n_cells,):
            raise ModelError(
                f"field has {vals.size} values, grid has {self.grid.n_cells} cells"
            )
        if not np.all(np.isfinite(vals)):
            raise ModelError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.grid.n_cells

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def with_values(self, values) -> "Field":
        return Field(self.grid, values)


def trapezoid_weights(n: int) -> np.ndarray:
    """Quadrature weights (in units of dz) for ``n`` cell-centre samples.

    Composite trapezoid between the centres, closed over the two end half
    cells with linearly extrapolated boundary values.  Exact for affine
    integrands; all weights are positive for ``n >= 2``.
    """
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    # half cell [z_min, c_0] with f(z_min) ~ (3 f_0 - f_1) / 2
    w[0] += 5.0 / 8.0
    w[1] -= 1.0 / 8.0
    w[-1] += 5.0 / 8.0
    w[-2] -= 1.0 / 8.0
    return w


def integrate(f: Field, weight: Optional[Field] = None) -> float:
    """Second-order approximation of the integral of ``f * weight`` over ``[z_min, z_max]``."""
    vals = f.values
    if weight is not None:
        if weight.grid != f.grid:
            raise ModelError("fields live on different grids")
        vals = vals * weight.values
    return float(np.dot(trapezoid_weights(vals.size), vals) * f.grid.dz)


@dataclass(frozen=True)
class Frame:
    """Reference frame tag.  ``moving`` frames carry the threshold position and speed."""

    moving: bool = False
    xbar: float = 0.0
    xdot: float = 0.0

    @classmethod
    def static(cls) -> "Frame":
        return cls(False)

    @classmethod
    def moving_at(cls, xbar: float, xdot: float) -> "Frame":
        return cls(True, float(xbar), float(xdot))


@dataclass(frozen=True)
class State:
    """Paired cell density and nutrient fields at a given time."""

    rho: Field
    nutrient: Field
    time: float = 0.0
    frame: Frame = field(default_factory=Frame.static)

    def __post_init__(self) -> None:
        if self.rho.grid != self.nutrient.grid:
            raise ModelError("rho and nutrient must share one grid")
        if self.time < 0:
            raise ModelError("time must be nonnegative")
        if np.any(self.rho.values < 0):
            raise ModelError("rho must be nonnegative")
        n = self.nutrient.values
        if np.any(n < 0) or np.any(n > 1):
            raise ModelError("nutrient must lie in [0, 1]")

    @property
    def grid(self) -> Grid1D:
        return self.rho.grid
