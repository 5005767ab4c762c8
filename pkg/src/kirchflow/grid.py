"""One-dimensional column grid and clamped difference operators.

Interior nodes ``z_i = i*dz`` (``i = 1..n_cells``, ``dz = L/(n_cells+1)``)
carry the unknowns; both walls impose the clamped pair ``u = 0`` and
``du/dn = 0``.  The Laplacian row next to a wall therefore uses the wall
value zero, and the biharmonic rows use in addition the even-mirror ghost
``u(-dz) = u(dz)`` implied by the zero normal derivative, which shows up
as the ``7/dz^4`` corner entry.  Algebraically the biharmonic matrix is
the square of the Dirichlet Laplacian plus ``(2/dz^4)`` on each corner,
so it is symmetric positive definite on the clamped space.

Quadrature is the composite trapezoid over the interior nodes with each
wall cell integrated by the rectangle at its nearest node (end weights
``3*dz/2``); it is exact for constants, ``integrate(1) == length``, and
second-order on smooth integrands.  The H1 seminorm is face-based — one
squared difference quotient per face, wall faces one-sided against the
zero wall value — so that ``dz * sum(u * (-laplacian(u)))`` equals
``h1_seminorm(u)**2`` identically, the discrete integration by parts the
energy estimates rest on.

Gravity flux uses arithmetic face means of the conductivity, with each
wall face carrying the adjacent node's conductivity (same mirror rule as
the operators).  That choice makes the face-mean inequality
``sum(dz * K_face**2) <= integrate(K**2)`` exact term by term, which the
dissipation bookkeeping in the diagnostics relies on.

Operators are pure functions on value-semantic ``Field`` snapshots and
safe to call concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "GridError",
    "Column",
    "Field",
    "laplacian_clamped",
    "biharmonic_clamped",
    "gravity_divergence",
    "face_conductivities",
    "gravity_divergence_jacobian_banded",
    "integrate",
    "l2_norm",
    "h1_seminorm",
    "laplacian_banded",
    "biharmonic_banded",
    "dense_from_banded",
]


class GridError(ValueError):
    """Invalid grid geometry or field data."""


@dataclass(frozen=True)
class Column:
    """Vertical column geometry.

    Parameters
    ----------
    length : float
        Domain depth (> 0).
    n_cells : int
        Number of interior nodes (>= 5 so the fourth-order stencil fits).
    gravity_sign : float
        Orientation of the vertical unit vector along the column axis,
        +1 or -1.  The sign convention is a modelling choice, so it is
        part of the run configuration rather than hard-coded.
    """

    length: float
    n_cells: int
    gravity_sign: float = -1.0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.length) and self.length > 0.0):
            raise GridError(f"length must be positive, got {self.length}")
        if int(self.n_cells) != self.n_cells or self.n_cells < 5:
            raise GridError(f"n_cells must be an integer >= 5, got {self.n_cells}")
        if self.gravity_sign not in (1.0, -1.0, 1, -1):
            raise GridError(f"gravity_sign must be +1 or -1, got {self.gravity_sign}")

    @property
    def dz(self) -> float:
        return self.length / (self.n_cells + 1)

    def nodes(self) -> np.ndarray:
        """Interior node coordinates z_i = i*dz, i = 1..n_cells."""
        return self.dz * np.arange(1, self.n_cells + 1, dtype=float)


@dataclass(frozen=True)
class Field:
    """Nodal values on a column's interior nodes; a value-semantic snapshot."""

    values: np.ndarray
    column: Column

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.ndim != 1 or vals.shape[0] != self.column.n_cells:
            raise GridError(
                f"field needs {self.column.n_cells} nodal values, got shape {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise GridError("field values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def sample(cls, column: Column, fn: Callable[[np.ndarray], np.ndarray]) -> "Field":
        """Evaluate ``fn`` at the interior nodes."""
        return cls(np.asarray(fn(column.nodes()), dtype=float), column)

    @classmethod
    def zeros(cls, column: Column) -> "Field":
        return cls(np.zeros(column.n_cells), column)


# ---------------------------------------------------------------------------
# difference operators
# ---------------------------------------------------------------------------


def laplacian_clamped(f: Field) -> Field:
    """Second difference with zero wall values.

    Exact on quadratics away from the walls; the wall rows use u = 0 at
    the boundary, which is exact for clamped data.
    """
    u = f.values
    dz2 = f.column.dz ** 2
    out = np.empty_like(u)
    out[1:-1] = u[:-2] - 2.0 * u[1:-1] + u[2:]
    out[0] = -2.0 * u[0] + u[1]
    out[-1] = u[-2] - 2.0 * u[-1]
    return Field(out / dz2, f.column)


def biharmonic_clamped(f: Field) -> Field:
    """Fourth difference with the clamped (wall value + mirror) closure.

    Interior stencil (1, -4, 6, -4, 1)/dz^4, exact on quartics away from
    the walls.  Rows 1 and n fold in the ghost u(-dz) = u(dz), giving the
    corner entry 7/dz^4.
    """
    u = f.values
    n = u.shape[0]
    dz4 = f.column.dz ** 4
    out = np.empty_like(u)
    out[2:-2] = u[:-4] - 4.0 * u[1:-3] + 6.0 * u[2:-2] - 4.0 * u[3:-1] + u[4:]
    out[0] = 7.0 * u[0] - 4.0 * u[1] + u[2]
    out[1] = -4.0 * u[0] + 6.0 * u[1] - 4.0 * u[2] + u[3]
    out[n - 2] = u[n - 4] - 4.0 * u[n - 3] + 6.0 * u[n - 2] - 4.0 * u[n - 1]
    out[n - 1] = u[n - 3] - 4.0 * u[n - 2] + 7.0 * u[n - 1]
    return Field(out / dz4, f.column)


def face_conductivities(
    f: Field, conductivity: Callable[[np.ndarray], np.ndarray]
) -> np.ndarray:
    """Conductivity at the n_cells+1 faces by arithmetic node means.

    Wall faces carry the adjacent node's value (mirror rule); interior
    face i+1/2 carries (K_i + K_{i+1})/2.  ``conductivity`` maps nodal
    transformed values to conductivities (normally a table channel).
    """
    k = np.asarray(conductivity(f.values), dtype=float)
    faces = np.empty(k.shape[0] + 1)
    faces[1:-1] = 0.5 * (k[:-1] + k[1:])
    faces[0] = k[0]
    faces[-1] = k[-1]
    return faces


def gravity_divergence(
    f: Field, conductivity: Callable[[np.ndarray], np.ndarray]
) -> Field:
    """Divergence of the gravity-driven flux K(u) * gravity_sign.

    Face-centered differencing; the plain ``dz * sum`` of the result
    telescopes to the difference of the two wall-face fluxes exactly.
    Raises whatever ``conductivity`` raises on out-of-range values.
    """
    flux = f.column.gravity_sign * face_conductivities(f, conductivity)
    return Field((flux[1:] - flux[:-1]) / f.column.dz, f.column)


def gravity_divergence_jacobian_banded(
    f: Field, conductivity_slope: Callable[[np.ndarray], np.ndarray]
) -> np.ndarray:
    """Tridiagonal Jacobian of gravity_divergence in solve_banded layout.

    ``conductivity_slope`` must be the exact derivative of the
    conductivity channel used in gravity_divergence, so Newton models
    the assembled flux term exactly.  Interior diagonal entries vanish
    (the two face contributions cancel); only the wall rows keep one.
    """
    dk = np.asarray(conductivity_slope(f.values), dtype=float)
    n = dk.shape[0]
    g = f.column.gravity_sign / (2.0 * f.column.dz)
    ab = np.zeros((3, n))
    ab[0, 1:] = g * dk[1:]      # superdiagonal: +K'(u_{i+1})/(2 dz)
    ab[2, :-1] = -g * dk[:-1]   # subdiagonal:   -K'(u_{i-1})/(2 dz)
    ab[1, 0] = -g * dk[0]       # wall rows: mirror face follows the node
    ab[1, -1] = g * dk[-1]
    return ab


# ---------------------------------------------------------------------------
# quadrature and norms
# ---------------------------------------------------------------------------


def integrate(f: Field) -> float:
    """Composite quadrature over [0, L]; exact for constants."""
    u = f.values
    dz = f.column.dz
    return float(dz * (u.sum() + 0.5 * (u[0] + u[-1])))


def l2_norm(f: Field) -> float:
    return float(np.sqrt(integrate(Field(f.values ** 2, f.column))))


def h1_seminorm(f: Field) -> float:
    """Face-based gradient norm with one-sided wall differences.

    Satisfies dz * sum(u * (-laplacian(u))) == h1_seminorm(u)**2 exactly
    (discrete integration by parts on the clamped space).
    """
    u = f.values
    dz = f.column.dz
    total = float(np.sum((u[1:] - u[:-1]) ** 2)) + float(u[0] ** 2 + u[-1] ** 2)
    return float(np.sqrt(total / dz))


# ---------------------------------------------------------------------------
# banded assembly
# ---------------------------------------------------------------------------


def laplacian_banded(column: Column) -> np.ndarray:
    """Clamped Laplacian as a (1,1)-banded matrix, solve_banded layout."""
    n = column.n_cells
    dz2 = column.dz ** 2
    ab = np.zeros((3, n))
    ab[0, 1:] = 1.0 / dz2
    ab[1, :] = -2.0 / dz2
    ab[2, :-1] = 1.0 / dz2
    return ab


def biharmonic_banded(column: Column) -> np.ndarray:
    """Clamped biharmonic as a (2,2)-banded matrix, solve_banded layout."""
    n = column.n_cells
    dz4 = column.dz ** 4
    ab = np.zeros((5, n))
    ab[0, 2:] = 1.0
    ab[1, 1:] = -4.0
    ab[2, :] = 6.0
    ab[2, 0] = ab[2, -1] = 7.0
    ab[3, :-1] = -4.0
    ab[4, :-2] = 1.0
    return ab / dz4


def dense_from_banded(ab: np.ndarray, lower: int, upper: int) -> np.ndarray:
    """Expand a solve_banded-layout matrix to dense (for tests and probes)."""
    n = ab.shape[1]
    out = np.zeros((n, n))
    for d in range(-lower, upper + 1):
        row = upper - d
        if d >= 0:
            out[np.arange(n - d), np.arange(d, n)] = ab[row, d:]
        else:
            out[np.arange(-d, n), np.arange(n + d)] = ab[row, : n + d]
    return out
