"""Sample grids and non-negative spatial density fields."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import (
    FieldParseError,
    InvalidInputError,
    LengthMismatchError,
    NegativeValueError,
)

FIELD_HEADER = ("x_m", "y_m", "density_bps_per_m2")


@dataclass(frozen=True, eq=False)
class SampleGrid:
    """Cell-centred raster over a rectangle; ``points`` are x-major."""

    points: np.ndarray
    weight: float
    area_bounds: tuple
    shape: tuple = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 2)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if len(pts) < 2:
            raise InvalidInputError("a grid needs at least two samples")
        if not self.weight > 0.0:
            raise InvalidInputError("sample weight must be positive")
        x0, y0, x1, y1 = self.area_bounds
        inside = (pts[:, 0] >= x0) & (pts[:, 0] <= x1) & (pts[:, 1] >= y0) & (pts[:, 1] <= y1)
        if not inside.all():
            raise InvalidInputError("grid points must lie inside area_bounds")

    @property
    def size(self):
        return len(self.points)

    @property
    def area(self):
        x0, y0, x1, y1 = self.area_bounds
        return (x1 - x0) * (y1 - y0)

    @property
    def center(self):
        x0, y0, x1, y1 = self.area_bounds
        return 0.5 * (x0 + x1), 0.5 * (y0 + y1)

    @property
    def edge_length(self):
        x0, _, x1, _ = self.area_bounds
        return x1 - x0


def make_grid(edge_length: float, m_per_side: int) -> SampleGrid:
    """Square grid of ``m_per_side**2`` cell centres covering [0, edge]^2."""
    if not (edge_length > 0.0 and math.isfinite(edge_length)):
        raise InvalidInputError("edge_length must be positive")
    if int(m_per_side) != m_per_side or m_per_side < 2:
        raise InvalidInputError("m_per_side must be an integer >= 2")
    m_per_side = int(m_per_side)
    step = edge_length / m_per_side
    centres = (np.arange(m_per_side) + 0.5) * step
    # x-major: x varies slowest
    xx, yy = np.meshgrid(centres, centres, indexing="ij")
    pts = np.column_stack([xx.ravel(), yy.ravel()])
    return SampleGrid(pts, step * step, (0.0, 0.0, float(edge_length), float(edge_length)), (m_per_side, m_per_side))


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Per-sample non-negative density in bit/s/m^2."""

    grid: SampleGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(-1)
        if len(vals) != self.grid.size:
            raise LengthMismatchError(f"{len(vals)} values for a grid of {self.grid.size} samples")
        if not np.all(np.isfinite(vals)):
            raise InvalidInputError("field values must be finite")
        if np.any(vals < 0.0):
            raise NegativeValueError("field values must be non-negative")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def total(self):
        return float(np.sum(self.values) * self.grid.weight)


def _smoothed_white_field(grid: SampleGrid, spread: float, rng) -> np.ndarray:
    """Unit-variance Gaussian field with correlation length 1/sqrt(spread).

    White noise on the raster is filtered by a periodic Gaussian kernel and
    divided by the kernel's L2 norm, so every sample stays N(0, 1).
    """
    if grid.shape is None:
        raise InvalidInputError("smoothing needs a raster grid from make_grid")
    nx, ny = grid.shape
    white = rng.standard_normal((nx, ny))
    step = math.sqrt(grid.weight)
    sigma_px = (1.0 / math.sqrt(spread)) / step
    smooth = ndimage.gaussian_filter(white, sigma_px, mode="wrap")
    impulse = np.zeros((nx, ny))
    impulse[0, 0] = 1.0
    kernel = ndimage.gaussian_filter(impulse, sigma_px, mode="wrap")
    return (smooth / math.sqrt(np.sum(kernel * kernel))).ravel()


def lognormal_traffic(
    grid: SampleGrid,
    location: float,
    scale: float,
    spread: float,
    total: float,
    seed: int,
) -> ScalarField:
    """Log-normal density field rescaled to ``total`` bit/s over the area.

    ``location`` and ``scale`` are the mean and standard deviation of the
    natural log of the density; ``spread`` (1/m^2) sets the correlation length
    of the log-field.
    """
    for name, v in (("scale", scale), ("spread", spread), ("total", total)):
        if not (v > 0.0 and math.isfinite(v)):
            raise InvalidInputError(f"{name} must be positive and finite")
    if not math.isfinite(location):
        raise InvalidInputError("location must be finite")
    rng = np.random.default_rng(seed)
    z = _smoothed_white_field(grid, spread, rng)
    log_density = scale * z
    # location only shifts the log-field; factor it out before exp to avoid overflow
    density = np.exp(log_density - log_density.max())
    field = ScalarField(grid, density)
    return rescale_total(field, total)


def rescale_total(field: ScalarField, new_total: float) -> ScalarField:
    if not (new_total >= 0.0 and math.isfinite(new_total)):
        raise InvalidInputError("new_total must be finite and non-negative")
    current = field.total
    if current <= 0.0:
        if new_total == 0.0:
            return field
        raise InvalidInputError("cannot rescale a zero field to a positive total")
    return ScalarField(field.grid, field.values * (new_total / current))


def save_field(field: ScalarField, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FIELD_HEADER)
        for (x, y), v in zip(field.grid.points, field.values):
            writer.writerow([f"{x:.17g}", f"{y:.17g}", f"{v:.17g}"])


def load_field(path, grid: SampleGrid) -> ScalarField:
    """Read a field written by :func:`save_field`; rows follow grid order."""
    values = []
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or tuple(h.strip() for h in header) != FIELD_HEADER:
                raise FieldParseError(f"{path}: expected header {','.join(FIELD_HEADER)}")
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 3:
                    raise FieldParseError(f"{path}:{lineno}: expected 3 columns")
                try:
                    values.append(float(row[2]))
                except ValueError as exc:
                    raise FieldParseError(f"{path}:{lineno}: {exc}") from None
    except OSError as exc:
        raise FieldParseError(str(exc)) from exc
    if len(values) != grid.size:
        raise LengthMismatchError(f"{path}: {len(values)} rows for a grid of {grid.size} samples")
    arr = np.array(values)
    if np.any(arr < 0.0):
        raise NegativeValueError(f"{path}: negative density")
    return ScalarField(grid, arr)
