"""Path loss and the spectral-efficiency radial basis functions.

Every station radiates an SE "neuron"

    S_n(loc) = log2(1 + P_n / (B_max * noise_psd * L_n(loc)))

whose bandwidth-weighted sum lower-bounds the Shannon capacity at ``loc``.
The scalar functions mirror the formulas one point at a time; the ``*_field``
variants evaluate a whole sample grid at once and are what the metrics use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidInputError

LN2 = math.log(2.0)

# 35 dB at 1 m with 38 dB/decade; beta keeps L finite at d = 0.
DEFAULT_ALPHA = 3.8
DEFAULT_GAMMA = 10.0 ** 3.5
DEFAULT_BETA = 10.0 ** 3.5


def _finite(*values):
    return all(math.isfinite(v) for v in values)


@dataclass(frozen=True)
class Point2D:
    x: float
    y: float

    def __post_init__(self):
        if not _finite(self.x, self.y):
            raise InvalidInputError(f"non-finite coordinates ({self.x}, {self.y})")

    def as_array(self):
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class PathLossParams:
    """L(d) = gamma * (d^T shape d + height^2)^(alpha/2) + beta.

    ``height`` (m) is the antenna height above receivers; with the default 0
    the model is the planar one and L(0) = beta.
    """

    alpha: float = DEFAULT_ALPHA
    beta: float = DEFAULT_BETA
    gamma: float = DEFAULT_GAMMA
    shape: tuple = ((1.0, 0.0), (0.0, 1.0))
    height: float = 0.0

    def __post_init__(self):
        if not _finite(self.alpha, self.beta, self.gamma, self.height):
            raise InvalidInputError("path loss parameters must be finite")
        if self.alpha <= 2.0:
            raise InvalidInputError(f"alpha must exceed 2, got {self.alpha}")
        if self.beta <= 0.0 or self.gamma <= 0.0:
            raise InvalidInputError("beta and gamma must be positive")
        if self.height < 0.0:
            raise InvalidInputError("height must be non-negative")
        g = np.asarray(self.shape, dtype=float)
        if g.shape != (2, 2) or not np.all(np.isfinite(g)):
            raise InvalidInputError("shape must be a finite 2x2 matrix")
        if abs(g[0, 1] - g[1, 0]) > 1e-12 * max(1.0, abs(g).max()):
            raise InvalidInputError("shape must be symmetric")
        if g[0, 0] <= 0.0 or np.linalg.det(g) <= 0.0:
            raise InvalidInputError("shape must be positive definite")
        object.__setattr__(self, "shape", tuple(tuple(float(v) for v in row) for row in g))

    @classmethod
    def from_db(cls, intercept_db=35.0, slope_db=38.0, beta=None, shape=None, height=0.0):
        """Build from the ``intercept + slope*log10(d)`` dB model (d in meters)."""
        gamma = 10.0 ** (intercept_db / 10.0)
        return cls(
            alpha=slope_db / 10.0,
            beta=gamma if beta is None else beta,
            gamma=gamma,
            shape=((1.0, 0.0), (0.0, 1.0)) if shape is None else shape,
            height=height,
        )

    @property
    def shape_matrix(self):
        return np.array(self.shape, dtype=float)

    @property
    def isotropic(self):
        return self.shape == ((1.0, 0.0), (0.0, 1.0))

    @property
    def height_sq(self):
        return self.height * self.height


@dataclass(frozen=True)
class BaseStation:
    location: Point2D
    bandwidth: float
    tx_power: float
    loss: PathLossParams = field(default_factory=PathLossParams)

    def __post_init__(self):
        if not _finite(self.bandwidth, self.tx_power):
            raise InvalidInputError("bandwidth and tx_power must be finite")
        if self.bandwidth < 0.0 or self.tx_power < 0.0:
            raise InvalidInputError("bandwidth and tx_power must be non-negative")


@dataclass(frozen=True)
class NetworkDesign:
    """Ordered stations; budget feasibility is checked per scenario, not here."""

    stations: tuple

    def __post_init__(self):
        stations = tuple(self.stations)
        if len(stations) < 1:
            raise InvalidInputError("a design needs at least one station")
        object.__setattr__(self, "stations", stations)

    def __len__(self):
        return len(self.stations)

    @property
    def locations(self):
        return np.array([[s.location.x, s.location.y] for s in self.stations], dtype=float)

    @property
    def bandwidths(self):
        return np.array([s.bandwidth for s in self.stations], dtype=float)

    @property
    def powers(self):
        return np.array([s.tx_power for s in self.stations], dtype=float)

    @classmethod
    def from_arrays(cls, locations, bandwidths, powers, loss=None):
        loss = loss or PathLossParams()
        locations = np.asarray(locations, dtype=float).reshape(-1, 2)
        return cls(
            tuple(
                BaseStation(Point2D(float(x), float(y)), float(b), float(p), loss)
                for (x, y), b, p in zip(locations, np.asarray(bandwidths, float), np.asarray(powers, float))
            )
        )

    def replace_arrays(self, locations=None, bandwidths=None, powers=None):
        return NetworkDesign.from_arrays(
            self.locations if locations is None else locations,
            self.bandwidths if bandwidths is None else bandwidths,
            self.powers if powers is None else powers,
            self.stations[0].loss,
        )

    def to_dict(self):
        return {
            "stations": [
                {
                    "x_m": s.location.x,
                    "y_m": s.location.y,
                    "bandwidth_hz": s.bandwidth,
                    "tx_power_w": s.tx_power,
                }
                for s in self.stations
            ]
        }


def path_loss(loc: Point2D, bs_loc: Point2D, params: PathLossParams) -> float:
    """Linear path loss between a receiver and a station; always >= beta."""
    dx = loc.x - bs_loc.x
    dy = loc.y - bs_loc.y
    (g11, g12), (_, g22) = params.shape
    q = g11 * dx * dx + 2.0 * g12 * dx * dy + g22 * dy * dy + params.height_sq
    return params.gamma * q ** (0.5 * params.alpha) + params.beta


def se_rbf(bs: BaseStation, loc: Point2D, b_max: float, noise_psd: float) -> float:
    """SE-based RBF in bit/s/Hz."""
    if not (b_max > 0.0 and noise_psd > 0.0):
        raise InvalidInputError("b_max and noise_psd must be positive")
    lam = b_max * noise_psd * path_loss(loc, bs.location, bs.loss)
    return math.log1p(bs.tx_power / lam) / LN2


def capacity_lower_bound(design: NetworkDesign, loc: Point2D, b_max: float, noise_psd: float) -> float:
    """Sum of B_n * S_n at ``loc`` (bit/s)."""
    return math.fsum(s.bandwidth * se_rbf(s, loc, b_max, noise_psd) for s in design.stations)


def capacity_exact(design: NetworkDesign, loc: Point2D, b_max: float, noise_psd: float) -> float:
    """Shannon capacity with each station's own bandwidth in the noise term.

    A station with zero bandwidth contributes its B -> 0 limit, which is 0.
    ``b_max`` is accepted for signature symmetry with the lower bound.
    """
    if not (b_max > 0.0 and noise_psd > 0.0):
        raise InvalidInputError("b_max and noise_psd must be positive")
    terms = []
    for s in design.stations:
        if s.bandwidth == 0.0:
            continue
        snr = s.tx_power / (path_loss(loc, s.location, s.loss) * noise_psd * s.bandwidth)
        terms.append(s.bandwidth * math.log1p(snr) / LN2)
    return math.fsum(terms)


# -- vectorised evaluation over a sample grid ---------------------------------


def path_loss_matrix(points, locations, params: PathLossParams, shadow=None):
    """(N, M) loss between stations ``locations`` (N, 2) and ``points`` (M, 2).

    ``shadow`` multiplies L elementwise (log-normal shadowing draws).
    """
    points = np.asarray(points, dtype=float)
    locations = np.asarray(locations, dtype=float)
    if not (np.all(np.isfinite(points)) and np.all(np.isfinite(locations))):
        raise InvalidInputError("non-finite coordinates")
    dx = points[None, :, 0] - locations[:, None, 0]
    dy = points[None, :, 1] - locations[:, None, 1]
    (g11, g12), (_, g22) = params.shape
    q = g11 * dx * dx + 2.0 * g12 * dx * dy + g22 * dy * dy + params.height_sq
    loss = params.gamma * q ** (0.5 * params.alpha) + params.beta
    if shadow is not None:
        loss = loss * shadow
    return loss


def design_loss_matrix(points, design: NetworkDesign, shadow=None):
    """Path loss matrix honouring per-station path loss parameters."""
    models = {s.loss for s in design.stations}
    if len(models) == 1:
        return path_loss_matrix(points, design.locations, design.stations[0].loss, shadow)
    rows = [path_loss_matrix(points, design.locations[n : n + 1], s.loss)[0] for n, s in enumerate(design.stations)]
    loss = np.array(rows)
    return loss if shadow is None else loss * shadow


def se_matrix(points, design: NetworkDesign, b_max, noise_psd, shadow=None):
    """(N, M) SE-based RBF values for every station/sample pair."""
    loss = design_loss_matrix(points, design, shadow)
    return np.log1p(design.powers[:, None] / (b_max * noise_psd * loss)) / LN2


def capacity_lower_bound_field(points, design: NetworkDesign, b_max, noise_psd, shadow=None):
    return design.bandwidths @ se_matrix(points, design, b_max, noise_psd, shadow)


def capacity_exact_field(points, design: NetworkDesign, b_max, noise_psd, shadow=None):
    loss = design_loss_matrix(points, design, shadow)
    bw = design.bandwidths
    out = np.zeros(loss.shape[1])
    for n in np.flatnonzero(bw > 0.0):
        out += bw[n] * np.log1p(design.powers[n] / (loss[n] * noise_psd * bw[n])) / LN2
    return out


def random_design(n_bs: int, bounds: Sequence[float], b_max: float, p_max: float, rng, loss=None):
    """Uniform locations, equal bandwidth split, half the power budget."""
    x0, y0, x1, y1 = bounds
    xy = np.column_stack([rng.uniform(x0, x1, n_bs), rng.uniform(y0, y1, n_bs)])
    return NetworkDesign.from_arrays(
        xy, np.full(n_bs, b_max / n_bs), np.full(n_bs, 0.5 * p_max / n_bs), loss
    )
