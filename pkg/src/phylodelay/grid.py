"""
Regular time grid and the piecewise-constant log effective population size field.

Time runs backwards from the analysis time (conventionally 0). Cell ``d`` is the
half-open interval ``(x_d, x_{d+1}]``; the grid start itself belongs to the first
cell.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError

DEFAULT_CELL_WIDTH = 2.0
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Grid:
    start: float
    end: float
    cell_width: float
    boundaries: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=float)
        if b.ndim != 1 or b.size < 2:
            raise ConfigurationError("a grid needs at least two boundaries")
        steps = np.diff(b)
        if np.any(steps <= 0):
            raise ConfigurationError("grid boundaries must be strictly increasing")
        if not np.allclose(steps, self.cell_width, rtol=1e-9, atol=0.0):
            raise ConfigurationError("grid boundaries must be uniformly spaced")
        b.setflags(write=False)
        object.__setattr__(self, "boundaries", b)

    @property
    def n_cells(self) -> int:
        return self.boundaries.size - 1

    @property
    def lower(self) -> np.ndarray:
        return self.boundaries[:-1]

    @property
    def upper(self) -> np.ndarray:
        return self.boundaries[1:]

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.boundaries[:-1] + self.boundaries[1:])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.boundaries)

    def contains(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return (t >= self.boundaries[0]) & (t <= self.boundaries[-1])

    def cell_index(self, t) -> np.ndarray | int:
        """
        Index of the cell ``(x_d, x_{d+1}]`` holding each time in ``t``.

        :raises DomainError: if any time lies outside ``[x_1, x_D]``.
        """
        arr = np.asarray(t, dtype=float)
        if not np.all(self.contains(arr)):
            bad = arr[~self.contains(arr)]
            raise DomainError(
                f"time(s) {bad.ravel()[:5].tolist()} outside grid span "
                f"[{self.boundaries[0]}, {self.boundaries[-1]}]"
            )
        idx = np.searchsorted(self.boundaries, arr, side="left") - 1
        idx = np.clip(idx, 0, self.n_cells - 1)
        if idx.ndim == 0:
            return int(idx)
        return idx

    def overlap(self, lo: float, hi: float) -> np.ndarray:
        """Length of ``[lo, hi]`` falling in each cell."""
        return np.clip(
            np.minimum(self.upper, hi) - np.maximum(self.lower, lo), 0.0, None
        )

    def refine(self, factor: int = 2) -> "Grid":
        """Grid with every cell split into ``factor`` equal children."""
        width = self.cell_width / factor
        n = self.n_cells * factor
        return Grid(
            start=self.start,
            end=self.end,
            cell_width=width,
            boundaries=self.boundaries[0] + width * np.arange(n + 1),
        )

    def to_dict(self) -> dict:
        return {
            "start": self.start,
            "end": self.end,
            "cell_width": self.cell_width,
            "boundaries": self.boundaries.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        b = np.asarray(d["boundaries"], dtype=float)
        width = float(d.get("cell_width", b[1] - b[0]))
        return cls(
            start=float(d.get("start", b[0])),
            end=float(d.get("end", b[-1])),
            cell_width=width,
            boundaries=b,
        )


def build_grid(start: float, end: float, cell_width: float = DEFAULT_CELL_WIDTH) -> Grid:
    """
    Regular grid from ``start`` covering ``end``.

    The number of boundaries is ``ceil((end - start) / cell_width) + 1``; the
    last cell is padded past ``end`` when the width does not divide the span.
    """
    if not (cell_width > 0 and math.isfinite(cell_width)):
        raise ConfigurationError(f"cell_width must be positive, got {cell_width}")
    if not end > start:
        raise ConfigurationError(f"grid end ({end}) must exceed start ({start})")
    ratio = (end - start) / cell_width
    n_cells = math.ceil(ratio - 1e-9 * max(1.0, ratio))
    n_cells = max(n_cells, 1)
    boundaries = start + cell_width * np.arange(n_cells + 1, dtype=float)
    return Grid(start=float(start), end=float(end), cell_width=float(cell_width),
                boundaries=boundaries)


@dataclass(frozen=True)
class LatentField:
    gamma: np.ndarray
    grid: Grid

    def __post_init__(self):
        g = np.array(self.gamma, dtype=float)
        if g.shape != (self.grid.n_cells,):
            raise ConfigurationError(
                f"field has {g.size} values for a grid of {self.grid.n_cells} cells"
            )
        with np.errstate(over="ignore", under="ignore"):
            ne = np.exp(g)
        if not np.all(np.isfinite(ne) & (ne > 0)):
            raise DomainError("exp(gamma) must be strictly positive and finite")
        g.setflags(write=False)
        object.__setattr__(self, "gamma", g)

    @property
    def ne(self) -> np.ndarray:
        return np.exp(self.gamma)

    def refine(self, factor: int = 2) -> "LatentField":
        return LatentField(np.repeat(self.gamma, factor), self.grid.refine(factor))

    def to_json(self) -> str:
        return json.dumps(
            {"boundaries": self.grid.boundaries.tolist(), "gamma": self.gamma.tolist()}
        )

    @classmethod
    def from_json(cls, text: str) -> "LatentField":
        d = json.loads(text)
        return cls(np.asarray(d["gamma"], dtype=float), Grid.from_dict(d))


@dataclass(frozen=True)
class FieldPrior:
    """Random-walk prior settings: Gamma(shape, rate) on the precision and N(0, var) on the first cell."""

    kappa_shape: float = 0.001
    kappa_rate: float = 0.001
    sigma_gamma_sq: float = 100.0

    def __post_init__(self):
        for name in ("kappa_shape", "kappa_rate", "sigma_gamma_sq"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ConfigurationError(f"{name} must be positive, got {value}")


def field_at(field: LatentField, t):
    """Effective population size ``exp(gamma_d)`` at time(s) ``t``."""
    idx = field.grid.cell_index(t)
    values = np.exp(field.gamma[idx])
    if np.ndim(values) == 0:
        return float(values)
    return values


def _gamma_array(field) -> np.ndarray:
    if isinstance(field, LatentField):
        return field.gamma
    return np.asarray(field, dtype=float)


def log_prior_gamma(field, kappa: float, prior: FieldPrior | None = None) -> float:
    """
    Log density of the first-order random walk, normalizing constants included.

    ``gamma_1 ~ N(0, sigma_gamma_sq)`` and ``gamma_d | gamma_{d-1} ~ N(gamma_{d-1}, 1/kappa)``.
    """
    if not kappa > 0:
        raise ConfigurationError(f"kappa must be positive, got {kappa}")
    prior = prior or FieldPrior()
    g = _gamma_array(field)
    s2 = prior.sigma_gamma_sq
    lp = -0.5 * (_LOG_2PI + math.log(s2)) - 0.5 * g[0] ** 2 / s2
    inc = np.diff(g)
    if inc.size:
        lp += 0.5 * inc.size * (math.log(kappa) - _LOG_2PI) - 0.5 * kappa * float(inc @ inc)
    return float(lp)


def log_prior_gamma_grad(field, kappa: float, prior: FieldPrior | None = None) -> np.ndarray:
    """Gradient of :func:`log_prior_gamma` with respect to ``gamma``."""
    prior = prior or FieldPrior()
    g = _gamma_array(field)
    grad = np.zeros_like(g)
    grad[0] = -g[0] / prior.sigma_gamma_sq
    inc = np.diff(g)
    grad[1:] -= kappa * inc
    grad[:-1] += kappa * inc
    return grad
