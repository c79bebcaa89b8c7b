"""Periodic potentials with a power-law well, hypothesis checks and the spectral bottom.

The canonical family is

    V(x) = kappa * (sum_i sin^2(pi (x_i - x0_i)) / pi^2) ** (p / 2),

which is 1-periodic in each axis, vanishes exactly on ``x0 + Z^d`` and behaves
like ``kappa |x - x0|^p`` near the well.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .spectral import Field, Grid


class PotentialError(ValueError):
    pass


KINDS = ("zero", "periodic_power", "samples")


@dataclass(frozen=True)
class PotentialSpec:
    kind: str = "zero"
    kappa: float = 1.0
    p: float = 2.0
    x0: tuple[float, ...] = (0.0,)
    cells_per_period: Optional[int] = None
    samples: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise PotentialError(f"unknown potential kind {self.kind!r}; expected one of {KINDS}")
        object.__setattr__(self, "x0", tuple(float(c) for c in np.atleast_1d(self.x0)))
        if self.kind == "periodic_power":
            if not self.kappa > 0:
                raise PotentialError(f"kappa must be positive, got {self.kappa}")
            if any(not 0 <= c < 1 for c in self.x0):
                raise PotentialError(f"x0 components must lie in [0, 1), got {self.x0}")
        if self.kind == "samples" and self.samples is None:
            raise PotentialError("kind 'samples' needs a samples array")

    def check_exponent(self, d: int, s: float) -> None:
        """The well exponent must satisfy 0 < p < d + 4s."""
        if self.kind != "periodic_power":
            return
        if not 0 < self.p < d + 4 * s:
            raise PotentialError(
                f"well exponent p = {self.p} must satisfy 0 < p < d + 4s = {d + 4 * s:g} (V3)"
            )

    def x0_for(self, d: int) -> np.ndarray:
        x0 = np.asarray(self.x0, dtype=float)
        if x0.size == 1 and d > 1:
            x0 = np.repeat(x0, d)
        if x0.size != d:
            raise PotentialError(f"x0 has {x0.size} components, grid has dimension {d}")
        return x0

    def to_dict(self) -> dict:
        out = {"kind": self.kind}
        if self.kind == "periodic_power":
            out.update(kappa=self.kappa, p=self.p, x0=list(self.x0))
            if self.cells_per_period is not None:
                out["cells_per_period"] = self.cells_per_period
        return out


def _check_torus(spec: PotentialSpec, grid: Grid) -> None:
    periods = grid.length
    if abs(periods - round(periods)) > 1e-9 * max(1.0, periods) or round(periods) < 1:
        raise PotentialError(f"side length L = {grid.length} is not an integer number of unit periods")
    if spec.cells_per_period is not None:
        cpp = spec.cells_per_period
        if grid.n % cpp or cpp * round(periods) != grid.n:
            raise PotentialError(
                f"cells_per_period = {cpp} does not match N = {grid.n} over {round(periods)} periods"
            )


def snap_well(spec: PotentialSpec, grid: Grid) -> tuple[np.ndarray, float]:
    """Move ``x0`` onto the nearest grid point (mod 1); returns (snapped x0, snap distance)."""
    x0 = spec.x0_for(grid.dim)
    # grid points sit at -L/2 + j h; with integer L these repeat every period
    base = -grid.length / 2
    j = np.round((x0 - base) / grid.h)
    snapped = np.mod(base + j * grid.h, 1.0)
    snapped[np.isclose(snapped, 1.0, rtol=0, atol=1e-12)] = 0.0
    dist = float(np.linalg.norm(((snapped - x0) + 0.5) % 1.0 - 0.5))
    return snapped, dist


def power_well(coords, x0, kappa: float, p: float) -> np.ndarray:
    acc = sum(np.sin(np.pi * (c - c0)) ** 2 for c, c0 in zip(coords, x0)) / np.pi**2
    return kappa * acc ** (p / 2)


def sample_potential(spec: PotentialSpec, grid: Grid) -> Field:
    """Potential values on the grid; the well is snapped onto a grid point first."""
    if spec.kind == "zero":
        return Field(grid, np.zeros(grid.shape))
    if spec.kind == "samples":
        vals = np.asarray(spec.samples)
        if np.iscomplexobj(vals):
            raise PotentialError("potential samples must be real")
        return Field(grid, vals.astype(float))
    _check_torus(spec, grid)
    x0, _ = snap_well(spec, grid)
    if not _h_divides_one(grid):
        return Field(grid, power_well(grid.coords, x0, spec.kappa, spec.p))
    # integer offsets mod the period: exact periodicity and exact zeros on the lattice
    per = round(1 / grid.h)
    offsets = [np.mod(np.round((c - c0) / grid.h).astype(np.int64), per) * grid.h
               for c, c0 in zip(grid.coords, x0)]
    vals = power_well(offsets, np.zeros(grid.dim), spec.kappa, spec.p)
    on_lattice = np.logical_and.reduce([o == 0 for o in offsets])
    return Field(grid, np.where(on_lattice, 0.0, vals))


def _h_divides_one(grid: Grid) -> bool:
    m = 1 / grid.h
    return abs(m - round(m)) < 1e-9


def well_points(spec: PotentialSpec, grid: Grid) -> list[np.ndarray]:
    """All lattice copies of the snapped well inside the torus."""
    if spec.kind != "periodic_power":
        return []
    x0, _ = snap_well(spec, grid)
    half = grid.length / 2
    per_axis = []
    for c in x0:
        lo = math.ceil(-half - c - 1e-12)
        hi = math.floor(half - c - 1e-12)
        per_axis.append([c + z for z in range(lo, hi + 1) if -half <= c + z < half])
    if grid.dim == 1:
        return [np.array([p]) for p in per_axis[0]]
    return [np.array([a, b]) for a in per_axis[0] for b in per_axis[1]]


@dataclass(frozen=True)
class WellFit:
    p_hat: float
    kappa_hat: float
    radii: int


def validate_v3(spec: PotentialSpec, grid: Grid) -> WellFit:
    """Log-log fit of V against the distance from the well over ``[2h, 0.1]``.

    Samples are taken along the first axis through the snapped well.
    """
    if spec.kind != "periodic_power":
        raise PotentialError("the (V3) fit needs a periodic_power potential")
    x0, _ = snap_well(spec, grid)
    r = grid.h * np.arange(2, int(0.1 / grid.h + 1e-9) + 1)
    if r.size < 8:
        raise PotentialError(f"fit window [2h, 0.1] holds {r.size} radii with h = {grid.h}; need 8")
    pts = [x0[0] + r] + [np.full_like(r, c) for c in x0[1:]]
    v = power_well(pts, x0, spec.kappa, spec.p)
    slope, icept = np.polyfit(np.log(r), np.log(v), 1)
    return WellFit(float(slope), float(np.exp(icept)), int(r.size))


@dataclass
class SpectralBottomReport:
    value: float
    residual: float
    iterations: int
    eigenfield: Field
    converged: bool

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "residual": self.residual,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def spectral_bottom(V: Field, s: float, cfg=None) -> SpectralBottomReport:
    """Lowest Rayleigh quotient of ``(-Delta)^s + V`` over unit-mass fields.

    Runs the constrained flow from :mod:`fracnls.solvers` with the nonlinear term switched off.
    """
    from .solvers import SolverConfig, minimize_rayleigh

    if not V.is_real:
        raise PotentialError("potential must be real")
    if not 0 < s <= 1:
        raise ValueError(f"s must lie in (0, 1], got {s}")
    cfg = cfg or SolverConfig()
    u, rep = minimize_rayleigh(V, s, cfg)
    return SpectralBottomReport(2 * rep.energy.total, rep.residual, rep.iterations, u, rep.converged)


@dataclass(frozen=True)
class V2Check:
    holds: bool
    margin: float
    min_v: float
    bottom: float
    residual: float

    def __bool__(self) -> bool:
        return self.holds

    def to_dict(self) -> dict:
        return {"holds": self.holds, "margin": self.margin, "min_v": self.min_v,
                "bottom": self.bottom, "residual": self.residual}


def validate_v2(V: Field, s: float, cfg=None) -> V2Check:
    """Strict gap ``min V < inf sigma((-Delta)^s + V)`` with a tolerance from the eigen-residual."""
    rep = spectral_bottom(V, s, cfg)
    vmin = float(np.min(V.values))
    tol = 10 * rep.residual + 1e-10 * max(1.0, abs(vmin))
    margin = rep.value - vmin
    return V2Check(bool(margin > tol), margin, vmin, rep.value, rep.residual)
