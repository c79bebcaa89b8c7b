"""Energy, Weinstein functional, sharp Gagliardo-Nirenberg constant and related diagnostics.

All integrals use the rectangle rule of :mod:`fracnls.spectral`. The energy is

    E(u) = 1/2 ||(-Delta)^{s/2} u||^2 + 1/2 int V |u|^2 - ||u||_{alpha+2}^{alpha+2} / (alpha+2).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.fft as sfft

from .spectral import (
    Field,
    Grid,
    boundary_tail_fraction,
    half_frac_norm_sq,
    half_frac_norm_sq_values,
    mass,
)


class AdmissibilityError(ValueError):
    """Parameters outside the range where the energy is well defined."""


def sobolev_exponent(d: int, s: float) -> float:
    """Upper limit for alpha: ``4s/(d-2s)`` when ``d > 2s``, else infinity."""
    return 4 * s / (d - 2 * s) if d > 2 * s else math.inf


def critical_exponent(d: int, s: float) -> float:
    """The mass-critical power ``4s/d``."""
    return 4 * s / d


def check_alpha(d: int, s: float, alpha: float) -> None:
    top = sobolev_exponent(d, s)
    if not alpha > 0:
        raise AdmissibilityError(f"alpha must be positive, got {alpha}")
    if alpha >= top:
        raise AdmissibilityError(
            f"alpha = {alpha} is not below 4s/(d-2s) = {top:g} (d={d}, s={s}); "
            "the energy is not defined on H^s"
        )


@dataclass(frozen=True)
class EnergyBreakdown:
    kinetic: float
    potential: float
    nonlinear: float

    @property
    def total(self) -> float:
        return self.kinetic + self.potential - self.nonlinear

    def to_dict(self) -> dict:
        out = asdict(self)
        out["total"] = self.total
        return out


def energy_parts(values: np.ndarray, grid: Grid, v_values, s: float, alpha: float) -> EnergyBreakdown:
    """Array-level energy used by the solvers; no validation."""
    dens = np.abs(values) ** 2
    kin = 0.5 * half_frac_norm_sq_values(values, grid, s)
    pot = 0.0 if v_values is None else 0.5 * float(np.sum(v_values * dens)) * grid.cell_volume
    nl = float(np.sum(dens ** (alpha / 2 + 1))) * grid.cell_volume / (alpha + 2)
    return EnergyBreakdown(kin, pot, nl)


def _potential_values(V, grid: Grid):
    if V is None:
        return None
    if isinstance(V, Field):
        if V.grid != grid:
            raise ValueError("potential and field live on different grids")
        if not V.is_real:
            raise ValueError("potential must be real-valued")
        return V.values
    if np.isscalar(V):
        return None if V == 0 else np.full(grid.shape, float(V))
    raise TypeError("V must be a Field, a scalar or None")


def energy(u: Field, V, s: float, alpha: float) -> EnergyBreakdown:
    """Energy of ``u`` split into kinetic, potential and nonlinear parts.

    ``V`` may be a real :class:`Field`, a scalar constant, or ``None``/0 for no potential.
    """
    check_alpha(u.grid.dim, s, alpha)
    return energy_parts(u.values, u.grid, _potential_values(V, u.grid), s, alpha)


def lp_power(u: Field, q: float) -> float:
    """``||u||_q^q``."""
    return float(np.sum(np.abs(u.values) ** q)) * u.grid.cell_volume


def weinstein(u: Field, s: float, alpha: float) -> float:
    """Scale-invariant quotient whose infimum over nonzero ``u`` is ``1/C_opt``."""
    d = u.grid.dim
    check_alpha(d, s, alpha)
    m = mass(u)
    if m == 0:
        raise ValueError("Weinstein functional is undefined for the zero field")
    kin = half_frac_norm_sq(u, s)
    e1 = d * alpha / (2 * s)
    # ||grad_s u||^{e1} ||u||^{alpha+2-e1} with norms (not squares)
    num = kin ** (e1 / 2) * m ** ((alpha + 2 - e1) / 2)
    return num / lp_power(u, alpha + 2)


def gn_closed_form(q_mass: float, d: int, s: float, alpha: float) -> float:
    """Sharp constant expressed through ``||Q_alpha||_2^2`` of the ground state."""
    da = d * alpha
    ta = 2 * s * (alpha + 2)
    return ((ta - da) / da) ** (da / (4 * s)) * (ta / (ta - da)) * q_mass ** (-alpha / 2)


@dataclass(frozen=True)
class GNConstant:
    c_opt_j: float
    c_opt_closed: float

    @property
    def rel_diff(self) -> float:
        return abs(self.c_opt_j - self.c_opt_closed) / self.c_opt_closed

    def to_dict(self) -> dict:
        return {"c_opt_j": self.c_opt_j, "c_opt_closed": self.c_opt_closed, "rel_diff": self.rel_diff}


class NotGroundStateError(ValueError):
    pass


def gn_constant(q: Field, s: float, alpha: float, strict: bool = True) -> GNConstant:
    """``1/J(Q)`` next to the closed form; with ``strict`` a gap above 1e-2 raises."""
    out = GNConstant(1.0 / weinstein(q, s, alpha), gn_closed_form(mass(q), q.grid.dim, s, alpha))
    if strict and out.rel_diff > 1e-2:
        raise NotGroundStateError(
            f"GN constants disagree by {out.rel_diff:.2e}; the input is not a converged ground state"
        )
    return out


@dataclass(frozen=True)
class PohozaevReport:
    r1: float
    r2: float
    kinetic: float  # ||(-Delta)^{s/2} Q||^2
    lp: float  # ||Q||_{alpha+2}^{alpha+2}
    mass: float
    tail_fraction: float

    @property
    def threshold(self) -> float:
        return 1e-3 + self.tail_fraction

    @property
    def passes(self) -> bool:
        return self.r1 <= self.threshold and self.r2 <= self.threshold

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passes"] = self.passes
        out["verdict"] = "ground state" if self.passes else "not a ground state"
        return out


def pohozaev_check(q: Field, s: float, alpha: float) -> PohozaevReport:
    """Relative residuals of the two identities tying kinetic, L^{alpha+2} and L^2 norms.

    r1 compares the kinetic term with ``d alpha / (2s(alpha+2))`` times the
    L^{alpha+2} term, r2 with ``d alpha / (4s - (d-2s) alpha)`` times the mass.
    """
    d = q.grid.dim
    check_alpha(d, s, alpha)
    kin = half_frac_norm_sq(q, s)
    lp = lp_power(q, alpha + 2)
    m = mass(q)
    if m == 0:
        raise ValueError("zero field")
    c1 = d * alpha / (2 * s * (alpha + 2))
    c2 = d * alpha / (4 * s - (d - 2 * s) * alpha)
    scale = max(kin, 1e-300)
    r1 = abs(kin - c1 * lp) / scale
    r2 = abs(kin - c2 * m) / scale
    return PohozaevReport(r1, r2, kin, lp, m, boundary_tail_fraction(q))


def constant_state_energy(a: float, d: int, alpha: float, length: float, v_mean: float = 0.0) -> float:
    """Energy of the spatially constant field of mass ``a`` on a torus of side ``length``.

    On the whole space a spread-out field of fixed mass has energy tending to
    zero; on a torus the constant state keeps ``-a^{1+alpha/2} / ((alpha+2) L^{d alpha/2})``.
    That value is the floor a free minimization reaches below the critical
    mass, and it vanishes as ``L`` grows.
    """
    vol = float(length) ** d
    return 0.5 * v_mean * a - a ** (1 + alpha / 2) / ((alpha + 2) * vol ** (alpha / 2))


def critical_mass(q: Field) -> float:
    """``a* = ||Q||_2^2`` for the mass-critical ground state ``Q``."""
    return mass(q)


def concentration_function(u: Field, radius: float) -> float:
    """Largest mass inside any ball of the given radius centred on a grid point."""
    g = u.grid
    if not 0 < radius < g.length / 2:
        raise ValueError(f"radius must lie in (0, L/2) = (0, {g.length / 2}), got {radius}")
    dens = np.abs(u.values) ** 2
    ball = (g.radius <= radius).astype(float)
    # centre the indicator at index 0 for circular correlation
    ball = np.fft.ifftshift(ball)
    conv = sfft.irfftn(sfft.rfftn(dens) * np.conj(sfft.rfftn(ball)), s=g.shape)
    val = float(np.max(conv)) * g.cell_volume
    return min(max(val, 0.0), mass(u))


@dataclass(frozen=True)
class DecayFit:
    exponent: float
    prefactor: float
    window: tuple[float, float]
    samples: int
    steepening: float  # outer-half slope minus inner-half slope

    @property
    def power_law(self) -> bool:
        return abs(self.steepening) <= 0.25 * abs(self.exponent)

    def to_dict(self) -> dict:
        return {
            "exponent": self.exponent,
            "prefactor": self.prefactor,
            "window": list(self.window),
            "samples": self.samples,
            "steepening": self.steepening,
            "power_law": self.power_law,
        }


def radial_maximum(u: Field) -> tuple[np.ndarray, np.ndarray]:
    """Radii and the max of ``|u|`` over each radial bin of width ``h`` (1D: the samples themselves)."""
    g = u.grid
    if g.dim == 1:
        # fold the two sides onto distance i*h
        vals = np.abs(u.values)
        n0 = g.n // 2
        right = vals[n0 + 1 :]
        left = vals[n0 - 1 : 0 : -1]
        m = min(right.size, left.size)
        return g.x1d[n0 + 1 : n0 + 1 + m], np.maximum(right[:m], left[:m])
    a = np.abs(u.values).ravel()
    bins = np.floor(g.radius.ravel() / g.h).astype(int)
    nb = bins.max() + 1
    vmax = np.full(nb, -np.inf)
    np.maximum.at(vmax, bins, a)
    centers = (np.arange(nb) + 0.5) * g.h
    ok = np.isfinite(vmax)
    return centers[ok], vmax[ok]


def _loglog_fit(r: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    slope, icept = np.polyfit(np.log(r), np.log(y), 1)
    return float(slope), float(math.exp(icept))


def decay_fit(q: Field, window: tuple[float, float]) -> DecayFit:
    """Least-squares power law ``|Q| ~ C r^p`` over ``r_lo <= r <= r_hi``."""
    g = q.grid
    lo, hi = map(float, window)
    if not 0 < lo < hi < g.length / 2:
        raise ValueError(f"window must satisfy 0 < r_lo < r_hi < L/2, got {window}")
    r, v = radial_maximum(q)
    sel = (r >= lo) & (r <= hi) & (v > 0)
    if sel.sum() < 8:
        raise ValueError(f"decay window {window} holds {sel.sum()} usable samples, need at least 8")
    rs, vs = r[sel], v[sel]
    slope, pref = _loglog_fit(rs, vs)
    half = rs.size // 2
    inner_slope, _ = _loglog_fit(rs[:half], vs[:half]) if half >= 2 else (slope, pref)
    outer_slope, _ = _loglog_fit(rs[half:], vs[half:]) if rs.size - half >= 2 else (slope, pref)
    return DecayFit(slope, pref, (lo, hi), int(sel.sum()), outer_slope - inner_slope)


def rearrange_decreasing(u: Field) -> Field:
    """Symmetric decreasing rearrangement on the lattice.

    Sorted ``|u|`` values go to cells ordered by exact distance from the origin
    sample, ties broken by flat index. The multiset of values is unchanged.
    """
    g = u.grid
    idx = np.indices(g.shape).reshape(g.dim, -1) - g.n // 2
    dist2 = np.sum(idx.astype(np.int64) ** 2, axis=0)
    order = np.argsort(dist2, kind="stable")
    vals = np.sort(np.abs(u.values).ravel())[::-1]
    out = np.empty(g.size)
    out[order] = vals
    return Field(g, out.reshape(g.shape))
