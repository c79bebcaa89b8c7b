"""Periodic-torus discretization and the Fourier-multiplier fractional Laplacian.

Everything in the package is built on the objects here: a uniform grid on
``[-L/2, L/2)^d`` with ``d`` in {1, 2}, fields sampled on that grid, and
pseudospectral operators applied by FFT. Quadrature is the periodic rectangle
rule, so ``mass(u) = sum |u_j|^2 h^d``.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np
import scipy.fft as sfft


class GridError(ValueError):
    """Invalid grid parameters."""


class AliasingWarning(RuntimeWarning):
    """A dilation pushed spectral content toward the Nyquist mode."""


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid with ``n`` points per axis and side length ``length``."""

    dim: int
    n: int
    length: float

    def __post_init__(self) -> None:
        if self.dim not in (1, 2):
            raise GridError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 64 or self.n & (self.n - 1):
            raise GridError(f"points per axis must be a power of two >= 64, got {self.n}")
        if not self.length > 0:
            raise GridError(f"side length must be positive, got {self.length}")
        object.__setattr__(self, "length", float(self.length))

    @property
    def h(self) -> float:
        return self.length / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def cell_volume(self) -> float:
        return self.h**self.dim

    @property
    def volume(self) -> float:
        return self.length**self.dim

    @cached_property
    def x1d(self) -> np.ndarray:
        return -self.length / 2 + self.h * np.arange(self.n)

    @cached_property
    def k1d(self) -> np.ndarray:
        """Wavenumbers ``2*pi*m/L`` in FFT order."""
        return 2 * np.pi * sfft.fftfreq(self.n, d=self.h)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        if self.dim == 1:
            return (self.x1d,)
        return tuple(np.meshgrid(self.x1d, self.x1d, indexing="ij"))

    @cached_property
    def radius(self) -> np.ndarray:
        return np.sqrt(sum(c**2 for c in self.coords))

    @cached_property
    def kabs(self) -> np.ndarray:
        """|k| on the full FFT layout; the -N/2 mode uses the magnitude of +N/2."""
        if self.dim == 1:
            return np.abs(self.k1d)
        kx, ky = np.meshgrid(self.k1d, self.k1d, indexing="ij")
        return np.hypot(kx, ky)

    @cached_property
    def kabs_half(self) -> np.ndarray:
        """|k| on the real-FFT half layout (last axis truncated)."""
        kr = 2 * np.pi * sfft.rfftfreq(self.n, d=self.h)
        if self.dim == 1:
            return kr
        kx, ky = np.meshgrid(self.k1d, kr, indexing="ij")
        return np.hypot(kx, ky)

    @property
    def k_nyquist(self) -> float:
        return np.pi / self.h

    def origin_index(self) -> tuple[int, ...]:
        return (self.n // 2,) * self.dim

    def to_dict(self) -> dict:
        return {"dim": self.dim, "N": self.n, "L": self.length}


def make_grid(dim: int, n: int, length: float) -> Grid:
    return Grid(dim, n, length)


@dataclass(frozen=True, eq=False)
class Field:
    """Samples of a function on ``grid``; ``values`` has shape ``grid.shape``.

    Fields are treated as immutable. Real-valued samples are stored as float64,
    anything else as complex128.
    """

    grid: Grid
    values: np.ndarray = dc_field(repr=False)

    def __post_init__(self) -> None:
        v = np.asarray(self.values)
        if v.size != self.grid.size:
            raise ValueError(f"expected {self.grid.size} samples, got {v.size}")
        v = v.reshape(self.grid.shape)
        if np.iscomplexobj(v):
            v = v.astype(np.complex128, copy=False)
        else:
            v = v.astype(np.float64, copy=False)
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite samples")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.values)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def real_hint(self, rtol: float = 1e-12) -> bool:
        """True if imaginary parts are negligible relative to the max modulus."""
        if self.is_real:
            return True
        scale = np.max(np.abs(self.values)) if self.values.size else 0.0
        return bool(np.max(np.abs(self.values.imag)) <= rtol * max(scale, 1e-300))

    def with_values(self, values: np.ndarray) -> "Field":
        return Field(self.grid, values)

    def abs(self) -> "Field":
        return Field(self.grid, np.abs(self.values))

    def scaled(self, c: complex) -> "Field":
        return Field(self.grid, self.values * c)

    def __add__(self, other: "Field") -> "Field":
        _same_grid(self, other)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        _same_grid(self, other)
        return Field(self.grid, self.values - other.values)


def _same_grid(u: Field, v: Field) -> None:
    if u.grid != v.grid:
        raise ValueError("fields live on different grids")


def field_from_function(grid: Grid, fn) -> Field:
    """Sample ``fn(*coords)`` on the grid."""
    return Field(grid, fn(*grid.coords))


@lru_cache(maxsize=64)
def _symbol(grid: Grid, s: float, half: bool) -> np.ndarray:
    k = grid.kabs_half if half else grid.kabs
    out = k ** (2 * s)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class FracMultiplier:
    """The symbol ``|k|^{2s}`` of ``(-Delta)^s`` on a grid."""

    grid: Grid
    s: float

    @property
    def symbol(self) -> np.ndarray:
        return _symbol(self.grid, self.s, False)

    @property
    def symbol_half(self) -> np.ndarray:
        return _symbol(self.grid, self.s, True)


def _check_s(s: float, allow_zero: bool = False) -> None:
    lo_ok = s >= 0 if allow_zero else s > 0
    if not (lo_ok and s <= 1):
        raise ValueError(f"fractional order s must lie in (0, 1], got {s}")


def apply_multiplier(values: np.ndarray, grid: Grid, full: np.ndarray, half: np.ndarray) -> np.ndarray:
    """Multiply Fourier coefficients by a real symbol; real input gives real output."""
    if np.iscomplexobj(values):
        return sfft.ifftn(sfft.fftn(values) * full)
    return sfft.irfftn(sfft.rfftn(values) * half, s=grid.shape)


def frac_laplacian_values(values: np.ndarray, grid: Grid, s: float) -> np.ndarray:
    return apply_multiplier(values, grid, _symbol(grid, s, False), _symbol(grid, s, True))


def frac_laplacian(u: Field, s: float) -> Field:
    """``(-Delta)^s u`` by the Fourier multiplier ``|k|^{2s}``; ``s = 1`` is the classical limit."""
    _check_s(s)
    return Field(u.grid, frac_laplacian_values(u.values, u.grid, s))


def spectral_energy(u: Field | np.ndarray, grid: Grid | None = None) -> np.ndarray:
    """``|u_hat(k)|^2`` weighted so that its sum equals ``mass(u)`` (Parseval)."""
    if isinstance(u, Field):
        grid, values = u.grid, u.values
    else:
        values = u
    coef = sfft.fftn(values)
    return np.abs(coef) ** 2 * grid.cell_volume / grid.size


def half_frac_norm_sq_values(values: np.ndarray, grid: Grid, s: float) -> float:
    """``sum |k|^{2s} |u_hat|^2`` with rectangle-rule weights, using the real FFT when possible."""
    if np.iscomplexobj(values):
        return float(np.sum(_symbol(grid, s, False) * spectral_energy(values, grid)))
    coef = sfft.rfftn(values)
    w = np.abs(coef) ** 2 * _symbol(grid, s, True)
    # interior half-spectrum bins stand for two conjugate modes
    n = grid.n
    tot = 2.0 * np.sum(w) - np.sum(w[..., 0])
    if n % 2 == 0:
        tot -= np.sum(w[..., n // 2])
    return float(tot * grid.cell_volume / grid.size)


def half_frac_norm_sq(u: Field, s: float) -> float:
    """``||(-Delta)^{s/2} u||_{L^2}^2`` computed in Fourier space; always >= 0."""
    _check_s(s)
    return half_frac_norm_sq_values(u.values, u.grid, s)


def mass(u: Field) -> float:
    return float(np.sum(np.abs(u.values) ** 2) * u.grid.cell_volume)


def lp_norm(u: Field, q: float) -> float:
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    if np.isinf(q):
        return float(np.max(np.abs(u.values)))
    return float((np.sum(np.abs(u.values) ** q) * u.grid.cell_volume) ** (1.0 / q))


def inner(u: Field, v: Field) -> complex:
    """``int u conj(v) dx``."""
    _same_grid(u, v)
    return complex(np.sum(u.values * np.conj(v.values)) * u.grid.cell_volume)


def resolvent_apply(u: Field, s: float, tau: float) -> Field:
    """``(I + tau (-Delta)^s)^{-1} u`` by Fourier division."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    g = u.grid
    full = 1.0 / (1.0 + tau * _symbol(g, s, False))
    half = 1.0 / (1.0 + tau * _symbol(g, s, True))
    return Field(g, apply_multiplier(u.values, g, full, half))


def spectral_tail_fraction(u: Field | np.ndarray, grid: Grid | None = None) -> float:
    """Fraction of spectral energy in the top octave ``|k_i| > k_nyq/2`` of any axis."""
    if isinstance(u, Field):
        grid, values = u.grid, u.values
    else:
        values = u
    e = spectral_energy(values, grid)
    total = float(np.sum(e))
    if total == 0:
        return 0.0
    top = np.abs(grid.k1d) > grid.k_nyquist / 2
    if grid.dim == 1:
        mask = top
    else:
        mask = top[:, None] | top[None, :]
    return float(np.sum(e[mask]) / total)


def boundary_tail_fraction(u: Field, radius: float | None = None) -> float:
    """``int_{|x| > L/4} |u|^2 / mass(u)``; quantifies torus truncation."""
    g = u.grid
    r = g.length / 4 if radius is None else radius
    dens = np.abs(u.values) ** 2
    total = np.sum(dens)
    if total == 0:
        return 0.0
    return float(np.sum(dens[g.radius > r]) / total)


# --- off-grid evaluation -------------------------------------------------

_CHUNK = 1 << 22


def _trig_eval_1d(coef: np.ndarray, k: np.ndarray, pts: np.ndarray, length: float) -> np.ndarray:
    """Evaluate the trigonometric interpolant with coefficients ``coef`` (FFT order, along axis 0).

    Samples sit at ``x_j = -L/2 + j h``; the Nyquist coefficient is split evenly
    between ``+-N/2`` so the interpolant of real data stays real.
    """
    n = k.size
    c = coef.copy()
    kk = k.copy()
    nyq = n // 2
    # symmetric Nyquist split: add the +N/2 partner
    c = np.concatenate([c, c[nyq : nyq + 1] * 0.5], axis=0)
    c[nyq] *= 0.5
    kk = np.concatenate([kk, -kk[nyq : nyq + 1]])
    shift = np.exp(1j * kk * (length / 2))  # samples start at -L/2
    c = c * shift.reshape((-1,) + (1,) * (c.ndim - 1)) / n
    pts = np.asarray(pts, dtype=float)
    out = np.empty((pts.size,) + c.shape[1:], dtype=np.complex128)
    step = max(1, _CHUNK // max(1, kk.size * int(np.prod(c.shape[1:]))))
    for i in range(0, pts.size, step):
        ph = np.exp(1j * np.outer(pts[i : i + step], kk))
        out[i : i + step] = np.tensordot(ph, c, axes=(1, 0))
    return out


def interpolate(u: Field, points: Sequence[np.ndarray]) -> np.ndarray:
    """Evaluate the trigonometric interpolant of ``u`` on a tensor product of axis points.

    ``points`` holds one 1-D array per axis; the result has shape
    ``tuple(len(p) for p in points)``. Points outside the torus wrap periodically.
    """
    g = u.grid
    if len(points) != g.dim:
        raise ValueError("need one point array per axis")
    data = sfft.fft(u.values, axis=0)
    out = _trig_eval_1d(data, g.k1d, points[0], g.length)
    if g.dim == 2:
        coef = sfft.fft(out, axis=1)
        out = _trig_eval_1d(np.moveaxis(coef, 1, 0), g.k1d, points[1], g.length)
        out = np.moveaxis(out, 0, 1)
    if u.is_real:
        return out.real
    return out


def dilate(u: Field, lam: float, *, check_aliasing: bool = True, tail_tol: float = 1e-8) -> Field:
    """``lam^{d/2} u(lam x)`` by trigonometric interpolation at stretched sample points.

    ``u`` is read as a function on the box ``[-L/2, L/2)^d`` extended by zero,
    so for ``lam > 1`` points with ``|lam x_i| >= L/2`` get the value 0.

    When ``lam > 1`` the result holds content at ``lam`` times the original
    wavenumbers; if that pushes spectral energy into the top octave beyond
    ``tail_tol`` an :class:`AliasingWarning` is issued.
    """
    if not lam > 0:
        raise ValueError(f"dilation factor must be positive, got {lam}")
    if lam == 1.0:
        return u
    g = u.grid
    pts = [lam * g.x1d] * g.dim
    vals = lam ** (g.dim / 2) * interpolate(u, pts)
    if lam > 1:
        # stretched points leaving the torus would wrap onto periodic copies of u
        inside = np.abs(lam * g.x1d) < g.length / 2
        mask = inside if g.dim == 1 else inside[:, None] & inside[None, :]
        vals = np.where(mask, vals, 0.0)
    out = Field(g, vals)
    if check_aliasing and lam > 1:
        frac = spectral_tail_fraction(out)
        if frac > tail_tol:
            import warnings

            warnings.warn(
                f"dilation by {lam:g} leaves {frac:.2e} of the spectral energy in the top octave",
                AliasingWarning,
                stacklevel=2,
            )
    return out


def shift(u: Field, offset: Sequence[float] | float) -> Field:
    """Circular translation ``u(x - offset)`` via a Fourier phase factor.

    Offsets that are whole multiples of ``h`` reduce to an exact index rotation.
    The Nyquist mode is shifted symmetrically (factor ``cos(k_N a)``).
    """
    g = u.grid
    off = np.atleast_1d(np.asarray(offset, dtype=float))
    if off.size != g.dim:
        raise ValueError(f"offset needs {g.dim} components")
    if not np.any(off):
        return u
    steps = off / g.h
    if np.allclose(steps, np.round(steps), rtol=0, atol=1e-12):
        return Field(g, np.roll(u.values, tuple(int(round(s)) for s in steps), axis=tuple(range(g.dim))))
    real = u.is_real
    coef = sfft.rfftn(u.values) if real else sfft.fftn(u.values)
    nyq = g.n // 2
    for axis in range(g.dim):
        last = axis == g.dim - 1
        k = 2 * np.pi * sfft.rfftfreq(g.n, d=g.h) if (real and last) else g.k1d.copy()
        ph = np.exp(-1j * k * off[axis])
        kn = np.pi / g.h
        nyq_idx = k.size - 1 if (real and last) else nyq
        ph[nyq_idx] = np.cos(kn * off[axis])
        shape = [1] * g.dim
        shape[axis] = k.size
        coef = coef * ph.reshape(shape)
    out = sfft.irfftn(coef, s=g.shape) if real else sfft.ifftn(coef)
    return Field(g, out)


def random_smooth_field(
    grid: Grid,
    rng: np.random.Generator,
    *,
    bumps: int = 3,
    width_range: tuple[float, float] = (0.5, 2.0),
    spread: float | None = None,
    positive: bool = False,
) -> Field:
    """A localized smooth random field: a few Gaussian bumps with random signs,
    widths and centres, plus a band-limited ripple under a Gaussian envelope.

    Centres stay within ``spread`` (default ``L/16``) of the origin so that the
    field is negligible near the torus boundary.
    """
    spread = grid.length / 16 if spread is None else spread
    coords = grid.coords
    out = np.zeros(grid.shape)
    for _ in range(bumps):
        c = rng.uniform(-spread, spread, size=grid.dim)
        w = rng.uniform(*width_range)
        amp = rng.uniform(0.5, 1.5)
        if not positive and rng.random() < 0.3:
            amp = -amp
        r2 = sum((x - ci) ** 2 for x, ci in zip(coords, c))
        out += amp * np.exp(-r2 / (2 * w**2))
    # ripple: random low modes, kept smooth by a Gaussian spectral filter
    coef = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    coef *= np.exp(-(grid.kabs * width_range[0]) ** 2)
    ripple = sfft.ifftn(coef).real
    ripple /= max(np.max(np.abs(ripple)), 1e-300)
    env = np.exp(-sum(x**2 for x in coords) / (2 * (spread + width_range[1]) ** 2))
    out += 0.3 * ripple * env
    if positive:
        out = np.abs(out)
    return Field(grid, out)
