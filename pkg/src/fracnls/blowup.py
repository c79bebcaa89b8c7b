"""Mass sweeps toward the critical mass at the mass-critical exponent.

For masses ``a = a*(1 - 2^-j)`` the constrained minimizers concentrate at a
well of the periodic potential on the length scale ``beta^{1/(2s+p)}`` with
``beta = 1 - (a/a*)^{2s/d}``. This module runs the minimizations, measures
the concentration observables, and fits the scaling exponents.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .functionals import critical_exponent, decay_fit
from .potentials import PotentialSpec, sample_potential, snap_well, well_points
from .solvers import (
    InitSpec,
    RadialProfile,
    SolverConfig,
    critical_ground_state,
    gaussian,
    extrapolated_critical_mass,
    multistart_minimize,
)
from .spectral import (
    Field,
    Grid,
    half_frac_norm_sq,
    interpolate,
    make_grid,
    mass,
    shift,
    spectral_tail_fraction,
)

log = logging.getLogger(__name__)


class FitError(ValueError):
    pass


def beta_of(a: float, astar: float, d: int, s: float) -> float:
    return 1.0 - (a / astar) ** (2 * s / d)


def eps_of(kinetic: float, s: float) -> float:
    """``eps_a`` with ``eps_a^{-s} = ||(-Delta)^{s/2} u_a||``; ``kinetic`` is half the squared norm."""
    return (2.0 * kinetic) ** (-1.0 / (2 * s))


# --- lambda_0 ----------------------------------------------------------------------


@dataclass(frozen=True)
class MomentEstimate:
    moment: float  # int |x|^p Q0^2, including the tail estimate
    tail: float
    decay_exponent: float

    @property
    def tail_share(self) -> float:
        return self.tail / self.moment


def _sphere_area(d: int) -> float:
    return 2.0 if d == 1 else 2 * math.pi


def weighted_moment(q: Field, p: float, s: Optional[float] = None) -> MomentEstimate:
    """``int |x|^p Q0(x)^2 dx`` for ``Q0 = Q/||Q||``.

    Quadrature covers ``|x| <= L/16``. Beyond it ``Q0`` follows ``C |x|^{-(d+2s)}``
    with ``C`` fitted on ``[L/32, L/16]`` and the tail is integrated in closed form.
    Periodic images inflate the torus solution further out (by about 20% at
    ``L/4``), which is why the window stays close in. Without ``s`` the decay
    exponent is fitted as well.
    """
    g = q.grid
    q0 = np.abs(q.values) / math.sqrt(mass(q))
    R = g.length / 16
    inside = g.radius <= R
    core = float(np.sum((g.radius**p * q0**2)[inside])) * g.cell_volume
    win = (g.radius >= R / 2) & (g.radius <= R) & (q0 > 0)
    if np.count_nonzero(win) < 8:
        raise FitError(f"tail window [{R / 2:g}, {R:g}] holds fewer than 8 samples")
    r, v = g.radius[win], q0[win]
    if s is None:
        decay = decay_fit(Field(g, q0), (R / 2, R)).exponent
    else:
        decay = -(g.dim + 2 * s)
    # least squares for log C with the exponent held fixed
    pref = float(np.exp(np.mean(np.log(v) - decay * np.log(r))))
    expo = p + 2 * decay + g.dim
    if expo >= 0:
        raise FitError(f"moment of order p = {p} diverges for decay exponent {decay:.3f}")
    tail = _sphere_area(g.dim) * pref**2 * R**expo / (-expo)
    return MomentEstimate(core + tail, tail, decay)


def lambda0(kappa: float, p: float, d: int, s: float, q: Field, max_tail_share: float = 0.1) -> float:
    """Predicted dilation of the blow-up profile, ``(kappa p / d * M_p)^{1/(2s+p)}``."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    if not 0 < p < d + 4 * s:
        raise ValueError(f"p = {p} must satisfy 0 < p < d + 4s = {d + 4 * s:g}")
    est = weighted_moment(q, p, s)
    if est.tail_share > max_tail_share:
        raise FitError(
            f"tail correction is {100 * est.tail_share:.1f}% of the moment; use a larger L"
        )
    return (kappa * p / d * est.moment) ** (1.0 / (2 * s + p))


# --- per-record observables -----------------------------------------------------------


def _parabolic_offset(fm: float, f0: float, fp: float) -> float:
    den = fm - 2 * f0 + fp
    if den >= 0:
        return 0.0
    return 0.5 * (fm - fp) / den


def peak_location(u: Field) -> np.ndarray:
    """Density peak with parabolic sub-grid refinement along each axis."""
    g = u.grid
    dens = np.abs(u.values) ** 2
    top = float(dens.max())
    if top == 0 or float(np.ptp(dens)) <= 1e-12 * top:
        raise ValueError("field is flat; peak location undefined")
    idx = np.unravel_index(int(np.argmax(dens)), dens.shape)  # first max in C order
    pos = np.empty(g.dim)
    for ax in range(g.dim):
        lo = list(idx)
        hi = list(idx)
        lo[ax] = (idx[ax] - 1) % g.n
        hi[ax] = (idx[ax] + 1) % g.n
        delta = _parabolic_offset(dens[tuple(lo)], top, dens[tuple(hi)])
        pos[ax] = g.x1d[idx[ax]] + delta * g.h
    return pos


def recenter_and_split(u: Field, grid: Optional[Grid] = None):
    """Shift the density peak to the origin.

    Returns ``(u_centered, x_a, z_a)`` where the peak ``y = x_a + z_a`` with
    ``x_a`` in ``[0, 1)^d`` and ``z_a`` integer.
    """
    y = peak_location(u)
    z = np.floor(y)
    x = y - z
    x[x >= 1.0] -= 1.0
    return shift(u, -y), x, z.astype(int)


def cell_distance(x: Sequence[float], x0: Sequence[float]) -> float:
    """Distance between two points of the unit cell, modulo the lattice."""
    diff = (np.asarray(x, float) - np.asarray(x0, float) + 0.5) % 1.0 - 0.5
    return float(np.linalg.norm(diff))


def comparison_grid(d: int) -> Grid:
    """Fixed window on which rescaled profiles are compared."""
    return make_grid(d, 2048 if d == 1 else 256, 64.0)


def rescaled_profile(u_centered: Field, beta: float, p: float, s: float, window: Optional[Grid] = None) -> Field:
    """``beta^{d/(2(2s+p))} u(beta^{1/(2s+p)} x)`` sampled on the comparison window."""
    d = u_centered.grid.dim
    win = window or comparison_grid(d)
    if not 0 < beta <= 1:
        raise ValueError(f"beta must lie in (0, 1], got {beta}")
    scale = beta ** (1.0 / (2 * s + p))
    src = u_centered.grid
    if win.length * scale > src.length:
        raise ValueError(
            f"window of half-width {win.length / 2:g} maps to {win.length * scale / 2:g}, "
            f"outside the torus of half-width {src.length / 2:g}"
        )
    tail = spectral_tail_fraction(u_centered)
    if tail > 1e-8:
        raise ValueError(
            f"minimizer is under-resolved (top-octave fraction {tail:.1e}); need N >= {2 * src.n}"
        )
    vals = interpolate(u_centered, [scale * win.x1d] * d)
    return Field(win, beta ** (d / (2 * (2 * s + p))) * vals)


def dilated_profile(q, lam: float, window: Grid) -> Field:
    """``lam^{d/2} Q(lam x)`` on ``window``.

    ``q`` is a centred radial Field or a prebuilt :class:`RadialProfile`
    (cheaper when many dilations of the same profile are needed).
    """
    prof = q if isinstance(q, RadialProfile) else RadialProfile(q)
    return Field(window, lam ** (window.dim / 2) * prof(lam * window.radius))


def profile_distances(w: Field, target: Field, s: float) -> tuple[float, float]:
    diff = w - target
    return math.sqrt(mass(diff)), math.sqrt(half_frac_norm_sq(diff, s))


def golden_section(fn, lo: float, hi: float, tol: float = 1e-6, max_iter: int = 200) -> float:
    """Minimizer of a unimodal function on ``[lo, hi]``."""
    r = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c = b - r * (b - a)
    dd = a + r * (b - a)
    fc, fd = fn(c), fn(dd)
    for _ in range(max_iter):
        if b - a <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc < fd:
            b, dd, fd = dd, c, fc
            c = b - r * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, dd, fd
            dd = a + r * (b - a)
            fd = fn(dd)
    return (a + b) / 2


# --- records and fits --------------------------------------------------------------------


@dataclass
class SweepRecord:
    a: float
    beta_a: float
    eps_a: float
    energy: float
    kinetic: float
    potential_integral: float
    nonlinear: float
    x_a: tuple
    z_a: tuple
    profile_l2_dist: Optional[float]  # None when no limit profile applies
    profile_hs_dist: Optional[float]
    grid_N: int
    grid_L: float
    converged: bool
    iterations: int = 0
    residual: float = float("nan")
    message: str = ""

    @property
    def energy_per_mass(self) -> float:
        return self.energy / self.a


def csv_columns(d: int) -> list[str]:
    return (
        ["a", "beta_a", "eps_a", "energy", "kinetic", "potential_integral", "nonlinear"]
        + [f"x_a_{i}" for i in range(d)]
        + [f"z_a_{i}" for i in range(d)]
        + ["profile_l2_dist", "profile_hs_dist", "grid_N", "grid_L", "converged"]
    )


def _num(v) -> str:
    # missing values (not applicable, or not measurable) are left empty
    if v is None or not math.isfinite(float(v)):
        return ""
    return repr(float(v))


def records_to_csv(records: Sequence[SweepRecord], d: int) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(csv_columns(d))
    for r in records:
        wr.writerow(
            [_num(v) for v in (r.a, r.beta_a, r.eps_a, r.energy, r.kinetic, r.potential_integral, r.nonlinear)]
            + [_num(v) for v in r.x_a]
            + [str(int(v)) for v in r.z_a]
            + [_num(r.profile_l2_dist), _num(r.profile_hs_dist), str(r.grid_N), _num(r.grid_L),
               "true" if r.converged else "false"]
        )
    return buf.getvalue()


@dataclass(frozen=True)
class PowerFit:
    slope: float
    intercept: float
    r2: float

    def to_dict(self) -> dict:
        return asdict(self)


def _loglog(x: np.ndarray, y: np.ndarray) -> PowerFit:
    lx, ly = np.log(x), np.log(y)
    slope, icept = np.polyfit(lx, ly, 1)
    pred = slope * lx + icept
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return PowerFit(float(slope), float(icept), r2)


def _tail_records(records: Sequence[SweepRecord], count: int = 5) -> list[SweepRecord]:
    recs = sorted(records, key=lambda r: r.a)
    if len(recs) < count:
        raise FitError(f"need at least {count} records, got {len(recs)}")
    tail = recs[-count:]
    if not all(r.converged for r in tail):
        raise FitError("fit needs converged minimizers in the last records")
    return tail


def fit_energy_exponent(records: Sequence[SweepRecord], count: int = 5) -> PowerFit:
    """Least squares of ``log(I(a)/a)`` against ``log beta_a`` over the last ``count`` records."""
    tail = _tail_records(records, count)
    e = np.array([r.energy_per_mass for r in tail])
    if np.any(e <= 0):
        raise FitError("energies per mass must be positive for a log fit")
    if np.any(np.diff(e) > 0):
        raise FitError("I(a)/a is not monotone along the records; fit refused")
    return _loglog(np.array([r.beta_a for r in tail]), e)


@dataclass(frozen=True)
class KineticFit:
    slope: float
    intercept: float
    r2: float
    nonlinear_slope: float
    c_upper: float  # max of (2 kin / a) beta^{2s/(2s+p)} over the fitted records
    c_lower: float  # min of (||u||^{alpha+2} / a) beta^{2s/(2s+p)}

    def to_dict(self) -> dict:
        return asdict(self)


def fit_kinetic_exponent(records: Sequence[SweepRecord], s: float, d: int, p: float, count: int = 5) -> KineticFit:
    """Slope of ``log(2 kinetic / a)`` against ``log beta_a``; also the L^{alpha+2} norm bound."""
    tail = _tail_records(records, count)
    beta = np.array([r.beta_a for r in tail])
    kin = np.array([2 * r.kinetic / r.a for r in tail])
    alpha = critical_exponent(d, s)
    # nonlinear part is ||u||^{alpha+2}/(alpha+2)
    nl = np.array([(alpha + 2) * r.nonlinear / r.a for r in tail])
    fit = _loglog(beta, kin)
    nfit = _loglog(beta, nl)
    expo = 2 * s / (2 * s + p)
    return KineticFit(
        fit.slope, fit.intercept, fit.r2, nfit.slope,
        float(np.max(kin * beta**expo)), float(np.min(nl * beta**expo)),
    )


@dataclass(frozen=True)
class LimitCheck:
    limit_estimate: float
    passes: bool
    c2: float
    last_value: float
    bound: float
    positive: bool
    decreasing: bool

    def to_dict(self) -> dict:
        return asdict(self)


def critical_energy_limit(records: Sequence[SweepRecord], min_v: float, p: float, s: float, factor: float = 2.0) -> LimitCheck:
    """Check ``I(a)/a`` decreasing toward ``min V / 2``.

    ``C2`` is the largest ``(I(a)/a - min V/2) / beta^{p/(2s+p)}`` over all
    records but the last; the last record must lie below ``factor * C2 *
    beta^{p/(2s+p)}`` above ``min V / 2``. The limit estimate is the intercept
    of ``I(a)/a`` against ``beta^{p/(2s+p)}`` over the last three records.
    """
    recs = sorted(records, key=lambda r: r.a)
    if len(recs) < 2:
        raise FitError("need at least two records")
    expo = p / (2 * s + p)
    e = np.array([r.energy_per_mass for r in recs])
    b = np.array([r.beta_a for r in recs]) ** expo
    base = 0.5 * min_v
    ratios = (e[:-1] - base) / b[:-1]
    c2 = float(np.max(ratios))
    bound = base + factor * c2 * b[-1]
    positive = bool(np.all(e > base))
    decreasing = bool(np.all(np.diff(e) <= 1e-6))
    k = min(3, len(recs))
    slope, icept = np.polyfit(b[-k:], e[-k:], 1)
    ok = positive and decreasing and e[-1] <= bound
    return LimitCheck(float(icept), bool(ok), c2, float(e[-1]), float(bound), positive, decreasing)


# --- the sweep -----------------------------------------------------------------------------


@dataclass(frozen=True)
class GridPolicy:
    length: float = 64.0
    n_min: int = 4096
    n_max: int = 1 << 20
    points_per_width: float = 20.0  # grid points per predicted concentration length
    capacity_fraction: float = 0.25  # kinetic/mass must stay below this share of k_nyq^{2s}
    tail_tol: float = 1e-8

    def initial_n(self, width: float) -> int:
        need = self.length * self.points_per_width / width
        n = max(self.n_min, 1 << int(math.ceil(math.log2(need))))
        return min(n, self.n_max)


def default_schedule(jmin: int = 2, jmax: int = 10) -> list[int]:
    return list(range(jmin, jmax + 1))


@dataclass(frozen=True)
class SweepConfig:
    d: int = 1
    s: float = 0.5
    p: float = 2.0
    kappa: float = 1.0
    x0: tuple = (0.0,)
    schedule: tuple = tuple(default_schedule())  # exponents j in a = a*(1 - 2^-j)
    masses: Optional[tuple] = None  # explicit masses override the schedule
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(method="pcg", max_iter=20000, init=InitSpec(width=0.25)))
    grid: GridPolicy = field(default_factory=GridPolicy)
    astar: Optional[float] = None
    profile_n: Optional[int] = None  # default 8192 (d=1) or 256 (d=2)
    profile_length: Optional[float] = None  # default 256 (d=1) or 32 (d=2)
    moment_n: Optional[int] = None  # ground state for the lambda_0 moment: 32768 (d=1) or 512 (d=2)
    moment_length: Optional[float] = None  # 1024 (d=1) or 64 (d=2)
    workers: int = 1
    constant_potential: Optional[float] = None  # control runs with V = c

    def __post_init__(self) -> None:
        if self.d not in (1, 2):
            raise ValueError("d must be 1 or 2")
        if not 0 < self.s < 1:
            raise ValueError("s must lie in (0, 1)")
        if self.constant_potential is None and not 0 < self.p < self.d + 4 * self.s:
            raise ValueError(f"p = {self.p} must satisfy 0 < p < d + 4s = {self.d + 4 * self.s:g} (V3)")
        if self.masses is None and not self.schedule:
            raise ValueError("empty mass schedule")
        if self.masses is not None:
            if not self.masses:
                raise ValueError("empty mass schedule")
            if any(b <= a for a, b in zip(self.masses, self.masses[1:])):
                raise ValueError("mass schedule must be strictly increasing")
        elif any(b <= a for a, b in zip(self.schedule, self.schedule[1:])):
            raise ValueError("schedule exponents must be strictly increasing")

    def potential_spec(self) -> PotentialSpec:
        return PotentialSpec("periodic_power", kappa=self.kappa, p=self.p, x0=tuple(self.x0))

    def mass_list(self, astar: float) -> list[float]:
        if self.masses is not None:
            out = [float(m) for m in self.masses]
        else:
            out = [astar * (1 - 2.0**-j) for j in self.schedule]
        if any(m >= astar for m in out):
            raise ValueError("all masses must lie below a*")
        return out


@dataclass
class SweepContext:
    """Quantities shared by all records of a sweep."""

    astar: float
    q: Field  # critical ground state on the profile grid
    lam0: Optional[float]
    min_v: float


def prepare(cfg: SweepConfig) -> SweepContext:
    n = cfg.profile_n or (8192 if cfg.d == 1 else 256)
    length = cfg.profile_length or (256.0 if cfg.d == 1 else 32.0)
    q, rep = critical_ground_state(cfg.d, cfg.s, n, length)
    if not rep.converged:
        raise RuntimeError(f"critical ground state did not converge: {rep.message}")
    astar = cfg.astar
    if astar is None:
        astar, _ = extrapolated_critical_mass(cfg.d, cfg.s, length=length, h=length / n)
    lam = None
    if cfg.constant_potential is None:
        # the moment needs a longer torus than the profile comparison
        mn = cfg.moment_n or (32768 if cfg.d == 1 else 512)
        ml = cfg.moment_length or (1024.0 if cfg.d == 1 else 64.0)
        qm, mrep = critical_ground_state(cfg.d, cfg.s, mn, ml)
        if not mrep.converged:
            raise RuntimeError(f"ground state for the moment did not converge: {mrep.message}")
        lam = lambda0(cfg.kappa, cfg.p, cfg.d, cfg.s, qm)
    min_v = 0.0 if cfg.constant_potential is None else float(cfg.constant_potential)
    return SweepContext(astar, q, lam, min_v)


def _potential(cfg: SweepConfig, grid: Grid) -> Field:
    if cfg.constant_potential is not None:
        return Field(grid, np.full(grid.shape, float(cfg.constant_potential)))
    return sample_potential(cfg.potential_spec(), grid)


def _predicted_start(grid: Grid, prof: RadialProfile, center: np.ndarray, width: float) -> np.ndarray:
    r = np.sqrt(sum((x - c) ** 2 for x, c in zip(grid.coords, center)))
    return prof(r / width)


def _comb_start(grid: Grid, wells, width: float = 0.25) -> np.ndarray:
    out = np.zeros(grid.shape)
    for w in wells:
        out += gaussian(grid, width, w)
    return out


def _needs_refinement(u: Field, kinetic: float, a: float, s: float, policy: GridPolicy) -> bool:
    g = u.grid
    cap = policy.capacity_fraction * g.k_nyquist ** (2 * s)
    return 2 * kinetic / a > cap or spectral_tail_fraction(u) > policy.tail_tol


def solve_record(cfg: SweepConfig, ctx: SweepContext, a: float) -> tuple[SweepRecord, Field]:
    """Minimize at mass ``a`` with grid refinement, then measure the observables."""
    d, s, p = cfg.d, cfg.s, cfg.p
    beta = beta_of(a, ctx.astar, d, s)
    if cfg.constant_potential is None:
        width = beta ** (1.0 / (2 * s + p)) / ctx.lam0
    else:
        width = 1.0
    prof = RadialProfile(ctx.q)
    n = cfg.grid.initial_n(width)
    init_override = None
    while True:
        grid = make_grid(d, n, cfg.grid.length)
        V = _potential(cfg, grid)
        if cfg.constant_potential is None:
            center, _ = snap_well(cfg.potential_spec(), grid)
            # represent the well inside the torus nearest the origin
            center = center - np.round(center)
            wells = well_points(cfg.potential_spec(), grid)
        else:
            center = np.zeros(d)
            wells = [center]
        if init_override is None:
            # concentrated guess at the well, plus a comb over every well for the spread state
            extra = [_predicted_start(grid, prof, center, width), _comb_start(grid, wells)]
        else:
            extra = [init_override]
        solver = replace(cfg.solver, init=replace(cfg.solver.init, width=max(width, 2 * grid.h)))
        res = multistart_minimize(grid, s, critical_exponent(d, s), V, a, solver, wells=wells, extra_starts=extra,
                                  well_starts=False)
        u, rep = res.field, res.report
        if not _needs_refinement(u, rep.energy.kinetic, a, s, cfg.grid) or 2 * n > cfg.grid.n_max:
            break
        log.info("a=%.12g: refining grid to N=%d", a, 2 * n)
        fine = make_grid(d, 2 * n, cfg.grid.length)
        init_override = interpolate(u, [fine.x1d] * d)
        n *= 2

    e = rep.energy
    try:
        uc, xa, za = recenter_and_split(u)
    except ValueError as exc:
        uc, xa, za = u, np.full(d, float("nan")), np.zeros(d, int)
        rep.message = (rep.message + "; " if rep.message else "") + str(exc)
    l2 = hs = None
    if cfg.constant_potential is None:
        try:
            w = rescaled_profile(uc, beta, p, s)
            target = dilated_profile(ctx.q, ctx.lam0, w.grid)
            l2, hs = profile_distances(w, target, s)
        except ValueError as exc:
            rep.message = (rep.message + "; " if rep.message else "") + str(exc)
    rec = SweepRecord(
        a=a,
        beta_a=beta,
        eps_a=eps_of(e.kinetic, s),
        energy=e.total,
        kinetic=e.kinetic,
        potential_integral=2 * e.potential,
        nonlinear=e.nonlinear,
        x_a=tuple(float(v) for v in xa),
        z_a=tuple(int(v) for v in za),
        profile_l2_dist=l2,
        profile_hs_dist=hs,
        grid_N=grid.n,
        grid_L=grid.length,
        converged=rep.converged,
        iterations=rep.iterations,
        residual=rep.residual,
        message=rep.message,
    )
    return rec, uc


def fit_lambda(w: Field, q: Field, lam0: float) -> float:
    """Dilation ``lam`` in ``[lam0/2, 2 lam0]`` whose profile ``lam^{d/2} Q(lam x)`` is L^2-closest to ``w``."""

    prof = RadialProfile(q)

    def dist(lam: float) -> float:
        return mass(w - dilated_profile(prof, lam, w.grid))

    return golden_section(dist, lam0 / 2, 2 * lam0, tol=1e-7)


@dataclass
class SweepResult:
    records: list
    summary: dict
    last_profile: Optional[Field] = None

    def csv(self, d: int) -> str:
        return records_to_csv(self.records, d)


def _worker(args):
    cfg, ctx, a = args
    rec, uc = solve_record(cfg, ctx, a)
    return rec, uc


def run_sweep(cfg: SweepConfig, ctx: Optional[SweepContext] = None) -> SweepResult:
    """Minimize along the mass schedule, then fit exponents and compare profiles."""
    ctx = ctx or prepare(cfg)
    masses = cfg.mass_list(ctx.astar)
    workers = max(1, int(cfg.workers))
    jobs = [(cfg, ctx, a) for a in masses]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_worker, jobs))
    else:
        out = [_worker(j) for j in jobs]
    out.sort(key=lambda t: t[0].a)
    records = [r for r, _ in out]
    last_uc = out[-1][1]

    summary: dict = {
        "astar": ctx.astar,
        "lambda0_predicted": ctx.lam0,
        "profile_dists": [r.profile_l2_dist for r in records],
        "profile_hs_dists": [r.profile_hs_dist for r in records],
        "energy_per_mass": [r.energy_per_mass for r in records],
        "converged": [r.converged for r in records],
        "errors": [],
    }

    def attempt(key, fn):
        try:
            summary[key] = fn()
        except (FitError, ValueError) as exc:
            summary[key] = None
            summary["errors"].append(f"{key}: {exc}")

    attempt("energy_fit", lambda: fit_energy_exponent(records).to_dict())
    attempt("kinetic_fit", lambda: fit_kinetic_exponent(records, cfg.s, cfg.d, cfg.p).to_dict())
    attempt("critical_limit", lambda: critical_energy_limit(records, ctx.min_v, cfg.p, cfg.s).to_dict())
    summary["slope_energy"] = summary["energy_fit"]["slope"] if summary["energy_fit"] else None
    summary["slope_kinetic"] = summary["kinetic_fit"]["slope"] if summary["kinetic_fit"] else None
    summary["slope_energy_expected"] = cfg.p / (2 * cfg.s + cfg.p)
    summary["slope_kinetic_expected"] = -2 * cfg.s / (2 * cfg.s + cfg.p)
    eps = [r.eps_a for r in records]
    summary["eps_decreasing"] = bool(all(b < a for a, b in zip(eps, eps[1:])))
    summary["lambda0_fitted"] = None
    last_w = None
    if cfg.constant_potential is None:
        try:
            last = records[-1]
            last_w = rescaled_profile(last_uc, last.beta_a, cfg.p, cfg.s)
            summary["lambda0_fitted"] = fit_lambda(last_w, ctx.q, ctx.lam0)
        except ValueError as exc:
            summary["errors"].append(f"lambda0_fitted: {exc}")
        x0 = np.asarray(cfg.x0, float)
        summary["x_a_distance"] = [cell_distance(r.x_a, x0) if np.all(np.isfinite(r.x_a)) else None for r in records]
    summary["partial"] = bool(summary["errors"]) or not all(r.converged for r in records)
    return SweepResult(records, summary, last_w)


def sweep_workers() -> int:
    """Worker cap from ``FNLS_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("FNLS_THREADS", "1")))
    except ValueError:
        return 1
