"""Command line: ``fracnls <subcommand> [options]``.

Exit codes: 0 success, 2 invalid input, 3 solver did not converge,
4 divergence where a converged solve was requested.
"""

from __future__ import annotations

import argparse
import logging
import math
import re
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .blowup import GridPolicy, SweepConfig, run_sweep, sweep_workers
from .functionals import (
    AdmissibilityError,
    check_alpha,
    critical_exponent,
    decay_fit,
    energy,
    gn_constant,
    pohozaev_check,
    sobolev_exponent,
)
from .io import FieldFormatError, NonFiniteError, read_field_with_header, write_field, write_report, write_text
from .potentials import PotentialError, PotentialSpec, sample_potential, validate_v2, well_points
from .solvers import (
    InitSpec,
    SolverConfig,
    critical_ground_state,
    extrapolated_critical_mass,
    multistart_minimize,
    petviashvili,
    unboundedness_witness,
)
from .spectral import Field, GridError, make_grid

log = logging.getLogger("fracnls")

EXIT_OK, EXIT_INVALID, EXIT_NOT_CONVERGED, EXIT_DIVERGED = 0, 2, 3, 4


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


# --- configuration -------------------------------------------------------------------------


@dataclass
class GridSettings:
    n: int
    length: float
    points_per_width: float = 20.0
    n_max: int = 1 << 20
    tail_tol: float = 1e-8


@dataclass
class OutputSettings:
    directory: str = "."
    formats: tuple = ("json",)


@dataclass
class RunConfig:
    d: int
    s: float
    alpha: float
    alpha_is_critical: bool
    mass: Optional[float]
    mass_expr: Optional[str]
    grid: GridSettings
    potential: PotentialSpec
    solver: SolverConfig
    output: OutputSettings
    schedule: Optional[tuple] = None  # exponents j of a = a*(1 - 2^-j)
    masses: Optional[tuple] = None

    def semantic_dict(self) -> dict:
        """Everything that affects results; the output location is left out."""
        out = {
            "problem": {"d": self.d, "s": self.s, "alpha": self.alpha, "a": self.mass_expr if self.mass_expr else self.mass},
            "grid": asdict(self.grid),
            "potential": self.potential.to_dict(),
            "solver": _solver_dict(self.solver),
        }
        if self.schedule is not None:
            out["problem"]["schedule"] = list(self.schedule)
        if self.masses is not None:
            out["problem"]["masses"] = list(self.masses)
        return out


def _solver_dict(cfg: SolverConfig) -> dict:
    d = asdict(cfg)
    d["init"] = {k: v for k, v in d["init"].items() if v is not None}
    return {k: v for k, v in d.items() if v is not None}


_MASS_EXPR = re.compile(r"^\s*(?:([0-9.eE+-]+)\s*\*\s*)?a_star\s*$")

DEFAULT_N = {1: 4096, 2: 512}
DEFAULT_L = 128.0


def _get(section: dict, key: str, where: str, kind, default=None, required=False):
    if key not in section:
        if required:
            raise ConfigError(f"[{where}].{key}: missing")
        return default
    val = section[key]
    try:
        if kind is int and (isinstance(val, bool) or not float(val).is_integer()):
            raise ValueError
        return kind(val)
    except (TypeError, ValueError):
        raise ConfigError(f"[{where}].{key}: expected {kind.__name__}, got {val!r}") from None


def _is_pow2(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def build_config(doc: dict) -> RunConfig:
    """Validate a parsed TOML document (or equivalent dict) into a :class:`RunConfig`."""
    known = {"problem", "grid", "potential", "solver", "output", "sweep"}
    for key in doc:
        if key not in known:
            raise ConfigError(f"[{key}]: unknown section")
    prob = doc.get("problem")
    if prob is None:
        raise ConfigError("[problem]: missing section")
    d = _get(prob, "d", "problem", int, required=True)
    if d not in (1, 2):
        raise ConfigError(f"[problem].d: dimension must be 1 or 2, got {d}")
    s = _get(prob, "s", "problem", float, required=True)
    if not 0 < s < 1:
        raise ConfigError(f"[problem].s: must lie in (0, 1), got {s}")
    raw_alpha = prob.get("alpha", "critical")
    if isinstance(raw_alpha, str):
        if raw_alpha != "critical":
            raise ConfigError(f"[problem].alpha: expected a number or \"critical\", got {raw_alpha!r}")
        alpha, crit = critical_exponent(d, s), True
    else:
        alpha = _get(prob, "alpha", "problem", float)
        crit = math.isclose(alpha, critical_exponent(d, s), rel_tol=1e-14)
    if not alpha > 0:
        raise ConfigError(f"[problem].alpha: must be positive, got {alpha}")
    if alpha >= sobolev_exponent(d, s):
        raise ConfigError(
            f"[problem].alpha: alpha >= 4s/(d-2s) = {sobolev_exponent(d, s):g}: exceeds the Sobolev exponent s*, "
            "the energy is not defined"
        )
    mass_val, mass_expr = None, None
    if "a" in prob:
        raw = prob["a"]
        if isinstance(raw, str):
            m = _MASS_EXPR.match(raw)
            if not m:
                raise ConfigError(f"[problem].a: expected a number or \"<factor>*a_star\", got {raw!r}")
            if not crit:
                raise ConfigError("[problem].a: a_star is only defined at the critical exponent alpha = 4s/d")
            mass_expr = raw.replace(" ", "")
        else:
            mass_val = _get(prob, "a", "problem", float)
            if not mass_val > 0:
                raise ConfigError(f"[problem].a: mass must be positive, got {mass_val}")

    sweep = doc.get("sweep", {})
    schedule = masses = None
    if "schedule" in sweep:
        schedule = tuple(int(j) for j in sweep["schedule"])
    elif "jmin" in sweep or "jmax" in sweep:
        jmin = _get(sweep, "jmin", "sweep", int, 2)
        jmax = _get(sweep, "jmax", "sweep", int, 10)
        if jmax < jmin:
            raise ConfigError("[sweep].jmax: must be >= jmin")
        schedule = tuple(range(jmin, jmax + 1))
    if "masses" in sweep:
        masses = tuple(float(m) for m in sweep["masses"])
    for name, seq in (("schedule", schedule), ("masses", masses)):
        if seq is not None:
            if not seq:
                raise ConfigError(f"[sweep].{name}: empty mass schedule")
            if any(b <= a for a, b in zip(seq, seq[1:])):
                raise ConfigError(f"[sweep].{name}: must be strictly increasing")

    gsec = doc.get("grid", {})
    n = _get(gsec, "N", "grid", int, DEFAULT_N[d])
    if not _is_pow2(n) or n < 64:
        raise ConfigError(f"[grid].N: must be a power of two >= 64, got {n}")
    length = _get(gsec, "L", "grid", float, DEFAULT_L)
    if not length > 0:
        raise ConfigError(f"[grid].L: must be positive, got {length}")
    grid = GridSettings(
        n, length,
        _get(gsec, "points_per_width", "grid", float, 20.0),
        _get(gsec, "n_max", "grid", int, 1 << 20),
        _get(gsec, "tail_tol", "grid", float, 1e-8),
    )

    psec = dict(doc.get("potential", {"kind": "zero"}))
    try:
        pot = PotentialSpec(
            kind=str(psec.get("kind", "periodic_power")),
            kappa=float(psec.get("kappa", 1.0)),
            p=float(psec.get("p", 2.0)),
            x0=tuple(np.atleast_1d(psec.get("x0", [0.0] * d)).astype(float)),
            cells_per_period=psec.get("cells_per_period"),
        )
        pot.check_exponent(d, s)
        if pot.kind == "periodic_power":
            pot.x0_for(d)
            if abs(length - round(length)) > 1e-9 or round(length) < 1:
                raise PotentialError(f"L = {length} is not a multiple of the unit period (V1)")
            cpp = pot.cells_per_period
            if cpp is not None and cpp * round(length) != n:
                raise PotentialError(f"cells_per_period = {cpp} times L = {length} must equal N = {n}")
    except PotentialError as exc:
        raise ConfigError(f"[potential]: {exc}") from None

    ssec = doc.get("solver", {})
    try:
        init = InitSpec(
            kind=str(ssec.get("init", "gaussian")),
            width=float(ssec.get("init_width", 1.0)),
            path=ssec.get("init_path"),
            count=int(ssec.get("random_starts", 0)),
        )
        solver = SolverConfig(
            dt=_get(ssec, "dt", "solver", float, 0.5),
            tol_grad=_get(ssec, "tol_grad", "solver", float, 1e-8),
            tol_energy=_get(ssec, "tol_energy", "solver", float, 1e-10),
            max_iter=_get(ssec, "max_iter", "solver", int, 200_000),
            petviashvili_gamma=_get(ssec, "petviashvili_gamma", "solver", float),
            init=init,
            rng_seed=_get(ssec, "seed", "solver", int, 0),
            method=str(ssec.get("method", "semi_implicit")),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[solver]: {exc}") from None

    osec = doc.get("output", {})
    formats = tuple(osec.get("formats", ["json"]))
    bad = set(formats) - {"csv", "json", "field"}
    if bad:
        raise ConfigError(f"[output].formats: unknown format(s) {sorted(bad)}")
    output = OutputSettings(str(osec.get("directory", ".")), formats)
    return RunConfig(d, s, alpha, crit, mass_val, mass_expr, grid, pot, solver, output, schedule, masses)


def parse_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such file")
    try:
        doc = tomllib.loads(path.read_text(encoding="utf-8"))
    except UnicodeDecodeError as exc:
        raise ConfigError(f"{path}: not UTF-8 ({exc})") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    try:
        return build_config(doc)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def resolve_mass(cfg: RunConfig) -> float:
    if cfg.mass is not None:
        return cfg.mass
    if cfg.mass_expr is None:
        raise ConfigError("[problem].a: missing")
    m = _MASS_EXPR.match(cfg.mass_expr)
    factor = float(m.group(1)) if m.group(1) else 1.0
    return factor * critical_mass_for(cfg.d, cfg.s)


def critical_mass_for(d: int, s: float) -> float:
    if d == 1:
        return extrapolated_critical_mass(d, s)[0]
    _, rep = critical_ground_state(d, s, 256, 32.0)
    return rep.mass


# --- argument handling -----------------------------------------------------------------------


def _overlay(doc: dict, args: argparse.Namespace) -> dict:
    """Command-line flags override file values."""
    doc = {k: dict(v) if isinstance(v, dict) else v for k, v in doc.items()}
    prob = doc.setdefault("problem", {})
    for flag, key in (("d", "d"), ("s", "s"), ("alpha", "alpha"), ("a", "a")):
        val = getattr(args, flag, None)
        if val is not None:
            prob[key] = val
    grid = doc.setdefault("grid", {})
    for flag, key in (("n", "N"), ("length", "L")):
        val = getattr(args, flag, None)
        if val is not None:
            grid[key] = val
    pot_flags = {k: getattr(args, k, None) for k in ("potential", "kappa", "p", "x0")}
    if any(v is not None for v in pot_flags.values()):
        pot = doc.setdefault("potential", {"kind": "periodic_power"})
        if pot_flags["potential"] is not None:
            pot["kind"] = pot_flags["potential"]
        for k in ("kappa", "p", "x0"):
            if pot_flags[k] is not None:
                pot[k] = pot_flags[k]
    solver = doc.setdefault("solver", {})
    for flag, key in (("method", "method"), ("tol", "tol_grad"), ("max_iter", "max_iter"), ("seed", "seed"),
                      ("random_starts", "random_starts"), ("init_width", "init_width"), ("dt", "dt")):
        val = getattr(args, flag, None)
        if val is not None:
            solver[key] = val
    sweep = doc.setdefault("sweep", {})
    for flag in ("jmin", "jmax"):
        val = getattr(args, flag, None)
        if val is not None:
            sweep[flag] = val
            sweep.pop("schedule", None)
    if not sweep:
        doc.pop("sweep")
    return doc


def _alpha_arg(text: str):
    if text == "critical":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"alpha must be a number or 'critical', got {text!r}") from None


def _mass_arg(text: str):
    try:
        return float(text)
    except ValueError:
        if _MASS_EXPR.match(text):
            return text
        raise argparse.ArgumentTypeError(f"a must be a number or '<factor>*a_star', got {text!r}") from None


def _problem_flags(p: argparse.ArgumentParser, mass: bool = False) -> None:
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--d", type=int)
    p.add_argument("--s", type=float)
    p.add_argument("--alpha", type=_alpha_arg, help="number or 'critical'")
    if mass:
        p.add_argument("--a", type=_mass_arg, help="mass, or e.g. 0.9*a_star")
    p.add_argument("--N", dest="n", type=int)
    p.add_argument("--L", dest="length", type=float)
    p.add_argument("--timing", action="store_true", help="record wall time in reports")
    p.add_argument("--report", help="JSON report path (default: stdout)")


def _potential_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--potential", choices=("zero", "periodic_power"))
    p.add_argument("--kappa", type=float)
    p.add_argument("--p", type=float)
    p.add_argument("--x0", type=float, nargs="+")


def _solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", choices=("semi_implicit", "pcg"))
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", dest="max_iter", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--random-starts", dest="random_starts", type=int)
    p.add_argument("--init-width", dest="init_width", type=float)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracnls", description="Fractional NLS ground states, minimizers and blow-up sweeps.")
    ap.add_argument("--version", action="version", version=f"fracnls {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("groundstate", help="ground state by Petviashvili iteration, with checks")
    _problem_flags(p)
    _solver_flags(p)
    p.add_argument("--out", help="write the ground state to this .field file")

    p = sub.add_parser("minimize", help="constrained energy minimization at one mass")
    _problem_flags(p, mass=True)
    _potential_flags(p)
    _solver_flags(p)
    p.add_argument("--out", help="write the minimizer to this .field file")

    p = sub.add_parser("spectrum", help="bottom of the spectrum of (-Delta)^s + V and the gap check")
    _problem_flags(p)
    _potential_flags(p)
    _solver_flags(p)

    p = sub.add_parser("check", help="functionals of a stored field")
    p.add_argument("what", choices=("pohozaev", "gn", "decay", "energy", "all"))
    p.add_argument("field")
    p.add_argument("--s", type=float, help="default: s_used from the file header")
    p.add_argument("--alpha", type=_alpha_arg, default=None, help="default: critical 4s/d")
    p.add_argument("--window", type=float, nargs=2, help="decay fit window (default 10, L/8)")
    p.add_argument("--report")
    p.add_argument("--timing", action="store_true")

    p = sub.add_parser("sweep", help="blow-up sweep toward a*")
    _problem_flags(p)
    _potential_flags(p)
    _solver_flags(p)
    p.add_argument("--jmin", type=int)
    p.add_argument("--jmax", type=int)
    p.add_argument("--out", help="output directory (default: [output].directory)")

    p = sub.add_parser("witness", help="probe whether the energy is unbounded below")
    _problem_flags(p, mass=True)
    _potential_flags(p)
    return ap


def _load(args: argparse.Namespace) -> RunConfig:
    doc = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"{path}: no such file")
        try:
            doc = tomllib.loads(path.read_text(encoding="utf-8"))
        except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
    doc = _overlay(doc, args)
    return build_config(doc)


def _emit(args, payload: dict, cfg_dict: dict, started: float) -> None:
    wall = time.perf_counter() - started if getattr(args, "timing", False) else None
    if getattr(args, "report", None):
        write_report(args.report, payload, cfg_dict, wall)
    else:
        from .io import dumps, envelope

        sys.stdout.write(dumps(envelope(payload, cfg_dict, wall)))


def _decay_window(L: float) -> tuple[float, float]:
    hi = L / 8
    return (min(10.0, hi / 4), hi)


# --- subcommands -----------------------------------------------------------------------------------


def cmd_groundstate(args, cfg: RunConfig, started: float) -> int:
    grid = make_grid(cfg.d, cfg.grid.n, cfg.grid.length)
    q, rep = petviashvili(grid, cfg.s, cfg.alpha, cfg.solver)
    payload = {"solve": rep.to_dict(), "alpha": cfg.alpha, "mass": rep.mass}
    if rep.converged:
        payload["pohozaev"] = pohozaev_check(q, cfg.s, cfg.alpha).to_dict()
        payload["gn"] = gn_constant(q, cfg.s, cfg.alpha, strict=False).to_dict()
        try:
            payload["decay"] = decay_fit(q, _decay_window(cfg.grid.length)).to_dict()
        except ValueError as exc:
            payload["decay"] = {"error": str(exc)}
    if args.out:
        write_field(args.out, q, s_used=cfg.s)
        payload["field"] = str(args.out)
    _emit(args, payload, cfg.semantic_dict(), started)
    return EXIT_OK if rep.converged else EXIT_NOT_CONVERGED


def cmd_minimize(args, cfg: RunConfig, started: float) -> int:
    a = resolve_mass(cfg)
    grid = make_grid(cfg.d, cfg.grid.n, cfg.grid.length)
    V = sample_potential(cfg.potential, grid)
    res = multistart_minimize(grid, cfg.s, cfg.alpha, V, a, cfg.solver, wells=well_points(cfg.potential, grid))
    rep = res.report
    payload = {
        "a": a,
        "solve": rep.to_dict(),
        "starts": [{"label": lab, "energy": e, "converged": c}
                   for lab, e, c in zip(res.labels, res.energies, res.converged)],
    }
    if rep.diverged:
        payload["verdict"] = "diverged: energy appears unbounded below at this mass"
    if args.out:
        write_field(args.out, res.field, s_used=cfg.s)
        payload["field"] = str(args.out)
    _emit(args, payload, cfg.semantic_dict() | {"a_resolved": a}, started)
    if rep.diverged:
        return EXIT_DIVERGED
    return EXIT_OK if rep.converged else EXIT_NOT_CONVERGED


def cmd_spectrum(args, cfg: RunConfig, started: float) -> int:
    grid = make_grid(cfg.d, cfg.grid.n, cfg.grid.length)
    V = sample_potential(cfg.potential, grid)
    chk = validate_v2(V, cfg.s, cfg.solver)
    payload = {"spectral_bottom": chk.bottom, "v2": chk.to_dict()}
    _emit(args, payload, cfg.semantic_dict(), started)
    return EXIT_OK if math.isfinite(chk.residual) and chk.residual < 1e-4 else EXIT_NOT_CONVERGED


def cmd_check(args, started: float) -> int:
    u, head = read_field_with_header(args.field)
    s = args.s if args.s is not None else head.get("s_used")
    if s is None:
        raise ConfigError("--s: the field header has no s_used; pass --s")
    d = u.grid.dim
    alpha = critical_exponent(d, s) if args.alpha in (None, "critical") else float(args.alpha)
    check_alpha(d, s, alpha)
    payload: dict[str, Any] = {"mass": float(np.sum(np.abs(u.values) ** 2) * u.grid.cell_volume)}
    what = args.what
    if what in ("pohozaev", "all"):
        r = pohozaev_check(u, s, alpha)
        payload["pohozaev"] = r.to_dict()
    if what in ("gn", "all"):
        payload["gn"] = gn_constant(u, s, alpha, strict=False).to_dict()
    if what in ("decay", "all"):
        window = tuple(args.window) if args.window else _decay_window(u.grid.length)
        payload["decay"] = decay_fit(u, window).to_dict()
    if what in ("energy", "all"):
        payload["energy"] = energy(u, None, s, alpha).to_dict()
    cfg_dict = {"field": head, "s": s, "alpha": alpha, "what": what}
    _emit(args, payload, cfg_dict, started)
    return EXIT_OK


def cmd_sweep(args, cfg: RunConfig, started: float) -> int:
    if not cfg.alpha_is_critical:
        raise ConfigError("[problem].alpha: sweeps run at the critical exponent alpha = 4s/d")
    if cfg.potential.kind != "periodic_power":
        raise ConfigError("[potential].kind: sweeps need a periodic_power potential")
    pol = GridPolicy(length=cfg.grid.length, n_min=cfg.grid.n, n_max=cfg.grid.n_max,
                     points_per_width=cfg.grid.points_per_width, tail_tol=cfg.grid.tail_tol)
    sc = SweepConfig(
        d=cfg.d, s=cfg.s, p=cfg.potential.p, kappa=cfg.potential.kappa, x0=cfg.potential.x0_for(cfg.d).tolist(),
        schedule=cfg.schedule or tuple(range(2, 11)), masses=cfg.masses,
        solver=cfg.solver, grid=pol, workers=sweep_workers(),
    )
    res = run_sweep(sc)
    out = Path(args.out or cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    write_text(out / "sweep.csv", res.csv(cfg.d))
    wall = time.perf_counter() - started if args.timing else None
    cfg_dict = cfg.semantic_dict()
    write_report(out / "summary.json", res.summary, cfg_dict, wall)
    if "field" in cfg.output.formats and res.last_profile is not None:
        write_field(out / "last_profile.field", res.last_profile, s_used=cfg.s)
    sys.stdout.write(f"{out / 'sweep.csv'}\n{out / 'summary.json'}\n")
    return EXIT_OK if all(r.converged for r in res.records) else EXIT_NOT_CONVERGED


def cmd_witness(args, cfg: RunConfig, started: float) -> int:
    a = resolve_mass(cfg)
    grid = make_grid(cfg.d, cfg.grid.n, cfg.grid.length)
    V = sample_potential(cfg.potential, grid)
    w = unboundedness_witness(grid, cfg.s, cfg.alpha, V, a)
    _emit(args, {"a": a, **w.to_dict()}, cfg.semantic_dict() | {"a_resolved": a}, started)
    return EXIT_OK


def dispatch(argv: Optional[list] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on bad usage, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_INVALID
    started = time.perf_counter()
    try:
        if args.command == "check":
            return cmd_check(args, started)
        cfg = _load(args)
        handler = {
            "groundstate": cmd_groundstate,
            "minimize": cmd_minimize,
            "spectrum": cmd_spectrum,
            "sweep": cmd_sweep,
            "witness": cmd_witness,
        }[args.command]
        return handler(args, cfg, started)
    except NonFiniteError as exc:
        print(f"fracnls {args.command}: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (ConfigError, AdmissibilityError, PotentialError, FieldFormatError, GridError, ValueError) as exc:
        print(f"fracnls {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(dispatch())
