import math

import numpy as np
import pytest

from fracnls.functionals import critical_mass, energy, pohozaev_check, weinstein
from fracnls.potentials import PotentialSpec, sample_potential, spectral_bottom
from fracnls.solvers import (
    InitSpec,
    RadialProfile,
    ResolutionError,
    SolveReport,
    SolverConfig,
    SolverError,
    cutoff,
    gaussian,
    ground_state_residual,
    multistart_minimize,
    normalized_gradient_flow,
    petviashvili,
    petviashvili_step,
    test_function,
    test_function_energy,
    unboundedness_witness,
)
from fracnls.spectral import Field, make_grid, mass, random_smooth_field, shift

ASTAR = 2.4693355248  # d = 1, s = 1/2, extrapolated to the whole line


@pytest.fixture(scope="module")
def box():
    return make_grid(1, 2048, 16.0)


@pytest.fixture(scope="module")
def well_v(box):
    return sample_potential(PotentialSpec("periodic_power", kappa=1.0, p=2.0), box)


@pytest.fixture(scope="module")
def wide_v():
    # a spread state on a torus of length L keeps nonlinear energy ~ a^2 / 4L,
    # so lower bounds that hold on the line need a long box
    return sample_potential(PotentialSpec("periodic_power", kappa=1.0, p=2.0), make_grid(1, 4096, 64.0))


class TestConfig:
    @pytest.mark.parametrize(
        "kw", [dict(dt=0), dict(tol_grad=0), dict(tol_energy=-1), dict(max_iter=0),
               dict(petviashvili_gamma=1.0), dict(method="newton")]
    )
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            SolverConfig(**kw)

    def test_defaults(self):
        cfg = SolverConfig()
        assert (cfg.dt, cfg.tol_grad, cfg.tol_energy, cfg.max_iter) == (0.5, 1e-8, 1e-10, 200_000)
        assert cfg.gamma_for(2.0) == 1.5
        assert SolverConfig(petviashvili_gamma=1.2).gamma_for(2.0) == 1.2

    def test_init_spec(self):
        with pytest.raises(ValueError):
            InitSpec(kind="file")
        with pytest.raises(ValueError):
            InitSpec(kind="sobol")
        with pytest.raises(ValueError):
            InitSpec(width=0)

    def test_report_exclusive_flags(self):
        g = make_grid(1, 64, 8.0)
        e = energy(Field(g, np.zeros(64)), None, 0.5, 1.0)
        with pytest.raises(ValueError):
            SolveReport(True, 1, 0.0, e, 0.0, 0.0, diverged=True)


class TestPetviashvili:
    def test_closed_form_soliton(self, soliton_q):
        exact = 2.0 / (1.0 + soliton_q.grid.x1d**2)
        assert np.max(np.abs(soliton_q.values - exact)) / 2.0 <= 1e-2

    def test_closed_form_nearly_solves(self):
        # independent check on the oracle: plug 2/(1+x^2) into the residual
        g = make_grid(1, 8192, 256.0)
        assert ground_state_residual(Field(g, 2.0 / (1.0 + g.x1d**2)), 0.5, 1.0) < 1e-2

    def test_fixed_point(self, soliton_q):
        q2 = petviashvili_step(soliton_q, 0.5, 1.0)
        rel = np.linalg.norm(q2.values - soliton_q.values) / np.linalg.norm(soliton_q.values)
        assert rel <= 10 * 1e-11

    def test_output_real_nonnegative_centered(self, soliton_q):
        v = soliton_q.values
        assert np.isrealobj(v) and v.min() >= 0
        assert int(np.argmax(v)) == soliton_q.grid.n // 2

    @pytest.mark.parametrize("s,alpha", [(0.5, 1.0), (0.5, 2.0), (0.7, 2.8), (0.3, 1.0)])
    def test_pohozaev(self, s, alpha):
        q, rep = petviashvili(make_grid(1, 8192, 512.0), s, alpha, SolverConfig(tol_grad=1e-10))
        assert rep.converged
        chk = pohozaev_check(q, s, alpha)
        assert max(chk.r1, chk.r2) <= 1e-3 + chk.tail_fraction

    def test_zero_start(self):
        g = make_grid(1, 64, 16.0)
        with pytest.raises(SolverError):
            petviashvili(g, 0.5, 1.0, init=np.zeros(64))

    def test_not_converged_reported(self):
        _, rep = petviashvili(make_grid(1, 1024, 64.0), 0.5, 1.0, SolverConfig(max_iter=3))
        assert not rep.converged
        assert "no convergence" in rep.message

    def test_minimizes_weinstein(self, soliton_q):
        jq = weinstein(soliton_q, 0.5, 1.0)
        rng = np.random.default_rng(50)
        for _ in range(50):
            v = random_smooth_field(soliton_q.grid, rng, width_range=(0.5, 8.0))
            assert weinstein(v, 0.5, 1.0) >= jq * (1 - 1e-3)

    def test_two_dim(self):
        q, rep = petviashvili(make_grid(2, 128, 32.0), 0.6, 1.0, SolverConfig(tol_grad=1e-9))
        assert rep.converged
        v = q.values
        assert np.allclose(v, v.T, atol=1e-8 * v.max())


class TestGradientFlow:
    @pytest.mark.parametrize("method", ["semi_implicit", "pcg"])
    def test_subcritical_free(self, method):
        g = make_grid(1, 1024, 64.0)
        cfg = SolverConfig(method=method, tol_grad=1e-8, gradient_checks=True)
        u, rep = normalized_gradient_flow(g, 0.5, 1.0, None, 2.0, cfg)
        assert rep.converged, rep.message
        assert rep.energy.total < 0
        assert mass(u) == pytest.approx(2.0, rel=1e-13)
        assert max(rep.gradient_check_errors) <= 1e-6
        assert len(rep.gradient_check_errors) == 3

    @pytest.mark.parametrize("method", ["semi_implicit", "pcg"])
    def test_energy_monotone(self, box, well_v, method):
        cfg = SolverConfig(method=method, tol_grad=1e-8)
        _, rep = normalized_gradient_flow(box, 0.5, 2.0, well_v, 1.5, cfg)
        h = np.asarray(rep.energy_history)
        parts = rep.energy.kinetic + rep.energy.potential + rep.energy.nonlinear
        assert np.all(np.diff(h) <= 1e-12 * parts)

    def test_supercritical_mass_diverges(self):
        g = make_grid(1, 1024, 64.0)
        _, rep = normalized_gradient_flow(g, 0.5, 2.0, None, 1.05 * ASTAR, SolverConfig(max_iter=20000))
        assert rep.diverged and not rep.converged
        assert rep.message

    def test_minimizer_matches_scaled_ground_state(self, soliton_q):
        # free subcritical minimizer of mass ||Q||^2 is Q up to translation
        g = soliton_q.grid
        a = mass(soliton_q)
        u, rep = normalized_gradient_flow(g, 0.5, 1.0, None, a, SolverConfig(method="pcg", tol_grad=1e-9))
        assert rep.converged
        assert rep.multiplier == pytest.approx(-1.0, abs=1e-4)

    def test_rejects_bad_mass(self, box):
        with pytest.raises(ValueError):
            normalized_gradient_flow(box, 0.5, 1.0, None, 0.0)

    def test_init_size_mismatch(self, box):
        with pytest.raises(ValueError):
            normalized_gradient_flow(box, 0.5, 1.0, None, 1.0, init=np.ones(7))

    def test_deterministic(self, box, well_v):
        cfg = SolverConfig(method="pcg", init=InitSpec(width=0.5))
        a, _ = normalized_gradient_flow(box, 0.5, 2.0, well_v, 2.0, cfg)
        b, _ = normalized_gradient_flow(box, 0.5, 2.0, well_v, 2.0, cfg)
        assert np.array_equal(a.values, b.values)


class TestMultistart:
    def test_free_starts_agree(self):
        g = make_grid(1, 1024, 64.0)
        cfg = SolverConfig(method="pcg", init=InitSpec(kind="lattice_multistart", count=3))
        res = multistart_minimize(g, 0.5, 1.0, None, 2.0, cfg)
        e = np.asarray(res.energies)
        assert all(res.converged)
        assert np.ptp(e) <= 1e-6 * abs(e.min())

    def test_concentrates_near_well(self):
        g = make_grid(1, 1024, 16.0)
        spec = PotentialSpec("periodic_power", kappa=1.0, p=2.0, x0=(0.3,))
        V = sample_potential(spec, g)
        cfg = SolverConfig(method="pcg", init=InitSpec(kind="lattice_multistart", count=2, width=0.5))
        res = multistart_minimize(g, 0.5, 1.0, V, 6.0, cfg, wells=[np.array([0.3])])
        peak = g.x1d[int(np.argmax(res.field.values))]
        assert abs(((peak - 0.3) + 0.5) % 1.0 - 0.5) < 0.1

    def test_two_sided_bound_below_critical(self, wide_v):
        a = 0.9 * ASTAR
        res = multistart_minimize(wide_v.grid, 0.5, 2.0, wide_v, a, SolverConfig(method="pcg"))
        bottom = spectral_bottom(wide_v, 0.5, SolverConfig(tol_grad=1e-10)).value
        assert res.report.converged
        assert 0.0 < res.report.energy.total < a * bottom / 2

    def test_all_diverged(self):
        g = make_grid(1, 1024, 64.0)
        res = multistart_minimize(g, 0.5, 2.0, None, 1.2 * ASTAR, SolverConfig(max_iter=20000))
        assert res.diverged
        assert res.report.message.startswith("all starts diverged")


class TestCriticalMonotone:
    def test_energy_per_mass_nonincreasing(self, wide_v):
        cfg = SolverConfig(method="pcg")
        vals = []
        for a in (0.5, 1.0, 1.5, 2.0, 2.3):
            res = multistart_minimize(wide_v.grid, 0.5, 2.0, wide_v, a, cfg)
            assert res.report.converged
            vals.append(res.report.energy.total / a)
        assert np.all(np.diff(vals) <= 1e-6)
        assert min(vals) >= 0.0  # half the minimum of V


@pytest.fixture(scope="module")
def crit_profile():
    q, rep = petviashvili(make_grid(1, 8192, 256.0), 0.5, 2.0, SolverConfig(tol_grad=1e-11))
    assert rep.converged
    return q


class TestTestFunction:
    def test_cutoff_shape(self):
        r = np.linspace(0, 5, 501)
        c = cutoff(r, 1.0, 3.0)
        assert np.all(c[r <= 1] == 1) and np.all(c[r >= 3] == 0)
        assert np.all(np.diff(c) <= 0)

    @pytest.mark.parametrize("tau", [1.0, 3.0, 10.0])
    def test_mass_exact(self, crit_profile, tau):
        g = make_grid(1, 16384, 64.0)
        u = test_function(g, 1.7, tau, 0.0, crit_profile)
        assert mass(u) == pytest.approx(1.7, rel=1e-13)

    def test_resolution_rejected(self, crit_profile):
        g = make_grid(1, 256, 64.0)
        with pytest.raises(ResolutionError, match="N >="):
            test_function(g, 1.0, 200.0, 0.0, crit_profile)

    def test_free_supercritical_decreasing(self, crit_profile):
        g = make_grid(1, 16384, 64.0)
        taus = [1, 2, 4, 8]
        es = [test_function_energy(1.1 * ASTAR, t, 0.0, crit_profile, None, 0.5, 2.0, grid=g).total for t in taus]
        assert np.all(np.diff(es) < 0)
        assert es[-1] < 0

    def test_periodic_expansion(self, crit_profile):
        # E/a ~ (d/4s) beta tau^{2s} + V(x0)/2 with tau = beta^{-1/(4s)}
        g = make_grid(1, 16384, 64.0)
        V = sample_potential(PotentialSpec("periodic_power", kappa=1.0, p=2.0), g)
        a = ASTAR * (1 - 1e-2)
        beta = 1 - (a / ASTAR) ** 1.0  # 2s/d = 1
        tau = beta ** (-0.5)
        e = test_function_energy(a, tau, 0.0, crit_profile, V, 0.5, 2.0).total / a
        predicted = 0.5 * beta * tau + 0.0
        assert e == pytest.approx(predicted, rel=0.25)

    def test_upper_bound(self, box, well_v, crit_profile):
        a = 2.0
        res = multistart_minimize(box, 0.5, 2.0, well_v, a, SolverConfig(method="pcg"))
        for tau in (1.0, 2.0, 4.0):
            ub = test_function_energy(a, tau, 0.0, crit_profile, well_v, 0.5, 2.0).total
            assert res.report.energy.total <= ub

    def test_radial_profile_tail(self, crit_profile):
        prof = RadialProfile(crit_profile)
        assert prof.tail_power == pytest.approx(-2.0, abs=0.3)
        r = np.array([0.0, 1.0, 10.0])
        assert np.allclose(prof(r), np.interp(r, crit_profile.grid.x1d, crit_profile.values), rtol=1e-6)


class TestWitness:
    @pytest.mark.parametrize("a", [4.0, 10.0])
    def test_supercritical_exponent(self, a):
        w = unboundedness_witness(make_grid(1, 4096, 64.0), 0.5, 3.0, None, a)
        assert w.unbounded
        assert w.slope >= 0.9 * 1.5

    def test_small_mass_hits_resolution(self):
        # the collapse scale grows like a^-3 for alpha = 3; this grid cannot follow it
        w = unboundedness_witness(make_grid(1, 1024, 64.0), 0.5, 3.0, None, 1.0)
        assert w.verdict == "inconclusive"
        assert "resolution limit" in w.diagnostics["dilation"]["note"]

    def test_subcritical_inconclusive(self):
        w = unboundedness_witness(make_grid(1, 4096, 64.0), 0.5, 1.0, None, 1.0)
        assert w.verdict == "inconclusive"

    def test_critical_above_threshold(self):
        w = unboundedness_witness(make_grid(1, 16384, 64.0), 0.5, 2.0, None, 1.2 * ASTAR)
        assert w.unbounded
        assert w.branch == "test_function"
        d = w.to_dict()
        assert d["verdict"] == "unbounded-below" and len(d["energies"]) >= 3

    def test_critical_below_threshold(self):
        w = unboundedness_witness(make_grid(1, 8192, 64.0), 0.5, 2.0, None, 0.8 * ASTAR)
        assert w.verdict == "inconclusive"


def test_gaussian_center():
    g = make_grid(2, 64, 8.0)
    v = gaussian(g, 0.5, (1.0, -1.0))
    i = np.unravel_index(np.argmax(v), v.shape)
    assert (g.coords[0][i], g.coords[1][i]) == (1.0, -1.0)


def test_translation_does_not_change_free_energy(soliton_q):
    e1 = energy(soliton_q, None, 0.5, 1.0).total
    e2 = energy(shift(soliton_q, 3.3), None, 0.5, 1.0).total
    assert e2 == pytest.approx(e1, rel=1e-12)
