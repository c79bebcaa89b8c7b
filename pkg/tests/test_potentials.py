import numpy as np
import pytest

from fracnls.potentials import (
    PotentialError,
    PotentialSpec,
    sample_potential,
    snap_well,
    spectral_bottom,
    validate_v2,
    validate_v3,
    well_points,
)
from fracnls.solvers import SolverConfig
from fracnls.spectral import Field, make_grid

CFG = SolverConfig(tol_grad=1e-10, max_iter=20000)


def well(kappa=1.0, p=2.0, x0=(0.0,)):
    return PotentialSpec("periodic_power", kappa=kappa, p=p, x0=x0)


@pytest.fixture(scope="module")
def grid8():
    return make_grid(1, 256, 8.0)


class TestSpec:
    @pytest.mark.parametrize("kw", [dict(kappa=0.0), dict(kappa=-1.0), dict(x0=(1.0,)), dict(x0=(-0.1,))])
    def test_bad_fields(self, kw):
        with pytest.raises(PotentialError):
            PotentialSpec("periodic_power", **kw)

    def test_unknown_kind(self):
        with pytest.raises(PotentialError, match="unknown"):
            PotentialSpec("harmonic")

    @pytest.mark.parametrize("d,s,p,ok", [(1, 0.5, 2.9, True), (1, 0.5, 3.0, False), (2, 0.5, 3.9, True), (1, 0.3, 0.0, False)])
    def test_exponent_window(self, d, s, p, ok):
        spec = well(p=p)
        if ok:
            spec.check_exponent(d, s)
        else:
            with pytest.raises(PotentialError, match="d \\+ 4s"):
                spec.check_exponent(d, s)


class TestSample:
    def test_zero_at_well(self, grid8):
        v = sample_potential(well(x0=(0.25,)), grid8)
        lattice = np.isclose(np.mod(grid8.x1d - 0.25 + 0.5, 1.0) - 0.5, 0.0, atol=1e-12)
        assert lattice.sum() == 8
        assert np.all(v.values[lattice] == 0.0)
        assert np.all(v.values[~lattice] > 0.0)

    def test_quadratic_near_well(self):
        g = make_grid(1, 4096, 16.0)
        v = sample_potential(well(), g)
        near = (np.abs(g.x1d) <= 0.05) & (g.x1d != 0)
        ratio = v.values[near] / g.x1d[near] ** 2
        assert np.max(np.abs(ratio - 1)) < 0.01

    def test_period_one(self, grid8):
        v = sample_potential(well(kappa=2.0, p=1.3, x0=(0.1,)), grid8).values
        per = round(1 / grid8.h)
        assert np.array_equal(v, np.roll(v, per))

    def test_two_dim_zero_set(self):
        g = make_grid(2, 64, 4.0)
        v = sample_potential(well(x0=(0.5, 0.25)), g).values
        assert np.count_nonzero(v == 0.0) == 16
        assert v.min() == 0.0

    def test_non_integer_length_rejected(self):
        with pytest.raises(PotentialError, match="integer"):
            sample_potential(well(), make_grid(1, 64, 7.5))

    def test_cells_per_period_mismatch(self):
        spec = PotentialSpec("periodic_power", cells_per_period=16)
        with pytest.raises(PotentialError, match="cells_per_period"):
            sample_potential(spec, make_grid(1, 256, 8.0))

    def test_snap_reports_distance(self):
        g = make_grid(1, 64, 8.0)  # h = 1/8
        x0, dist = snap_well(well(x0=(0.3,)), g)
        assert x0[0] == pytest.approx(0.25)
        assert dist == pytest.approx(0.05)

    def test_well_points_cover_torus(self, grid8):
        pts = well_points(well(x0=(0.5,)), grid8)
        assert sorted(float(p[0]) for p in pts) == [-3.5, -2.5, -1.5, -0.5, 0.5, 1.5, 2.5, 3.5]

    def test_zero_kind(self, grid8):
        assert not np.any(sample_potential(PotentialSpec(), grid8).values)


class TestV3:
    @pytest.mark.parametrize("kappa,p,tol_k", [(1.0, 2.0, 0.05), (3.0, 1.0, 0.1), (0.5, 2.7, 0.05)])
    def test_recovers_well(self, kappa, p, tol_k):
        fit = validate_v3(well(kappa, p), make_grid(1, 4096, 16.0))
        assert fit.p_hat == pytest.approx(p, abs=0.05)
        assert fit.kappa_hat == pytest.approx(kappa, abs=tol_k)
        assert fit.radii >= 8

    def test_zero_rejected(self, grid8):
        with pytest.raises(PotentialError):
            validate_v3(PotentialSpec(), grid8)

    def test_window_too_small(self):
        with pytest.raises(PotentialError, match="need 8"):
            validate_v3(well(), make_grid(1, 64, 16.0))


class TestSpectralBottom:
    def test_free(self, grid8):
        rep = spectral_bottom(Field(grid8, np.zeros(grid8.shape)), 0.5, CFG)
        assert abs(rep.value) <= 1e-10
        assert rep.residual <= 1e-10
        vals = rep.eigenfield.values.real
        assert np.ptp(vals) <= 1e-8 * np.max(np.abs(vals))

    @pytest.mark.parametrize("c", [0.7, 5.0])
    def test_constant(self, grid8, c):
        rep = spectral_bottom(Field(grid8, np.full(grid8.shape, c)), 0.5, CFG)
        assert rep.value == pytest.approx(c, abs=1e-9)

    def test_positive_above_min(self, grid8):
        V = sample_potential(well(), grid8)
        rep = spectral_bottom(V, 0.5, CFG)
        assert rep.converged
        assert rep.value > 0.05
        assert rep.value >= V.values.min() - rep.residual

    def test_shift_covariance(self, grid8):
        V = sample_potential(well(p=1.5), grid8)
        a = spectral_bottom(V, 0.5, CFG).value
        b = spectral_bottom(Field(grid8, V.values + 1.0), 0.5, CFG).value
        assert b == pytest.approx(a + 1.0, abs=1e-8)

    def test_monotone(self, grid8):
        lo = spectral_bottom(sample_potential(well(kappa=1.0), grid8), 0.5, CFG).value
        hi = spectral_bottom(sample_potential(well(kappa=2.0), grid8), 0.5, CFG).value
        assert lo <= hi + 1e-8

    @pytest.mark.parametrize("s", [0.3, 0.8])
    def test_eigenfield_single_sign(self, grid8, s):
        u = spectral_bottom(sample_potential(well(p=1.0, x0=(0.4,)), grid8), s, CFG).eigenfield.values.real
        u = u * np.sign(u[np.argmax(np.abs(u))])
        assert np.all(u > 0)

    def test_complex_potential_rejected(self, grid8):
        with pytest.raises(PotentialError):
            spectral_bottom(Field(grid8, 1j * np.ones(grid8.shape)), 0.5, CFG)


class TestV2:
    def test_zero_fails(self, grid8):
        assert not validate_v2(Field(grid8, np.zeros(grid8.shape)), 0.5, CFG)

    def test_constant_fails(self, grid8):
        chk = validate_v2(Field(grid8, np.full(grid8.shape, 5.0)), 0.5, CFG)
        assert not chk.holds
        assert abs(chk.margin) <= 1e-8

    @pytest.mark.parametrize("kappa,p", [(1.0, 2.0), (3.0, 1.0), (0.2, 2.5)])
    def test_power_well_holds(self, grid8, kappa, p):
        chk = validate_v2(sample_potential(well(kappa, p), grid8), 0.5, CFG)
        assert chk.holds
        assert chk.margin > 0
        assert chk.min_v == 0.0
        assert set(chk.to_dict()) == {"holds", "margin", "min_v", "bottom", "residual"}
