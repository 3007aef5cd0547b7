import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from choquard.constructions import (
    QUARTIC_BUMP,
    DegeneracyFamilyParams,
    GeometryError,
    GluedFamilyParams,
    big_enough_grid,
    cutoff_groundstate,
    decay_diagnostic,
    degeneracy_family,
    degeneracy_field,
    degeneracy_sweep,
    delta_sequence,
    embed,
    fourier_shift,
    glued_odd_function,
    polarize,
    quintic_cutoff,
    strict_gap_curve,
)
from choquard.functional import brackets, nonlocal_energy
from choquard.grid import Field, Grid, Params, gaussian, h1_inner, reflect, split_signs
from choquard.manifold import ray_maximum
from choquard.riesz import build_kernel
from choquard.solve import SolveOptions, canonical_groundstate_init, solve_groundstate

from conftest import CONFIG_A, CONFIG_B, bump_field

seeds = st.integers(min_value=0, max_value=2**31 - 1)


class TestCutoffs:
    def test_plateau_and_support(self):
        r = np.array([0.0, 0.5, 1.0, 2.0, 3.0])
        assert np.array_equal(quintic_cutoff(r, 1.0, 2.0), [1.0, 1.0, 1.0, 0.0, 0.0])
        mid = quintic_cutoff(1.5, 1.0, 2.0)
        assert mid == pytest.approx(0.5)

    @pytest.mark.parametrize("edge", [1.0, 2.0])
    def test_twice_differentiable_at_edges(self, edge):
        e = 1e-4
        f = lambda r: float(quintic_cutoff(r, 1.0, 2.0))  # noqa: E731
        first = (f(edge + e) - f(edge - e)) / (2 * e)
        second = (f(edge + e) - 2 * f(edge) + f(edge - e)) / e**2
        assert abs(first) < 1e-7
        assert abs(second) < 1e-3

    def test_monotone(self):
        v = quintic_cutoff(np.linspace(0, 3, 301), 1.0, 2.0)
        assert np.all(np.diff(v) <= 0)

    def test_bump_integrals_closed_form(self):
        # N=2: ∫|∇phi|^2 = 2 pi ∫ 16 r^3 (1-r^2)^2 dr = 4 pi / 3, ∫phi^2 = pi / 5
        ints = QUARTIC_BUMP.integrals(2, 1.0)
        assert ints["grad2"] == pytest.approx(4 * math.pi / 3, rel=1e-12)
        assert ints["l2"] == pytest.approx(math.pi / 5, rel=1e-12)
        assert ints["power"] == pytest.approx(math.pi / 3, rel=1e-12)


class TestEmbedding:
    def test_embed_keeps_values_and_origin(self):
        small = Grid(2, 32, 8.0)
        big = Grid(2, 64, 16.0)
        u = gaussian(small, 0.5, (0.5, 0.25))
        w = embed(u, big)
        assert h1_inner(w, w) == pytest.approx(h1_inner(u, u), rel=1e-10)
        assert np.array_equal(w.values[16:48, 16:48], u.values)

    def test_embed_rejects_other_spacing(self):
        with pytest.raises(GeometryError):
            embed(Grid(2, 32, 8.0).zeros(), Grid(2, 64, 20.0))

    def test_fourier_shift_matches_analytic(self):
        g = Grid(2, 64, 16.0)
        u = gaussian(g, 1.0)
        moved = fourier_shift(u, (0.3, -1.7))
        # the shifted tail at the box edge is ~exp(-6.3^2 / 2)
        assert np.abs(moved - gaussian(g, 1.0, (0.3, -1.7)).values).max() < 1e-8

    def test_big_enough_grid(self):
        g = big_enough_grid(Grid(2, 256, 40.0), 66.0)
        assert (g.n, g.L) == (1024, 160.0)
        assert big_enough_grid(Grid(2, 256, 40.0), 10.0) == Grid(2, 256, 40.0)


class TestGluedFamily:
    grid = Grid(2, 128, 40.0)

    def test_params_validation(self):
        for kw in ({"R": 0.0}, {"R": 1.0, "cutoff_inner": 2.0}, {"R": 1.0, "cutoff_outer": 2.5}):
            with pytest.raises(ValueError):
                GluedFamilyParams(**kw)
        assert GluedFamilyParams(3.0).reach == 12.0

    @pytest.mark.parametrize("R", [2.0, 3.0, 5.0])
    def test_odd_and_disjoint(self, R):
        v = gaussian(self.grid, 1.0)
        u = glued_odd_function(v, GluedFamilyParams(R))
        assert np.array_equal(reflect(u).values, -u.values)
        up, um = split_signs(u)
        assert not np.any(up.values * um.values)
        # the positive bump lives in the upper half-box
        assert not up.values[:, : self.grid.n // 2 + 1].any()
        # the bump centre 2R is off-node, so the sampled peak sits just below 1
        assert 0.99 < up.values.max() <= 1.0

    def test_geometry_violation(self):
        with pytest.raises(GeometryError):
            glued_odd_function(gaussian(self.grid, 1.0), GluedFamilyParams(6.0))

    def test_h1_gap_decreases(self):
        v = gaussian(self.grid, 1.0)
        q_v = h1_inner(v, v)
        gaps = []
        for R in (1.0, 1.5, 2.0, 3.0, 4.0):
            u = glued_odd_function(v, GluedFamilyParams(R))
            gaps.append(abs(2 * q_v - h1_inner(u, u)))
        assert all(b < a for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] < 1e-3 * q_v


@pytest.fixture(scope="module")
def gap_curve(groundstate_a):
    return strict_gap_curve(CONFIG_A, groundstate_a.minimizer, [4, 6, 8, 10, 12])


class TestStrictGap:
    def test_geometry(self, gap_curve):
        assert gap_curve.grid == Grid(2, 1024, 160.0)
        assert [r["R"] for r in gap_curve.rows] == [4, 6, 8, 10, 12]
        assert gap_curve.skipped == []

    def test_c0_matches_solver(self, gap_curve, groundstate_a):
        # zero padding leaves the H^1 norm and the linear-convolution bracket unchanged
        assert gap_curve.c_0 == pytest.approx(groundstate_a.level, rel=1e-9)

    def test_below_twice_groundstate(self, gap_curve):
        tail = gap_curve.rows[-3:]
        assert all(r["gap"] > 0 for r in tail)
        assert all(b["gap"] < a["gap"] for a, b in zip(tail, tail[1:]))

    def test_scaling_tends_to_one(self, gap_curve):
        t = [r["t_R"] for r in gap_curve.rows]
        assert abs(t[-1] - 1) < 0.05
        assert all(abs(b - 1) < abs(a - 1) for a, b in zip(t, t[1:]))

    def test_exponent(self, gap_curve):
        assert gap_curve.exponent == pytest.approx(-1.0, rel=0.15)
        assert gap_curve.coefficient > 0

    def test_csv(self, gap_curve, tmp_path):
        path = tmp_path / "gap.csv"
        gap_curve.write_csv(path)
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["R", "t_R", "action", "gap", "h1_gap"]
        assert len(rows) == 7 and rows[-1][0] == "# fitted exponent"

    def test_small_box_skips(self, groundstate_a):
        curve = strict_gap_curve(CONFIG_A, groundstate_a.minimizer, [4, 12],
                                 grid=Grid(2, 512, 80.0))
        assert [r["R"] for r in curve.rows] == [4.0]
        assert len(curve.skipped) == 1


class TestDegeneracyFamily:
    grid = Grid(2, 128, 40.0)

    def test_overlap_rejected(self):
        u0 = gaussian(self.grid, 2.0)
        dp = DegeneracyFamilyParams(1.0, (64, 64), u0)
        with pytest.raises(GeometryError):
            degeneracy_field(1.8, dp)

    def test_params_validation(self):
        u0 = self.grid.zeros()
        with pytest.raises(ValueError):
            DegeneracyFamilyParams(0.0, (0, 0), u0)
        with pytest.raises(ValueError):
            DegeneracyFamilyParams(1.0, (0,), u0)

    def test_needs_sublinear(self):
        with pytest.raises(ValueError):
            degeneracy_family(CONFIG_A, None, DegeneracyFamilyParams(1.0, (0, 0), self.grid.zeros()))

    def test_delta_sequence(self):
        d = delta_sequence(Grid(2, 256, 40.0))
        assert d[0] == 2.5 and d[-1] == pytest.approx(4 * 40 / 256)
        assert all(b == a / 2 for a, b in zip(d, d[1:]))

    def test_field_amplitude(self):
        g = self.grid
        u0 = Field(g, np.where(np.broadcast_to(g.radius, g.shape) < 5, 1.0, 0.0))
        dp = DegeneracyFamilyParams(2.0, (64 + 40, 64), u0)
        u = degeneracy_field(1.8, dp)
        assert u.values.min() == pytest.approx(-(2.0 ** (2 / 0.2)))


@pytest.fixture(scope="module")
def fine_sweep():
    # the delta^2 bias of s_minus is amplified by 1/(2-p); n=1024 is the
    # coarsest grid on which the raw smallest-delta value lands within 5%
    grid = Grid(2, 1024, 40.0)
    kernel = build_kernel(grid, 1.0)
    gs = solve_groundstate(CONFIG_B, kernel, SolveOptions(),
                           canonical_groundstate_init(grid, 0))
    return gs, degeneracy_sweep(CONFIG_B, kernel, gs.minimizer, gs.level)


class TestDegeneracySweep:
    def test_limit_of_scalings(self, fine_sweep):
        _, sweep = fine_sweep
        last = min(sweep.rows, key=lambda r: r["delta"])
        assert last["s_minus"] == pytest.approx(sweep.limit_minus, rel=0.05)
        assert last["s_plus"] == pytest.approx(1.0, rel=0.05)
        assert math.isfinite(sweep.extrapolated_minus(CONFIG_B.p))

    def test_converges_to_u0(self, fine_sweep):
        _, sweep = fine_sweep
        dist = [r["h1_distance"] for r in sweep.rows]
        assert all(b < a for a, b in zip(dist, dist[1:]))

    def test_action_bounds(self, fine_sweep):
        gs, sweep = fine_sweep
        opts = SolveOptions()
        assert all(r["action"] >= gs.level * (1 - opts.grad_tol) for r in sweep.rows)
        assert sweep.min_action <= 1.01 * gs.level

    def test_csv(self, fine_sweep, tmp_path):
        _, sweep = fine_sweep
        sweep.write_csv(tmp_path / "d.csv")
        rows = list(csv.reader(open(tmp_path / "d.csv")))
        assert rows[0][:3] == ["delta", "s_plus", "s_minus"]
        assert len(rows) == len(sweep.rows) + 1


def test_cutoff_groundstate_on_nehari(kernel_a, groundstate_b):
    w = cutoff_groundstate(CONFIG_B, kernel_a, groundstate_b.minimizer, 9.0)
    assert h1_inner(w, w) == pytest.approx(nonlocal_energy(CONFIG_B, kernel_a, w), rel=1e-12)
    r = np.broadcast_to(kernel_a.grid.radius, w.grid.shape)
    assert not w.values[r > 9.0 + 0.5].any()


class TestPolarize:
    grid = Grid(2, 64, 16.0)

    def field(self, seed):
        rng = np.random.default_rng(seed)
        cs = [rng.uniform(-3, 3, 2) for _ in range(4)]
        return bump_field(self.grid, cs, rng.uniform(-2, 2, 4), 1.5)

    def test_symmetric_unchanged(self):
        u = bump_field(self.grid, [(0.0, 0.0)], [1.0], 3.0)
        assert np.array_equal(polarize(u, 0, 32).values, u.values)
        assert np.array_equal(polarize(u, 1, 32, keep="above").values, u.values)

    @given(seeds, st.integers(28, 36), st.integers(0, 1), st.sampled_from(["below", "above"]))
    def test_permutation_of_samples(self, seed, node, axis, keep):
        u = self.field(seed)
        w = polarize(u, axis, node, keep)
        assert np.array_equal(np.sort(w.values, axis=None), np.sort(u.values, axis=None))
        assert np.sum(w.values**2) == pytest.approx(np.sum(u.values**2), rel=1e-14)
        assert np.sum(np.abs(w.values) ** 5) == pytest.approx(np.sum(np.abs(u.values) ** 5), rel=1e-14)
        assert np.array_equal(polarize(w, axis, node, keep).values, w.values)

    @pytest.mark.parametrize("mode", ["spectral", "truncated"])
    @given(seed=seeds, node=st.integers(28, 36), p=st.sampled_from([1.8, 2.5]))
    def test_bracket_does_not_decrease(self, mode, seed, node, p):
        params = Params(2, 1.0, p)
        kernel = build_kernel(self.grid, 1.0, mode)
        au = Field(self.grid, np.abs(self.field(seed).values))
        d0 = nonlocal_energy(params, kernel, au)
        d1 = nonlocal_energy(params, kernel, polarize(au, seed % 2, node))
        assert d1 >= d0 - 1e-9 * d0

    def test_moves_mass_to_kept_side(self):
        u = bump_field(self.grid, [(2.0, 0.0)], [1.0], 1.5)
        w = polarize(u, 0, 32, keep="below")
        assert np.argmax(w.values) // 64 < 32

    def test_bad_hyperplane(self):
        u = bump_field(self.grid, [(0.0, 0.0)], [1.0], 1.5)
        with pytest.raises(GeometryError):
            polarize(u, 0, 31.5)
        with pytest.raises(GeometryError):
            polarize(u, 0, 64)
        with pytest.raises(ValueError):
            polarize(u, 0, 32, keep="left")

    def test_stray_data(self):
        u = bump_field(self.grid, [(5.0, 0.0)], [1.0], 1.5)
        with pytest.raises(GeometryError):
            polarize(u, 0, 10)


class TestDecay:
    def test_narrow_bump(self, kernel_a):
        d = decay_diagnostic(CONFIG_A, kernel_a, gaussian(kernel_a.grid, 0.3))
        assert d.sup_deviation <= 0.02

    @pytest.mark.parametrize("which", ["a", "b"])
    def test_groundstate_trend(self, which, kernel_a, groundstate_a, groundstate_b):
        params, gs = (CONFIG_A, groundstate_a) if which == "a" else (CONFIG_B, groundstate_b)
        d = decay_diagnostic(params, kernel_a, gs.minimizer)
        devs = [r["ratio_deviation"] for r in d.rows]
        assert all(b < a for a, b in zip(devs, devs[1:]))
        assert d.sup_deviation < 0.05
        assert d.tail_slope < 0

    def test_exponential_tail(self, kernel_a, groundstate_a):
        d = decay_diagnostic(CONFIG_A, kernel_a, groundstate_a.minimizer)
        assert d.tail_linearity > 0.99

    def test_csv(self, kernel_a, tmp_path):
        d = decay_diagnostic(CONFIG_A, kernel_a, gaussian(kernel_a.grid, 0.5), bins=4)
        d.write_csv(tmp_path / "decay.csv")
        rows = list(csv.reader(open(tmp_path / "decay.csv")))
        assert len(rows) == 5 and rows[0][0] == "radius"


def test_ray_maximum_of_glued_field_is_its_action(kernel_a):
    g = kernel_a.grid
    u = glued_odd_function(gaussian(g, 1.0), GluedFamilyParams(3.0))
    br = brackets(CONFIG_A, kernel_a, u)
    assert br.d_pm > 0
    assert ray_maximum(CONFIG_A, (br.q_total, br.d_total)) > 0
