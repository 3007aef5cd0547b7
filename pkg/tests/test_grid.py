import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from choquard.functional import action, brackets
from choquard.grid import (
    Field,
    Grid,
    GridMismatchError,
    Params,
    antisymmetrize,
    dump_field,
    gaussian,
    gradient,
    h1_inner,
    l2_inner,
    load_field,
    odd_defect,
    recenter,
    reflect,
    shift,
    split_signs,
    tail_mass,
)
from choquard.riesz import build_kernel

seeds = st.integers(min_value=0, max_value=2**31 - 1)


def random_field(grid, seed, scale=1.0):
    return Field(grid, scale * np.random.default_rng(seed).standard_normal(grid.shape))


class TestParams:
    def test_regime_tags(self):
        assert Params(2, 1.0, 1.8).regime == "sublinear"
        assert Params(2, 1.0, 2.0).regime == "boundary"
        assert Params(2, 1.0, 2.5).regime == "superlinear"

    @pytest.mark.parametrize("alpha", [0.0, 2.0, 3.5, -1.0])
    def test_alpha_range(self, alpha):
        with pytest.raises(ValueError):
            Params(2, alpha, 2.5)

    def test_subcritical_window(self):
        # N=3, alpha=2: 1/5 < 1/p < 3/5
        Params(3, 2.0, 2.5)
        with pytest.raises(ValueError):
            Params(3, 2.0, 5.5)
        with pytest.raises(ValueError):
            Params(3, 2.0, 1.5)

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            Params(2, 1.0, 2.5, "other")

    def test_to_dict_round_trip(self):
        p = Params(2, 1.0, 2.5, "local_nls")
        assert Params(**p.to_dict()) == p


class TestGrid:
    def test_power_of_two(self):
        with pytest.raises(ValueError):
            Grid(2, 48, 10.0)
        with pytest.raises(ValueError):
            Grid(4, 16, 10.0)

    def test_origin_is_a_node(self):
        g = Grid(2, 32, 8.0)
        assert g.x[g.n // 2] == 0.0
        assert g.x[0] == -4.0
        assert math.isclose(g.h, 0.25)

    def test_padded(self):
        g = Grid(3, 16, 5.0)
        pg = g.padded()
        assert (pg.n, pg.L, pg.h) == (32, 10.0, g.h)


class TestInnerProducts:
    @pytest.mark.parametrize("N,n,L,expected", [
        # ∫ e^{-|x|^2} = pi^{N/2}, ∫ |x|^2 e^{-|x|^2} = (N/2) pi^{N/2}
        (1, 128, 24.0, math.sqrt(math.pi) * 1.5),
        (2, 128, 24.0, math.pi * 2.0),
        (3, 64, 16.0, math.pi**1.5 * 2.5),
    ])
    def test_gaussian_h1_norm(self, N, n, L, expected):
        u = gaussian(Grid(N, n, L), 1.0)
        assert h1_inner(u, u) == pytest.approx(expected, rel=1e-12)

    def test_plancherel_against_trapezoid(self):
        g = Grid(2, 128, 24.0)
        u = gaussian(g, 1.3, center=(0.4, -0.7))
        x, y = g.mesh()
        r2 = (x - 0.4) ** 2 + (y + 0.7) ** 2
        grad2 = r2 / 1.3**4 * np.exp(-r2 / 1.3**2)
        direct = float(np.sum(grad2 + u.values**2) * g.cell_volume)
        assert h1_inner(u, u) == pytest.approx(direct, rel=1e-10)

    def test_spectral_gradient_of_gaussian(self):
        g = Grid(2, 128, 24.0)
        u = gaussian(g, 1.0)
        dx, dy = gradient(u)
        x, y = g.mesh()
        assert np.abs(dx + x * u.values).max() < 1e-12
        assert np.abs(dy + y * u.values).max() < 1e-12

    @given(seeds, seeds)
    def test_h1_symmetric_bilinear(self, s1, s2):
        g = Grid(2, 16, 6.0)
        u, v = random_field(g, s1), random_field(g, s2)
        assert h1_inner(u, v) == pytest.approx(h1_inner(v, u), rel=1e-12, abs=1e-12)
        assert h1_inner(2.5 * u + v, v) == pytest.approx(
            2.5 * h1_inner(u, v) + h1_inner(v, v), rel=1e-10, abs=1e-10)
        assert h1_inner(g.zeros(), v) == 0.0
        assert h1_inner(u, u) > 0

    def test_grid_mismatch(self):
        u = Field(Grid(2, 16, 6.0), np.ones((16, 16)))
        v = Field(Grid(2, 16, 7.0), np.ones((16, 16)))
        with pytest.raises(GridMismatchError):
            h1_inner(u, v)
        with pytest.raises(GridMismatchError):
            l2_inner(u, v)


class TestField:
    def test_immutable(self):
        u = Field(Grid(1, 8, 1.0), np.arange(8.0))
        with pytest.raises(ValueError):
            u.values[0] = 3.0

    def test_rejects_nonfinite(self):
        vals = np.zeros(8)
        vals[2] = np.nan
        with pytest.raises(ValueError):
            Field(Grid(1, 8, 1.0), vals)

    def test_shape_checked(self):
        with pytest.raises(ValueError):
            Field(Grid(2, 8, 1.0), np.zeros((8, 4)))


class TestSigns:
    @given(seeds)
    def test_split_signs(self, seed):
        u = random_field(Grid(2, 16, 6.0), seed)
        up, um = split_signs(u)
        assert np.all(up.values >= 0) and np.all(um.values <= 0)
        assert np.all(up.values * um.values == 0)
        assert np.array_equal(up.values + um.values, u.values)

    def test_one_signed(self):
        u = gaussian(Grid(2, 16, 6.0), 1.0)
        up, um = split_signs(u)
        assert np.array_equal(up.values, u.values) and not um.values.any()

    def test_dipole_parts_mirror(self):
        g = Grid(2, 32, 10.0)
        u = gaussian(g, 1.0, (0.0, 2.0)) - gaussian(g, 1.0, (0.0, -2.0))
        up, um = split_signs(u)
        # the node x_N = -L/2 is its own periodic mirror
        assert np.array_equal(um.values[:, 1:], -reflect(up).values[:, 1:])


class TestOddness:
    def test_reflection_maps_coordinates(self):
        g = Grid(2, 32, 10.0)
        x, y = g.mesh()
        yy = Field(g, np.broadcast_to(y, g.shape))
        assert np.array_equal(reflect(yy).values[:, 1:], -yy.values[:, 1:])
        assert np.array_equal(reflect(yy).values[:, 0], yy.values[:, 0])

    @given(seeds)
    def test_antisymmetrize(self, seed):
        g = Grid(2, 16, 6.0)
        u = random_field(g, seed)
        o = antisymmetrize(u)
        assert np.array_equal(reflect(o).values, -o.values)
        assert np.allclose(antisymmetrize(o).values, o.values, rtol=0, atol=1e-15)
        assert odd_defect(o) == 0.0

    def test_even_field_vanishes(self):
        g = Grid(2, 32, 10.0)
        u = gaussian(g, 1.0, (1.0, 0.0))
        assert not antisymmetrize(u).values.any()


class TestRecenter:
    def test_anchored_unchanged(self):
        u = gaussian(Grid(2, 32, 10.0), 1.0)
        assert recenter(u) is u

    @given(st.integers(-10, 10), st.integers(-10, 10))
    def test_shift_invariance(self, a, b):
        g = Grid(2, 32, 10.0)
        u = gaussian(g, 1.0, (1.3, -0.6)) - 0.5 * gaussian(g, 0.7, (-2.0, 1.0))
        assert np.array_equal(recenter(shift(u, (a, b))).values, recenter(u).values)

    def test_preserves_functionals(self):
        g = Grid(2, 64, 16.0)
        params = Params(2, 1.0, 2.5)
        kernel = build_kernel(g, 1.0, "spectral")
        # narrow enough that nothing wraps across the box edge
        u = gaussian(g, 0.8, (3.0, 1.0)) - gaussian(g, 0.8, (0.0, -2.0))
        w = recenter(u, by="plus")
        assert w is not u
        assert h1_inner(w, w) == pytest.approx(h1_inner(u, u), rel=1e-13)
        assert action(params, kernel, w) == pytest.approx(action(params, kernel, u), rel=1e-13)
        b1, b2 = brackets(params, kernel, u), brackets(params, kernel, w)
        for k, v in b1.to_dict().items():
            assert getattr(b2, k) == pytest.approx(v, rel=1e-12, abs=1e-14)

    def test_axes_restriction(self):
        g = Grid(2, 32, 10.0)
        u = gaussian(g, 1.0, (2.0, 3.0))
        w = recenter(u, axes=[0])
        peak = np.unravel_index(np.argmax(w.values), g.shape)
        assert peak[0] == g.n // 2 and peak[1] != g.n // 2

    def test_zero_field(self):
        with pytest.raises(ValueError):
            recenter(Grid(2, 8, 1.0).zeros())


def test_tail_mass():
    g = Grid(2, 64, 20.0)
    assert tail_mass(gaussian(g, 1.0)) < 1e-12
    assert tail_mass(gaussian(g, 6.0)) > 1e-3


def test_dump_and_load(tmp_path):
    g = Grid(2, 16, 6.0)
    u = random_field(g, 3)
    params = Params(2, 1.0, 2.5)
    path = tmp_path / "u.bin"
    dump_field(u, path, params)
    assert path.stat().st_size == 16 * 16 * 8
    meta = json.loads((tmp_path / "u.bin.json").read_text())
    assert meta["dims"] == [16, 16] and meta["extent"] == 6.0
    back, p2 = load_field(path)
    assert back.grid == g and p2 == params
    assert np.array_equal(back.values, u.values)
    assert np.array_equal(np.fromfile(path, dtype="<f8").reshape(16, 16), u.values)
