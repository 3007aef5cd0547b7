"""Explicit test-function families and rearrangement diagnostics.

* :func:`glued_odd_function` glues a cut-off groundstate to its negative
  mirror image at distance ``4R``; :func:`strict_gap_curve` tracks how far the
  projected gluing stays below twice the groundstate level.
* :func:`degeneracy_family` plants a tiny, narrow negative bump next to a
  positive groundstate and projects the result on the nodal Nehari set.
* :func:`polarize` is the two-point rearrangement across a node hyperplane.
* :func:`decay_diagnostic` compares the far field of ``I_alpha * |v|^p`` with
  ``(∫ |v|^p) I_alpha``.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import fft, integrate
from scipy.special import gamma

from .functional import action, brackets, nonlocal_energy
from .grid import Field, Grid, Params, h1_inner, reflect, split_signs
from .manifold import (
    FiberPoint,
    NonUniqueFiberWarning,
    ProjectionError,
    apply_fiber,
    fiber_value,
    nehari_scale,
    nodal_project,
    ray_maximum,
)
from .riesz import RieszKernel, build_kernel, power, riesz_convolve, riesz_potential


class GeometryError(ValueError):
    pass


# -- cutoffs and bumps ---------------------------------------------------------

def quintic_cutoff(r, inner: float, outer: float) -> np.ndarray:
    """C² radial cutoff: 1 for ``r <= inner``, 0 for ``r >= outer``."""
    s = np.clip((np.asarray(r, dtype=float) - inner) / (outer - inner), 0.0, 1.0)
    return 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s * s)


@dataclass(frozen=True)
class RadialBump:
    """Compactly supported radial profile ``phi(z) = (1 - |z|^2)^2`` on the unit ball."""

    def value(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return np.where(r < 1.0, (1.0 - np.minimum(r, 1.0) ** 2) ** 2, 0.0)

    def slope(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        return np.where(r < 1.0, -4.0 * r * (1.0 - np.minimum(r, 1.0) ** 2), 0.0)

    def integrals(self, N: int, p: float) -> dict:
        """Continuum ``∫|∇phi|^2``, ``∫phi^2`` and ``∫phi^p`` over R^N."""
        sphere = 2 * math.pi ** (N / 2) / gamma(N / 2)

        def radial(f):
            return sphere * integrate.quad(lambda r: f(r) * r ** (N - 1), 0.0, 1.0,
                                           epsabs=0, epsrel=1e-13)[0]

        return {
            "grad2": radial(lambda r: float(self.slope(r)) ** 2),
            "l2": radial(lambda r: float(self.value(r)) ** 2),
            "power": radial(lambda r: float(self.value(r)) ** p),
        }


QUARTIC_BUMP = RadialBump()


def _node_coords(grid: Grid, index) -> np.ndarray:
    return np.array([grid.x[i] for i in index])


def _check_compatible(v: Field, grid: Grid):
    if v.grid.N != grid.N or not math.isclose(v.grid.h, grid.h, rel_tol=1e-12):
        raise GeometryError("embedding needs the same dimension and spacing")
    if grid.n < v.grid.n:
        raise GeometryError("target box is smaller than the field's box")


def embed(v: Field, grid: Grid) -> Field:
    """Zero-extend ``v`` to a larger box with the same spacing, origin on origin."""
    _check_compatible(v, grid)
    off = (grid.n - v.grid.n) // 2
    vals = np.zeros(grid.shape)
    vals[(slice(off, off + v.grid.n),) * grid.N] = v.values
    return Field(grid, vals)


def fourier_shift(v: Field, offset) -> np.ndarray:
    """Samples of ``v(x - offset)`` by trigonometric interpolation."""
    g = v.grid
    phase = sum(k * float(o) for k, o in zip(g.wavenumbers, offset))
    return fft.irfftn(fft.rfftn(v.values) * np.exp(-1j * phase), s=g.shape, axes=range(g.N))


# -- the glued odd family -------------------------------------------------------

@dataclass(frozen=True)
class GluedFamilyParams:
    R: float
    cutoff_inner: float = 1.0
    cutoff_outer: float = 2.0

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("R must be positive")
        if not 0 < self.cutoff_inner < self.cutoff_outer:
            raise ValueError("need 0 < cutoff_inner < cutoff_outer")
        if self.cutoff_outer > 2:
            # the bump at height 2R would cross the odd plane
            raise ValueError("cutoff_outer above 2 lets the two bumps overlap")

    @property
    def reach(self) -> float:
        """Largest ``|x_N|`` touched by either bump."""
        return 2 * self.R + self.cutoff_outer * self.R

    def fits(self, grid: Grid) -> bool:
        return self.reach <= grid.L / 2


def glued_odd_function(v: Field, gp: GluedFamilyParams) -> Field:
    """``(eta_R v)(x', x_N - 2R) - (eta_R v)(x', -x_N - 2R)``."""
    g = v.grid
    if not gp.fits(g):
        raise GeometryError(f"R={gp.R} needs a box of length >= {2 * gp.reach}, have {g.L}")
    offset = np.zeros(g.N)
    offset[-1] = 2 * gp.R
    moved = fourier_shift(v, offset)
    coords = g.mesh()
    r = np.sqrt(sum((c - o) ** 2 for c, o in zip(coords, offset)))
    eta = quintic_cutoff(r, gp.cutoff_inner * gp.R, gp.cutoff_outer * gp.R)
    upper = np.maximum(eta * moved, 0.0)
    upper_field = Field(g, np.broadcast_to(upper, g.shape))
    return upper_field - reflect(upper_field)


@dataclass
class StrictGapCurve:
    c_0: float
    rows: list[dict]
    exponent: float
    coefficient: float
    grid: Grid
    skipped: list[str] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["R", "t_R", "action", "gap", "h1_gap"])
            for row in self.rows:
                w.writerow([repr(row[k]) for k in ("R", "t_R", "action", "gap", "h1_gap")])
            w.writerow(["# fitted exponent", repr(self.exponent), "coefficient",
                        repr(self.coefficient), ""])


def big_enough_grid(grid: Grid, reach: float) -> Grid:
    """Smallest power-of-two box with the spacing of ``grid`` and ``L/2 >= reach``."""
    n = grid.n
    while n * grid.h / 2 < reach:
        n *= 2
    return Grid(grid.N, n, n * grid.h)


def strict_gap_curve(params: Params, v: Field, R_list, *, kernel_mode: str = "truncated_kernel",
                     grid: Grid | None = None, cutoff_inner: float = 1.0,
                     cutoff_outer: float = 2.0) -> StrictGapCurve:
    """Projected glued actions ``A(t_R u_R)`` against ``2 c_0`` for each ``R``.

    ``v`` is a positive groundstate. It is zero-extended to ``grid`` (default:
    the smallest box with the same spacing holding the largest ``R``) and both
    ``c_0`` and the glued actions are evaluated there. The gap
    ``2 c_0 - A(t_R u_R)`` is fitted to ``C R^k`` over the rows with a positive
    gap.
    """
    families = [GluedFamilyParams(float(R), cutoff_inner, cutoff_outer) for R in R_list]
    if grid is None:
        grid = big_enough_grid(v.grid, max(f.reach for f in families))
    kernel = build_kernel(grid, params.alpha, kernel_mode) if params.mode == "choquard" else None
    w = embed(v, grid)
    q_v = h1_inner(w, w)
    d_v = nonlocal_energy(params, kernel, w)
    c_0 = ray_maximum(params, (q_v, d_v))
    rows, skipped = [], []
    for gp in families:
        if not gp.fits(grid):
            skipped.append(f"R={gp.R}: reach {gp.reach} exceeds half box {grid.L / 2}")
            continue
        u = glued_odd_function(w, gp)
        q = h1_inner(u, u)
        d = nonlocal_energy(params, kernel, u)
        t = nehari_scale(params, (q, d))
        value = ray_maximum(params, (q, d))
        rows.append({"R": gp.R, "t_R": t, "action": value, "gap": 2 * c_0 - value,
                     "h1_gap": 2 * q_v - q})
    fit = [(r["R"], r["gap"]) for r in rows if r["gap"] > 0]
    if len(fit) >= 2:
        slope, icpt = np.polyfit(np.log([f[0] for f in fit]), np.log([f[1] for f in fit]), 1)
        exponent, coefficient = float(slope), float(math.exp(icpt))
    else:
        exponent = coefficient = math.nan
    return StrictGapCurve(c_0, rows, exponent, coefficient, grid, skipped)


# -- the degeneracy family ----------------------------------------------------

@dataclass(frozen=True)
class DegeneracyFamilyParams:
    """``u_delta = u0 - delta^{2/(2-p)} phi((x - a) / delta)``.

    ``a`` is a node index outside the support of ``u0``; ``phi`` is a radial
    bump supported in the unit ball.
    """

    delta: float
    a: tuple
    u0: Field
    phi: RadialBump = QUARTIC_BUMP

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if len(self.a) != self.u0.grid.N:
            raise ValueError("a needs one node index per axis")

    def bump(self) -> np.ndarray:
        g = self.u0.grid
        centre = _node_coords(g, self.a)
        r = np.sqrt(sum((c - c0) ** 2 for c, c0 in zip(g.mesh(), centre)))
        return np.broadcast_to(self.phi.value(r / self.delta), g.shape)


def degeneracy_field(p: float, dp: DegeneracyFamilyParams) -> Field:
    bump = dp.bump()
    if np.any((bump > 0) & (dp.u0.values != 0)):
        raise GeometryError(f"bump of radius {dp.delta} overlaps the support of u0")
    return Field(dp.u0.grid, dp.u0.values - dp.delta ** (2 / (2 - p)) * bump)


def degeneracy_family(params: Params, kernel: RieszKernel | None,
                      dp: DegeneracyFamilyParams) -> tuple[Field, FiberPoint, float]:
    """Project ``u_delta`` on the nodal Nehari set.

    The 2x2 stationarity system is solved with the interface pairing of the
    two sign parts set to zero, as for functions with disjoint supports.
    Returns the projected field, its fiber point and the action of the
    projected field under that convention. Raises
    :class:`ProjectionError` when no projection is found (``delta`` too large).
    """
    if not params.p < 2:
        raise ValueError("the degeneracy family needs p < 2")
    u = degeneracy_field(params.p, dp)
    # disjoint supports: the spectral H^1 pairing of the parts is pure
    # discretization ringing, linear in the bump amplitude, and would swamp
    # the cross term of order amplitude^p that drives the limit
    br = replace(brackets(params, kernel, u), q_pm=0.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NonUniqueFiberWarning)
        fp = nodal_project(params, br)
    return apply_fiber(u, fp, params.p), fp, fiber_value(params, br, fp)


def cutoff_groundstate(params: Params, kernel: RieszKernel | None, v: Field,
                       radius: float) -> Field:
    """``v`` cut off smoothly between ``0.75 radius`` and ``radius`` around its
    peak, then rescaled onto the Nehari manifold."""
    g = v.grid
    peak = np.unravel_index(np.argmax(v.values), g.shape)
    centre = _node_coords(g, peak)
    r = np.sqrt(sum((c - c0) ** 2 for c, c0 in zip(g.mesh(), centre)))
    w = Field(g, v.values * np.broadcast_to(quintic_cutoff(r, 0.75 * radius, radius), g.shape))
    q = h1_inner(w, w)
    return w * nehari_scale(params, (q, nonlocal_energy(params, kernel, w)))


def degeneracy_limit(params: Params, kernel: RieszKernel | None, u0: Field, a,
                     phi: RadialBump = QUARTIC_BUMP) -> float:
    """Limit of the minus-part scaling as ``delta -> 0``.

    ``((I_alpha * |u0|^p)(a) ∫phi^p / ∫|∇phi|^2)^{1/(2-p)}``, a physical factor
    multiplying ``-delta^{2/(2-p)} phi((x - a)/delta)``.
    """
    p = params.p
    ints = phi.integrals(u0.grid.N, p)
    if params.mode == "local_nls":
        # the local cross term vanishes on disjoint supports
        return 0.0
    pot = riesz_convolve(kernel, power(u0, p)).values[tuple(a)]
    return (pot * ints["power"] / ints["grad2"]) ** (1 / (2 - p))


@dataclass
class DegeneracySweep:
    c_0: float
    u0_action: float
    limit_minus: float
    rows: list[dict]

    @property
    def min_action(self) -> float:
        values = [r["action"] for r in self.rows if math.isfinite(r["action"])]
        return min(values) if values else math.nan

    def extrapolated_minus(self, p: float) -> float:
        """Richardson estimate of the ``delta -> 0`` minus scaling.

        ``s_minus^{2-p}`` is even and smooth in ``delta``; the two smallest
        ``delta`` values eliminate its ``delta^2`` term.
        """
        ok = sorted((r["delta"], r["s_minus"]) for r in self.rows if math.isfinite(r["s_minus"]))
        if len(ok) < 2:
            return math.nan
        (d1, s1), (d2, s2) = ok[0], ok[1]
        y1, y2 = s1 ** (2 - p), s2 ** (2 - p)
        y0 = (d2 * d2 * y1 - d1 * d1 * y2) / (d2 * d2 - d1 * d1)
        return y0 ** (1 / (2 - p)) if y0 > 0 else math.nan

    def write_csv(self, path) -> None:
        keys = ["delta", "s_plus", "s_minus", "limit_minus", "action", "discrete_action",
                "h1_distance", "note"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(keys)
            for row in self.rows:
                w.writerow([row[k] if isinstance(row[k], str) else repr(row[k]) for k in keys])


def delta_sequence(grid: Grid) -> list[float]:
    """Halving from ``L/16`` down to the resolution floor ``4h``."""
    out, d = [], grid.L / 16
    while d >= 4 * grid.h * (1 - 1e-12):
        out.append(d)
        d /= 2
    return out


def degeneracy_sweep(params: Params, kernel: RieszKernel | None, v: Field, c_0: float,
                     deltas=None, phi: RadialBump = QUARTIC_BUMP) -> DegeneracySweep:
    """Run the degeneracy family along a shrinking ``delta`` sequence.

    ``a`` sits ``L/4`` from the peak of ``v`` along the first axis and ``u0``
    is ``v`` cut off inside the ball of radius ``L/4 - delta_max`` so every
    bump stays clear of it.
    """
    g = v.grid
    deltas = delta_sequence(g) if deltas is None else list(deltas)
    peak = np.unravel_index(np.argmax(v.values), g.shape)
    a = list(peak)
    a[0] = (a[0] + g.n // 4) % g.n
    a = tuple(int(i) for i in a)
    u0 = cutoff_groundstate(params, kernel, v, g.L / 4 - max(deltas) - 2 * g.h)
    limit = degeneracy_limit(params, kernel, u0, a, phi)
    rows = []
    for delta in deltas:
        dp = DegeneracyFamilyParams(delta, a, u0, phi)
        try:
            w, fp, value = degeneracy_family(params, kernel, dp)
        except ProjectionError as exc:
            rows.append({"delta": delta, "s_plus": math.nan, "s_minus": math.nan,
                         "limit_minus": limit, "action": math.nan,
                         "discrete_action": math.nan, "h1_distance": math.nan,
                         "note": f"projection failed: {exc}"})
            continue
        s_plus, s_minus = fp.scalings(params.p)
        diff = w - u0
        rows.append({"delta": delta, "s_plus": s_plus, "s_minus": s_minus,
                     "limit_minus": limit, "action": value,
                     "discrete_action": action(params, kernel, w),
                     "h1_distance": math.sqrt(h1_inner(diff, diff)), "note": ""})
    return DegeneracySweep(c_0, action(params, kernel, u0), limit, rows)


# -- polarization ---------------------------------------------------------------

def polarize(u: Field, axis: int, node: int, keep: str = "below") -> Field:
    """Two-point rearrangement across the node hyperplane ``x_axis = x[node]``.

    On each mirror pair the larger value goes to the half-space named by
    ``keep`` (``"below"``: indices under ``node``) and the smaller to its
    mirror. Mirrors that fall outside the box must carry zero data.
    """
    g = u.grid
    if not (isinstance(node, (int, np.integer)) and 0 <= node < g.n):
        raise GeometryError(f"hyperplane must sit on a node index in [0, {g.n}), got {node!r}")
    if keep not in ("below", "above"):
        raise ValueError("keep must be 'below' or 'above'")
    axis %= g.N
    v = np.moveaxis(u.values, axis, 0)
    out = v.copy()
    width = min(node, g.n - 1 - node)
    lo = v[node - width:node][::-1] if width else v[:0]
    hi = v[node + 1:node + 1 + width]
    stray = np.concatenate([v[:node - width], v[node + 1 + width:]])
    if np.any(stray != 0):
        raise GeometryError("field is nonzero where the mirror image leaves the box")
    big, small = np.maximum(lo, hi), np.minimum(lo, hi)
    first, second = (big, small) if keep == "below" else (small, big)
    if width:
        out[node - width:node] = first[::-1]
        out[node + 1:node + 1 + width] = second
    return Field(g, np.moveaxis(out, 0, axis))


# -- far-field decay ------------------------------------------------------------

@dataclass
class DecayDiagnostic:
    mass: float
    rows: list[dict]
    sup_deviation: float
    tail_slope: float
    tail_linearity: float

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["radius", "ratio_mean", "ratio_deviation", "log_abs_v"])
            for row in self.rows:
                w.writerow([repr(row[k]) for k in ("radius", "ratio_mean", "ratio_deviation",
                                                   "log_abs_v")])


def decay_diagnostic(params: Params, kernel: RieszKernel, v: Field, *, bins: int = 16) -> DecayDiagnostic:
    """Far-field ratio ``(I_alpha * |v|^p)(x) / I_alpha(x)`` against ``∫ |v|^p``.

    Radii are measured from the node of largest ``|v|``. Rows cover annuli
    between ``L/8`` and ``L/2``; ``sup_deviation`` is the largest relative
    deviation on ``L/4 <= r <= 3L/8``. The tail slope is the least-squares slope
    of ``log|v|`` against ``r`` on ``[L/8, 3L/8]`` and ``tail_linearity`` its
    coefficient of determination.
    """
    g = v.grid
    p = params.p
    dens = power(v, p)
    mass = dens.integral()
    pot = riesz_convolve(kernel, dens).values
    peak = np.unravel_index(np.argmax(np.abs(v.values)), g.shape)
    centre = _node_coords(g, peak)
    r = np.broadcast_to(np.sqrt(sum((c - c0) ** 2 for c, c0 in zip(g.mesh(), centre))), g.shape)
    with np.errstate(divide="ignore"):
        ratio = pot / riesz_potential(g.N, params.alpha, r)
        logv = np.log(np.abs(v.values))
    edges = np.linspace(g.L / 8, g.L / 2, bins + 1)
    rows = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        ring = (r >= lo) & (r < hi)
        if not ring.any():
            continue
        vals = ratio[ring]
        lv = logv[ring]
        lv = lv[np.isfinite(lv)]
        rows.append({"radius": float(0.5 * (lo + hi)), "ratio_mean": float(vals.mean()),
                     "ratio_deviation": float(np.abs(vals - mass).max() / mass),
                     "log_abs_v": float(lv.mean()) if lv.size else -math.inf})
    window = (r >= g.L / 4) & (r <= 3 * g.L / 8)
    sup_dev = float(np.abs(ratio[window] - mass).max() / mass)
    tail = (r >= g.L / 8) & (r <= 3 * g.L / 8) & np.isfinite(logv)
    x, y = r[tail], logv[tail]
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    r2 = 1.0 - resid.var() / y.var() if y.var() > 0 else 1.0
    return DecayDiagnostic(float(mass), rows, sup_dev, float(slope), float(r2))
