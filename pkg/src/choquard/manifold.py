"""Nehari constraint algebra.

Everything here works on the scalars of :class:`ChoquardBrackets`, so the
projections cost nothing once the brackets of a field are known. A field ``u``
with sign parts ``u⁺, u⁻`` is moved along its fiber
``s₊ u⁺ + s₋ u⁻``; the fiber coordinates ``t_± = s_±^p`` make the fiber map
concave when ``p >= 2``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .functional import ChoquardBrackets, brackets
from .grid import Field, Params, split_signs


class DegenerateInputError(ValueError):
    """A sign part is missing, so the nodal fiber is not two-dimensional."""


class ProjectionError(ArithmeticError):
    pass


class NonUniqueFiberWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class FiberPoint:
    t_plus: float
    t_minus: float

    def __post_init__(self):
        for t in (self.t_plus, self.t_minus):
            if not (t > 0 and math.isfinite(t)):
                raise ValueError(f"fiber coordinates must be positive and finite, got {t}")

    def scalings(self, p: float) -> tuple[float, float]:
        """Physical factors ``s_± = t_±^{1/p}`` applied to ``u^±``."""
        return self.t_plus ** (1 / p), self.t_minus ** (1 / p)


def _qd(obj) -> tuple[float, float]:
    if isinstance(obj, ChoquardBrackets):
        return obj.q_total, obj.d_total
    q, d = obj
    return float(q), float(d)


def nehari_scale(params: Params, brackets_or_qd) -> float:
    """Factor ``t`` with ``t u`` on the Nehari manifold: ``t^{2p-2} = q / D``."""
    q, d = _qd(brackets_or_qd)
    if not d > 0:
        raise ProjectionError(f"nonlocal bracket must be positive, got {d}")
    if not q > 0:
        raise ProjectionError(f"H^1 norm must be positive, got {q}")
    return (q / d) ** (1 / (2 * params.p - 2))


def ray_maximum(params: Params, brackets_or_qd) -> float:
    """``max_t A(t u) = (1/2 - 1/(2p)) q^{p/(p-1)} / D^{1/(p-1)}``."""
    q, d = _qd(brackets_or_qd)
    p = params.p
    return (0.5 - 0.5 / p) * q ** (p / (p - 1)) / d ** (1 / (p - 1))


def fiber_value(params: Params, br: ChoquardBrackets, fp: FiberPoint) -> float:
    """Action of ``t₊^{1/p} u⁺ + t₋^{1/p} u⁻`` from the brackets of ``u``."""
    p = params.p
    tp, tm = fp.t_plus, fp.t_minus
    sp, sm = fp.scalings(p)
    quad = 0.5 * sp * sp * br.q_plus + sp * sm * br.q_pm + 0.5 * sm * sm * br.q_minus
    return quad - (tp * tp * br.d_pp + 2 * tp * tm * br.d_pm + tm * tm * br.d_mm) / (2 * p)


def fiber_gradient(params: Params, br: ChoquardBrackets, fp: FiberPoint) -> np.ndarray:
    p = params.p
    tp, tm = fp.t_plus, fp.t_minus
    e = 1 / p
    gp = (e * tp ** (2 * e - 1) * br.q_plus + e * tp ** (e - 1) * tm**e * br.q_pm
          - (tp * br.d_pp + tm * br.d_pm) / p)
    gm = (e * tm ** (2 * e - 1) * br.q_minus + e * tm ** (e - 1) * tp**e * br.q_pm
          - (tm * br.d_mm + tp * br.d_pm) / p)
    return np.array([gp, gm])


def fiber_hessian(params: Params, br: ChoquardBrackets, fp: FiberPoint) -> np.ndarray:
    """Hessian of :func:`fiber_value` in ``(t₊, t₋)``."""
    p = params.p
    tp, tm = fp.t_plus, fp.t_minus
    e = 1 / p
    hpp = e * (2 * e - 1) * tp ** (2 * e - 2) * br.q_plus + e * (e - 1) * tp ** (e - 2) * tm**e * br.q_pm
    hmm = e * (e - 1) * tm ** (e - 2) * tp**e * br.q_pm + e * (2 * e - 1) * tm ** (2 * e - 2) * br.q_minus
    hpm = e * e * (tp * tm) ** (e - 1) * br.q_pm
    return np.array([[hpp - br.d_pp / p, hpm - br.d_pm / p],
                     [hpm - br.d_pm / p, hmm - br.d_mm / p]])


class _Stationarity:
    """Relative defects ``<A'(w), w^±> / ||w^±||^2`` in log scalings ``(a, b)``."""

    def __init__(self, p: float, br: ChoquardBrackets):
        self.p = p
        self.cp, self.cm = br.q_pm / br.q_plus, br.q_pm / br.q_minus
        self.P, self.M = br.d_pp / br.q_plus, br.d_mm / br.q_minus
        self.Xp, self.Xm = br.d_pm / br.q_plus, br.d_pm / br.q_minus

    def residual(self, a: float, b: float) -> np.ndarray:
        p = self.p
        with np.errstate(over="ignore"):
            g1 = 1 + math.exp(b - a) * self.cp - math.exp((2 * p - 2) * a) * self.P \
                - math.exp(p * b + (p - 2) * a) * self.Xp
            g2 = 1 + math.exp(a - b) * self.cm - math.exp((2 * p - 2) * b) * self.M \
                - math.exp(p * a + (p - 2) * b) * self.Xm
        return np.array([g1, g2])

    def jacobian(self, a: float, b: float) -> np.ndarray:
        p = self.p
        ep = math.exp(b - a) * self.cp
        em = math.exp(a - b) * self.cm
        sp_ = math.exp((2 * p - 2) * a) * self.P
        sm_ = math.exp((2 * p - 2) * b) * self.M
        xp = math.exp(p * b + (p - 2) * a) * self.Xp
        xm = math.exp(p * a + (p - 2) * b) * self.Xm
        return np.array([
            [-ep - (2 * p - 2) * sp_ - (p - 2) * xp, ep - p * xp],
            [em - p * xm, -em - (2 * p - 2) * sm_ - (p - 2) * xm],
        ])

    def starts(self) -> list[tuple[float, float]]:
        """Candidate starting points, one per branch of each 1-D equation."""
        p = self.p
        a_own = -math.log(self.P + self.Xp) / (2 * p - 2)
        b_own = -math.log(self.M + self.Xm) / (2 * p - 2)
        if p >= 2 or self.Xp <= 0 or self.Xm <= 0:
            return [(a_own, b_own), (0.0, 0.0)]
        # p < 2: each part either sits on its own Nehari fiber or is balanced
        # against the cross term of the other part (a tiny sign part)
        out = []
        for a_big, b_big in itertools.product((True, False), repeat=2):
            a = a_own if a_big else None
            b = b_own if b_big else None
            if a is None and b is None:
                # both balanced: p a' + (p-2) b' linear system
                det = p * p - (p - 2) ** 2
                la, lb = -math.log(self.Xp), -math.log(self.Xm)
                b = (p * la - (p - 2) * lb) / det
                a = (p * lb - (p - 2) * la) / det
            elif a is None:
                a = (-math.log(self.Xp) - p * b) / (p - 2)
            elif b is None:
                b = (-math.log(self.Xm) - p * a) / (p - 2)
            out.append((a, b))
        return out


def _newton(eq: _Stationarity, a: float, b: float, tol: float, max_iter: int):
    r = eq.residual(a, b)
    merit = float(r @ r)
    for _ in range(max_iter):
        if np.max(np.abs(r)) <= tol:
            return a, b, True
        try:
            step = np.linalg.solve(eq.jacobian(a, b), -r)
        except np.linalg.LinAlgError:
            return a, b, False
        # log steps larger than ~1 are unsafe for the exponentials
        step *= min(1.0, 2.0 / max(np.max(np.abs(step)), 1e-300))
        lam = 1.0
        while lam > 1e-8:
            na, nb = a + lam * step[0], b + lam * step[1]
            nr = eq.residual(na, nb)
            nm = float(nr @ nr)
            if np.all(np.isfinite(nr)) and nm < merit:
                break
            lam *= 0.5
        else:
            return a, b, False
        a, b, r, merit = na, nb, nr, nm
    return a, b, bool(np.max(np.abs(r)) <= tol)


def _grid_refine(objective, center, span=3.0, rounds=12, n=41):
    """Zooming brute-force minimization of ``objective(a, b)`` on a log grid."""
    ca, cb = center
    best = (math.inf, ca, cb)
    for _ in range(rounds):
        xs = np.linspace(ca - span, ca + span, n)
        ys = np.linspace(cb - span, cb + span, n)
        for a in xs:
            for b in ys:
                v = objective(a, b)
                if v < best[0]:
                    best = (v, a, b)
        _, ca, cb = best
        span *= 4.0 / n
    return best[1], best[2]


def nodal_project(params: Params, br: ChoquardBrackets, *, tol: float = 1e-12,
                  max_iter: int = 60) -> FiberPoint:
    """Fiber point of ``u`` on the nodal Nehari set.

    Solves ``<A'(w), w^±> = 0`` for ``w = s₊u⁺ + s₋u⁻`` by damped Newton in
    ``log s_±``. For ``p > 2`` the solution is the unique maximizer of the
    concave fiber map; for ``p <= 2`` the fiber may meet the nodal set several
    times and the lowest-action intersection is returned.
    """
    if not (br.q_plus > 0 and br.q_minus > 0):
        raise DegenerateInputError("both sign parts must be nonzero")
    p = params.p
    eq = _Stationarity(p, br)
    found = []
    for a0, b0 in eq.starts():
        a, b, ok = _newton(eq, a0, b0, tol, max_iter)
        if ok:
            found.append((a, b))
            if p > 2:
                break
    if not found:
        # brute force on the merit, then polish
        a, b = _grid_refine(lambda a, b: float(np.sum(eq.residual(a, b) ** 2)),
                            eq.starts()[0])
        a, b, ok = _newton(eq, a, b, tol, max_iter)
        if not ok and np.max(np.abs(eq.residual(a, b))) > 1e3 * tol:
            raise ProjectionError("no point of the nodal Nehari set on this fiber")
        found.append((a, b))
    if p <= 2:
        warnings.warn("nodal projection is not unique for p <= 2", NonUniqueFiberWarning,
                      stacklevel=2)
    values = [fiber_value(params, br, FiberPoint(math.exp(p * a), math.exp(p * b)))
              for a, b in found]
    a, b = found[int(np.argmin(values))]
    return FiberPoint(math.exp(p * a), math.exp(p * b))


def stationarity_residual(params: Params, br: ChoquardBrackets, fp: FiberPoint) -> np.ndarray:
    """Relative defects of both nodal Nehari conditions at ``fp``."""
    sp, sm = fp.scalings(params.p)
    return _Stationarity(params.p, br).residual(math.log(sp), math.log(sm))


def apply_fiber(u: Field, fp: FiberPoint, p: float) -> Field:
    sp, sm = fp.scalings(p)
    up, um = split_signs(u)
    return Field(u.grid, sp * up.values + sm * um.values)


def xi_map(params: Params, kernel, u: Field) -> tuple[float, float]:
    """Normalized stationarity defects of the two sign parts.

    ``xi_± = ∫ (I_alpha * |u|^p) |u^±|^p / <u, u^±>_{H^1} - 1`` and ``-1`` for a
    missing part. The denominator ``<u, u^±>`` equals ``||u^±||^2`` in the
    continuum and keeps the zero set equal to the discrete nodal set.
    """
    br = brackets(params, kernel, u)
    out = []
    for q, qd, d in ((br.q_plus, br.q_pm, br.d_pp), (br.q_minus, br.q_pm, br.d_mm)):
        if q == 0:
            out.append(-1.0)
        else:
            out.append((d + br.d_pm) / (q + qd) - 1.0)
    return out[0], out[1]
