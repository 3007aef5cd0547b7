"""The action functional, its L^2 gradient and the sign-part brackets."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .grid import (
    Field,
    GridMismatchError,
    Params,
    h1_inner,
    helmholtz,
    spectral_apply,
    split_signs,
    tail_mass,
)
from .riesz import RieszKernel, power, riesz_convolve, riesz_pairing


class TailMassWarning(RuntimeWarning):
    pass


def _check(params: Params, kernel: RieszKernel | None, u: Field):
    if params.mode == "choquard":
        if kernel is None:
            raise ValueError("choquard mode needs a Riesz kernel")
        if u.grid != kernel.grid:
            raise GridMismatchError(f"{u.grid} is not the kernel grid {kernel.grid}")
        if kernel.grid.N != params.N:
            raise ValueError("kernel dimension differs from params.N")


def nonlocal_energy(params: Params, kernel: RieszKernel | None, u: Field) -> float:
    """``D(u)``: the Choquard bracket, or ``∫ |u|^{2p}`` in local mode."""
    if params.mode == "local_nls":
        return float((np.abs(u.values) ** (2 * params.p)).sum() * u.grid.cell_volume)
    up = power(u, params.p)
    return riesz_pairing(kernel, up, up)


def action(params: Params, kernel: RieszKernel | None, u: Field, *,
           tail_guard: float | None = None) -> float:
    _check(params, kernel, u)
    if tail_guard is not None and tail_mass(u) > tail_guard:
        warnings.warn(f"tail mass exceeds {tail_guard:g}; box too small", TailMassWarning,
                      stacklevel=2)
    return 0.5 * h1_inner(u, u) - nonlocal_energy(params, kernel, u) / (2 * params.p)


def signed_power(v: np.ndarray, q: float) -> np.ndarray:
    """``|v|^{q-1} v`` written as ``sign(v) |v|^{q-1}``; zero at zero for ``q > 1``."""
    return np.sign(v) * np.abs(v) ** (q - 1)


def nonlinear_term(params: Params, kernel: RieszKernel | None, u: Field) -> np.ndarray:
    """Samples of ``(I_alpha * |u|^p) |u|^{p-2} u`` (or ``|u|^{2p-2} u`` locally)."""
    p = params.p
    if params.mode == "local_nls":
        return signed_power(u.values, 2 * p)
    pot = riesz_convolve(kernel, power(u, p)).values
    return pot * signed_power(u.values, p)


def action_gradient(params: Params, kernel: RieszKernel | None, u: Field) -> Field:
    """L^2 representative ``-Δu + u - (I_alpha * |u|^p)|u|^{p-2}u`` of ``A'(u)``."""
    _check(params, kernel, u)
    return Field(u.grid, helmholtz(u) - nonlinear_term(params, kernel, u))


def sobolev_precondition(g: Field) -> Field:
    """Riesz map ``(1 - Δ)^{-1}``: turns an L^2 gradient into the H^1 one."""
    return Field(g.grid, spectral_apply(g, 1.0 / (1.0 + g.grid.k2)))


@dataclass(frozen=True)
class ChoquardBrackets:
    """Sign-part scalars of a field ``u = u⁺ + u⁻``.

    ``q_pm = <u⁺, u⁻>_{H^1}`` vanishes in the continuum; on the grid the
    spectral pairing of the two kinked parts leaves a small interface term,
    carried here so that the fiber algebra reproduces :func:`action` exactly.
    """

    q_plus: float
    q_minus: float
    d_pp: float
    d_mm: float
    d_pm: float
    q_pm: float = 0.0

    @property
    def q_total(self) -> float:
        return self.q_plus + 2 * self.q_pm + self.q_minus

    @property
    def d_total(self) -> float:
        return self.d_pp + 2 * self.d_pm + self.d_mm

    def scaled(self, s_plus: float, s_minus: float, p: float) -> ChoquardBrackets:
        """Brackets of ``s_plus u⁺ + s_minus u⁻`` for positive scalings."""
        tp, tm = s_plus**p, s_minus**p
        return ChoquardBrackets(
            s_plus**2 * self.q_plus, s_minus**2 * self.q_minus,
            tp * tp * self.d_pp, tm * tm * self.d_mm, tp * tm * self.d_pm,
            s_plus * s_minus * self.q_pm,
        )

    def to_dict(self) -> dict:
        return asdict(self)


def brackets(params: Params, kernel: RieszKernel | None, u: Field) -> ChoquardBrackets:
    _check(params, kernel, u)
    up, um = split_signs(u)
    hp = helmholtz(up)
    dv = u.grid.cell_volume
    q_plus = float(np.vdot(hp, up.values) * dv)
    q_pm = float(np.vdot(hp, um.values) * dv)
    q_minus = float(np.vdot(helmholtz(um), um.values) * dv)
    p = params.p
    if params.mode == "local_nls":
        d_pp = float((up.values ** (2 * p)).sum() * dv)
        d_mm = float(((-um.values) ** (2 * p)).sum() * dv)
        return ChoquardBrackets(q_plus, q_minus, d_pp, d_mm, 0.0, q_pm)
    fp, fm = power(up, p), power(um, p)
    pot_p = riesz_convolve(kernel, fp).values
    d_pp = float(np.vdot(pot_p, fp.values) * dv)
    d_pm = float(np.vdot(pot_p, fm.values) * dv)
    d_mm = float(np.vdot(riesz_convolve(kernel, fm).values, fm.values) * dv) if fm.values.any() else 0.0
    return ChoquardBrackets(q_plus, q_minus, d_pp, d_mm, d_pm, q_pm)


def nehari_defect(params: Params, kernel: RieszKernel | None, u: Field) -> float:
    """``<A'(u), u>``, zero exactly on the Nehari manifold."""
    return h1_inner(u, u) - nonlocal_energy(params, kernel, u)
