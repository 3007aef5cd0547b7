"""Discrete Riesz potential ``I_alpha * f`` on zero-padded boxes.

Two kernels share one code path. ``truncated_kernel`` samples
``A_alpha |x|^{alpha-N}`` on the doubled box, so the zero-padded product in
Fourier space is an exact linear convolution of the sampled kernel against the
sampled density (Hockney's trick). ``spectral`` uses the symbol ``|k|^{-alpha}``
of the doubled periodic box with the zero mode set to 0; it is less accurate in
free space but factorizes exactly, ``|k|^{-alpha} = (|k|^{-alpha/2})^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft, integrate
from scipy.special import gamma

from .grid import Field, Grid, GridMismatchError, check_same_grid

KERNEL_MODES = ("truncated_kernel", "spectral")
_MODE_ALIASES = {"truncated": "truncated_kernel", "truncated_kernel": "truncated_kernel",
                 "spectral": "spectral"}


def riesz_constant(N: int, alpha: float) -> float:
    """Normalization ``A_alpha`` of ``I_alpha(x) = A_alpha / |x|^{N - alpha}``."""
    return gamma((N - alpha) / 2) / (gamma(alpha / 2) * math.pi ** (N / 2) * 2**alpha)


def riesz_potential(N: int, alpha: float, r):
    """Pointwise ``I_alpha`` at radius ``r > 0``."""
    return riesz_constant(N, alpha) * np.asarray(r, dtype=float) ** (alpha - N)


def _origin_cell_value(N: int, alpha: float, h: float) -> float:
    """Mean of ``A_alpha |x|^{alpha-N}`` over the cube ``[-h/2, h/2]^N``.

    The cube splits into ``2N`` pyramids over its faces; along each ray the
    radial integral is explicit, leaving a smooth integral over one face:
    ``∫_cube |x|^{alpha-N} = (2N a / alpha) ∫_{[-a,a]^{N-1}} (a^2 + |z|^2)^{(alpha-N)/2} dz``.
    """
    a = h / 2
    e = (alpha - N) / 2
    if N == 1:
        face = a ** (alpha - 1)
    elif N == 2:
        face = 2 * integrate.quad(lambda z: (a * a + z * z) ** e, 0.0, a, epsabs=0, epsrel=1e-13)[0]
    else:
        face = 4 * integrate.dblquad(lambda y, z: (a * a + z * z + y * y) ** e, 0.0, a, 0.0, a,
                                     epsabs=0, epsrel=1e-12)[0]
    return riesz_constant(N, alpha) * 2 * N * a / alpha * face / h**N


def _dealias_mask(grid: Grid) -> np.ndarray:
    kmax = math.pi / grid.h
    keep = np.ones(grid.k2.shape, dtype=bool)
    for k in grid.wavenumbers:
        keep &= np.abs(k) <= (2 / 3) * kmax
    return keep.astype(float)


@dataclass(frozen=True, eq=False)
class RieszKernel:
    grid: Grid
    alpha: float
    mode: str
    multiplier: np.ndarray = field(repr=False)
    A_alpha: float
    dealias: bool = False

    @property
    def padded_grid(self) -> Grid:
        return self.grid.padded()

    def half(self) -> RieszKernel:
        """The kernel of order ``alpha / 2`` on the same grid and mode."""
        return build_kernel(self.grid, self.alpha / 2, self.mode, dealias=self.dealias)


def build_kernel(grid: Grid, alpha: float, mode: str = "truncated_kernel", *,
                 dealias: bool = False) -> RieszKernel:
    """Precompute the Fourier multiplier of ``I_alpha`` on the padded grid."""
    try:
        mode = _MODE_ALIASES[mode]
    except KeyError:
        raise ValueError(f"unknown kernel mode {mode!r}") from None
    N = grid.N
    if not 0 < alpha < N:
        raise ValueError(f"need 0 < alpha < N, got alpha={alpha}, N={N}")
    pg = grid.padded()
    if mode == "spectral":
        with np.errstate(divide="ignore"):
            m = pg.k2 ** (-alpha / 2)
        m.flat[0] = 0.0
    else:
        j = np.arange(pg.n)
        d = np.where(j < grid.n, j, j - pg.n) * grid.h
        coords = np.meshgrid(*([d] * N), indexing="ij", sparse=True)
        r = np.sqrt(sum(c**2 for c in coords))
        with np.errstate(divide="ignore"):
            kern = riesz_constant(N, alpha) * r ** (alpha - N)
        kern.flat[0] = _origin_cell_value(N, alpha, grid.h)
        m = fft.rfftn(kern).real * grid.cell_volume
        if m.min() < -1e-12 * m.max():
            raise ArithmeticError("truncated Riesz multiplier lost positivity")
        # rounding-level negatives only
        m = np.maximum(m, 0.0)
    m.flags.writeable = False
    return RieszKernel(grid, float(alpha), mode, m, riesz_constant(N, alpha), dealias)


def riesz_convolve(kernel: RieszKernel, f: Field) -> Field:
    """``I_alpha * f`` as a linear convolution restricted to the box of ``f``.

    A field on the kernel's padded grid is treated as periodic data on that
    grid (no padding, no restriction); composing such calls realizes the exact
    semigroup identity in spectral mode.
    """
    g = kernel.grid
    if f.grid == kernel.padded_grid:
        pg = f.grid
        out = fft.irfftn(kernel.multiplier * fft.rfftn(f.values), s=pg.shape, axes=range(pg.N))
        return Field(pg, out)
    if f.grid != g:
        raise GridMismatchError(f"{f.grid} is not the kernel grid {g}")
    vals = f.values
    if kernel.dealias:
        vals = _filter(g, vals)
    pad = np.zeros(kernel.padded_grid.shape)
    pad[(slice(0, g.n),) * g.N] = vals
    out = fft.irfftn(kernel.multiplier * fft.rfftn(pad), s=pad.shape, axes=range(g.N))
    out = out[(slice(0, g.n),) * g.N]
    if kernel.dealias:
        out = _filter(g, out)
    return Field(g, out)


def _filter(grid: Grid, values: np.ndarray) -> np.ndarray:
    return fft.irfftn(_dealias_mask(grid) * fft.rfftn(values), s=grid.shape, axes=range(grid.N))


def pad_field(f: Field) -> Field:
    """Embed ``f`` in the lower corner of its doubled box, zeros elsewhere."""
    g = f.grid
    pg = g.padded()
    vals = np.zeros(pg.shape)
    vals[(slice(0, g.n),) * g.N] = f.values
    return Field(pg, vals)


def power(u: Field, p: float) -> Field:
    return Field(u.grid, np.abs(u.values) ** p)


def riesz_pairing(kernel: RieszKernel, f: Field, g: Field) -> float:
    """``∫ (I_alpha * f) g`` for densities on the kernel grid."""
    grid = check_same_grid(f, g)
    return float(np.vdot(riesz_convolve(kernel, f).values, g.values) * grid.cell_volume)


def choquard_term(kernel: RieszKernel, u: Field, weight: Field, p: float) -> float:
    """``∫ (I_alpha * |u|^p) |weight|^p``."""
    return riesz_pairing(kernel, power(u, p), power(weight, p))
