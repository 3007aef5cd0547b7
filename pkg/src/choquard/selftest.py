"""Numerical self-checks behind the ``kernel-selftest`` and ``gradcheck`` commands."""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from .functional import action, action_gradient
from .grid import Field, Grid, Params, gaussian, l2_inner
from .riesz import build_kernel, pad_field, riesz_convolve
from .solve import smooth_noise


def semigroup_defect(grid: Grid, alpha: float, seed: int = 0, fields: int = 10) -> float:
    """Largest max-norm gap between ``I_{a/2} * I_{a/2} * f`` and ``I_a * f``.

    Spectral kernels on the padded periodic box, relative to ``max |I_a * f|``.
    """
    full = build_kernel(grid, alpha, "spectral")
    half = full.half()
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(fields):
        f = pad_field(Field(grid, rng.standard_normal(grid.shape)))
        direct = riesz_convolve(full, f).values
        twice = riesz_convolve(half, riesz_convolve(half, f)).values
        worst = max(worst, float(np.abs(twice - direct).max() / np.abs(direct).max()))
    return worst


def newtonian_gaussian_error(n: int = 64, L: float = 12.0, mode: str = "truncated_kernel") -> float:
    """Relative max error of ``I_2 * e^{-|x|^2/2}`` in 3-D on the inner half-box.

    The exact potential is ``(2 pi)^{3/2} erf(r / sqrt 2) / (4 pi r)``.
    """
    grid = Grid(3, n, L)
    kernel = build_kernel(grid, 2.0, mode)
    pot = riesz_convolve(kernel, gaussian(grid, 1.0)).values
    r = np.broadcast_to(grid.radius, grid.shape)
    with np.errstate(invalid="ignore", divide="ignore"):
        exact = (2 * math.pi) ** 1.5 * erf(r / math.sqrt(2)) / (4 * math.pi * r)
    exact = np.where(r == 0, 1.0, exact)
    inner = np.ones(grid.shape, dtype=bool)
    for c in grid.mesh():
        inner &= np.abs(c) < L / 4
    return float(np.abs(pot - exact)[inner].max() / np.abs(exact[inner]).max())


def multiplier_minimum(grid: Grid, alpha: float) -> float:
    """Smallest truncated-kernel multiplier relative to the largest."""
    m = build_kernel(grid, alpha, "truncated_kernel").multiplier
    return float(m.min() / m.max())


def gradient_check(params: Params, kernel, u: Field, direction: Field, eps: float) -> float:
    """Relative gap between a central difference of the action and ``<A'(u), direction>``."""
    fd = (action(params, kernel, u + eps * direction)
          - action(params, kernel, u - eps * direction)) / (2 * eps)
    exact = l2_inner(action_gradient(params, kernel, u), direction)
    return abs(fd - exact) / abs(exact)


def random_test_pair(grid: Grid, seed: int) -> tuple[Field, Field]:
    """A smooth random field and a smooth random direction, both localized."""
    u = smooth_noise(grid, 2 * seed, grid.L / 8)
    phi = smooth_noise(grid, 2 * seed + 1, grid.L / 8)
    return u, phi
