"""Periodic boxes, sampled fields and their spectral calculus.

The box ``[-L/2, L/2)^N`` stands in for the whole space. Every axis carries
``n`` nodes (a power of two) at ``x_j = -L/2 + j h`` with ``h = L / n``, so the
origin is the node ``j = n / 2``. Derivatives and the H^1 pairing are spectral;
integrals are trapezoid sums, which are exact for band-limited data.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy import fft

MODES = ("choquard", "local_nls")


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Params:
    """Problem data: dimension ``N``, Riesz order ``alpha`` and exponent ``p``.

    ``mode="local_nls"`` swaps the nonlocal term for ``|u|^{2p}``; the
    subcriticality window is then the local one.
    """

    N: int
    alpha: float
    p: float
    mode: str = "choquard"

    def __post_init__(self):
        if self.N not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.N}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0 < self.alpha < self.N:
            raise ValueError(f"need 0 < alpha < N, got alpha={self.alpha}, N={self.N}")
        if self.p <= 1:
            raise ValueError(f"need p > 1, got {self.p}")
        lo, hi = self.window
        if not lo < 1 / self.p < hi:
            raise ValueError(
                f"p={self.p} is outside the subcritical window {lo:.6g} < 1/p < {hi:.6g}"
            )

    @property
    def window(self) -> tuple[float, float]:
        """Open interval that ``1/p`` must lie in."""
        N, a = self.N, self.alpha
        if self.mode == "local_nls":
            return max(0.5 - 1 / N, 0.0), 0.5
        return (N - 2) / (N + a), N / (N + a)

    @property
    def regime(self) -> str:
        if self.p < 2:
            return "sublinear"
        if self.p > 2:
            return "superlinear"
        return "boundary"

    def to_dict(self) -> dict:
        return {"N": self.N, "alpha": self.alpha, "p": self.p, "mode": self.mode}


@dataclass(frozen=True)
class Grid:
    """Cubic periodic box with ``n`` nodes of spacing ``L / n`` per axis."""

    N: int
    n: int
    L: float

    def __post_init__(self):
        if self.N not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.N}")
        if self.n < 4 or self.n & (self.n - 1):
            raise ValueError(f"n must be a power of two >= 4, got {self.n}")
        if not self.L > 0:
            raise ValueError("box length must be positive")

    @property
    def h(self) -> float:
        return self.L / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.N

    @property
    def cell_volume(self) -> float:
        return self.h**self.N

    @property
    def origin_index(self) -> tuple[int, ...]:
        return (self.n // 2,) * self.N

    @cached_property
    def x(self) -> np.ndarray:
        """1-D node coordinates shared by all axes."""
        return -self.L / 2 + self.h * np.arange(self.n)

    def mesh(self) -> list[np.ndarray]:
        return np.meshgrid(*([self.x] * self.N), indexing="ij", sparse=True)

    @cached_property
    def radius(self) -> np.ndarray:
        return np.sqrt(sum(c**2 for c in self.mesh()))

    @cached_property
    def wavenumbers(self) -> list[np.ndarray]:
        """Angular wavenumbers, broadcastable to the ``rfftn`` half-spectrum."""
        full = 2 * np.pi * fft.fftfreq(self.n, d=self.h)
        half = 2 * np.pi * fft.rfftfreq(self.n, d=self.h)
        ks = []
        for axis in range(self.N):
            k = half if axis == self.N - 1 else full
            shape = [1] * self.N
            shape[axis] = k.size
            ks.append(k.reshape(shape))
        return ks

    @cached_property
    def k2(self) -> np.ndarray:
        return sum(k**2 for k in self.wavenumbers)

    def padded(self) -> Grid:
        """The doubled box used for zero-padded linear convolutions."""
        return Grid(self.N, 2 * self.n, 2 * self.L)

    def zeros(self) -> Field:
        return Field(self, np.zeros(self.shape))

    def sample(self, fn) -> Field:
        """Evaluate ``fn(*coords)`` on the nodes (coords are broadcastable)."""
        return Field(self, np.broadcast_to(fn(*self.mesh()), self.shape).astype(float))

    def to_dict(self) -> dict:
        return {"N": self.N, "n": self.n, "L": self.L}


@dataclass(frozen=True, eq=False)
class Field:
    """Real samples on a grid. The value array is made read-only."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"values of shape {v.shape} do not fit grid {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field has non-finite samples")
        if v is self.values:
            v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def _same(self, other: Field):
        if other.grid != self.grid:
            raise GridMismatchError(f"{self.grid} != {other.grid}")

    def __add__(self, other):
        if isinstance(other, Field):
            self._same(other)
            return Field(self.grid, self.values + other.values)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, Field):
            self._same(other)
            return Field(self.grid, self.values - other.values)
        return NotImplemented

    def __mul__(self, c):
        if np.isscalar(c):
            return Field(self.grid, self.values * float(c))
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, c):
        return self * (1.0 / c)

    def __neg__(self):
        return Field(self.grid, -self.values)

    def integral(self) -> float:
        return float(self.values.sum() * self.grid.cell_volume)

    def max_abs(self) -> float:
        return float(np.abs(self.values).max())


def check_same_grid(*fields: Field) -> Grid:
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise GridMismatchError(f"{f.grid} != {g}")
    return g


def spectral_apply(u: Field, multiplier) -> np.ndarray:
    """Apply a real, even Fourier multiplier (half-spectrum layout) to ``u``."""
    g = u.grid
    return fft.irfftn(multiplier * fft.rfftn(u.values), s=g.shape, axes=range(g.N))


def helmholtz(u: Field) -> np.ndarray:
    """Samples of ``(1 - Δ) u``."""
    return spectral_apply(u, 1.0 + u.grid.k2)


def gradient(u: Field) -> list[np.ndarray]:
    g = u.grid
    uh = fft.rfftn(u.values)
    out = []
    for axis, k in enumerate(g.wavenumbers):
        kk = k.copy()
        # the Nyquist mode has no odd part on a real grid
        if axis == g.N - 1:
            kk[..., -1] = 0.0
        else:
            sl = [slice(None)] * g.N
            sl[axis] = g.n // 2
            kk[tuple(sl)] = 0.0
        out.append(fft.irfftn(1j * kk * uh, s=g.shape, axes=range(g.N)))
    return out


def l2_inner(u: Field, v: Field) -> float:
    g = check_same_grid(u, v)
    return float(np.vdot(u.values, v.values) * g.cell_volume)


def h1_inner(u: Field, v: Field) -> float:
    """Spectral ``∫ ∇u·∇v + u v`` (multiplier ``1 + |k|^2``)."""
    g = check_same_grid(u, v)
    return float(np.vdot(helmholtz(u), v.values) * g.cell_volume)


def h1_norm(u: Field) -> float:
    return math.sqrt(max(h1_inner(u, u), 0.0))


def split_signs(u: Field) -> tuple[Field, Field]:
    """``(max(u, 0), min(u, 0))``; the two parts sum back to ``u`` exactly."""
    v = u.values
    return Field(u.grid, np.maximum(v, 0.0)), Field(u.grid, np.minimum(v, 0.0))


def reflect(u: Field, axis: int = -1) -> Field:
    """``u(x', -x_N)`` on the node lattice: index ``j`` goes to ``(n - j) mod n``."""
    return Field(u.grid, np.roll(np.flip(u.values, axis=axis), 1, axis=axis))


def antisymmetrize(u: Field, axis: int = -1) -> Field:
    """Odd part of ``u`` with respect to the last coordinate."""
    return Field(u.grid, 0.5 * (u.values - reflect(u, axis).values))


def odd_defect(u: Field, axis: int = -1) -> float:
    """Max-norm distance from the odd subspace, relative to ``max |u|``."""
    scale = u.max_abs()
    if scale == 0:
        return 0.0
    return float(np.abs(u.values + reflect(u, axis).values).max() / (2 * scale))


def shift(u: Field, nodes) -> Field:
    """Circular shift by whole nodes (one integer per axis)."""
    return Field(u.grid, np.roll(u.values, tuple(nodes), axis=tuple(range(u.grid.N))))


def recenter(u: Field, anchor=None, *, by: str = "abs", axes=None) -> Field:
    """Shift ``u`` by whole nodes so its peak sits on ``anchor``.

    ``by="abs"`` tracks the node of largest ``|u|``; ``by="plus"`` the largest
    positive value. Only the listed ``axes`` are shifted, so odd runs can keep
    the oddness axis fixed.
    """
    g = u.grid
    if by == "abs":
        score = np.abs(u.values)
    elif by == "plus":
        score = np.maximum(u.values, 0.0)
    else:
        raise ValueError(f"unknown peak criterion {by!r}")
    if not score.any():
        raise ValueError("cannot recenter a field with no peak")
    peak = np.unravel_index(np.argmax(score), g.shape)
    anchor = g.origin_index if anchor is None else tuple(anchor)
    axes = range(g.N) if axes is None else [a % g.N for a in axes]
    nodes = [0] * g.N
    for a in axes:
        nodes[a] = anchor[a] - peak[a]
    if not any(nodes):
        return u
    return shift(u, nodes)


def boundary_mask(grid: Grid, fraction: float = 0.05) -> np.ndarray:
    width = math.ceil(fraction * grid.n)
    idx = np.arange(grid.n)
    edge = (idx < width) | (idx >= grid.n - width)
    mask = np.zeros(grid.shape, dtype=bool)
    for axis in range(grid.N):
        shape = [1] * grid.N
        shape[axis] = grid.n
        mask |= edge.reshape(shape)
    return mask


def energy_density(u: Field) -> np.ndarray:
    return sum(d**2 for d in gradient(u)) + u.values**2


def tail_mass(u: Field, fraction: float = 0.05) -> float:
    """Share of ``∫ |∇u|^2 + u^2`` carried by the boundary layer of the box."""
    e = energy_density(u)
    total = e.sum()
    if total == 0:
        return 0.0
    return float(e[boundary_mask(u.grid, fraction)].sum() / total)


def gaussian(grid: Grid, width: float, center=None, amplitude: float = 1.0) -> Field:
    center = np.zeros(grid.N) if center is None else np.asarray(center, dtype=float)
    coords = grid.mesh()
    r2 = sum((c - c0) ** 2 for c, c0 in zip(coords, center))
    return Field(grid, amplitude * np.broadcast_to(np.exp(-r2 / (2 * width**2)), grid.shape))


def dump_field(u: Field, path, params: Params | None = None) -> None:
    """Write ``path`` as little-endian float64 (row-major) plus ``path.json``."""
    path = Path(path)
    u.values.astype("<f8").tofile(path)
    meta = {
        "dims": list(u.grid.shape),
        "extent": u.grid.L,
        "params": params.to_dict() if params is not None else None,
    }
    path.with_name(path.name + ".json").write_text(json.dumps(meta, sort_keys=True, indent=1))


def load_field(path) -> tuple[Field, Params | None]:
    path = Path(path)
    meta = json.loads(path.with_name(path.name + ".json").read_text())
    dims = tuple(meta["dims"])
    grid = Grid(len(dims), dims[0], float(meta["extent"]))
    values = np.fromfile(path, dtype="<f8").reshape(dims)
    params = Params(**meta["params"]) if meta.get("params") else None
    return Field(grid, values), params
