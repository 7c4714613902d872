"""Flat-torus lattices, uniform periodic grids and spectral calculus.

Everything downstream (geometry, flow, stability) differentiates through a
:class:`PeriodicGrid`.  Two backends share the same signatures:

``"spectral"``
    Fourier differentiation, exact for band-limited fields.  The Nyquist mode
    of every odd-order derivative is zeroed.
``"fd"``
    Second-order centered finite differences, kept for cross-validation.

Reductions go through :func:`psum`, a fixed-order pairwise sum, so integrals
do not depend on the number of FFT workers.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.fft as sfft

from .errors import ConfigError, GridMismatchError

BACKENDS = ("spectral", "fd")


def psum(a) -> float:
    """Deterministic pairwise sum of all entries of ``a``."""
    flat = np.ascontiguousarray(a, dtype=float).ravel()
    return float(np.add.reduce(flat))


@dataclass(frozen=True)
class FlatTorus:
    """Rectangular flat torus R^d / (L_1 Z x ... x L_d Z)."""

    side_lengths: tuple[float, ...]

    def __post_init__(self):
        sides = tuple(float(s) for s in self.side_lengths)
        if len(sides) < 1:
            raise ConfigError("torus dimension must be >= 1")
        if not all(np.isfinite(s) and s > 0 for s in sides):
            raise ConfigError(f"torus side lengths must be positive, got {sides}")
        object.__setattr__(self, "side_lengths", sides)

    @property
    def dimension(self) -> int:
        return len(self.side_lengths)

    @property
    def measure(self) -> float:
        return float(np.prod(self.side_lengths))


class SpectralWorkspace:
    """Wavenumbers and real-to-complex transforms for one grid shape.

    Transforms are ``scipy.fft.rfftn`` over all axes; the worker count is
    taken from the ambient ``scipy.fft.set_workers`` context.
    """

    def __init__(self, shape: tuple[int, ...], side_lengths: tuple[float, ...]):
        self.shape = shape
        d = len(shape)
        self.wavenumbers: list[np.ndarray] = []
        self.nyquist: list[np.ndarray] = []
        for axis, (n, length) in enumerate(zip(shape, side_lengths)):
            if axis == d - 1:
                idx = np.arange(n // 2 + 1)
            else:
                idx = sfft.fftfreq(n, 1.0 / n).round().astype(int)
            k = idx * (2.0 * np.pi / length)
            view = [1] * d
            view[axis] = k.size
            self.wavenumbers.append(k.reshape(view))
            self.nyquist.append((np.abs(idx) == n // 2).reshape(view))
        self.k2 = sum(k**2 for k in self.wavenumbers)

    def forward(self, u: np.ndarray) -> np.ndarray:
        return sfft.rfftn(u)

    def backward(self, uh: np.ndarray) -> np.ndarray:
        return sfft.irfftn(uh, s=self.shape)

    def symbol(self, orders: Sequence[int]) -> np.ndarray:
        """Fourier multiplier of the mixed partial with the given per-axis orders."""
        sym = np.ones((), dtype=complex)
        for k, nyq, o in zip(self.wavenumbers, self.nyquist, orders):
            if o == 0:
                continue
            factor = (1j * k) ** o
            if o % 2:
                factor = np.where(nyq, 0.0, factor)
            sym = sym * factor
        return sym


class PeriodicGrid:
    """Uniform periodic grid on a :class:`FlatTorus`.

    Node ``(j_1, ..., j_d)`` sits at ``(j_1 h_1, ..., j_d h_d)`` with
    ``h_i = L_i / N_i``.  Fields are real arrays of shape ``resolution``
    in row-major order.  Instances are treated as immutable.
    """

    def __init__(self, torus: FlatTorus, resolution: Sequence[int], backend: str = "spectral"):
        res = tuple(int(n) for n in resolution)
        problems = []
        if len(res) != torus.dimension:
            problems.append(f"need one resolution per axis ({torus.dimension}), got {len(res)}")
        for axis, n in enumerate(res):
            if n % 2 or n < 8:
                problems.append(f"resolution[{axis}]={n} must be even and >= 8")
        if backend not in BACKENDS:
            problems.append(f"unknown backend {backend!r}")
        if problems:
            raise ConfigError("; ".join(problems))
        self.torus = torus
        self.resolution = res
        self.backend = backend
        self.spacing = tuple(L / n for L, n in zip(torus.side_lengths, res))
        self.workspace = SpectralWorkspace(res, torus.side_lengths)

    def __repr__(self):
        return f"PeriodicGrid(sides={self.torus.side_lengths}, resolution={self.resolution}, backend={self.backend!r})"

    def __eq__(self, other):
        return (
            isinstance(other, PeriodicGrid)
            and self.torus == other.torus
            and self.resolution == other.resolution
            and self.backend == other.backend
        )

    def __hash__(self):
        return hash((self.torus, self.resolution, self.backend))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.resolution

    @property
    def dimension(self) -> int:
        return len(self.resolution)

    @property
    def size(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def min_spacing(self) -> float:
        return min(self.spacing)

    def axes(self) -> list[np.ndarray]:
        return [np.arange(n) * h for n, h in zip(self.resolution, self.spacing)]

    def coordinates(self) -> list[np.ndarray]:
        """Node coordinates, one array of grid shape per axis."""
        return list(np.meshgrid(*self.axes(), indexing="ij"))

    def check(self, u) -> np.ndarray:
        """Return the values of ``u`` as an array, validating the grid."""
        if isinstance(u, ScalarField):
            if u.grid != self:
                raise GridMismatchError("field lives on a different grid")
            return u.values
        arr = np.asarray(u, dtype=float)
        if arr.shape != self.shape:
            raise GridMismatchError(f"field shape {arr.shape} does not match grid {self.shape}")
        return arr

    # -- integration --------------------------------------------------

    def integrate(self, u) -> float:
        """Flat lattice quadrature of ``u`` over the torus."""
        return psum(u) * self.cell_volume

    def mean(self, u) -> float:
        return psum(u) / self.size

    # -- differentiation ----------------------------------------------

    def partial(self, u: np.ndarray, orders: Sequence[int]) -> np.ndarray:
        """Mixed partial derivative of ``u`` (per-axis orders)."""
        orders = tuple(int(o) for o in orders)
        if self.backend == "fd":
            out = u
            for axis, o in enumerate(orders):
                if o:
                    out = _fd_derivative(out, axis, o, self.spacing[axis])
            return out
        ws = self.workspace
        return ws.backward(ws.forward(u) * ws.symbol(orders))

    def diff(self, u: np.ndarray, axis: int, order: int = 1) -> np.ndarray:
        orders = [0] * self.dimension
        orders[axis] = order
        return self.partial(u, orders)

    def derivatives(self, u: np.ndarray, orders_list: Sequence[Sequence[int]]) -> list[np.ndarray]:
        """Several partials of ``u`` sharing one forward transform."""
        if self.backend == "fd":
            return [self.partial(u, o) for o in orders_list]
        ws = self.workspace
        uh = ws.forward(u)
        return [ws.backward(uh * ws.symbol(o)) for o in orders_list]

    def gradient(self, u: np.ndarray) -> np.ndarray:
        eye = np.eye(self.dimension, dtype=int)
        return np.stack(self.derivatives(u, eye))

    def hessian(self, u: np.ndarray) -> np.ndarray:
        """Second partials ``(d, d, *shape)``; diagonal entries keep the Nyquist mode."""
        d = self.dimension
        pairs = []
        for i in range(d):
            for j in range(i, d):
                o = [0] * d
                o[i] += 1
                o[j] += 1
                pairs.append(((i, j), o))
        parts = self.derivatives(u, [o for _, o in pairs])
        out = np.empty((d, d) + self.shape)
        for ((i, j), _), val in zip(pairs, parts):
            out[i, j] = val
            out[j, i] = val
        return out

    def divergence(self, vec: np.ndarray) -> np.ndarray:
        return sum(self.diff(vec[i], i, 1) for i in range(self.dimension))

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        if self.backend == "fd":
            return sum(self.diff(u, i, 2) for i in range(self.dimension))
        ws = self.workspace
        return ws.backward(-ws.k2 * ws.forward(u))

    def bilaplacian(self, u: np.ndarray) -> np.ndarray:
        ws = self.workspace
        return ws.backward(self._laplacian_symbol() ** 2 * ws.forward(u))

    def _laplacian_symbol(self) -> np.ndarray:
        ws = self.workspace
        if self.backend == "spectral":
            return -ws.k2
        # symbol of the 3-point Laplacian, so that the stabilized solve inverts the FD operator
        return sum(
            -(4.0 / h**2) * np.sin(k * h / 2.0) ** 2 for k, h in zip(ws.wavenumbers, self.spacing)
        )

    def solve_stabilized(self, rhs: np.ndarray, stabilizer: float, dt: float) -> np.ndarray:
        """Solve ``u + A dt Lap^2 u = rhs`` mode by mode."""
        ws = self.workspace
        denom = 1.0 + stabilizer * dt * self._laplacian_symbol() ** 2
        return ws.backward(ws.forward(rhs) / denom)

    def dealias(self, u: np.ndarray) -> np.ndarray:
        """2/3-rule filter: zero every mode with |index_i| > N_i/3 on some axis."""
        ws = self.workspace
        mask = np.ones((), dtype=bool)
        for k, n, L in zip(ws.wavenumbers, self.resolution, self.torus.side_lengths):
            idx = np.abs(k) * L / (2.0 * np.pi)
            mask = mask & (idx <= n / 3.0)
        return ws.backward(ws.forward(u) * mask)


def _fd_derivative(u: np.ndarray, axis: int, order: int, h: float) -> np.ndarray:
    def s(k):
        return np.roll(u, -k, axis=axis)

    if order == 1:
        return (s(1) - s(-1)) / (2 * h)
    if order == 2:
        return (s(1) - 2 * u + s(-1)) / h**2
    if order == 3:
        return (s(2) - 2 * s(1) + 2 * s(-1) - s(-2)) / (2 * h**3)
    if order == 4:
        return (s(2) - 4 * s(1) + 6 * u - 4 * s(-1) + s(-2)) / h**4
    raise ConfigError(f"derivative order {order} not in 1..4")


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real values on the nodes of a grid."""

    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.size != self.grid.size:
            raise GridMismatchError(f"{vals.size} values for a grid of {self.grid.size} nodes")
        vals = vals.reshape(self.grid.shape)
        if not np.all(np.isfinite(vals)):
            raise ValueError("field contains non-finite values")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_function(cls, grid: PeriodicGrid, fn) -> "ScalarField":
        return cls(grid, fn(*grid.coordinates()))

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


def make_grid(torus: FlatTorus, resolutions: Sequence[int], backend: str = "spectral") -> PeriodicGrid:
    return PeriodicGrid(torus, resolutions, backend=backend)


def spectral_derivative(field: ScalarField, axis: int, order: int) -> ScalarField:
    """Derivative of ``field`` along ``axis`` (order 1..4) on its grid's backend."""
    grid = field.grid
    if not 1 <= order <= 4:
        raise ConfigError(f"derivative order {order} not in 1..4")
    if not 0 <= axis < grid.dimension:
        raise ConfigError(f"axis {axis} out of range for a {grid.dimension}-d grid")
    return ScalarField(grid, grid.diff(field.values, axis, order))


def solve_stabilized(rhs: ScalarField, stabilizer: float, dt: float) -> ScalarField:
    """Return ``u`` with ``u + A dt Lap^2 u = rhs`` (Lap = flat grid Laplacian)."""
    if not (stabilizer > 0 and dt > 0):
        raise ConfigError(f"need stabilizer > 0 and dt > 0, got A={stabilizer}, dt={dt}")
    vals = np.asarray(rhs.values)
    if not np.all(np.isfinite(vals)):
        raise ValueError("non-finite right-hand side")
    return ScalarField(rhs.grid, rhs.grid.solve_stabilized(vals, stabilizer, dt))
