"""Geometry of periodic graph hypersurfaces and closed plane curves.

Conventions, fixed once for the whole package:

* a graph ``x_n = f(x)`` bounds the subgraph ``E = {x_n <= f}``; its outer
  normal ``nu = (-grad f, 1) / W`` points up, ``W = sqrt(1 + |grad f|^2)``;
* ``h_ij = -<d_i d_j phi, nu>`` and ``H = g^ij h_ij``, so bumps and round
  spheres have ``H > 0``;
* closed curves are positively oriented and ``kappa = 1/R`` on circles.

Christoffel symbols of the graph metric ``g = I + grad f (x) grad f`` use the
closed form ``Gamma^k_ij = f_k f_ij / W^2`` instead of differentiating ``g``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, GridMismatchError, GuardViolation
from .lattice import FlatTorus, PeriodicGrid, ScalarField, psum


@dataclass(frozen=True, eq=False)
class GraphSurface:
    """Height field ``f`` over a periodic grid, a perturbation of the lamella ``x_n = c``."""

    grid: PeriodicGrid
    heights: np.ndarray
    reference_height: float = 0.0

    def __post_init__(self):
        f = self.grid.check(self.heights).astype(float, copy=True)
        if not np.all(np.isfinite(f)):
            raise ValueError("heights contain non-finite values")
        f.setflags(write=False)
        object.__setattr__(self, "heights", f)
        object.__setattr__(self, "reference_height", float(self.reference_height))

    @property
    def dimension(self) -> int:
        """Ambient dimension n (the grid has n - 1 axes)."""
        return self.grid.dimension + 1

    @property
    def field(self) -> ScalarField:
        return ScalarField(self.grid, self.heights)

    def with_heights(self, f: np.ndarray) -> "GraphSurface":
        return GraphSurface(self.grid, f, self.reference_height)

    @classmethod
    def from_modes(cls, grid: PeriodicGrid, modes, reference_height: float = 0.0) -> "GraphSurface":
        """``f = c + sum amp * sin(2 pi k.x / L + phase)`` over ``(k, amp, phase)`` triples."""
        coords = grid.coordinates()
        f = np.full(grid.shape, float(reference_height))
        for k, amp, phase in modes:
            arg = sum(
                2.0 * np.pi * ki * x / L for ki, x, L in zip(k, coords, grid.torus.side_lengths)
            )
            f = f + amp * np.sin(arg + phase)
        return cls(grid, f, reference_height)


@dataclass(frozen=True, eq=False)
class GeometryCache:
    """Per-node geometric quantities of a graph surface.

    Index layout: vectors ``(d, *shape)``, 2-tensors ``(d, d, *shape)``,
    ``Gamma[k, i, j]`` is ``Gamma^k_ij``; ``nu`` has ``n = d + 1`` components.
    """

    surface: GraphSurface
    grad_f: np.ndarray
    hess_f: np.ndarray
    g: np.ndarray
    g_inv: np.ndarray
    sqrt_det_g: np.ndarray
    nu: np.ndarray
    Gamma: np.ndarray
    h: np.ndarray
    H: np.ndarray
    B_norm2: np.ndarray
    dealiased: bool = False

    @property
    def grid(self) -> PeriodicGrid:
        return self.surface.grid

    @property
    def dimension(self) -> int:
        return self.surface.dimension

    @property
    def weights(self) -> np.ndarray:
        """Quadrature weights of the canonical measure, ``sqrt(det g) * cell``."""
        return self.sqrt_det_g * self.grid.cell_volume

    @property
    def area(self) -> float:
        return psum(self.sqrt_det_g) * self.grid.cell_volume

    def raise_index(self, covector: np.ndarray) -> np.ndarray:
        return np.einsum("ij...,j...->i...", self.g_inv, covector)


def build_geometry(surface: GraphSurface, dealias: bool = False) -> GeometryCache:
    """Metric, normal, second fundamental form and curvatures of a graph."""
    grid = surface.grid
    d = grid.dimension
    f = surface.heights - surface.reference_height
    p = grid.gradient(f)
    hess = grid.hessian(f)
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(hess))):
        raise GuardViolation("nonfinite", "height derivatives are not finite")

    p2 = np.einsum("i...,i...->...", p, p)
    W2 = 1.0 + p2
    W = np.sqrt(W2)
    eye = np.eye(d).reshape((d, d) + (1,) * d)
    pp = np.einsum("i...,j...->ij...", p, p)
    g = eye + pp
    g_inv = eye - pp / W2
    nu = np.concatenate([-p / W, (1.0 / W)[None]], axis=0)
    h = -hess / W
    # H = -(Lap f - Hess f(grad f, grad f)/W^2)/W, the trace g^ij h_ij
    H = np.einsum("ij...,ij...->...", g_inv, h)
    if dealias:
        H = grid.dealias(H)
    Gamma = np.einsum("k...,ij...->kij...", p, hess) / W2
    # |B|^2 = tr((g^-1 h)^2)
    A = np.einsum("ik...,kj...->ij...", g_inv, h)
    B2 = np.einsum("ij...,ji...->...", A, A)
    return GeometryCache(surface, p, hess, g, g_inv, W, nu, Gamma, h, H, B2, dealias)


def _values(cache, u) -> np.ndarray:
    if isinstance(u, ScalarField):
        if u.grid != cache.grid:
            raise GridMismatchError("field and geometry live on different grids")
        return u.values
    arr = np.asarray(u, dtype=float)
    if arr.shape != cache.grid.shape:
        raise GridMismatchError(f"field shape {arr.shape} does not match grid {cache.grid.shape}")
    return arr


def divergence_form(cache: GeometryCache, grad_u: np.ndarray) -> np.ndarray:
    """``(1/W) d_i (W g^ij u_j)`` for a given coordinate gradient ``u_j``."""
    flux = cache.sqrt_det_g * cache.raise_index(grad_u)
    return cache.grid.divergence(flux) / cache.sqrt_det_g


def laplace_beltrami(cache: GeometryCache, u) -> np.ndarray:
    """Laplace-Beltrami operator in divergence form.

    ``sum_nodes W * Lap_g u`` vanishes to round-off since it is a sum of
    spectral derivatives.
    """
    u = _values(cache, u)
    return divergence_form(cache, cache.grid.gradient(u))


def covariant_hessian(cache: GeometryCache, u) -> np.ndarray:
    """``nabla^2_ij u = d_i d_j u - Gamma^k_ij d_k u`` as a ``(d, d, *shape)`` array."""
    u = _values(cache, u)
    grid = cache.grid
    du = grid.gradient(u)
    return grid.hessian(u) - np.einsum("kij...,k...->ij...", cache.Gamma, du)


def gradient_norm2(cache: GeometryCache, u) -> np.ndarray:
    """Nodewise ``|nabla u|^2_g``."""
    du = cache.grid.gradient(_values(cache, u))
    return np.einsum("i...,i...->...", du, cache.raise_index(du))


def surface_integral(cache: GeometryCache, u) -> float:
    """``int u dmu`` by the lattice rule with weights ``sqrt(det g) prod h_i``."""
    return psum(_values(cache, u) * cache.sqrt_det_g) * cache.grid.cell_volume


def surface_mean(cache: GeometryCache, u) -> float:
    return surface_integral(cache, u) / cache.area


def enclosed_volume(surface: GraphSurface) -> float:
    """``int f dx`` over the base torus: the subgraph volume up to a constant."""
    return surface.grid.integrate(surface.heights)


def immersion_laplacian(cache: GeometryCache) -> np.ndarray:
    """``Lap_g`` applied to each component of the immersion ``x -> (x, f(x))``.

    The horizontal coordinates are not periodic, but their gradients are the
    constant unit vectors, so only the divergence step touches the grid.
    """
    d = cache.grid.dimension
    shape = cache.grid.shape
    out = np.empty((d + 1,) + shape)
    for i in range(d):
        e = np.zeros((d,) + shape)
        e[i] = 1.0
        out[i] = divergence_form(cache, e)
    out[d] = divergence_form(cache, cache.grad_f)
    return out


def normal_derivative_norm2(cache: GeometryCache) -> np.ndarray:
    """Nodewise ``|nabla nu|^2 = g^jk <d_j nu, d_k nu>``."""
    grid = cache.grid
    dnu = np.stack([grid.gradient(c) for c in cache.nu])  # (n, d, ...)
    return np.einsum("aj...,jk...,ak...->...", dnu, cache.g_inv, dnu)


def gauss_curvature_extrinsic(cache: GeometryCache) -> np.ndarray:
    """``det h / det g`` for two-dimensional graphs."""
    if cache.grid.dimension != 2:
        raise ConfigError("Gauss curvature is defined here for 2-d graphs only")
    h = cache.h
    return (h[0, 0] * h[1, 1] - h[0, 1] ** 2) / cache.sqrt_det_g**2


def gauss_curvature_intrinsic(cache: GeometryCache) -> np.ndarray:
    """Gaussian curvature from the metric alone (Brioschi formula)."""
    grid = cache.grid
    if grid.dimension != 2:
        raise ConfigError("Gauss curvature is defined here for 2-d graphs only")
    E, F, G = cache.g[0, 0], cache.g[0, 1], cache.g[1, 1]
    Eu, Ev = grid.gradient(E)
    Fu, Fv = grid.gradient(F)
    Gu, Gv = grid.gradient(G)
    Evv = grid.diff(E, 1, 2)
    Guu = grid.diff(G, 0, 2)
    Fuv = grid.partial(F, (1, 1))
    a11 = -0.5 * Evv + Fuv - 0.5 * Guu
    m1 = np.array(
        [
            [a11, 0.5 * Eu, Fu - 0.5 * Ev],
            [Fv - 0.5 * Gu, E, F],
            [0.5 * Gv, F, G],
        ]
    )
    z = np.zeros_like(E)
    m2 = np.array(
        [
            [z, 0.5 * Ev, 0.5 * Gu],
            [0.5 * Ev, E, F],
            [0.5 * Gu, F, G],
        ]
    )
    det1 = np.linalg.det(np.moveaxis(m1, (0, 1), (-2, -1)))
    det2 = np.linalg.det(np.moveaxis(m2, (0, 1), (-2, -1)))
    return (det1 - det2) / (E * G - F**2) ** 2


# ---------------------------------------------------------------------------
# closed curves


_PARAM_GRIDS: dict[int, PeriodicGrid] = {}


def parameter_grid(m: int) -> PeriodicGrid:
    """Uniform grid on the parameter circle ``[0, 2 pi)`` with ``m`` nodes."""
    if m not in _PARAM_GRIDS:
        _PARAM_GRIDS[m] = PeriodicGrid(FlatTorus((2.0 * np.pi,)), (m,))
    return _PARAM_GRIDS[m]


@dataclass(frozen=True, eq=False)
class ParametricCurve:
    """Closed, positively oriented curve sampled at ``m`` uniform parameter nodes.

    ``periods`` is ``None`` for the plane, else the periods of the ambient
    torus T^2 (the curve must fit inside one cell).
    """

    points: np.ndarray
    periods: Optional[tuple[float, float]] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ConfigError("curve points must have shape (m, 2)")
        m = pts.shape[0]
        if m % 2 or m < 16:
            raise ConfigError(f"curve node count {m} must be even and >= 16")
        if not np.all(np.isfinite(pts)):
            raise ValueError("curve points contain non-finite values")
        gaps = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
        if np.any(gaps == 0.0):
            raise ConfigError("consecutive curve nodes coincide")
        if _shoelace(pts) <= 0:
            raise ConfigError("curve must be positively oriented")
        if self.periods is not None:
            per = tuple(float(p) for p in self.periods)
            extent = pts.max(axis=0) - pts.min(axis=0)
            if np.any(extent >= np.array(per)):
                raise ConfigError("curve does not fit inside one torus cell")
            object.__setattr__(self, "periods", per)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def nodes(self) -> int:
        return self.points.shape[0]

    def with_points(self, pts: np.ndarray) -> "ParametricCurve":
        return ParametricCurve(pts, self.periods)

    @staticmethod
    def parameter(m: int) -> np.ndarray:
        return 2.0 * np.pi * np.arange(m) / m

    @classmethod
    def circle(cls, radius: float, m: int, center=(0.0, 0.0), periods=None) -> "ParametricCurve":
        t = cls.parameter(m)
        pts = np.column_stack([center[0] + radius * np.cos(t), center[1] + radius * np.sin(t)])
        return cls(pts, periods)

    @classmethod
    def ellipse(cls, a: float, b: float, m: int, center=(0.0, 0.0), periods=None) -> "ParametricCurve":
        t = cls.parameter(m)
        pts = np.column_stack([center[0] + a * np.cos(t), center[1] + b * np.sin(t)])
        return cls(pts, periods)

    @classmethod
    def radial(cls, radius: float, modes, m: int, center=(0.0, 0.0), periods=None) -> "ParametricCurve":
        """``r(theta) = R (1 + sum amp sin(k theta + phase))`` over ``(k, amp, phase)``."""
        t = cls.parameter(m)
        r = np.ones(m)
        for k, amp, phase in modes:
            r = r + amp * np.sin(k * t + phase)
        r = radius * r
        pts = np.column_stack([center[0] + r * np.cos(t), center[1] + r * np.sin(t)])
        return cls(pts, periods)


def _shoelace(pts: np.ndarray) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * psum(x * np.roll(y, -1) - np.roll(x, -1) * y)


@dataclass(frozen=True, eq=False)
class CurveCache:
    """Geometry of a closed curve; derivatives are in the parameter ``t``."""

    curve: ParametricCurve
    d1: np.ndarray
    d2: np.ndarray
    speed: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    kappa: np.ndarray
    length: float
    area: float

    @property
    def grid(self) -> PeriodicGrid:
        return parameter_grid(self.curve.nodes)

    @property
    def weights(self) -> np.ndarray:
        """Arclength quadrature weights ``|gamma'| dt``."""
        return self.speed * (2.0 * np.pi / self.curve.nodes)

    @property
    def dimension(self) -> int:
        return 2

    def centroid(self) -> np.ndarray:
        """Centroid of the enclosed region (Green's theorem)."""
        x, y = self.curve.points.T
        xp, yp = self.d1.T
        dt = 2.0 * np.pi / self.curve.nodes
        cx = 0.5 * psum(x * x * yp) * dt / self.area
        cy = -0.5 * psum(y * y * xp) * dt / self.area
        return np.array([cx, cy])


def curve_geometry(curve: ParametricCurve) -> CurveCache:
    """Tangent, outward normal, curvature, length and enclosed area."""
    grid = parameter_grid(curve.nodes)
    pts = curve.points
    d1 = np.column_stack([grid.diff(pts[:, 0], 0, 1), grid.diff(pts[:, 1], 0, 1)])
    d2 = np.column_stack([grid.diff(pts[:, 0], 0, 2), grid.diff(pts[:, 1], 0, 2)])
    speed = np.hypot(d1[:, 0], d1[:, 1])
    if not np.all(np.isfinite(speed)) or speed.min() < 1e-10:
        raise GuardViolation("degenerate_metric", f"curve speed {speed.min():.3g} below 1e-10")
    tangent = d1 / speed[:, None]
    normal = np.column_stack([tangent[:, 1], -tangent[:, 0]])
    kappa = (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / speed**3
    dt = 2.0 * np.pi / curve.nodes
    length = psum(speed) * dt
    area = 0.5 * psum(pts[:, 0] * d1[:, 1] - pts[:, 1] * d1[:, 0]) * dt
    return CurveCache(curve, d1, d2, speed, tangent, normal, kappa, length, area)


def arclength_derivative(cache: CurveCache, u: np.ndarray) -> np.ndarray:
    return cache.grid.diff(u, 0, 1) / cache.speed


def curve_laplacian(cache: CurveCache, u: np.ndarray) -> np.ndarray:
    """``u_ss = (1/|gamma'|) d/dt (u_t / |gamma'|)``."""
    return arclength_derivative(cache, arclength_derivative(cache, np.asarray(u, dtype=float)))


def curve_integral(cache: CurveCache, u) -> float:
    return psum(np.asarray(u, dtype=float) * cache.weights)


def isoperimetric_deficit(cache: CurveCache) -> float:
    return cache.length**2 / (4.0 * np.pi * cache.area) - 1.0
