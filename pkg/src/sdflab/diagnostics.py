"""Energies, identities, distance functionals and probes along a flow."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError
from .geometry import (
    CurveCache,
    GeometryCache,
    GraphSurface,
    ParametricCurve,
    arclength_derivative,
    build_geometry,
    covariant_hessian,
    curve_integral,
    curve_laplacian,
    enclosed_volume,
    gradient_norm2,
    isoperimetric_deficit,
    laplace_beltrami,
    surface_integral,
)
from .lattice import psum
from .stability import ReferenceSurface, quadratic_form

SERIES_COLUMNS = (
    "t",
    "area",
    "volume",
    "dirichlet",
    "hessian",
    "lyapunov",
    "sup_grad",
    "D",
    "pi_margin",
    "fit_residual",
)
CURVE_COLUMNS = SERIES_COLUMNS + ("deficit",)


class EnergySeries:
    """Time-indexed table of diagnostics; ``t`` must increase strictly."""

    def __init__(self, columns: Sequence[str] = SERIES_COLUMNS, rows=None):
        self.columns = tuple(columns)
        self.rows: list[tuple[float, ...]] = []
        for row in rows or ():
            self.append(row)

    def append(self, row) -> None:
        if isinstance(row, dict):
            row = tuple(float(row[c]) for c in self.columns)
        else:
            row = tuple(float(v) for v in row)
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} entries, expected {len(self.columns)}")
        if self.rows and not row[0] > self.rows[-1][0]:
            raise ValueError(f"time {row[0]} does not increase past {self.rows[-1][0]}")
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        idx = self.columns.index(name)
        return np.array([r[idx] for r in self.rows])

    @property
    def t(self) -> np.ndarray:
        return self.column("t")


# ---------------------------------------------------------------------------
# energies


def _mean_curvature(cache) -> np.ndarray:
    return cache.kappa if isinstance(cache, CurveCache) else cache.H


def _integral(cache, u) -> float:
    if isinstance(cache, CurveCache):
        return curve_integral(cache, u)
    return surface_integral(cache, u)


def _laplacian(cache, u) -> np.ndarray:
    if isinstance(cache, CurveCache):
        return curve_laplacian(cache, u)
    return laplace_beltrami(cache, u)


def _grad_norm2(cache, u) -> np.ndarray:
    if isinstance(cache, CurveCache):
        return arclength_derivative(cache, u) ** 2
    return gradient_norm2(cache, u)


def dirichlet_energy(cache, H: Optional[np.ndarray] = None) -> float:
    """``int |grad H|^2 dmu``."""
    H = _mean_curvature(cache) if H is None else H
    return _integral(cache, _grad_norm2(cache, H))


def hessian_energy(cache, H: Optional[np.ndarray] = None) -> float:
    """``int |nabla^2 H|^2 dmu`` with both indices raised by the inverse metric."""
    H = _mean_curvature(cache) if H is None else H
    if isinstance(cache, CurveCache):
        return curve_integral(cache, curve_laplacian(cache, H) ** 2)
    hh = covariant_hessian(cache, H)
    up = np.einsum("ik...,jl...,kl...->ij...", cache.g_inv, cache.g_inv, hh)
    return surface_integral(cache, np.einsum("ij...,ij...->...", up, hh))


def curvature_energy(cache) -> float:
    """``F = int |nabla^2 H|^2 + int |grad H|^2``."""
    return hessian_energy(cache) + dirichlet_energy(cache)


def sup_slope(cache) -> float:
    """``sup |grad f|`` for graphs; ``sup |r_theta| / r`` about the centroid for curves."""
    if isinstance(cache, CurveCache):
        rel = cache.curve.points - cache.centroid()
        radial = np.sum(rel * cache.normal, axis=1)
        tangential = np.abs(np.sum(rel * cache.tangent, axis=1))
        if np.any(radial <= 0):
            return math.inf
        return float(np.max(tangential / radial))
    return float(np.sqrt(np.max(np.sum(cache.grad_f**2, axis=0))))


def top_order_energy(cache) -> tuple[float, bool]:
    """``int |nabla^(n-2) H|^2`` and whether it is exact.

    Exact for ambient dimension 3 and 4; for n >= 5 the order-2 energy is
    returned as a proxy (second flag ``False``).
    """
    n = cache.dimension
    if n < 3:
        raise ConfigError("the top-order energy is defined for ambient dimension >= 3")
    if n == 3:
        return dirichlet_energy(cache), True
    return hessian_energy(cache), n == 4


def lyapunov_energy(cache, K: float = 4.0) -> float:
    """``int |nabla^2 H|^2 + K int |grad H|^2`` (requires K > 2)."""
    if not K > 2:
        raise ConfigError(f"K must exceed 2, got {K}")
    return hessian_energy(cache) + K * dirichlet_energy(cache)


# ---------------------------------------------------------------------------
# evolution identity for int |grad H|^2


@dataclass(frozen=True)
class IdentityTerms:
    pi_lap_H: float
    h_lap_h_grad: float
    b_term: float

    @property
    def rhs(self) -> float:
        return -2.0 * self.pi_lap_H + self.h_lap_h_grad - self.b_term


def second_form_on_gradient(cache, H) -> np.ndarray:
    """Nodewise ``B(grad H, grad H) = h_ij g^ik H_k g^jl H_l``."""
    if isinstance(cache, CurveCache):
        return cache.kappa * arclength_derivative(cache, H) ** 2
    up = cache.raise_index(cache.grid.gradient(H))
    return np.einsum("ij...,i...,j...->...", cache.h, up, up)


def energy_identity_terms(cache) -> IdentityTerms:
    """Right side of ``d/dt int|grad H|^2 = -2 Pi(Lap H) + int H Lap H |grad H|^2 - 2 int B(grad H, grad H) Lap H``."""
    H = _mean_curvature(cache)
    lapH = _laplacian(cache, H)
    return IdentityTerms(
        pi_lap_H=quadratic_form(cache, lapH),
        h_lap_h_grad=_integral(cache, H * lapH * _grad_norm2(cache, H)),
        b_term=2.0 * _integral(cache, second_form_on_gradient(cache, H) * lapH),
    )


def energy_identity_residual(window: Sequence, dt: float, atol: float = 1e-12) -> float:
    """Relative mismatch between the centered time derivative of the Dirichlet
    energy over three consecutive caches and the identity evaluated at the middle one.

    When both sides are below ``atol`` they are round-off and the residual is 0.
    """
    if len(window) < 3:
        raise ValueError("need three consecutive samples")
    before, middle, after = window[-3], window[-2], window[-1]
    lhs = (dirichlet_energy(after) - dirichlet_energy(before)) / (2.0 * dt)
    rhs = energy_identity_terms(middle).rhs
    scale = max(abs(lhs), abs(rhs))
    if scale <= atol:
        return 0.0
    return abs(lhs - rhs) / scale


# ---------------------------------------------------------------------------
# distance to the reference set


def distance_functional(obj, reference, method: str = "auto", oversample: int = 4) -> float:
    """``D = int_{E_t sym-diff E} d(x, boundary E) dx``.

    Graphs against a lamella use the closed form ``1/2 int (f - c)^2 dx``.
    Curves against a circle use the exact polar form when the curve is
    star-shaped about the center; otherwise (or with ``method="winding"``)
    membership is decided on a background grid ``oversample`` times finer
    than the curve.
    """
    if isinstance(obj, GeometryCache):
        obj = obj.surface
    if isinstance(obj, CurveCache):
        obj = obj.curve
    if isinstance(obj, GraphSurface):
        c = _reference_height(obj, reference)
        return 0.5 * obj.grid.integrate((obj.heights - c) ** 2)
    if isinstance(obj, ParametricCurve):
        if method in ("auto", "polar") and _is_circle(reference):
            value = _polar_distance(obj, reference)
            if value is not None:
                return value
            if method == "polar":
                raise ValueError("curve is not star-shaped about the reference center")
        return _winding_distance(obj, reference, oversample)
    raise TypeError(f"unsupported state {type(obj).__name__}")


def _reference_height(surface: GraphSurface, reference) -> float:
    if reference is None:
        return surface.reference_height
    if isinstance(reference, (int, float)):
        return float(reference)
    if isinstance(reference, ReferenceSurface) and reference.kind == "lamella":
        return surface.reference_height
    if isinstance(reference, GraphSurface):
        return reference.reference_height
    raise ValueError("graph states are compared against a lamella reference")


def _is_circle(reference) -> bool:
    return isinstance(reference, ReferenceSurface) and reference.kind == "circle"


def _polar_distance(curve: ParametricCurve, ref: ReferenceSurface) -> Optional[float]:
    from .geometry import parameter_grid

    grid = parameter_grid(curve.nodes)
    rel = curve.points - np.asarray(ref.center)
    x, y = rel[:, 0], rel[:, 1]
    r2 = x * x + y * y
    dtheta = (x * grid.diff(y, 0, 1) - y * grid.diff(x, 0, 1)) / r2
    if np.any(dtheta <= 0):
        return None
    r = np.sqrt(r2)
    R = ref.radius
    # int_R^r |rho - R| rho drho = (r - R)^2 (2 r + R) / 6
    return psum((r - R) ** 2 * (2 * r + R) / 6.0 * dtheta) * grid.cell_volume


def _winding_distance(curve: ParametricCurve, reference, oversample: int) -> float:
    from matplotlib.path import Path

    pts = curve.points
    if _is_circle(reference):
        c = np.asarray(reference.center, dtype=float)
        R = reference.radius
        lo = np.minimum(pts.min(axis=0), c - R)
        hi = np.maximum(pts.max(axis=0), c + R)
    elif isinstance(reference, ParametricCurve):
        lo = np.minimum(pts.min(axis=0), reference.points.min(axis=0))
        hi = np.maximum(pts.max(axis=0), reference.points.max(axis=0))
    else:
        raise ValueError("curve states are compared against a circle or a reference curve")
    m = oversample * curve.nodes
    pad = 0.01 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    h = (hi - lo) / m
    xs = lo[0] + (np.arange(m) + 0.5) * h[0]
    ys = lo[1] + (np.arange(m) + 0.5) * h[1]
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    q = np.column_stack([X.ravel(), Y.ravel()])
    inside_t = Path(pts).contains_points(q)
    if _is_circle(reference):
        rho = np.hypot(q[:, 0] - c[0], q[:, 1] - c[1])
        inside_ref = rho < R
        dist = np.abs(rho - R)
    else:
        from scipy.spatial import cKDTree

        from .geometry import curve_geometry

        dense = _resample_dense(reference, 16)
        inside_ref = Path(reference.points).contains_points(q)
        dist = cKDTree(dense).query(q)[0]
        curve_geometry(reference)  # validates the reference
    mask = inside_t != inside_ref
    return psum(np.where(mask, dist, 0.0)) * h[0] * h[1]


def _resample_dense(curve: ParametricCurve, factor: int) -> np.ndarray:
    m = curve.nodes
    coeffs = np.fft.fft(curve.points, axis=0)
    M = factor * m
    padded = np.zeros((M, 2), dtype=complex)
    half = m // 2
    padded[:half] = coeffs[:half]
    padded[-half:] = coeffs[-half:]
    return np.real(np.fft.ifft(padded, axis=0)) * factor


# ---------------------------------------------------------------------------
# translate fitting


@dataclass(frozen=True)
class TranslateFit:
    eta: np.ndarray
    residual: float
    center: Optional[np.ndarray] = None


def translate_fit(obj, reference=None) -> TranslateFit:
    """Best translate of the reference: vertical shift for graphs, centroid for curves."""
    if isinstance(obj, GeometryCache):
        obj = obj.surface
    if isinstance(obj, GraphSurface):
        c = _reference_height(obj, reference)
        a = obj.grid.mean(obj.heights) - c
        eta = np.zeros(obj.dimension)
        eta[-1] = a
        resid = math.sqrt(obj.grid.integrate((obj.heights - c - a) ** 2))
        return TranslateFit(eta, resid)
    from .geometry import curve_geometry

    cache = obj if isinstance(obj, CurveCache) else curve_geometry(obj)
    center = cache.centroid()
    if _is_circle(reference):
        R, ref_center = reference.radius, np.asarray(reference.center, dtype=float)
    else:
        R, ref_center = math.sqrt(cache.area / math.pi), np.zeros(2)
    radial = np.linalg.norm(cache.curve.points - center, axis=1) - R
    resid = math.sqrt(max(curve_integral(cache, radial**2), 0.0))
    return TranslateFit(center - ref_center, resid, center)


# ---------------------------------------------------------------------------
# coercivity


def pi_coercivity_margin(cache, sigma: float, H: Optional[np.ndarray] = None) -> float:
    """``Pi(Lap H) - sigma ||grad H||^2``; uses the cache's own curvature unless ``H`` is given."""
    H = _mean_curvature(cache) if H is None else np.asarray(H, dtype=float)
    lapH = _laplacian(cache, H)
    return quadratic_form(cache, lapH) - sigma * dirichlet_energy(cache, H)


# ---------------------------------------------------------------------------
# rates


def exp_rate_fit(series, column: Optional[str] = None, window=None) -> tuple[float, float]:
    """Decay rate ``-d log(y)/dt`` by least squares and the coefficient of determination.

    ``series`` is an :class:`EnergySeries` (with ``column``) or a pair of
    arrays ``(t, y)``; ``window = (t0, t1)`` restricts the fit.
    """
    if isinstance(series, EnergySeries):
        t, y = series.t, series.column(column)
    else:
        t, y = (np.asarray(a, dtype=float) for a in series)
    if window is not None:
        sel = (t >= window[0]) & (t <= window[1])
        t, y = t[sel], y[sel]
    if t.size < 10:
        raise ValueError(f"need at least 10 samples in the window, got {t.size}")
    if np.any(y <= 0):
        raise ValueError("non-positive values in the fit window")
    logy = np.log(y)
    slope, intercept = np.polyfit(t, logy, 1)
    fitted = slope * t + intercept
    ss_res = float(np.sum((logy - fitted) ** 2))
    ss_tot = float(np.sum((logy - logy.mean()) ** 2))
    quality = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return -float(slope), quality


# ---------------------------------------------------------------------------
# inequality probes


def random_band_limited(grid, rng: np.random.Generator, max_index: int = 4) -> np.ndarray:
    """Mean-zero trigonometric polynomial with random coefficients."""
    coords = grid.coordinates()
    u = np.zeros(grid.shape)
    ranges = [range(-max_index, max_index + 1)] * grid.dimension
    for k in np.array(np.meshgrid(*ranges, indexing="ij")).reshape(grid.dimension, -1).T:
        if not np.any(k):
            continue
        arg = sum(2 * np.pi * ki * x / L for ki, x, L in zip(k, coords, grid.torus.side_lengths))
        u += rng.standard_normal() / (1.0 + float(k @ k)) * np.cos(arg + rng.uniform(0, 2 * np.pi))
    return u


def _flat_cache(obj):
    if isinstance(obj, GeometryCache):
        return obj
    if isinstance(obj, GraphSurface):
        return build_geometry(obj)
    if isinstance(obj, ReferenceSurface) and obj.kind == "lamella":
        return build_geometry(GraphSurface(obj.grid, np.zeros(obj.grid.shape)))
    raise TypeError("probes run on graph geometry caches")


def _first_mode(grid) -> np.ndarray:
    axis = int(np.argmax(grid.torus.side_lengths))
    x = grid.coordinates()[axis]
    return np.sin(2 * np.pi * x / grid.torus.side_lengths[axis])


@dataclass(frozen=True)
class PoincareReport:
    worst_ratio: float
    ratios: np.ndarray
    skipped: int


def poincare_probe(obj, samples: int = 50, seed: int = 0) -> PoincareReport:
    """Largest observed ``||u - mean u|| / ||grad u||`` over random fields and the first mode."""
    if samples < 50:
        raise ConfigError("the Poincare probe needs at least 50 random samples")
    cache = _flat_cache(obj)
    grid = cache.grid
    rng = np.random.default_rng(seed)
    fields = [np.ones(grid.shape), _first_mode(grid)]
    fields += [random_band_limited(grid, rng) for _ in range(samples)]
    ratios, skipped = [], 0
    for u in fields:
        grad = math.sqrt(max(surface_integral(cache, gradient_norm2(cache, u)), 0.0))
        if grad < 1e-12:
            skipped += 1
            continue
        dev = u - surface_integral(cache, u) / cache.area
        ratios.append(math.sqrt(surface_integral(cache, dev**2)) / grad)
    ratios = np.array(ratios)
    return PoincareReport(float(ratios.max()), ratios, skipped)


def gn_compatible(j: int, m: int, p: float, r: float, q: float, theta: float, d: int) -> bool:
    """Exponent compatibility ``1/p = j/d + theta (1/r - m/d) + (1 - theta)/q``."""
    if not (0 <= j < m and j / m <= theta < 1 and 1 <= p < math.inf and r > 0 and q > 0):
        return False
    rhs = j / d + theta * (1.0 / r - m / d) + (1.0 - theta) / q
    return abs(1.0 / p - rhs) <= 1e-12


def _tensor_norm(cache, u: np.ndarray, order: int, p: float) -> float:
    if order == 0:
        mag = np.abs(u)
    elif order == 1:
        mag = np.sqrt(np.maximum(gradient_norm2(cache, u), 0.0))
    elif order == 2:
        hh = covariant_hessian(cache, u)
        up = np.einsum("ik...,jl...,kl...->ij...", cache.g_inv, cache.g_inv, hh)
        mag = np.sqrt(np.maximum(np.einsum("ij...,ij...->...", up, hh), 0.0))
    else:
        raise ConfigError("covariant derivatives are available up to order 2")
    if math.isinf(p):
        return float(mag.max())
    return surface_integral(cache, mag**p) ** (1.0 / p)


@dataclass(frozen=True)
class GNReport:
    constant: float
    constant_doubled: float
    ratios: np.ndarray

    @property
    def stable(self) -> bool:
        return abs(self.constant_doubled - self.constant) <= 0.2 * self.constant


def gn_ratio(cache, u: np.ndarray, exponents) -> float:
    """``||nabla^j u||_p / (||nabla^m u||_r^theta ||u||_q^(1-theta))`` for mean-zero ``u``."""
    j, m, p, r, q, theta = exponents
    u = u - surface_integral(cache, u) / cache.area
    num = _tensor_norm(cache, u, int(j), p)
    den = _tensor_norm(cache, u, int(m), r) ** theta * _tensor_norm(cache, u, 0, q) ** (1 - theta)
    return num / den


def gn_probe(obj, samples: int = 50, exponents=(1, 2, 2.0, 2.0, 2.0, 0.5), seed: int = 0) -> GNReport:
    """Empirical interpolation constant ``max ||nabla^j u||_p / (||nabla^m u||_r^theta ||u||_q^(1-theta))``."""
    j, m, p, r, q, theta = exponents
    cache = _flat_cache(obj)
    d = cache.grid.dimension
    if not gn_compatible(int(j), int(m), p, r, q, theta, d):
        raise ConfigError(f"incompatible interpolation exponents {tuple(exponents)} for d={d}")
    if m > 2:
        raise ConfigError("covariant derivatives are available up to order 2")
    rng = np.random.default_rng(seed)
    ratios = np.array(
        [gn_ratio(cache, random_band_limited(cache.grid, rng), exponents) for _ in range(2 * samples)]
    )
    return GNReport(float(ratios[:samples].max()), float(ratios.max()), ratios)


# ---------------------------------------------------------------------------
# per-sample monitor used by the flow driver


@dataclass
class Monitor:
    """Computes one :class:`EnergySeries` row per sampled state."""

    reference: ReferenceSurface
    K: float = 4.0
    sigma: Optional[float] = None
    columns: tuple = field(init=False)

    def __post_init__(self):
        if not self.K > 2:
            raise ConfigError(f"K must exceed 2, got {self.K}")
        if self.sigma is None:
            self.sigma = self.reference.analytic_sigma()
        self.columns = CURVE_COLUMNS if self.reference.kind == "circle" else SERIES_COLUMNS

    def row(self, t: float, cache) -> dict:
        dirichlet = dirichlet_energy(cache)
        hessian = hessian_energy(cache)
        if isinstance(cache, CurveCache):
            area, volume = cache.length, cache.area
            state = cache.curve
        else:
            area, volume = cache.area, enclosed_volume(cache.surface)
            state = cache.surface
        row = {
            "t": t,
            "area": area,
            "volume": volume,
            "dirichlet": dirichlet,
            "hessian": hessian,
            "lyapunov": hessian + self.K * dirichlet,
            "sup_grad": sup_slope(cache),
            "D": distance_functional(state, self.reference),
            "pi_margin": pi_coercivity_margin(cache, self.sigma),
            "fit_residual": translate_fit(cache, self.reference).residual,
        }
        if isinstance(cache, CurveCache):
            row["deficit"] = isoperimetric_deficit(cache)
        return row
