"""Time integration of surface diffusion for graphs and closed curves."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Optional, Union

import numpy as np
from scipy import fft as sfft

from .errors import ConfigError, GuardViolation
from .geometry import (
    CurveCache,
    GeometryCache,
    GraphSurface,
    ParametricCurve,
    build_geometry,
    curve_geometry,
    curve_integral,
    curve_laplacian,
    enclosed_volume,
    laplace_beltrami,
    surface_integral,
)
from .diagnostics import curvature_energy, sup_slope
from .lattice import psum

SCHEMES = ("imex_stabilized", "explicit_rk4")
HALT_REASONS = ("converged", "max_steps", "guard_violation")
Surface = Union[GraphSurface, ParametricCurve]


@dataclass(frozen=True)
class FlowConfig:
    """Integrator settings; ``None`` entries are resolved from the initial data.

    Parameters
    ----------
    dt : float, optional
        Time step. Defaults to ``1e-3 h^2`` (imex) or ``0.05 h^4`` (explicit,
        capped by the explicit stability limit of the resolved spectrum).
    stabilizer : float, optional
        Convexity-splitting constant ``A >= 1``. Defaults to
        ``1 + sup (1 + |grad f0|^2)^2`` for graphs and 2 for curves.
    c1_guard : float
        Bound ``M`` on ``sup |grad f|`` (graphs) or on the radial slope
        ``sup |r_theta| / r`` about the centroid (curves).
    energy_guard : float, optional
        Bound on ``int |nabla^2 H|^2 + int |grad H|^2``; defaults to
        ``1e3 max(1, F(0))``.
    volume_guard : float, optional
        Bound on ``Vol(E_t sym-diff E)``; defaults to 0.4 times the
        shortest period times the base area (graphs) or the reference area
        (curves).
    """

    dt: Optional[float] = None
    scheme: str = "imex_stabilized"
    stabilizer: Optional[float] = None
    volume_correction: bool = True
    max_steps: int = 1000
    sample_every: int = 10
    dealias: bool = True
    c1_guard: float = 10.0
    energy_guard: Optional[float] = None
    volume_guard: Optional[float] = None
    tol: float = 1e-9
    redistribute_every: int = 10

    def __post_init__(self):
        problems = []
        if self.scheme not in SCHEMES:
            problems.append(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.dt is not None and not (math.isfinite(self.dt) and self.dt > 0):
            problems.append(f"dt must be positive, got {self.dt}")
        if self.stabilizer is not None and self.scheme == "imex_stabilized" and not self.stabilizer >= 1:
            problems.append(f"stabilizer must be >= 1 for imex, got {self.stabilizer}")
        if self.sample_every < 1:
            problems.append(f"sample_every must be >= 1, got {self.sample_every}")
        if self.max_steps < 0:
            problems.append(f"max_steps must be >= 0, got {self.max_steps}")
        if self.redistribute_every < 1:
            problems.append(f"redistribute_every must be >= 1, got {self.redistribute_every}")
        if not self.c1_guard > 0:
            problems.append(f"c1_guard must be positive, got {self.c1_guard}")
        if not self.tol > 0:
            problems.append(f"tol must be positive, got {self.tol}")
        if problems:
            raise ConfigError("; ".join(problems))

    def resolved(self, initial: Surface) -> "FlowConfig":
        """Fill every ``None`` default from the initial surface."""
        dt, A = self.dt, self.stabilizer
        energy, vol = self.energy_guard, self.volume_guard
        if isinstance(initial, GraphSurface):
            grid = initial.grid
            h = grid.min_spacing
            if A is None:
                p = grid.gradient(initial.heights - initial.reference_height)
                A = 1.0 + float(np.max((1.0 + np.sum(p * p, axis=0)) ** 2))
            lam = _max_bilaplacian(grid, self.dealias)
            if vol is None:
                vol = 0.4 * min(grid.torus.side_lengths) * grid.torus.measure
            cache = build_geometry(initial, self.dealias)
        else:
            cache = curve_geometry(initial)
            h = cache.length / initial.nodes
            if A is None:
                A = 2.0
            kmax = initial.nodes / 3 if self.dealias else initial.nodes / 2
            lam = (kmax * 2 * np.pi / cache.length) ** 4
            if vol is None:
                vol = abs(cache.area)
        if dt is None:
            if self.scheme == "imex_stabilized":
                dt = 1e-3 * h**2
            else:
                dt = min(0.05 * h**4, 1.5 / lam)
        if energy is None:
            energy = 1e3 * max(1.0, curvature_energy(cache))
        return replace(self, dt=float(dt), stabilizer=float(A), energy_guard=float(energy), volume_guard=float(vol))


def _max_bilaplacian(grid, dealias: bool) -> float:
    sym = np.abs(grid._laplacian_symbol())
    if dealias:
        mask = np.ones((), dtype=bool)
        ws = grid.workspace
        for k, n, L in zip(ws.wavenumbers, grid.resolution, grid.torus.side_lengths):
            mask = mask & (np.abs(k) * L / (2 * np.pi) <= n / 3.0)
        sym = np.where(mask, sym, 0.0)
    return float(np.max(sym)) ** 2


@dataclass
class FlowState:
    """Surface at time ``t``; geometry is built on first access."""

    t: float
    step: int
    surface: Surface
    target_volume: Optional[float] = None
    dealias: bool = False

    def __post_init__(self):
        if self.target_volume is None:
            self.target_volume = volume_of(self.surface)

    @cached_property
    def cache(self) -> Union[GeometryCache, CurveCache]:
        if isinstance(self.surface, GraphSurface):
            return build_geometry(self.surface, self.dealias)
        return curve_geometry(self.surface)

    @property
    def is_curve(self) -> bool:
        return isinstance(self.surface, ParametricCurve)


@dataclass(frozen=True)
class StepReport:
    volume_before: float
    volume_after: float
    area_before: float
    area_after: float
    sup_velocity: float
    correction_magnitude: float


def volume_of(surface: Surface) -> float:
    """Enclosed volume (graphs) or enclosed area (curves)."""
    if isinstance(surface, GraphSurface):
        return enclosed_volume(surface)
    return curve_geometry(surface).area


def area_of(cache) -> float:
    """Hypersurface measure: area for graphs, length for curves."""
    return cache.length if isinstance(cache, CurveCache) else cache.area


def normal_velocity(cache, volume_correction: bool = True) -> np.ndarray:
    """``V = Lap H`` (``kappa_ss`` for curves), optionally with its mean removed."""
    if isinstance(cache, CurveCache):
        V = curve_laplacian(cache, cache.kappa)
        if volume_correction:
            V = V - curve_integral(cache, V) / cache.length
        return V
    V = laplace_beltrami(cache, cache.H)
    if volume_correction:
        V = V - surface_integral(cache, V) / cache.area
    return V


# ---------------------------------------------------------------------------
# graphs


def _graph_rate(surface: GraphSurface, config: FlowConfig) -> tuple[np.ndarray, np.ndarray]:
    cache = build_geometry(surface, config.dealias)
    V = normal_velocity(cache, config.volume_correction)
    rate = cache.sqrt_det_g * V
    if config.dealias:
        rate = surface.grid.dealias(rate)
    return rate, V


def step_graph(state: FlowState, config: FlowConfig, dt: Optional[float] = None) -> tuple[FlowState, StepReport]:
    """Advance a graph by one step of ``f_t = sqrt(det g) V``."""
    if config.dt is None or config.stabilizer is None:
        config = config.resolved(state.surface)
    dt = config.dt if dt is None else dt
    surf = state.surface
    grid = surf.grid
    f = surf.heights
    area_before = state.cache.area
    vol_before = enclosed_volume(surf)

    if config.scheme == "imex_stabilized":
        rate, V = _graph_rate(surf, config)
        A = config.stabilizer
        new = grid.solve_stabilized(f + dt * (rate + A * grid.bilaplacian(f)), A, dt)
    else:
        k1, V = _graph_rate(surf, config)
        k2, _ = _graph_rate(surf.with_heights(f + 0.5 * dt * k1), config)
        k3, _ = _graph_rate(surf.with_heights(f + 0.5 * dt * k2), config)
        k4, _ = _graph_rate(surf.with_heights(f + dt * k3), config)
        new = f + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(new)):
        raise GuardViolation("nonfinite", f"heights became non-finite at step {state.step + 1}")

    shift = 0.0
    if config.volume_correction:
        shift = (state.target_volume - grid.integrate(new)) / grid.torus.measure
        new = new + shift
    out = FlowState(state.t + dt, state.step + 1, surf.with_heights(new), state.target_volume, config.dealias)
    report = StepReport(
        vol_before,
        enclosed_volume(out.surface),
        area_before,
        out.cache.area,
        float(np.max(np.abs(V))),
        abs(shift),
    )
    return out, report


# ---------------------------------------------------------------------------
# curves


def _curve_rate(curve: ParametricCurve, config: FlowConfig) -> tuple[np.ndarray, np.ndarray, CurveCache]:
    cache = curve_geometry(curve)
    V = normal_velocity(cache, config.volume_correction)
    return V[:, None] * cache.normal, V, cache


def _band_filter(pts: np.ndarray) -> np.ndarray:
    m = pts.shape[0]
    k = np.abs(sfft.fftfreq(m, 1.0 / m))
    return sfft.ifft(sfft.fft(pts, axis=0) * (k <= m / 3)[:, None], axis=0).real


def _area_and_normal(pts: np.ndarray) -> tuple[float, float, np.ndarray]:
    m = pts.shape[0]
    k = sfft.rfftfreq(m, 1.0 / m)
    k[-1] = 0.0
    d1 = sfft.irfft(1j * k[:, None] * sfft.rfft(pts, axis=0), n=m, axis=0)
    speed = np.hypot(d1[:, 0], d1[:, 1])
    dt = 2.0 * np.pi / m
    area = 0.5 * psum(pts[:, 0] * d1[:, 1] - pts[:, 1] * d1[:, 0]) * dt
    normal = np.column_stack([d1[:, 1], -d1[:, 0]]) / speed[:, None]
    return area, psum(speed) * dt, normal


def _restore_area(pts: np.ndarray, target: float) -> tuple[np.ndarray, float]:
    """Offset along the normal by ``delta`` so the enclosed area equals ``target``."""
    total = 0.0
    for _ in range(8):
        area, length, normal = _area_and_normal(pts)
        err = target - area
        if abs(err) <= 1e-15 * abs(target):
            break
        delta = err / length
        pts = pts + delta * normal
        total += delta
    return pts, abs(total)


def redistribute(curve: ParametricCurve, iterations: int = 20) -> ParametricCurve:
    """Resample the trigonometric interpolant at equal arclength; node 0 is kept."""
    m = curve.nodes
    k = sfft.fftfreq(m, 1.0 / m)
    k[m // 2] = 0.0
    coeffs = sfft.fft(curve.points, axis=0) / m
    coeffs[m // 2] = 0.0
    cache = curve_geometry(curve)
    s_hat = sfft.fft(cache.speed) / m
    s_hat[m // 2] = 0.0
    L = cache.length
    nz = k != 0
    grid_t = 2 * np.pi * np.arange(m) / m
    targets = L * np.arange(m) / m

    def arclength(t):
        E = np.exp(1j * np.outer(t, k))
        ramp = s_hat[0].real * t
        osc = ((E[:, nz] - 1.0) * (s_hat[nz] / (1j * k[nz]))).sum(axis=1).real
        speed = (E * s_hat).sum(axis=1).real
        return ramp + osc, speed

    t = grid_t.copy()
    for _ in range(iterations):
        s, speed = arclength(t)
        step = (s - targets) / speed
        step[0] = 0.0
        t = t - step
        if np.max(np.abs(step)) < 1e-15:
            break
    E = np.exp(1j * np.outer(t, k))
    x = (E * coeffs[:, 0]).sum(axis=1).real
    y = (E * coeffs[:, 1]).sum(axis=1).real
    return curve.with_points(np.column_stack([x, y]))


def step_curve(state: FlowState, config: FlowConfig, dt: Optional[float] = None) -> tuple[FlowState, StepReport]:
    """Advance a closed curve by one step of ``gamma_t = kappa_ss nu``."""
    if config.dt is None or config.stabilizer is None:
        config = config.resolved(state.surface)
    dt = config.dt if dt is None else dt
    curve = state.surface
    pts = curve.points
    m = curve.nodes
    cache = state.cache
    len_before, area_before = cache.length, cache.area

    if config.scheme == "imex_stabilized":
        F, V, _ = _curve_rate(curve, config)
        k = sfft.fftfreq(m, 1.0 / m)
        s4 = config.stabilizer * (2 * np.pi / cache.length) ** 4 * k**4
        rhs = sfft.fft(pts + dt * F, axis=0) + dt * s4[:, None] * sfft.fft(pts, axis=0)
        new = sfft.ifft(rhs / (1.0 + dt * s4)[:, None], axis=0).real
    else:

        def rate(p):
            return _curve_rate(curve.with_points(p), config)[0]

        k1, V, _ = _curve_rate(curve, config)
        k2 = rate(pts + 0.5 * dt * k1)
        k3 = rate(pts + 0.5 * dt * k2)
        k4 = rate(pts + dt * k3)
        new = pts + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    if not np.all(np.isfinite(new)):
        raise GuardViolation("nonfinite", f"curve nodes became non-finite at step {state.step + 1}")
    if config.dealias:
        new = _band_filter(new)
    _check_spacing(new)

    step_no = state.step + 1
    if step_no % config.redistribute_every == 0:
        new = redistribute(curve.with_points(new)).points
        _check_spacing(new)
    correction = 0.0
    if config.volume_correction:
        new, correction = _restore_area(new, state.target_volume)
    out = FlowState(state.t + dt, step_no, curve.with_points(new), state.target_volume, config.dealias)
    report = StepReport(
        area_before, out.cache.area, len_before, out.cache.length, float(np.max(np.abs(V))), correction
    )
    return out, report


def _check_spacing(pts: np.ndarray) -> None:
    gaps = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    if gaps.min() < 1e-8:
        raise GuardViolation("node_collision", f"minimal node spacing {gaps.min():.3g} below 1e-8")


def step(state: FlowState, config: FlowConfig, dt: Optional[float] = None) -> tuple[FlowState, StepReport]:
    if state.is_curve:
        return step_curve(state, config, dt)
    return step_graph(state, config, dt)


# ---------------------------------------------------------------------------
# guards and the driver


def symmetric_difference_volume(surface: Surface, reference) -> float:
    """``Vol(E_t sym-diff E)`` against a lamella height or a circle reference."""
    if isinstance(surface, GraphSurface):
        return surface.grid.integrate(np.abs(surface.heights - surface.reference_height))
    from .geometry import parameter_grid

    grid = parameter_grid(surface.nodes)
    center = np.asarray(getattr(reference, "center", (0.0, 0.0)), dtype=float)
    R = reference.radius
    rel = surface.points - center
    x, y = rel[:, 0], rel[:, 1]
    r2 = x * x + y * y
    dtheta = (x * grid.diff(y, 0, 1) - y * grid.diff(x, 0, 1)) / r2
    if np.any(dtheta <= 0):
        return math.inf
    return psum(0.5 * np.abs(r2 - R * R) * dtheta) * grid.cell_volume


def check_guards(state: FlowState, config: FlowConfig, reference) -> None:
    """Raise :class:`GuardViolation` if any monitor is breached."""
    cache = state.cache
    slope = sup_slope(cache)
    if not slope <= config.c1_guard:
        raise GuardViolation("c1_bound", f"slope {slope:.6g} exceeds {config.c1_guard:.6g}")
    energy = curvature_energy(cache)
    if not math.isfinite(energy):
        raise GuardViolation("nonfinite", "curvature energy is not finite")
    if config.energy_guard is not None and energy > config.energy_guard:
        raise GuardViolation("energy_bound", f"energy {energy:.6g} exceeds {config.energy_guard:.6g}")
    if config.volume_guard is not None and reference is not None:
        vol = symmetric_difference_volume(state.surface, reference)
        if not vol <= config.volume_guard:
            raise GuardViolation(
                "volume_distance", f"symmetric difference {vol:.6g} exceeds {config.volume_guard:.6g}"
            )


def deviation(state: FlowState) -> float:
    """Sup distance to the best translate: ``sup |f - mean f|`` or ``sup ||gamma - c| - R|``."""
    if state.is_curve:
        cache = state.cache
        R = math.sqrt(cache.area / math.pi)
        return float(np.max(np.abs(np.linalg.norm(cache.curve.points - cache.centroid(), axis=1) - R)))
    f = state.surface.heights
    return float(np.max(np.abs(f - state.surface.grid.mean(f))))


@dataclass
class FlowResult:
    series: object
    final: FlowState
    halt_reason: str
    detail: str = ""
    config: Optional[FlowConfig] = None
    areas: list = field(default_factory=list)
    volumes: list = field(default_factory=list)
    reports: list = field(default_factory=list)

    @property
    def steps(self) -> int:
        return self.final.step


def run_flow(
    initial: Surface,
    config: FlowConfig,
    reference,
    monitor=None,
    on_sample: Optional[Callable] = None,
) -> FlowResult:
    """Integrate until convergence, ``max_steps`` or a guard breach.

    Parameters
    ----------
    initial : GraphSurface or ParametricCurve
    config : FlowConfig
    reference : ReferenceSurface
        Critical set the run is compared against.
    monitor : diagnostics.Monitor, optional
        Row producer; defaults to one with ``K = 4``.
    on_sample : callable, optional
        Called as ``on_sample(state, row)`` after each emitted row.

    Returns
    -------
    FlowResult
        Series, final accepted state and the halt reason.
    """
    from .diagnostics import EnergySeries, Monitor

    config = config.resolved(initial)
    if monitor is None:
        monitor = Monitor(reference)
    series = EnergySeries(monitor.columns)
    state = FlowState(0.0, 0, initial, dealias=config.dealias)
    check_guards(state, config, reference)
    result = FlowResult(series, state, "max_steps", config=config)
    result.areas.append(area_of(state.cache))
    result.volumes.append(volume_of(state.surface))

    def emit(s):
        row = monitor.row(s.t, s.cache)
        series.append(row)
        if on_sample is not None:
            on_sample(s, row)

    emit(state)
    if deviation(state) < config.tol:
        result.halt_reason = "converged"
        return result

    last_emitted = 0
    for _ in range(config.max_steps):
        try:
            new, report = _guarded_step(state, config, reference)
        except GuardViolation as exc:
            result.halt_reason = "guard_violation"
            result.detail = str(exc)
            break
        new.t = new.step * config.dt
        state = new
        result.final = state
        result.reports.append(report)
        result.areas.append(report.area_after)
        result.volumes.append(report.volume_after)
        if deviation(state) < config.tol:
            result.halt_reason = "converged"
            break
        if state.step % config.sample_every == 0:
            emit(state)
            last_emitted = state.step
    if state.step != last_emitted:
        emit(state)
    return result


def _guarded_step(state: FlowState, config: FlowConfig, reference) -> tuple[FlowState, StepReport]:
    """One step; on a guard breach retry once as two half steps."""
    try:
        new, report = step(state, config)
        check_guards(new, config, reference)
        return new, report
    except GuardViolation:
        half = 0.5 * config.dt
        mid, first = step(state, config, half)
        new, second = step(mid, config, half)
        new.step = state.step + 1
        check_guards(new, config, reference)
        report = StepReport(
            first.volume_before,
            second.volume_after,
            first.area_before,
            second.area_after,
            max(first.sup_velocity, second.sup_velocity),
            first.correction_magnitude + second.correction_magnitude,
        )
        return new, report
