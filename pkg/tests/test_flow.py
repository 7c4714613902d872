import math

import numpy as np
import pytest

from sdflab.errors import ConfigError, GuardViolation
from sdflab.flow import (
    FlowConfig,
    FlowState,
    _check_spacing,
    deviation,
    normal_velocity,
    redistribute,
    run_flow,
    step,
    symmetric_difference_volume,
)
from sdflab.geometry import GraphSurface, ParametricCurve, build_geometry, curve_geometry
from sdflab.lattice import FlatTorus, PeriodicGrid
from sdflab.stability import ReferenceSurface

from conftest import TWO_PI


def square(n, L=TWO_PI):
    return PeriodicGrid(FlatTorus((L, L)), (n, n))


def advance(surface, config, steps):
    config = config.resolved(surface)
    state = FlowState(0.0, 0, surface, dealias=config.dealias)
    reports = []
    for _ in range(steps):
        state, rep = step(state, config)
        reports.append(rep)
    return state, reports


class TestNormalVelocity:
    def test_flat_and_circle(self, grid32):
        flat = build_geometry(GraphSurface(grid32, np.zeros(grid32.shape)))
        assert np.max(np.abs(normal_velocity(flat))) == 0.0
        circle = curve_geometry(ParametricCurve.circle(1.3, 16))
        assert np.max(np.abs(normal_velocity(circle))) <= 1e-12

    def test_circle_roundoff_growth(self):
        # fourth derivatives amplify round-off like m^4; stays far below any dynamics
        sup = [np.max(np.abs(normal_velocity(curve_geometry(ParametricCurve.circle(1.0, m))))) for m in (16, 256)]
        assert sup[1] <= 16**4 * max(sup[0], 1e-15) * 10
        assert sup[1] <= 1e-7

    def test_linearization(self, grid32):
        X = grid32.coordinates()[0]
        errs = []
        for eps in (1e-2, 1e-3):
            V = normal_velocity(build_geometry(GraphSurface(grid32, eps * np.sin(X))))
            errs.append(np.max(np.abs(V + eps * np.sin(X))) / eps)
        assert errs[0] <= 5 * 1e-4
        assert errs[1] == pytest.approx(errs[0] / 100, rel=0.05)

    def test_mean_zero_with_correction(self, random_graph):
        c = build_geometry(random_graph)
        V = normal_velocity(c, volume_correction=True)
        assert abs(np.sum(c.sqrt_det_g * V)) <= 1e-12 * np.sum(np.abs(c.sqrt_det_g * V))


class TestConfig:
    def test_errors_are_collected(self):
        with pytest.raises(ConfigError) as info:
            FlowConfig(dt=-1.0, scheme="euler", sample_every=0, stabilizer=0.5)
        msg = str(info.value)
        for word in ("dt", "scheme", "sample_every"):
            assert word in msg

    def test_stabilizer_below_one(self):
        with pytest.raises(ConfigError):
            FlowConfig(stabilizer=0.9)
        FlowConfig(scheme="explicit_rk4", stabilizer=0.5)

    def test_resolved_defaults(self, grid32):
        surf = GraphSurface(grid32, np.zeros(grid32.shape))
        cfg = FlowConfig().resolved(surf)
        assert cfg.dt == pytest.approx(1e-3 * (TWO_PI / 32) ** 2)
        assert cfg.stabilizer == 2.0
        assert cfg.energy_guard == 1e3
        explicit = FlowConfig(scheme="explicit_rk4").resolved(surf)
        assert explicit.dt <= 0.05 * (TWO_PI / 32) ** 4
        curve = FlowConfig().resolved(ParametricCurve.circle(1.0, 64))
        assert curve.stabilizer == 2.0 and curve.volume_guard == pytest.approx(np.pi)


class TestGraphSteps:
    def test_fixed_point(self, grid32):
        surf = GraphSurface(grid32, np.full(grid32.shape, 0.7), reference_height=0.7)
        state, _ = advance(surf, FlowConfig(), 5)
        assert np.max(np.abs(state.surface.heights - 0.7)) <= 1e-15

    def test_mode_one_decay_factor(self, grid32):
        eps, dt = 1e-4, 1e-3
        X = grid32.coordinates()[0]
        surf = GraphSurface(grid32, 1.0 + eps * np.sin(X), reference_height=1.0)
        state, _ = advance(surf, FlowConfig(dt=dt), 1)
        amp = 2 * np.mean((state.surface.heights - 1.0) * np.sin(X))
        assert abs(amp / eps - (1 - dt)) <= 1e-5

    def test_volume_over_thousand_steps(self, grid32):
        modes = [((1, 0), 0.05, 0.0), ((1, 1), 0.05, 0.3), ((2, 1), 0.05, 1.1)]
        surf = GraphSurface.from_modes(grid32, modes, reference_height=1.0)
        state, reports = advance(surf, FlowConfig(), 1000)
        v0 = reports[0].volume_before
        assert max(abs(r.volume_after - v0) for r in reports) <= 1e-12
        # area decreases (up to round-off) at every step
        a0 = reports[0].area_before
        assert all(r.area_after <= r.area_before + 1e-12 * a0 for r in reports)
        assert deviation(state) < 0.05 * 3

    def test_scheme_consistency(self):
        grid = square(16)
        X, Y = grid.coordinates()
        surf = GraphSurface(grid, 0.05 * np.sin(X) + 0.03 * np.cos(X + Y))
        T = 0.05
        ref, _ = advance(surf, FlowConfig(scheme="explicit_rk4", dt=T / 200), 200)
        errs = []
        for n in (10, 20, 40):
            out, _ = advance(surf, FlowConfig(dt=T / n), n)
            errs.append(np.max(np.abs(out.surface.heights - ref.surface.heights)))
        # first order in dt
        assert errs[0] / errs[1] == pytest.approx(2.0, rel=0.2)
        assert errs[1] / errs[2] == pytest.approx(2.0, rel=0.2)

    def test_translation_equivariance(self):
        grid = square(24)
        X, Y = grid.coordinates()
        f = 0.1 * np.sin(X + 0.2) + 0.05 * np.cos(2 * Y - X)
        a, _ = advance(GraphSurface(grid, f), FlowConfig(dt=1e-3), 30)
        b, _ = advance(GraphSurface(grid, np.roll(f, (5, -3), axis=(0, 1))), FlowConfig(dt=1e-3), 30)
        diff = np.roll(a.surface.heights, (5, -3), axis=(0, 1)) - b.surface.heights
        assert np.max(np.abs(diff)) <= 1e-12


class TestCurveSteps:
    def test_circle_fixed_point(self):
        circle = ParametricCurve.circle(1.0, 16)
        state, reports = advance(circle, FlowConfig(dt=1e-3), 20)
        assert max(r.sup_velocity for r in reports) <= 1e-12
        assert np.max(np.abs(state.surface.points - circle.points)) <= 1e-12

    def test_mode_two_rate(self):
        eps, dt, T = 1e-4, 1e-4, 0.05
        curve = ParametricCurve.radial(1.0, [(2, eps, np.pi / 2)], 64)
        state, _ = advance(curve, FlowConfig(dt=dt), round(T / dt))
        d0 = deviation(FlowState(0.0, 0, curve))
        rate = -math.log(deviation(state) / d0) / T
        assert rate == pytest.approx(12.0, rel=0.01)

    def test_ellipse_area(self):
        ellipse = ParametricCurve.ellipse(1.2, 1 / 1.2, 128)
        state, reports = advance(ellipse, FlowConfig(dt=1e-4), 300)
        assert max(abs(r.volume_after - np.pi) for r in reports) <= 1e-8

    def test_node_collision(self):
        pts = ParametricCurve.circle(1.0, 16).points.copy()
        pts[1] = pts[0] + 1e-9
        with pytest.raises(GuardViolation) as info:
            _check_spacing(pts)
        assert info.value.guard == "node_collision"

    def test_redistribute(self):
        t = ParametricCurve.parameter(128)
        # nodes crowded near t = 0
        s = t + 0.4 * np.sin(t)
        curve = ParametricCurve(np.column_stack([1.5 * np.cos(s), 0.8 * np.sin(s)]))
        out = redistribute(curve)
        gaps = curve_geometry(out).speed
        assert np.max(gaps) / np.min(gaps) <= 1 + 1e-6
        x, y = out.points.T
        assert np.max(np.abs((x / 1.5) ** 2 + (y / 0.8) ** 2 - 1)) <= 1e-10
        assert np.allclose(out.points[0], curve.points[0], atol=1e-15)


class TestRunFlow:
    def test_exact_lamella_converges_immediately(self, grid32):
        surf = GraphSurface(grid32, np.full(grid32.shape, 0.5), reference_height=0.5)
        result = run_flow(surf, FlowConfig(), ReferenceSurface("lamella", grid=grid32))
        assert result.halt_reason == "converged" and result.steps == 0
        assert len(result.series) == 1

    def test_max_steps_and_sampling(self, grid32):
        surf = GraphSurface(grid32, 0.05 * np.sin(grid32.coordinates()[0]))
        result = run_flow(surf, FlowConfig(max_steps=25, sample_every=10), ReferenceSurface("lamella", grid=grid32))
        assert result.halt_reason == "max_steps" and result.steps == 25
        t = result.series.t
        assert np.allclose(t, np.array([0, 10, 20, 25]) * result.config.dt)

    def test_explicit_large_step_is_flagged(self):
        grid = square(16)
        h = TWO_PI / 16
        surf = GraphSurface(grid, 0.05 * np.sin(grid.coordinates()[0]) + 1e-3 * np.cos(3 * grid.coordinates()[1]))
        cfg = FlowConfig(scheme="explicit_rk4", dt=h**4, dealias=False, max_steps=200)
        result = run_flow(surf, cfg, ReferenceSurface("lamella", grid=grid))
        assert result.halt_reason == "guard_violation"
        assert result.detail.split(":")[0] in ("c1_bound", "energy_bound", "volume_distance", "nonfinite")

    def test_initial_guard(self):
        grid = square(16)
        surf = GraphSurface(grid, 3.0 * np.sin(4 * grid.coordinates()[0]))
        with pytest.raises(GuardViolation) as info:
            run_flow(surf, FlowConfig(c1_guard=1.0), ReferenceSurface("lamella", grid=grid))
        assert info.value.guard == "c1_bound"

    def test_symmetric_difference(self, grid32):
        X = grid32.coordinates()[0]
        surf = GraphSurface(grid32, 0.1 + 0.05 * np.sin(X))
        assert symmetric_difference_volume(surf, None) == pytest.approx(0.1 * TWO_PI**2, rel=1e-12)
        ref = ReferenceSurface("circle", radius=1.0)
        big = ParametricCurve.circle(1.1, 64)
        assert symmetric_difference_volume(big, ref) == pytest.approx(np.pi * 0.21, rel=1e-12)
