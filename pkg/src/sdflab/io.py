"""Experiment configuration and the text formats for series and snapshots."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .diagnostics import SERIES_COLUMNS, EnergySeries
from .errors import ConfigError
from .flow import FlowConfig
from .geometry import GraphSurface, ParametricCurve
from .lattice import FlatTorus, PeriodicGrid
from .stability import ZERO_TOL, ReferenceSurface

SERIES_MAGIC = "# sdflab-series v1"
SNAPSHOT_MAGIC = "# sdflab-snapshot v1"
SURFACE_KINDS = ("lamella", "circle", "ellipse", "cylinder")
_NUMBER = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)?\*?(pi)?$")


def fmt(x: float) -> str:
    """17 significant digits: enough to reproduce every double exactly."""
    return "%.17g" % x


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SurfaceSpec:
    """Initial surface and the critical set it perturbs.

    Graph perturbations are ``(k, amp, phase)`` with ``k`` a per-axis integer
    wavenumber tuple; curve perturbations are radial, ``k`` an integer.
    """

    kind: str = "lamella"
    periods: tuple[float, ...] = (2 * math.pi, 2 * math.pi)
    resolution: tuple[int, ...] = (64, 64)
    height: float = 0.0
    backend: str = "spectral"
    nodes: int = 256
    radius: float = 1.0
    axes: tuple[float, float] = (1.0, 1.0)
    center: tuple[float, float] = (0.0, 0.0)
    axis_period: float = math.pi
    modes: tuple = ()

    @property
    def is_curve(self) -> bool:
        return self.kind in ("circle", "ellipse")

    def grid(self) -> PeriodicGrid:
        return PeriodicGrid(FlatTorus(self.periods), self.resolution, self.backend)

    def initial(self):
        """The perturbed surface the flow starts from."""
        if self.kind == "lamella":
            return GraphSurface.from_modes(self.grid(), self.modes, self.height)
        if self.kind == "circle":
            return ParametricCurve.radial(self.radius, self.modes, self.nodes, self.center)
        if self.kind == "ellipse":
            curve = ParametricCurve.ellipse(self.axes[0], self.axes[1], self.nodes, self.center)
            if self.modes:
                raise ConfigError("ellipse initial data takes no modes")
            return curve
        raise ConfigError(f"surface kind {self.kind!r} supports the stability subcommand only")

    def reference(self) -> ReferenceSurface:
        if self.kind == "lamella":
            return ReferenceSurface("lamella", grid=self.grid())
        if self.kind == "cylinder":
            return ReferenceSurface(
                "cylinder", radius=self.radius, axis_period=self.axis_period, resolution=self.resolution
            )
        if self.kind == "circle":
            return ReferenceSurface("circle", radius=self.radius, nodes=self.nodes, center=self.center)
        # the ellipse relaxes to the circle of equal area
        R = math.sqrt(self.axes[0] * self.axes[1])
        return ReferenceSurface("circle", radius=R, nodes=self.nodes, center=self.center)


@dataclass(frozen=True)
class ExperimentConfig:
    surface: SurfaceSpec = field(default_factory=SurfaceSpec)
    flow: FlowConfig = field(default_factory=FlowConfig)
    K: float = 4.0
    sigma: Optional[float] = None
    seed: int = 0
    stability_tol: float = ZERO_TOL
    eigen_count: int = 10
    identity_dts: tuple[float, ...] = (1e-5, 5e-6, 2.5e-6)
    probe_samples: int = 50
    gn: tuple = (1, 2, 2.0, 2.0, 2.0, 0.5)
    series_name: str = "series.csv"
    snapshot_name: str = "final.snap"


def _number(text: str) -> float:
    s = text.strip().lower()
    m = _NUMBER.match(s)
    if not m or (m.group(1) is None and m.group(2) is None):
        raise ValueError(f"not a number: {text!r}")
    value = float(m.group(1)) if m.group(1) is not None else 1.0
    if m.group(2):
        value *= math.pi
    if not math.isfinite(value):
        raise ValueError(f"not finite: {text!r}")
    return value


def _integer(text: str) -> int:
    s = text.strip()
    if not re.fullmatch(r"[+-]?\d+", s):
        raise ValueError(f"not an integer: {text!r}")
    return int(s)


def _flag(text: str) -> bool:
    s = text.strip().lower()
    if s in ("1", "true", "on", "yes"):
        return True
    if s in ("0", "false", "off", "no"):
        return False
    raise ValueError(f"not a flag: {text!r}")


def _numbers(text: str) -> tuple[float, ...]:
    return tuple(_number(t) for t in text.split())


def _integers(text: str) -> tuple[int, ...]:
    return tuple(_integer(t) for t in text.split())


def _optional_number(text: str) -> Optional[float]:
    return None if text.strip().lower() in ("", "auto", "none") else _number(text)


def _word(text: str) -> str:
    s = text.strip()
    if not s or any(c.isspace() for c in s):
        raise ValueError(f"not a single word: {text!r}")
    return s


def _modes(text: str) -> tuple:
    out = []
    for chunk in text.split(";"):
        parts = chunk.split()
        if not parts:
            continue
        if len(parts) < 3:
            raise ValueError(f"mode {chunk.strip()!r} needs wavenumbers, amplitude and phase")
        out.append((tuple(_integer(p) for p in parts[:-2]), _number(parts[-2]), _number(parts[-1])))
    return tuple(out)


_SURFACE_KEYS = {
    "kind": _word,
    "periods": _numbers,
    "resolution": _integers,
    "height": _number,
    "backend": _word,
    "nodes": _integer,
    "radius": _number,
    "axes": _numbers,
    "center": _numbers,
    "axis_period": _number,
    "modes": _modes,
}
_FLOW_KEYS = {
    "dt": _optional_number,
    "scheme": _word,
    "stabilizer": _optional_number,
    "volume_correction": _flag,
    "max_steps": _integer,
    "sample_every": _integer,
    "dealias": _flag,
    "c1_guard": _number,
    "energy_guard": _optional_number,
    "volume_guard": _optional_number,
    "tol": _number,
    "redistribute_every": _integer,
}
_DIAG_KEYS = {
    "K": ("K", _number),
    "sigma": ("sigma", _optional_number),
    "seed": ("seed", _integer),
    "tol": ("stability_tol", _number),
    "eigen_count": ("eigen_count", _integer),
    "identity_dts": ("identity_dts", _numbers),
    "probe_samples": ("probe_samples", _integer),
    "gn": ("gn", _numbers),
}
_OUTPUT_KEYS = {"series": ("series_name", _word), "snapshot": ("snapshot_name", _word)}


def parse_config(text: str) -> ExperimentConfig:
    """Parse ``section.key = value`` lines into a validated configuration.

    Sections are ``surface``, ``flow``, ``diag`` and ``output``; ``#`` starts
    a comment. Numbers accept a ``pi`` suffix (``2pi``). Every violation is
    collected and reported together in one :class:`ConfigError`.
    """
    errors: list[str] = []
    surface: dict = {}
    flow: dict = {}
    top: dict = {}
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected key = value, got {raw.strip()!r}")
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if key in seen:
            errors.append(f"line {lineno}: duplicate key {key!r}")
            continue
        seen.add(key)
        section, _, name = key.partition(".")
        try:
            if section == "surface" and name in _SURFACE_KEYS:
                surface[name] = _SURFACE_KEYS[name](value)
            elif section == "flow" and name in _FLOW_KEYS:
                flow[name] = _FLOW_KEYS[name](value)
            elif section == "diag" and name in _DIAG_KEYS:
                attr, conv = _DIAG_KEYS[name]
                top[attr] = conv(value)
            elif section == "output" and name in _OUTPUT_KEYS:
                attr, conv = _OUTPUT_KEYS[name]
                top[attr] = conv(value)
            else:
                errors.append(f"line {lineno}: unknown key {key!r}")
        except ValueError as exc:
            errors.append(f"line {lineno}: {key}: {exc}")

    spec = _validate_surface(surface, flow.get("dealias", True), errors)
    try:
        flow_cfg = FlowConfig(**flow)
    except ConfigError as exc:
        errors.extend(f"flow: {msg}" for msg in str(exc).split("; "))
        flow_cfg = None
    _validate_diag(top, errors)
    if errors:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errors))
    return ExperimentConfig(surface=spec, flow=flow_cfg, **top)


def _validate_surface(values: dict, dealias: bool, errors: list[str]) -> Optional[SurfaceSpec]:
    kind = values.get("kind", "lamella")
    if kind not in SURFACE_KINDS:
        errors.append(f"surface.kind must be one of {SURFACE_KINDS}, got {kind!r}")
        return None
    if kind == "cylinder":
        values.setdefault("resolution", (32, 16))
    spec = SurfaceSpec(**values)
    if kind == "lamella":
        d = len(spec.periods)
        if len(spec.resolution) != d:
            errors.append(f"surface.resolution has {len(spec.resolution)} entries for {d} periods")
        if any(p <= 0 for p in spec.periods):
            errors.append("surface.periods must be positive")
        if any(n < 8 or n % 2 for n in spec.resolution):
            errors.append(f"surface.resolution entries must be even and >= 8, got {spec.resolution}")
        if spec.backend not in ("spectral", "fd"):
            errors.append(f"surface.backend must be spectral or fd, got {spec.backend!r}")
        for k, amp, _ in spec.modes:
            if len(k) != d:
                errors.append(f"mode {k} needs {d} wavenumbers")
            elif dealias and any(abs(ki) >= n / 3 for ki, n in zip(k, spec.resolution)):
                errors.append(f"mode {k} reaches N/3 with dealiasing on")
    else:
        if spec.nodes < 16 or spec.nodes % 2:
            errors.append(f"surface.nodes must be even and >= 16, got {spec.nodes}")
        if not spec.radius > 0:
            errors.append(f"surface.radius must be positive, got {spec.radius}")
        if len(spec.center) != 2:
            errors.append("surface.center needs two coordinates")
        if kind == "cylinder":
            if not spec.axis_period > 0:
                errors.append("surface.axis_period must be positive")
            if len(spec.resolution) != 2:
                errors.append("cylinder resolution needs two entries")
        if kind == "ellipse" and (len(spec.axes) != 2 or min(spec.axes) <= 0):
            errors.append(f"surface.axes needs two positive semi-axes, got {spec.axes}")
        for k, amp, _ in spec.modes:
            if kind != "circle":
                errors.append(f"surface.modes is not used by kind {kind!r}")
                break
            if len(k) != 1:
                errors.append(f"curve mode {k} takes a single wavenumber")
            elif dealias and abs(k[0]) >= spec.nodes / 3:
                errors.append(f"mode {k} reaches nodes/3 with dealiasing on")
    return spec


def _validate_diag(top: dict, errors: list[str]) -> None:
    if "K" in top and not top["K"] > 2:
        errors.append(f"diag.K must exceed 2, got {top['K']}")
    if "probe_samples" in top and top["probe_samples"] < 50:
        errors.append(f"diag.probe_samples must be >= 50, got {top['probe_samples']}")
    if "identity_dts" in top and (len(top["identity_dts"]) < 2 or min(top["identity_dts"]) <= 0):
        errors.append("diag.identity_dts needs at least two positive steps")
    if "gn" in top:
        if len(top["gn"]) != 6:
            errors.append("diag.gn needs six entries j m p r q theta")
        else:
            j, m = top["gn"][:2]
            if j != int(j) or m != int(m):
                errors.append("diag.gn orders j and m must be integers")
            top["gn"] = (int(j), int(m)) + tuple(top["gn"][2:])
    if "eigen_count" in top and top["eigen_count"] < 1:
        errors.append("diag.eigen_count must be positive")


# ---------------------------------------------------------------------------
# series files


def render_series(series: EnergySeries, halt_reason: Optional[str] = None) -> str:
    lines = [SERIES_MAGIC, ",".join(series.columns)]
    lines += [",".join(fmt(v) for v in row) for row in series.rows]
    if halt_reason is not None:
        lines.append(f"# halt_reason={halt_reason}")
    return "\n".join(lines) + "\n"


def write_series(path, series: EnergySeries, halt_reason: Optional[str] = None) -> None:
    Path(path).write_text(render_series(series, halt_reason))


def read_series(path) -> tuple[EnergySeries, dict]:
    """Rows and the ``# key=value`` footer entries."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != SERIES_MAGIC:
        raise ValueError(f"{path}: not a series file")
    columns = lines[1].split(",")
    series = EnergySeries(columns)
    footer = {}
    for line in lines[2:]:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            footer[key] = value
        elif line:
            series.append([float(v) for v in line.split(",")])
    return series, footer


# ---------------------------------------------------------------------------
# snapshots


def render_snapshot(surface, t: float) -> str:
    if isinstance(surface, GraphSurface):
        grid = surface.grid
        head = (
            f"{SNAPSHOT_MAGIC} kind=graph dims={'x'.join(map(str, grid.resolution))} t={fmt(t)}"
            f" periods={','.join(fmt(p) for p in grid.torus.side_lengths)}"
            f" height={fmt(surface.reference_height)} backend={grid.backend}"
        )
        body = [fmt(v) for v in surface.heights.ravel()]
    else:
        head = f"{SNAPSHOT_MAGIC} kind=curve dims={surface.nodes}x2 t={fmt(t)}"
        if surface.periods is not None:
            head += f" periods={','.join(fmt(p) for p in surface.periods)}"
        body = [f"{fmt(x)} {fmt(y)}" for x, y in surface.points]
    return "\n".join([head] + body) + "\n"


def write_snapshot(path, surface, t: float) -> None:
    Path(path).write_text(render_snapshot(surface, t))


def read_snapshot(path):
    """Return ``(surface, t)``; values are reproduced bit for bit."""
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith(SNAPSHOT_MAGIC):
        raise ValueError(f"{path}: not a snapshot file")
    meta = dict(tok.split("=", 1) for tok in lines[0][len(SNAPSHOT_MAGIC):].split())
    t = float(meta["t"])
    dims = tuple(int(n) for n in meta["dims"].split("x"))
    if meta["kind"] == "graph":
        periods = tuple(float(p) for p in meta["periods"].split(","))
        grid = PeriodicGrid(FlatTorus(periods), dims, meta.get("backend", "spectral"))
        heights = np.array([float(v) for v in lines[1:] if v], dtype=float).reshape(dims)
        return GraphSurface(grid, heights, float(meta["height"])), t
    pts = np.array([[float(v) for v in line.split()] for line in lines[1:] if line], dtype=float)
    if pts.shape != dims:
        raise ValueError(f"{path}: expected {dims} values, got {pts.shape}")
    periods = tuple(float(p) for p in meta["periods"].split(",")) if "periods" in meta else None
    return ParametricCurve(pts, periods), t


__all__ = [
    "ExperimentConfig",
    "SurfaceSpec",
    "SERIES_COLUMNS",
    "fmt",
    "parse_config",
    "read_series",
    "read_snapshot",
    "render_series",
    "render_snapshot",
    "write_series",
    "write_snapshot",
]
