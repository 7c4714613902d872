"""Experiment orchestration shared by the CLI and the HTTP service.

Each subcommand renders its outputs to strings first; writing them to disk
is a separate step, so local and remote execution emit identical bytes.
"""
from __future__ import annotations

import json
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Union

import numpy as np

from .diagnostics import Monitor, energy_identity_residual, gn_probe, poincare_probe
from .errors import ConfigError, GuardViolation
from .flow import FlowState, deviation, run_flow, step
from .geometry import GraphSurface
from .io import ExperimentConfig, fmt, parse_config, render_series, render_snapshot
from .stability import analyze

SUBCOMMANDS = ("run", "stability", "identity", "probe")
EXIT_OK, EXIT_CONFIG, EXIT_GUARD = 0, 1, 2


@dataclass
class Outcome:
    """Rendered files, a JSON-friendly summary and the process exit status."""

    exit_code: int
    files: dict[str, str] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    message: str = ""


def render_json(data: dict) -> str:
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def _clean(x):
    """Non-finite floats become strings so the JSON stays standard."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.integer):
        return int(x)
    return x


def execute(subcommand: str, config: Union[str, ExperimentConfig]) -> Outcome:
    """Run one subcommand; configuration problems raise :class:`ConfigError`."""
    if subcommand not in SUBCOMMANDS:
        raise ConfigError(f"unknown subcommand {subcommand!r}; expected one of {SUBCOMMANDS}")
    if isinstance(config, str):
        config = parse_config(config)
    return {"run": _run, "stability": _stability, "identity": _identity, "probe": _probe}[subcommand](config)


def _run(cfg: ExperimentConfig) -> Outcome:
    initial = cfg.surface.initial()
    reference = cfg.surface.reference()
    monitor = Monitor(reference, cfg.K, cfg.sigma)
    try:
        result = run_flow(initial, cfg.flow, reference, monitor)
    except GuardViolation as exc:
        # the initial data itself breaches a guard
        return Outcome(EXIT_GUARD, summary={"halt_reason": "guard_violation", "detail": str(exc)}, message=str(exc))
    final = result.final
    volumes = np.array(result.volumes)
    # graphs: relative to the domain volume when the enclosed volume is small
    scale = abs(volumes[0])
    if isinstance(initial, GraphSurface):
        scale = max(scale, initial.grid.torus.measure)
    summary = {
        "halt_reason": result.halt_reason,
        "detail": result.detail,
        "steps": final.step,
        "t": final.t,
        "dt": result.config.dt,
        "scheme": result.config.scheme,
        "stabilizer": result.config.stabilizer,
        "K": cfg.K,
        "sigma": monitor.sigma,
        "deviation": deviation(final),
        "volume_drift": float(np.max(np.abs(volumes - volumes[0]))),
        "relative_volume_drift": float(np.max(np.abs(volumes - volumes[0])) / scale),
        "max_area_increase": float(np.max(np.diff(result.areas), initial=-math.inf)),
        "samples": len(result.series),
    }
    files = {
        cfg.series_name: render_series(result.series, result.halt_reason),
        cfg.snapshot_name: render_snapshot(final.surface, final.t),
        "run.json": render_json(_clean(summary)),
    }
    code = EXIT_GUARD if result.halt_reason == "guard_violation" else EXIT_OK
    return Outcome(code, files, _clean(summary), result.detail)


def _stability(cfg: ExperimentConfig) -> Outcome:
    reference = cfg.surface.reference()
    report = analyze(reference, cfg.stability_tol, cfg.eigen_count)
    summary = report.to_dict()
    if reference.kind != "graph":
        summary["analytic_sigma"] = reference.analytic_sigma()
    summary = _clean(summary)
    return Outcome(EXIT_OK, {"stability.json": render_json(summary)}, summary)


def _identity(cfg: ExperimentConfig) -> Outcome:
    """Energy-identity residual from two steps at each configured ``dt``."""
    initial = cfg.surface.initial()
    rows = []
    for dt in cfg.identity_dts:
        flow = replace(cfg.flow, dt=dt).resolved(initial)
        s0 = FlowState(0.0, 0, initial, dealias=flow.dealias)
        s1, _ = step(s0, flow)
        s2, _ = step(s1, flow)
        rows.append((dt, energy_identity_residual([s0.cache, s1.cache, s2.cache], dt)))
    orders = [
        math.log(r0 / r1) / math.log(d0 / d1) if r0 > 0 and r1 > 0 else math.nan
        for (d0, r0), (d1, r1) in zip(rows, rows[1:])
    ]
    lines = ["# sdflab-identity v1", "dt,residual"] + [f"{fmt(d)},{fmt(r)}" for d, r in rows]
    summary = _clean({"dt": [d for d, _ in rows], "residual": [r for _, r in rows], "observed_order": orders})
    return Outcome(EXIT_OK, {"identity.csv": "\n".join(lines) + "\n", "identity.json": render_json(summary)}, summary)


def _probe(cfg: ExperimentConfig) -> Outcome:
    initial = cfg.surface.initial()
    if not isinstance(initial, GraphSurface):
        raise ConfigError("the probe subcommand needs a lamella surface")
    from .geometry import build_geometry

    cache = build_geometry(initial)
    pc = poincare_probe(cache, cfg.probe_samples, cfg.seed)
    gn = gn_probe(cache, cfg.probe_samples, cfg.gn, cfg.seed)
    summary = _clean(
        {
            "poincare_worst_ratio": pc.worst_ratio,
            "poincare_flat_bound": max(initial.grid.torus.side_lengths) / (2 * math.pi),
            "poincare_skipped": pc.skipped,
            "gn_exponents": list(cfg.gn),
            "gn_constant": gn.constant,
            "gn_constant_doubled": gn.constant_doubled,
            "gn_stable": gn.stable,
            "samples": cfg.probe_samples,
            "seed": cfg.seed,
        }
    )
    return Outcome(EXIT_OK, {"probe.json": render_json(summary)}, summary)


def write_outputs(outcome: Outcome, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in sorted(outcome.files):
        (out / name).write_text(outcome.files[name])


def dispatch(subcommand: str, config: Union[str, ExperimentConfig], out_dir) -> int:
    """Execute and write outputs; returns 0, 1 (configuration) or 2 (guard halt)."""
    try:
        outcome = execute(subcommand, config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_outputs(outcome, out_dir)
    if outcome.message:
        print(outcome.message, file=sys.stderr)
    return outcome.exit_code
