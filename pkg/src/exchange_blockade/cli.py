"""Command-line entry point: ``exblock {curves,gatetime,fmap,thermal,selftest}``.

Each command writes CSV tables plus one JSON manifest into ``output_dir``.
CSV bytes depend only on the configuration; timings and paths live in the
manifest.  Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from scipy import linalg

from . import __version__, dvr, twobody
from .dynamics import (
    GateTimeError, IntegrationError, build_model, gate_time, nearest_gate_time, resolve_d_max, run_gate,
)
from .model import ConfigError, RunConfig, config_hash, load_config
from .observables import ObservableError, evaluate, gate_fidelity, thermal_configurations, thermal_scan

log = logging.getLogger("exchange_blockade")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2
NUMERIC_ERRORS = (
    IntegrationError, GateTimeError, ObservableError, dvr.BoundStateError,
    twobody.SectorError, linalg.LinAlgError, FloatingPointError,
)


def fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.12g}"


def write_csv(path: Path, header, rows) -> Path:
    lines = [",".join(header)]
    lines += [",".join(r if isinstance(r, str) else fmt(r) for r in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
    return path


def g_tag(g: float) -> str:
    return fmt(g).replace(".", "p").replace("-", "m")


class Run:
    """Collects outputs and diagnostics of one command and writes its manifest."""

    def __init__(self, command: str, config: RunConfig):
        self.command = command
        self.config = config
        self.outdir = Path(config.output_dir)
        self.outdir.mkdir(parents=True, exist_ok=True)
        self.outputs: list[str] = []
        self.diagnostics: dict = {}
        self.start = time.perf_counter()

    def csv(self, name: str, header, rows) -> Path:
        path = write_csv(self.outdir / name, header, rows)
        self.outputs.append(str(path))
        return path

    def finish(self) -> Path:
        manifest = {
            "command": self.command,
            "config": self.config.to_dict(),
            "config_hash": config_hash(self.config),
            "outputs": self.outputs,
            "version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "wall_clock_s": round(time.perf_counter() - self.start, 3),
            "diagnostics": self.diagnostics,
        }
        path = self.outdir / f"{self.command}.manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")
        return path


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def ordered_map(func, items, workers: int):
    """Map preserving input order; a process pool when ``workers > 1``."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


# ---------------------------------------------------------------------------
# commands


def _curves_job(args):
    config, g = args
    model = build_model(config, g)
    return model.singlet, model.triplet


def cmd_curves(config: RunConfig) -> Run:
    if not config.g_list:
        raise ConfigError("g_list is empty; nothing to compute")
    run = Run("curves", config)
    ref = build_model(config, 0.0).singlet
    results = ordered_map(_curves_job, [(config, g) for g in config.g_list], config.workers)
    for g, (singlet, triplet) in zip(config.g_list, results):
        text = twobody.curves_csv(
            twobody.relative_curves(singlet, ref), twobody.relative_curves(triplet, ref)
        )
        path = run.outdir / f"curves_g{g_tag(g)}.csv"
        path.write_text(text)
        run.outputs.append(str(path))
        run.diagnostics[f"g={fmt(g)}"] = {
            "crossings": len(singlet.crossings) + len(triplet.crossings),
            "singlet_basis": singlet.basis.size,
            "triplet_basis": triplet.basis.size,
        }
    run.diagnostics["d_max"] = resolve_d_max(config)
    return run


def gatetime_grid(config: RunConfig) -> np.ndarray:
    if config.gatetime_g:
        return np.asarray(config.gatetime_g, dtype=float)
    if not 0 < config.g_min < config.g_max or config.n_g < 2:
        raise ConfigError("gate-time grid needs 0 < g_min < g_max and n_g >= 2")
    return np.geomspace(config.g_min, config.g_max, config.n_g)


def _gatetime_job(args):
    config, g = args
    if g <= 0:
        return [(g, n, math.inf) for n in config.n_list]
    model = build_model(config, g)
    return [(g, n, gate_time(g, n, model.singlet, model.triplet, config.dwell_fraction)) for n in config.n_list]


def cmd_gatetime(config: RunConfig) -> Run:
    if not config.n_list:
        raise ConfigError("n_list is empty")
    run = Run("gatetime", config)
    grid = gatetime_grid(config)
    blocks = ordered_map(_gatetime_job, [(config, float(g)) for g in grid], config.workers)
    rows = [row for block in blocks for row in block]
    run.csv("gatetime.csv", ["g", "n", "tau"], rows)
    run.diagnostics["rows"] = len(rows)
    return run


_MODEL_CACHE: dict = {}


def _cached_model(config: RunConfig, g: float, sectors=twobody.LOGICAL_SECTORS):
    key = (config_hash(config), g, tuple(s.name for s in sectors))
    if key not in _MODEL_CACHE:
        _MODEL_CACHE.clear()
        _MODEL_CACHE[key] = build_model(config, g, sectors)
    return _MODEL_CACHE[key]


def _fmap_cell(args):
    config, g, tau = args
    try:
        res = gate_fidelity(g, tau, config, _cached_model(config, g))
        return (g, tau, res.fidelity, res.trace_deficit, res.mean_vibration, "ok")
    except NUMERIC_ERRORS as exc:
        reason = type(exc).__name__
        log.warning("fmap cell g=%g tau=%g failed: %s", g, tau, exc)
        return (g, tau, math.nan, math.nan, math.nan, reason)


def cmd_fmap(config: RunConfig) -> Run:
    if not config.fmap_g or not config.fmap_tau:
        raise ConfigError("fmap_g and fmap_tau must be non-empty")
    run = Run("fmap", config)
    cells = [(config, float(g), float(t)) for g in config.fmap_g for t in config.fmap_tau]
    rows = ordered_map(_fmap_cell, cells, config.workers)
    run.csv("fmap.csv", ["g", "tau", "F", "trace_deficit", "mean_n", "status"], rows)
    run.diagnostics["failed_cells"] = sum(r[-1] != "ok" for r in rows)
    return run


def operating_point(config: RunConfig, model) -> tuple[float, int | None]:
    """Gate time used by single-point commands, snapped to the phase condition if requested."""
    if not config.snap_tau:
        return float(config.tau), None
    n, tau = nearest_gate_time(config.g, config.tau, model.singlet, model.triplet, config.dwell_fraction)
    return tau, n


def cmd_thermal(config: RunConfig) -> Run:
    if len(config.kT_list) < 2:
        raise ConfigError("kT_list needs at least two temperatures")
    run = Run("thermal", config)
    model = build_model(config, config.g, twobody.ALL_SECTORS)
    tau, n = operating_point(config, model)
    configs = [(config, config.g, tau, nl, nr) for nl, nr in thermal_configurations(config.max_quanta)]
    results = ordered_map(_thermal_job, configs, config.workers)
    scan = thermal_scan(config.g, tau, config.kT_list, config, model, results=results)
    rows = list(zip(scan.kT, scan.mean_n0, scan.fidelities, scan.weight_lost))
    run.csv("thermal.csv", ["kT", "mean_n0", "F", "weight_lost"], rows)
    run.diagnostics.update(
        tau=tau, n=n, slope=scan.slope, intercept=scan.intercept,
        residuals=scan.residuals, fit_points=int(scan.fit_mask.sum()),
        configurations=[list(c) for c in scan.configurations],
        configuration_fidelities=scan.config_fidelities, warnings=list(scan.warnings),
    )
    return run


def _thermal_job(args):
    config, g, tau, nl, nr = args
    model = _cached_model(config, g, twobody.ALL_SECTORS)
    try:
        r = run_gate(g, tau, config, model, nl, nr)
        return evaluate(model, r, "logical" if nl == nr == 0 else "adiabatic", nl, nr)
    except NUMERIC_ERRORS as exc:
        return exc


def cmd_selftest(config: RunConfig) -> Run:
    """Fast consistency checks on the configured model; raises on failure."""
    run = Run("selftest", config)
    checks = {}
    model = build_model(config, config.g)
    orb = model.end_orbitals()
    s = orb.orbitals.T @ orb.orbitals * orb.spacing
    checks["orthonormality"] = float(np.abs(s - np.eye(orb.size)).max())
    for sector, curves in model.curves.items():
        a = curves.couplings
        checks[f"{sector.name}_antisymmetry"] = float(np.abs(a + np.swapaxes(a, 1, 2)).max())
    checks["leakage"] = dvr.half_space_leakage(model.localized, model.grid.spacing)
    res = gate_fidelity(config.g, config.tau, config, model)
    checks["trace_deficit"] = res.trace_deficit
    checks["fidelity"] = res.fidelity
    limits = {"orthonormality": 1e-10, "singlet+_antisymmetry": 1e-8, "triplet-_antisymmetry": 1e-8, "leakage": 1e-3}
    bad = [k for k, lim in limits.items() if k in checks and not checks[k] < lim]
    if not 0.0 <= res.fidelity <= 1.0 + 1e-10:
        bad.append("fidelity")
    rows = [(k, checks[k], "fail" if k in bad else "ok") for k in sorted(checks)]
    run.csv("selftest.csv", ["check", "value", "status"], [(k, fmt(v), s) for k, v, s in rows])
    run.diagnostics["failed"] = bad
    if bad:
        run.finish()
        raise IntegrationError(f"self-test failed: {', '.join(bad)}")
    return run


COMMANDS = {
    "curves": cmd_curves,
    "gatetime": cmd_gatetime,
    "fmap": cmd_fmap,
    "thermal": cmd_thermal,
    "selftest": cmd_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="exblock", description="Exchange-blockade sqrt(SWAP) simulations.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name, func in COMMANDS.items():
        sp = sub.add_parser(name, help=(func.__doc__ or name).splitlines()[0])
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one configuration key (value parsed as JSON)")
        sp.add_argument("-o", "--output-dir", help="output directory (overrides the config)")
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        overrides = list(args.set)
        if args.output_dir:
            overrides.append(f"output_dir={json.dumps(args.output_dir)}")
        config = load_config(args.config, overrides)
        run = COMMANDS[args.command](config)
        manifest = run.finish()
    except (ConfigError, OSError) as exc:
        print(f"exblock: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        print(f"exblock: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    for path in run.outputs:
        print(path)
    print(manifest)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
