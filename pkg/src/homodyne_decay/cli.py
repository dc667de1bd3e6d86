"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 validation error, 3 numerical
divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    GridSpec,
    backaction_map,
    conditional_tomography,
    excitation_fraction,
    excitation_probability_analytic,
    state_histograms,
    tomographic_validation,
)
from .calibration import calibrate_eta
from .core import BlochState, HomodyneError, IntegrationDivergedError, substream
from .export import emit_figures
from .io import CONFIG_KEYS, RecordFormatError, load_config, parse_value, read_record, resolve_config, write_csv, write_manifest, write_record
from .propagator import simulate_trajectory, track_trajectory

log = logging.getLogger("homodyne_decay")

SUBCOMMANDS = ("simulate", "track", "calibrate", "tomogram", "backaction", "excitation", "histograms", "validate")
_BOOL_KEYS = ("analytic", "rescale", "figures")

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="homodyne-decay", description="Diffusive trajectories of a decaying emitter under homodyne detection")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value file or a previous manifest.json")
        p.add_argument("-v", "--verbose", action="store_true")
        for key in CONFIG_KEYS:
            flags = [f"--{key}"] + ([f"--{key.replace('_', '-')}"] if "_" in key else [])
            if key in _BOOL_KEYS:
                p.add_argument(*flags, dest=key, nargs="?", const="true", default=None)
            else:
                p.add_argument(*flags, dest=key, default=None)
    return parser


def _join_values(argv: list[str], parser: argparse.ArgumentParser) -> list[str]:
    """Glue ``--init -z`` into ``--init=-z`` so values may start with a dash."""
    known = set()
    for action in parser._subparsers._group_actions[0].choices["simulate"]._actions:
        known.update(action.option_strings)
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok.startswith("--") and "=" not in tok and tok in known and i + 1 < len(argv):
            nxt = argv[i + 1]
            key = tok[2:].replace("-", "_")
            if nxt.startswith("-") and nxt not in known and key not in _BOOL_KEYS:
                out.append(f"{tok}={nxt}")
                i += 2
                continue
        out.append(tok)
        i += 1
    return out


def _resolve(args):
    file_values = load_config(args.config) if args.config else {}
    overrides = {k: parse_value(k, getattr(args, k)) for k in CONFIG_KEYS if getattr(args, k) is not None}
    return resolve_config(file_values, overrides)


def _default_times(rc, count: int = 10):
    step = max(rc.steps // count, 1)
    return tuple(k * rc.dt for k in range(step, rc.steps + 1, step))


def run(command: str, rc) -> list[Path]:
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = rc.sim_config()
    svg = rc.figures

    if command == "simulate":
        traj, record = simulate_trajectory(cfg, substream(cfg.seed, 0))
        name = "record.bin" if rc.format == "binary" else "record.txt"
        paths = [write_record(record, out / name, rc.format)]
        paths += emit_figures(traj, out, svg=svg)
        print(f"simulated {cfg.n_steps} steps; final state x={traj.x[-1]:.4f} z={traj.z[-1]:.4f}")
        return paths

    if command == "track":
        if not rc.record:
            raise UsageError("track needs --record PATH")
        record = read_record(rc.record)
        ratio = record.variance_ratio()
        if np.isfinite(ratio) and abs(ratio - 1) > 0.1:
            log.warning("record variance is %.3g x gamma*dt", ratio)
        traj = track_trajectory(record, BlochState.parse(rc.init))
        print(f"tracked {len(record)} samples; final state x={traj.x[-1]:.4f} z={traj.z[-1]:.4f}")
        return emit_figures(traj, out, svg=svg)

    if command == "calibrate":
        res = calibrate_eta(cfg, rc.samples, rc.integration_dt, workers=rc.workers)
        flag = " (clamped)" if res.clamped else ""
        print(f"delta_V = {res.delta_v:.5f}  eta = {res.eta_est:.4f} +/- {res.stderr_eta:.4f}{flag}")
        return emit_figures(res, out, svg=svg)

    if command == "tomogram":
        tgs = conditional_tomography(
            cfg, rc.ensemble, rc.decay_times, rc.bins, binning=rc.binning, contrast=rc.contrast,
            rescale=rc.rescale, workers=rc.workers,
        )
        print(f"{len(tgs)} tomograms, {rc.bins} bins each")
        return emit_figures(tgs, out, svg=svg)

    if command == "backaction":
        m = cfg.steps_for(rc.probe_dt, "probe_dt")
        herald_times = rc.herald_times or tuple(k * rc.dt for k in range(0, max(rc.steps - m, 0) + 1))
        bmap = backaction_map(
            cfg, rc.ensemble, herald_times, GridSpec(nx=rc.grid[0], nz=rc.grid[1]), rc.probe_dt,
            min_count=rc.min_count, herald=rc.herald, vbar_bins=rc.vbar_bins, estimator=rc.estimator,
            contrast=rc.contrast, workers=rc.workers,
        )
        print(f"{int(bmap.populated.sum())} populated (cell, sign) entries")
        return emit_figures(bmap, out, svg=svg)

    if command == "excitation":
        if rc.analytic:
            p = excitation_probability_analytic(rc.gamma, rc.eta, rc.dt)
            print(f"{p:.4f}")
            return [write_csv(out / "excitation_analytic.csv", "excitation_analytic", [(rc.gamma, rc.eta, rc.dt, p)])]
        if not rc.thresholds:
            raise UsageError("excitation needs --thresholds (or --analytic)")
        stats = excitation_fraction(cfg, rc.ensemble, rc.thresholds, workers=rc.workers)
        print("final fractions: " + ", ".join(f"z'={t:g}: {f:.4f}" for t, f in zip(stats.thresholds, stats.fraction[:, -1])))
        return emit_figures(stats, out, svg=svg)

    if command == "histograms":
        h = state_histograms(cfg, rc.ensemble, rc.times or _default_times(rc), workers=rc.workers)
        print(f"{h.times.size} time slices")
        return emit_figures(h, out, svg=svg)

    if command == "validate":
        rep = tomographic_validation(
            cfg, rc.ensemble, rc.window, reference=rc.reference, times=rc.times, contrast=rc.contrast, workers=rc.workers
        )
        print(f"slope x = {rep.slope['x']:.4f}, slope z = {rep.slope['z']:.4f}; {int(rep.gaps.sum())} gaps")
        return emit_figures(rep, out, svg=svg)

    raise UsageError(f"unknown subcommand {command!r}")


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(_join_values(argv, parser))
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        rc = _resolve(args)
        outputs = run(args.command, rc)
        write_manifest(rc.out, args.command, rc, outputs, __version__)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except IntegrationDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (HomodyneError, RecordFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
