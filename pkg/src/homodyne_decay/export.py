"""CSV tables plus SVG panels for every result type."""

from __future__ import annotations

from pathlib import Path

from . import figures
from .analysis import BackActionMap, ConditionalTomogram, ExcitationStats, StateHistograms, ValidationReport
from .calibration import CalibrationResult
from .core import Trajectory
from .io import write_csv


def trajectory_table(traj: Trajectory, path) -> Path:
    rows = ((i, t, x, y, z) for i, (t, x, y, z) in enumerate(zip(traj.times, traj.x, traj.y, traj.z)))
    return write_csv(path, "trajectory", rows)


def _calibration(res: CalibrationResult, out: Path) -> list[Path]:
    summary = write_csv(
        out / "calibration.csv",
        "calibration",
        [(res.delta_v, res.eta_est, res.eta_raw, res.clamped, res.stderr_eta, res.stderr_delta_v,
          res.n_samples, res.integration_dt, res.mean_plus, res.mean_minus)],
    )
    rows = []
    for prep, h in (("+x", res.hist_plus), ("-x", res.hist_minus)):
        rows.extend((prep, lo, hi, c) for lo, hi, c in zip(h.edges[:-1], h.edges[1:], h.counts))
    return [summary, write_csv(out / "calibration_hist.csv", "calibration_hist", rows)]


def _tomograms(tgs: list[ConditionalTomogram], out: Path) -> list[Path]:
    rows = []
    for tg in tgs:
        for b in range(tg.count.size):
            rows.append((tg.decay_time, b, tg.vbar_lo[b], tg.vbar_hi[b], tg.count[b], tg.x[b], tg.y[b], tg.z[b],
                         tg.x_true[b], tg.y_true[b], tg.z_true[b], tg.underpopulated[b]))
    return [write_csv(out / "tomogram.csv", "tomogram", rows)]


def _backaction(m: BackActionMap, out: Path) -> list[Path]:
    rows = []
    for c in range(m.n_cells):
        for s in (0, 1):
            rows.append((c, "-" if s == 0 else "+", m.cell_x[c], m.cell_z[c], m.count[c, s], m.populated[c, s],
                         m.x_i[c, s], m.z_i[c, s], m.dx[c, s], m.dz[c, s]))
    h = m.dV_hist
    probe = ((lo, hi, n) for lo, hi, n in zip(h.edges[:-1], h.edges[1:], h.counts))
    return [write_csv(out / "backaction.csv", "backaction", rows), write_csv(out / "probe_hist.csv", "probe_hist", probe)]


def _excitation(st: ExcitationStats, out: Path) -> list[Path]:
    se = st.stderr()
    rows = [(thr, t, st.fraction[i, j], se[i, j]) for i, thr in enumerate(st.thresholds) for j, t in enumerate(st.times)]
    return [write_csv(out / "excitation.csv", "excitation", rows)]


def _histograms(h: StateHistograms, out: Path) -> list[Path]:
    dens = h.density
    rows = []
    for j, t in enumerate(h.times):
        ix, iz = h.counts[j].nonzero()
        for a, b in zip(ix, iz):
            rows.append((t, h.x_edges[a], h.x_edges[a + 1], h.z_edges[b], h.z_edges[b + 1], h.counts[j, a, b], dens[j, a, b]))
    bounds = zip(h.times, h.x_min, h.x_max, h.z_min, h.z_max)
    return [write_csv(out / "histograms.csv", "histograms", rows),
            write_csv(out / "histogram_bounds.csv", "histogram_bounds", bounds)]


def _validation(r: ValidationReport, out: Path) -> list[Path]:
    rows = zip(r.times, r.x_ref, r.z_ref, r.x_cond, r.z_cond, r.count)
    scatter = []
    for axis in ("x", "z"):
        sc = r.scatter[axis]
        scatter.extend((axis, c, p, m, n) for c, p, m, n in zip(sc["center"], sc["predicted"], sc["measured"], sc["count"]))
    fit = [(a, r.slope[a], r.slope_stderr[a], r.intercept[a]) for a in ("x", "z")]
    return [write_csv(out / "validation.csv", "validation", rows),
            write_csv(out / "validation_scatter.csv", "validation_scatter", scatter),
            write_csv(out / "validation_fit.csv", "validation_fit", fit)]


def emit_figures(result, out_dir, *, svg: bool = True) -> list[Path]:
    """Write the CSV tables (and SVG panels unless ``svg=False``) for ``result``."""
    out = figures._out(out_dir)
    if isinstance(result, Trajectory):
        paths = [trajectory_table(result, out / "trajectory.csv")]
        plot = figures.trajectory_figure
    elif isinstance(result, CalibrationResult):
        paths, plot = _calibration(result, out), figures.calibration_figure
    elif isinstance(result, list) and all(isinstance(t, ConditionalTomogram) for t in result):
        paths, plot = _tomograms(result, out), figures.tomogram_figure
    elif isinstance(result, BackActionMap):
        paths, plot = _backaction(result, out), figures.backaction_figures
    elif isinstance(result, ExcitationStats):
        paths, plot = _excitation(result, out), figures.excitation_figure
    elif isinstance(result, StateHistograms):
        paths, plot = _histograms(result, out), figures.histogram_figures
    elif isinstance(result, ValidationReport):
        paths, plot = _validation(result, out), figures.validation_figures
    else:
        raise TypeError(f"no export for {type(result).__name__}")
    if svg:
        paths.extend(plot(result, out))
    return paths
