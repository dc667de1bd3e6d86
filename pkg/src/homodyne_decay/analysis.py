"""Ensemble analyses: conditional tomography, back-action maps, excitation
statistics, state histograms and tomographic validation of tracked states.

Projective readout is simulated by drawing one ``±1`` outcome per axis from
the conditioned state: ``P(+1) = (1 + c*r)/2`` with ``r`` the Bloch
component and ``c`` the readout contrast (1 by default). Those draws come
from each trajectory's tomography substream, independent of its
measurement noise.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import TOMOGRAPHY_STREAM, BlochState, InvalidParameterError, SimConfig, substream
from .calibration import Histogram
from .propagator import Ensemble, iter_ensemble, simulate_trajectory, unconditional_curve

log = logging.getLogger(__name__)


# -- projective readout -------------------------------------------------------


def tomography_uniforms(seed: int, indices, n: int) -> np.ndarray:
    """Uniform draws of shape ``(len(indices), n)`` from the tomography substreams."""
    idx = np.asarray(indices)
    out = np.empty((idx.size, n))
    for row, i in enumerate(idx):
        out[row] = substream(seed, int(i), TOMOGRAPHY_STREAM).random(n)
    return out


def projective_outcomes(component, uniforms, contrast: float = 1.0) -> np.ndarray:
    """``±1`` outcomes with ``P(+1) = (1 + contrast*component)/2``."""
    if not 0 < contrast <= 1:
        raise InvalidParameterError(f"contrast must lie in (0, 1], got {contrast}")
    p = 0.5 * (1.0 + contrast * np.asarray(component))
    return np.where(uniforms < p, 1.0, -1.0)


def _chunks(cfg: SimConfig, ensemble_size: int, n_steps: int, ensemble: Ensemble | None, workers: int):
    """Yield the supplied ensemble, or simulate ``ensemble_size`` runs chunk by chunk."""
    if ensemble is not None:
        if ensemble.n_steps < n_steps:
            raise InvalidParameterError(f"ensemble covers {ensemble.n_steps} steps, {n_steps} needed")
        yield ensemble
        return
    yield from iter_ensemble(cfg.replace(n_steps=n_steps), ensemble_size, workers=workers)


def _steps(cfg: SimConfig, times, what: str) -> np.ndarray:
    return np.array([cfg.steps_for(t, what) for t in np.atleast_1d(times)], dtype=int)


# -- excitation probability ------------------------------------------------------


def excitation_probability_analytic(gamma: float, eta: float, dt: float) -> float:
    """Probability that a ``+x`` state is pushed toward excitation in one step.

    The step lowers ``z`` iff ``dW < -sqrt(gamma/eta)*dt``; for ``dW ~ N(0, dt)``
    this is ``Phi(-sqrt(gamma*dt/eta))``. Returns 0 at ``eta = 0`` (the limit).
    """
    if eta < 0 or gamma <= 0 or dt <= 0:
        raise InvalidParameterError("need gamma > 0, dt > 0, eta >= 0")
    if eta == 0:
        log.info("eta = 0: no measurement back-action, excitation probability is 0")
        return 0.0
    a = math.sqrt(gamma * dt / eta)
    return 0.5 * math.erfc(a / math.sqrt(2.0))


@dataclass(frozen=True, eq=False)
class ExcitationStats:
    """``fraction[i, j]``: share of trajectories with ``z(times[j]) < thresholds[i]``."""

    thresholds: np.ndarray
    times: np.ndarray
    fraction: np.ndarray
    n_trajectories: int

    def stderr(self) -> np.ndarray:
        f = self.fraction
        return np.sqrt(f * (1 - f) / self.n_trajectories)


def excitation_fraction(
    cfg: SimConfig,
    ensemble_size: int,
    z_thresholds,
    *,
    times=None,
    ensemble: Ensemble | None = None,
    workers: int = 1,
) -> ExcitationStats:
    """Fraction of trajectories below each threshold ``z'`` over time.

    ``times`` defaults to every step ``0 .. cfg.n_steps``. Rows flagged as
    diverged are excluded.
    """
    thr = np.atleast_1d(np.asarray(z_thresholds, dtype=float))
    if thr.size == 0:
        raise InvalidParameterError("at least one threshold is required")
    steps = np.arange(cfg.n_steps + 1) if times is None else _steps(cfg, times, "time")
    below = np.zeros((thr.size, steps.size), dtype=np.int64)
    n = 0
    for ens in _chunks(cfg, ensemble_size, int(steps.max()), ensemble, workers):
        z = ens.z[ens.valid][:, steps]
        below += (z[None, :, :] < thr[:, None, None]).sum(axis=1)
        n += z.shape[0]
    return ExcitationStats(thr, steps * cfg.dt, below / n, n)


# -- conditional tomography --------------------------------------------------------


def _bin_edges(values: np.ndarray, n_bins: int, binning: str) -> np.ndarray:
    if binning == "quantile":
        edges = np.quantile(values, np.linspace(0.0, 1.0, n_bins + 1))
    elif binning == "width":
        edges = np.linspace(values.min(), values.max(), n_bins + 1)
    else:
        raise InvalidParameterError(f"binning must be 'quantile' or 'width', got {binning!r}")
    return edges


def _assign(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    return np.clip(np.searchsorted(edges[1:-1], values, side="right"), 0, edges.size - 2)


@dataclass(frozen=True, eq=False)
class ConditionalTomogram:
    """Tomography averages conditioned on the integrated signal at one decay time.

    Per-bin arrays: ``vbar_lo``/``vbar_hi`` (bin range), ``count``,
    ``x``/``y``/``z`` (projective means) and ``x_true``/``y_true``/``z_true``
    (means of the tracked states). ``vbar`` and ``outcomes`` keep the
    per-trajectory signal and ``±1`` readouts (columns x, y, z).
    """

    prep: BlochState
    decay_time: float
    vbar_lo: np.ndarray
    vbar_hi: np.ndarray
    count: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    x_true: np.ndarray
    y_true: np.ndarray
    z_true: np.ndarray
    underpopulated: np.ndarray
    vbar: np.ndarray = field(repr=False)
    outcomes: np.ndarray = field(repr=False)

    @property
    def bins(self) -> list[tuple]:
        return [
            ((lo, hi), x, y, z, int(n))
            for lo, hi, x, y, z, n in zip(self.vbar_lo, self.vbar_hi, self.x, self.y, self.z, self.count)
        ]

    def correlation(self, axis: str = "y") -> tuple[float, float]:
        """Pearson correlation of ``V̄`` with the readout along ``axis``, and its null stderr."""
        col = "xyz".index(axis)
        o = self.outcomes[:, col]
        n = o.size
        if np.std(o) == 0 or np.std(self.vbar) == 0:
            return 0.0, 1.0 / math.sqrt(max(n - 2, 1))
        r = float(np.corrcoef(self.vbar, o)[0, 1])
        return r, 1.0 / math.sqrt(n - 2)


def conditional_tomography(
    cfg: SimConfig,
    ensemble_size: int,
    decay_times,
    n_bins: int = 10,
    *,
    binning: str = "quantile",
    contrast: float = 1.0,
    rescale: bool = False,
    min_count: int = 50,
    ensemble: Ensemble | None = None,
    workers: int = 1,
) -> list[ConditionalTomogram]:
    """Bin runs by ``V̄ = sum(dV)`` up to each decay time and average readouts per bin.

    ``rescale`` divides projective means by ``contrast`` as done when
    correcting for imperfect readout fidelity.
    """
    if n_bins < 1:
        raise InvalidParameterError("n_bins must be positive")
    if ensemble is None and ensemble_size < n_bins * 50:
        raise InvalidParameterError(f"ensemble_size must be at least 50 per bin ({n_bins * 50})")
    steps = _steps(cfg, decay_times, "decay time")
    parts = []
    for ens in _chunks(cfg, ensemble_size, int(steps.max()), ensemble, workers):
        ok = ens.valid
        u = tomography_uniforms(cfg.seed, ens.indices[ok], 3 * steps.size).reshape(-1, steps.size, 3)
        vbar = np.stack([ens.integrated_signal(s)[ok] for s in steps], axis=1)
        comps = np.stack([ens.x[ok][:, steps], ens.y[ok][:, steps], ens.z[ok][:, steps]], axis=2)
        parts.append((vbar, comps, projective_outcomes(comps, u, contrast)))
    vbars, all_comps, all_outcomes = (np.concatenate(p) for p in zip(*parts))
    scale = 1.0 / contrast if rescale else 1.0
    out = []
    for j, s in enumerate(steps):
        vbar = vbars[:, j]
        comps = all_comps[:, j]
        outcomes = all_outcomes[:, j]
        edges = _bin_edges(vbar, n_bins, binning)
        b = _assign(vbar, edges)
        count = np.bincount(b, minlength=n_bins)
        with np.errstate(invalid="ignore", divide="ignore"):
            tomo = np.stack([np.bincount(b, outcomes[:, k], n_bins) for k in range(3)]) / count * scale
            true = np.stack([np.bincount(b, comps[:, k], n_bins) for k in range(3)]) / count
        under = count < min_count
        if under.any():
            log.warning("decay time %.3g s: %d bins below %d runs", s * cfg.dt, int(under.sum()), min_count)
        out.append(
            ConditionalTomogram(
                prep=cfg.initial_state,
                decay_time=float(s * cfg.dt),
                vbar_lo=edges[:-1],
                vbar_hi=edges[1:],
                count=count,
                x=tomo[0],
                y=tomo[1],
                z=tomo[2],
                x_true=true[0],
                y_true=true[1],
                z_true=true[2],
                underpopulated=under,
                vbar=vbar,
                outcomes=outcomes,
            )
        )
    return out


def arc_fit(x, z, degree: int = 3) -> tuple[np.ndarray, float]:
    """Fit a smooth one-parameter curve through ordered ``(x, z)`` points.

    Points (in ``V̄`` order) are parametrised by normalised chord length and
    ``x(u)``, ``z(u)`` are fitted with polynomials of ``degree``. Returns the
    fitted curve sampled at the points and the RMS of the 2D residuals.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    keep = np.isfinite(x) & np.isfinite(z)
    x, z = x[keep], z[keep]
    if x.size < 2:
        raise InvalidParameterError("need at least two finite points")
    chord = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(x), np.diff(z)))])
    u = chord / chord[-1] if chord[-1] > 0 else np.linspace(0.0, 1.0, x.size)
    deg = min(degree, x.size - 1)
    fitted = np.stack([np.polyval(np.polyfit(u, a, deg), u) for a in (x, z)], axis=1)
    resid = np.stack([x, z], axis=1) - fitted
    return fitted, float(np.sqrt(np.mean((resid**2).sum(axis=1))))


# -- back-action maps -----------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    """Rectangular cells over the X-Z plane."""

    x_min: float = -1.0
    x_max: float = 1.0
    nx: int = 8
    z_min: float = -1.0
    z_max: float = 1.0
    nz: int = 8

    def __post_init__(self):
        if self.nx < 1 or self.nz < 1 or not (self.x_max > self.x_min and self.z_max > self.z_min):
            raise InvalidParameterError(f"invalid grid {self}")

    @property
    def x_edges(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx + 1)

    @property
    def z_edges(self) -> np.ndarray:
        return np.linspace(self.z_min, self.z_max, self.nz + 1)

    def cell_of(self, x, z) -> np.ndarray:
        """Flat cell index ``ix*nz + iz``, or -1 outside the grid."""
        ix = np.floor((np.asarray(x) - self.x_min) / (self.x_max - self.x_min) * self.nx).astype(int)
        iz = np.floor((np.asarray(z) - self.z_min) / (self.z_max - self.z_min) * self.nz).astype(int)
        # the upper edges belong to the last cell
        ix = np.where(np.asarray(x) == self.x_max, self.nx - 1, ix)
        iz = np.where(np.asarray(z) == self.z_max, self.nz - 1, iz)
        inside = (ix >= 0) & (ix < self.nx) & (iz >= 0) & (iz < self.nz)
        return np.where(inside, ix * self.nz + iz, -1)

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        xc = 0.5 * (self.x_edges[:-1] + self.x_edges[1:])
        zc = 0.5 * (self.z_edges[:-1] + self.z_edges[1:])
        X, Z = np.meshgrid(xc, zc, indexing="ij")
        return X.ravel(), Z.ravel()


@dataclass(frozen=True, eq=False)
class BackActionMap:
    """Mean state change per cell, split by the sign of the probe signal.

    Arrays indexed ``[cell, sign]`` with sign 0 for ``dV < 0`` and 1 for
    ``dV >= 0``: ``count``, heralded start ``x_i``/``z_i``, arrows
    ``dx``/``dz`` and ``populated`` (count reached ``min_count``; arrows of
    other entries are NaN). ``cell_x``/``cell_z`` locate the cells.
    """

    cell_x: np.ndarray
    cell_z: np.ndarray
    count: np.ndarray
    x_i: np.ndarray
    z_i: np.ndarray
    dx: np.ndarray
    dz: np.ndarray
    populated: np.ndarray
    probe_dt: float
    dV_hist: Histogram
    herald: str

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.dx, self.dz)

    @property
    def n_cells(self) -> int:
        return self.cell_x.size


def backaction_map(
    cfg: SimConfig,
    ensemble_size: int,
    herald_times,
    grid: GridSpec | None = None,
    probe_dt: float = 40e-9,
    *,
    min_count: int = 20,
    herald: str = "state",
    vbar_bins: int = 10,
    estimator: str = "tracked",
    contrast: float = 1.0,
    ensemble: Ensemble | None = None,
    workers: int = 1,
) -> BackActionMap:
    """Back-action arrows ``(x_f - x_i, z_f - z_i)`` after a probe interval.

    With ``herald="state"`` every run at every herald time joins the grid
    cell holding its tracked state; with ``herald="vbar"`` runs are grouped
    by quantile bins of their integrated signal at each herald time, each
    group forming one cell placed at its mean heralded state. The final
    state is the mean tracked state (``estimator="tracked"``) or the mean of
    simulated projective readouts (``estimator="tomography"``).
    """
    if herald not in ("state", "vbar"):
        raise InvalidParameterError(f"herald must be 'state' or 'vbar', got {herald!r}")
    if estimator not in ("tracked", "tomography"):
        raise InvalidParameterError(f"estimator must be 'tracked' or 'tomography', got {estimator!r}")
    grid = grid or GridSpec()
    m = cfg.steps_for(probe_dt, "probe_dt")
    if m < 1:
        raise InvalidParameterError("probe_dt must cover at least one step")
    hs = _steps(cfg, herald_times, "herald time")
    if herald == "state":
        n_cells = grid.nx * grid.nz
        cell_x, cell_z = grid.centers()
    else:
        n_cells = hs.size * vbar_bins
    sums = np.zeros((5, n_cells, 2))  # count, x_i, z_i, x_f, z_f
    probe = _HistAccumulator(math.sqrt(cfg.gamma * m * cfg.dt) / 10)
    held = []

    for ens in _chunks(cfg, ensemble_size, int(hs.max()) + m, ensemble, workers):
        ok = ens.valid
        xi, zi = ens.x[ok][:, hs], ens.z[ok][:, hs]
        xf, zf = ens.x[ok][:, hs + m], ens.z[ok][:, hs + m]
        if estimator == "tomography":
            u = tomography_uniforms(cfg.seed, ens.indices[ok], 2 * hs.size).reshape(-1, hs.size, 2)
            xf = projective_outcomes(xf, u[:, :, 0], contrast) / contrast
            zf = projective_outcomes(zf, u[:, :, 1], contrast) / contrast
        dV = np.stack([ens.dV[ok, h : h + m].sum(axis=1) for h in hs], axis=1)
        probe.add(dV)
        if herald == "state":
            _accumulate(sums, grid.cell_of(xi, zi), dV, (xi, zi, xf, zf))
        else:
            vbar = np.stack([ens.integrated_signal(h)[ok] for h in hs], axis=1)
            held.append(np.stack([xi, zi, xf, zf, dV, vbar]))

    if herald == "vbar":
        xi, zi, xf, zf, dV, vbar = np.concatenate(held, axis=1)
        cell = np.empty(vbar.shape, dtype=int)
        for j in range(hs.size):
            cell[:, j] = j * vbar_bins + _assign(vbar[:, j], _bin_edges(vbar[:, j], vbar_bins, "quantile"))
        _accumulate(sums, cell, dV, (xi, zi, xf, zf))

    count = sums[0].astype(np.int64)
    populated = count >= max(min_count, 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums[1:] / sums[0]
    means[:, ~populated] = np.nan
    x_i, z_i, x_f, z_f = means
    if herald == "vbar":
        tot = count.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            cell_x = sums[1].sum(axis=1) / tot
            cell_z = sums[2].sum(axis=1) / tot
    return BackActionMap(
        cell_x=np.asarray(cell_x),
        cell_z=np.asarray(cell_z),
        count=count,
        x_i=x_i,
        z_i=z_i,
        dx=x_f - x_i,
        dz=z_f - z_i,
        populated=populated,
        probe_dt=m * cfg.dt,
        dV_hist=probe.result(),
        herald=herald,
    )


def _accumulate(sums: np.ndarray, cell: np.ndarray, dV: np.ndarray, values) -> None:
    inside = cell >= 0
    flat = (cell * 2 + (dV >= 0))[inside]
    n_bins = sums.shape[1] * 2
    sums[0] += np.bincount(flat, minlength=n_bins).reshape(-1, 2)
    for k, v in enumerate(values, start=1):
        sums[k] += np.bincount(flat, v[inside], n_bins).reshape(-1, 2)


class _HistAccumulator:
    """Streaming version of :func:`histogram` (same aligned bins)."""

    def __init__(self, width: float):
        self.width = width
        self.k0 = None
        self.counts = np.zeros(0, dtype=np.int64)

    def add(self, values) -> None:
        k = np.floor(np.asarray(values, dtype=float).ravel() / self.width).astype(np.int64)
        if k.size == 0:
            return
        lo = int(k.min()) if self.k0 is None else min(self.k0, int(k.min()))
        hi = int(k.max()) if self.k0 is None else max(self.k0 + self.counts.size - 1, int(k.max()))
        merged = np.zeros(hi - lo + 1, dtype=np.int64)
        if self.k0 is not None:
            merged[self.k0 - lo : self.k0 - lo + self.counts.size] = self.counts
        merged += np.bincount(k - lo, minlength=merged.size)
        self.k0, self.counts = lo, merged

    def result(self) -> Histogram:
        if self.k0 is None:
            return Histogram(np.empty(0), np.empty(0, dtype=np.int64))
        return Histogram((self.k0 + np.arange(self.counts.size + 1)) * self.width, self.counts)


# -- state histograms --------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StateHistograms:
    """Per-time 2D histograms over (x, z), each normalised to a peak of 1.

    ``counts[t, i, k]`` counts states in x-bin ``i`` and z-bin ``k``;
    ``x_min`` .. ``z_max`` are the per-time extremes of the ensemble.
    """

    times: np.ndarray
    x_edges: np.ndarray
    z_edges: np.ndarray
    counts: np.ndarray
    x_marginal: np.ndarray
    z_marginal: np.ndarray
    x_min: np.ndarray
    x_max: np.ndarray
    z_min: np.ndarray
    z_max: np.ndarray

    @property
    def density(self) -> np.ndarray:
        peak = self.counts.max(axis=(1, 2), keepdims=True)
        return self.counts / np.where(peak == 0, 1, peak)


def state_histograms(
    cfg: SimConfig,
    ensemble_size: int,
    times,
    *,
    bins: int = 41,
    extent: float = 1.2,
    ensemble: Ensemble | None = None,
    workers: int = 1,
) -> StateHistograms:
    """Distribution of tracked ``(x, z)`` at each requested time."""
    if ensemble is None and ensemble_size < 1000:
        raise InvalidParameterError("ensemble_size must be at least 1000")
    steps = _steps(cfg, times, "time")
    edges = np.linspace(-extent, extent, bins + 1)
    counts = np.zeros((steps.size, bins, bins), dtype=np.int64)
    lo = np.full((2, steps.size), np.inf)
    hi = np.full((2, steps.size), -np.inf)
    for ens in _chunks(cfg, ensemble_size, int(steps.max()), ensemble, workers):
        ok = ens.valid
        for j, s in enumerate(steps):
            x, z = ens.x[ok, s], ens.z[ok, s]
            counts[j] += np.histogram2d(x, z, bins=(edges, edges))[0].astype(np.int64)
            lo[:, j] = np.minimum(lo[:, j], (x.min(), z.min()))
            hi[:, j] = np.maximum(hi[:, j], (x.max(), z.max()))
    ext = (lo[0], hi[0], lo[1], hi[1])
    xm = counts.sum(axis=2)
    zm = counts.sum(axis=1)
    return StateHistograms(
        steps * cfg.dt,
        edges,
        edges.copy(),
        counts,
        xm / np.maximum(xm.max(axis=1, keepdims=True), 1),
        zm / np.maximum(zm.max(axis=1, keepdims=True), 1),
        *ext,
    )


# -- tomographic validation ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ValidationReport:
    """Projective averages of runs whose tracked state sits near a reference path.

    ``x_cond``/``z_cond`` are NaN where the selection at that time was empty
    (see ``gaps``). ``scatter`` holds the global comparison of readout means
    against predicted components, per axis: bin centres, mean predicted,
    mean readout, count; ``slope``/``intercept`` are least-squares fits of
    readout on prediction over all (run, time) pairs.
    """

    times: np.ndarray
    x_ref: np.ndarray
    z_ref: np.ndarray
    x_cond: np.ndarray
    z_cond: np.ndarray
    count: np.ndarray
    window: float
    scatter: dict
    slope: dict
    slope_stderr: dict
    intercept: dict

    @property
    def gaps(self) -> np.ndarray:
        return self.count == 0


def _ols(n, sp, so, spp, spo, soo) -> tuple[float, float, float]:
    """Least-squares line of readout on prediction from accumulated moments."""
    sxx = spp - sp * sp / n
    sxy = spo - sp * so / n
    syy = soo - so * so / n
    slope = sxy / sxx
    icpt = (so - slope * sp) / n
    rss = max(syy - slope * sxy, 0.0)
    return float(slope), float(icpt), float(math.sqrt(rss / (n - 2) / sxx))


def tomographic_validation(
    cfg: SimConfig,
    ensemble_size: int,
    window: float = 0.12,
    *,
    reference=0,
    times=None,
    contrast: float = 1.0,
    scatter_bins: int = 20,
    ensemble: Ensemble | None = None,
    workers: int = 1,
) -> ValidationReport:
    """Validate tracked states against simulated projective readout.

    ``reference`` is an ensemble row (its own run is excluded from the
    selection) or a pair of arrays ``(x_ref, z_ref)`` over steps
    ``0 .. cfg.n_steps``. ``times`` default to every step after 0.
    """
    if not window > 0:
        raise InvalidParameterError(f"window must be positive, got {window}")
    steps = np.arange(1, cfg.n_steps + 1) if times is None else _steps(cfg, times, "time")
    n_steps = int(steps.max())
    ref_index = None
    if isinstance(reference, (int, np.integer)):
        ref_index = int(reference)
        if ensemble is not None:
            row = int(np.flatnonzero(ensemble.indices == ref_index)[0])
            x_ref, z_ref = ensemble.x[row], ensemble.z[row]
        else:
            ref, _ = simulate_trajectory(cfg.replace(n_steps=n_steps), substream(cfg.seed, ref_index))
            x_ref, z_ref = ref.x, ref.z
    else:
        x_ref, z_ref = (np.asarray(a, dtype=float) for a in reference)
    x_ref, z_ref = x_ref[steps], z_ref[steps]

    edges = np.linspace(-1.0, 1.0, scatter_bins + 1)
    count = np.zeros(steps.size, dtype=np.int64)
    sx = np.zeros(steps.size)
    sz = np.zeros(steps.size)
    # per axis: bin count, bin sum of prediction, bin sum of readout
    bins = {a: np.zeros((3, scatter_bins)) for a in "xz"}
    # per axis: n, sum p, sum o, sum pp, sum po, sum oo
    moments = {a: np.zeros(6) for a in "xz"}
    for ens in _chunks(cfg, ensemble_size, n_steps, ensemble, workers):
        keep = ens.valid & (ens.indices != ref_index)
        X, Z = ens.x[keep][:, steps], ens.z[keep][:, steps]
        u = tomography_uniforms(cfg.seed, ens.indices[keep], 2 * steps.size).reshape(-1, steps.size, 2)
        ox = projective_outcomes(X, u[:, :, 0], contrast) / contrast
        oz = projective_outcomes(Z, u[:, :, 1], contrast) / contrast
        sel = (np.abs(X - x_ref) <= window) & (np.abs(Z - z_ref) <= window)
        count += sel.sum(axis=0)
        sx += (ox * sel).sum(axis=0)
        sz += (oz * sel).sum(axis=0)
        for axis, pred, obs in (("x", X.ravel(), ox.ravel()), ("z", Z.ravel(), oz.ravel())):
            b = np.clip(np.searchsorted(edges[1:-1], pred, side="right"), 0, scatter_bins - 1)
            bins[axis] += [np.bincount(b, None, scatter_bins), np.bincount(b, pred, scatter_bins), np.bincount(b, obs, scatter_bins)]
            moments[axis] += [pred.size, pred.sum(), obs.sum(), pred @ pred, pred @ obs, obs @ obs]
    with np.errstate(invalid="ignore", divide="ignore"):
        x_cond = sx / count
        z_cond = sz / count
    if (count == 0).any():
        log.warning("empty selection at %d of %d times", int((count == 0).sum()), count.size)

    scatter, slope, se, icpt = {}, {}, {}, {}
    for axis in "xz":
        n, mp, mo = bins[axis]
        with np.errstate(invalid="ignore", divide="ignore"):
            scatter[axis] = {
                "center": 0.5 * (edges[:-1] + edges[1:]),
                "predicted": mp / n,
                "measured": mo / n,
                "count": n.astype(np.int64),
            }
        slope[axis], icpt[axis], se[axis] = _ols(*moments[axis])
    return ValidationReport(
        times=steps * cfg.dt,
        x_ref=x_ref,
        z_ref=z_ref,
        x_cond=x_cond,
        z_cond=z_cond,
        count=count,
        window=float(window),
        scatter=scatter,
        slope=slope,
        slope_stderr=se,
        intercept=icpt,
    )


def ensemble_mean_check(ens: Ensemble, times=None) -> dict:
    """Ensemble means, standard errors and the closed-form decay at ``times``."""
    steps = np.arange(ens.n_steps + 1) if times is None else _steps(ens.cfg, times, "time")
    ok = ens.valid
    n = int(ok.sum())
    out = {"times": steps * ens.cfg.dt, "n": n}
    ux, uy, uz = unconditional_curve(ens.cfg.initial_state, steps * ens.cfg.dt, ens.cfg.gamma)
    for name, ref in (("x", ux), ("y", uy), ("z", uz)):
        a = getattr(ens, name)[ok][:, steps]
        out[name] = a.mean(axis=0)
        out[name + "_stderr"] = a.std(axis=0, ddof=1) / math.sqrt(n)
        out[name + "_ref"] = ref
    return out
