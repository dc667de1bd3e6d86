"""Conditioned-state integration under continuous homodyne detection of decay.

One Itô Euler-Maruyama step maps the pre-step Bloch vector ``(x, y, z)`` and
a homodyne increment ``dV`` to::

    I  = dV - gamma*sqrt(eta)*x*dt                       (innovation)
    dx = -(gamma/2) x dt + sqrt(eta) (1 - z - x^2) I
    dy = -(gamma/2) y dt - sqrt(eta) x y I
    dz =  gamma (1 - z) dt + sqrt(eta) x (1 - z) I

with ``z = +1`` the ground state. In simulation mode the increment is
synthesised as ``dV = sqrt(eta)*gamma*x*dt + sqrt(gamma)*dW`` from the
pre-step ``x``; in tracking mode it is read from a record. States are never
renormalised; a divergence guard only rejects runaway integration.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .core import (
    BlochState,
    DensityMatrix2,
    HomodyneRecord,
    IntegrationDivergedError,
    InvalidParameterError,
    SimConfig,
    Trajectory,
    UnsupportedStateError,
    _draw_increments,
    substream,
)

#: Prefactor of the divergence guard ``|r| <= 1 + c*sqrt(n*gamma*dt)``.
DIVERGENCE_C = 5.0

_CHUNK = 8192


def divergence_bound(gamma_dt: float, n: int | np.ndarray, c: float = DIVERGENCE_C):
    """Allowed excursion of ``|r|`` above 1 after ``n`` steps.

    A single step can move the state by ``O(sqrt(gamma*dt))``, so the bound
    grows diffusively with the step count.
    """
    return c * np.sqrt(n * gamma_dt)


def innovation(x, dV, gamma: float, eta: float, dt: float):
    """Measured increment minus its predicted mean ``sqrt(eta)*gamma*x*dt``."""
    return dV - gamma * math.sqrt(eta) * x * dt


def bloch_increment(x, y, z, dV, gamma: float, eta: float, dt: float):
    """``(dx, dy, dz)`` for one step; works on floats and on arrays alike."""
    se = math.sqrt(eta)
    inn = dV - gamma * se * x * dt
    dx = -(gamma / 2) * x * dt + se * (1 - z - x * x) * inn
    dy = -(gamma / 2) * y * dt - se * x * y * inn
    dz = gamma * (1 - z) * dt + se * x * (1 - z) * inn
    return dx, dy, dz


def step_bloch(state: BlochState, dV: float, cfg: SimConfig) -> BlochState:
    """Advance ``state`` by one step given the increment ``dV``. No renormalisation."""
    dx, dy, dz = bloch_increment(state.x, state.y, state.z, dV, cfg.gamma, cfg.eta, cfg.dt)
    return BlochState(state.x + dx, state.y + dy, state.z + dz)


def step_density(rho: DensityMatrix2, dV: float, cfg: SimConfig) -> DensityMatrix2:
    """Population/coherence recursion for a real coherence.

    Equivalent to :func:`step_bloch` with ``y = 0`` under ``z = 1 - 2 rho11``,
    ``x = 2 rho01``. A complex coherence is rejected; use ``step_bloch``.
    """
    if rho.rho01.imag != 0.0:
        raise UnsupportedStateError(
            "step_density handles real coherences only (Im rho01 = 0); use step_bloch for y != 0"
        )
    g, dt, se = cfg.gamma, cfg.dt, math.sqrt(cfg.eta)
    p11 = rho.rho11
    p01 = rho.rho01.real
    meas = dV - se * g * 2 * p01 * dt
    new11 = p11 - g * p11 * dt - se * meas * (2 * p01 * p11)
    new01 = p01 - g * p01 / 2 * dt + se * meas * (p11 - 2 * p01 * p01)
    return DensityMatrix2(new11, complex(new01, 0.0))


def unconditional_state(initial: BlochState, t: float, gamma: float) -> BlochState:
    """Closed-form ensemble (Lindblad) state at time ``t``."""
    if t < 0:
        raise InvalidParameterError(f"t must be non-negative, got {t}")
    a = math.exp(-gamma * t / 2)
    return BlochState(initial.x * a, initial.y * a, 1.0 - (1.0 - initial.z) * math.exp(-gamma * t))


def unconditional_curve(initial: BlochState, times, gamma: float):
    """Vectorised :func:`unconditional_state`; returns ``(x, y, z)`` arrays."""
    t = np.asarray(times, dtype=float)
    a = np.exp(-gamma * t / 2)
    return initial.x * a, initial.y * a, 1.0 - (1.0 - initial.z) * np.exp(-gamma * t)


def unconditional_discrete(initial: BlochState, n_steps, gamma_dt: float):
    """Exact ensemble mean of the discrete recursion after ``n_steps`` steps.

    The innovation has zero mean given the pre-step state, so the mean obeys
    the noise-free map ``x <- (1 - gamma dt/2) x``, ``1 - z <- (1 - gamma dt)(1 - z)``.
    """
    n = np.asarray(n_steps, dtype=float)
    a = (1.0 - gamma_dt / 2) ** n
    return initial.x * a, initial.y * a, 1.0 - (1.0 - initial.z) * (1.0 - gamma_dt) ** n


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Trajectories of one configuration, row ``k`` being ensemble index ``indices[k]``.

    ``x``, ``y``, ``z`` have shape ``(n, n_steps + 1)`` and ``dV`` shape
    ``(n, n_steps)``. Rows flagged in ``diverged`` hold NaN from the step at
    which the divergence guard tripped.
    """

    cfg: SimConfig
    indices: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    dV: np.ndarray
    diverged: np.ndarray

    def __len__(self):
        return self.indices.size

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.x.shape[1]) * self.cfg.dt

    @property
    def n_steps(self) -> int:
        return self.dV.shape[1]

    @property
    def valid(self) -> np.ndarray:
        return ~self.diverged

    def integrated_signal(self, step: int) -> np.ndarray:
        """``V̄`` after ``step`` steps: the sum of the first ``step`` increments."""
        return self.dV[:, :step].sum(axis=1)

    def trajectory(self, k: int) -> Trajectory:
        rec = HomodyneRecord(self.cfg.gamma, self.cfg.eta, self.cfg.dt, self.dV[k])
        return Trajectory(self.times, self.x[k], self.y[k], self.z[k], source_record=rec)

    def norm(self) -> np.ndarray:
        return np.sqrt(self.x**2 + self.y**2 + self.z**2)

    def max_excursion(self) -> np.ndarray:
        """Per-trajectory ``max_t | |r(t)| - 1 |``; ``inf`` for diverged rows."""
        ok = self.valid
        out = np.full(len(self), np.inf)
        out[ok] = np.abs(self.norm()[ok] - 1.0).max(axis=1)
        return out


def _integrate(x0, y0, z0, increments, cfg: SimConfig, *, simulate: bool, on_divergence: str, indices=None):
    """Shared kernel for simulation (increments are dW) and tracking (increments are dV)."""
    n, steps = increments.shape
    gamma, eta, dt = cfg.gamma, cfg.eta, cfg.dt
    se = math.sqrt(eta)
    sg = math.sqrt(gamma)
    xs = np.empty((n, steps + 1))
    ys = np.empty((n, steps + 1))
    zs = np.empty((n, steps + 1))
    dVs = np.empty((n, steps)) if simulate else increments
    xs[:, 0], ys[:, 0], zs[:, 0] = x0, y0, z0
    diverged = np.zeros(n, dtype=bool)
    x, y, z = xs[:, 0], ys[:, 0], zs[:, 0]
    bounds = 1.0 + divergence_bound(gamma * dt, np.arange(1, steps + 1))
    for k in range(steps):
        if simulate:
            dV = se * gamma * x * dt + sg * increments[:, k]
            dVs[:, k] = dV
        else:
            dV = increments[:, k]
        dx, dy, dz = bloch_increment(x, y, z, dV, gamma, eta, dt)
        x = x + dx
        y = y + dy
        z = z + dz
        r = np.sqrt(x * x + y * y + z * z)
        bad = ~(r <= bounds[k]) & ~diverged
        if bad.any():
            if on_divergence == "raise":
                j = int(np.flatnonzero(bad)[0])
                traj = None if indices is None else int(indices[j])
                raise IntegrationDivergedError(k + 1, float(r[j]), float(bounds[k] - 1.0), traj)
            diverged |= bad
            x = np.where(diverged, np.nan, x)
            y = np.where(diverged, np.nan, y)
            z = np.where(diverged, np.nan, z)
        xs[:, k + 1], ys[:, k + 1], zs[:, k + 1] = x, y, z
    return xs, ys, zs, dVs, diverged


def _check_policy(on_divergence: str):
    if on_divergence not in ("raise", "mask"):
        raise InvalidParameterError(f"on_divergence must be 'raise' or 'mask', got {on_divergence!r}")


def simulate_trajectory(cfg: SimConfig, rng: np.random.Generator | None = None):
    """Simulate one run; returns ``(Trajectory, HomodyneRecord)``.

    ``rng`` defaults to substream 0 of ``cfg.seed``; passing
    ``substream(cfg.seed, i)`` reproduces row ``i`` of :func:`simulate_ensemble`.
    """
    if rng is None:
        rng = substream(cfg.seed, 0)
    dW = _draw_increments(rng, cfg.n_steps, cfg.dt)[None, :]
    s = cfg.initial_state
    xs, ys, zs, dVs, _ = _integrate(s.x, s.y, s.z, dW, cfg, simulate=True, on_divergence="raise")
    record = HomodyneRecord(cfg.gamma, cfg.eta, cfg.dt, dVs[0])
    return Trajectory(cfg.times, xs[0], ys[0], zs[0], source_record=record), record


def track_trajectory(record: HomodyneRecord, initial: BlochState) -> Trajectory:
    """Replay the update map over a measured (or simulated) record."""
    if len(record) == 0:
        raise InvalidParameterError("record is empty")
    initial.validate()
    cfg = SimConfig(record.gamma, record.eta, record.dt, len(record), 0, initial)
    xs, ys, zs, _, _ = _integrate(
        initial.x, initial.y, initial.z, record.samples[None, :], cfg, simulate=False, on_divergence="raise"
    )
    return Trajectory(cfg.times, xs[0], ys[0], zs[0], source_record=record)


def _simulate_chunk(cfg: SimConfig, start: int, stop: int, on_divergence: str):
    idx = np.arange(start, stop)
    dW = np.empty((idx.size, cfg.n_steps))
    for row, i in enumerate(idx):
        dW[row] = _draw_increments(substream(cfg.seed, int(i)), cfg.n_steps, cfg.dt)
    s = cfg.initial_state
    return _integrate(s.x, s.y, s.z, dW, cfg, simulate=True, on_divergence=on_divergence, indices=idx)


def iter_ensemble(
    cfg: SimConfig,
    n_traj: int,
    *,
    start: int = 0,
    workers: int = 1,
    on_divergence: str = "raise",
    chunk: int = _CHUNK,
):
    """Yield the ensemble as consecutive :class:`Ensemble` chunks in index order.

    Keeps memory bounded by ``chunk`` trajectories (times ``workers``).
    """
    _check_policy(on_divergence)
    if n_traj < 1:
        raise InvalidParameterError(f"n_traj must be positive, got {n_traj}")
    stop = start + n_traj
    bounds = [(a, min(a + chunk, stop)) for a in range(start, stop, chunk)]

    def wrap(a, b, part):
        xs, ys, zs, dVs, div = part
        return Ensemble(cfg, np.arange(a, b), xs, ys, zs, dVs, div)

    if workers > 1 and len(bounds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for i in range(0, len(bounds), workers):
                group = bounds[i : i + workers]
                args = zip(*[(cfg, a, b, on_divergence) for a, b in group])
                for (a, b), part in zip(group, pool.map(_simulate_chunk, *args)):
                    yield wrap(a, b, part)
    else:
        for a, b in bounds:
            yield wrap(a, b, _simulate_chunk(cfg, a, b, on_divergence))


def simulate_ensemble(
    cfg: SimConfig,
    n_traj: int,
    *,
    start: int = 0,
    workers: int = 1,
    on_divergence: str = "raise",
) -> Ensemble:
    """Simulate ensemble indices ``start .. start + n_traj - 1``.

    Each index owns its own noise substream, so any row is identical to the
    corresponding :func:`simulate_trajectory` call and results do not depend
    on ``workers``. ``on_divergence="mask"`` flags runaway rows instead of
    raising.
    """
    parts = list(iter_ensemble(cfg, n_traj, start=start, workers=workers, on_divergence=on_divergence))
    if len(parts) == 1:
        return parts[0]
    return Ensemble(
        cfg,
        np.concatenate([p.indices for p in parts]),
        *(np.concatenate([getattr(p, k) for p in parts]) for k in ("x", "y", "z", "dV", "diverged")),
    )


def track_ensemble(dV: np.ndarray, cfg: SimConfig, *, on_divergence: str = "raise") -> Ensemble:
    """Track many records at once from ``cfg.initial_state``; ``dV`` is ``(n, steps)``."""
    _check_policy(on_divergence)
    dV = np.atleast_2d(np.asarray(dV, dtype=float))
    cfg = cfg.replace(n_steps=dV.shape[1])
    s = cfg.initial_state
    xs, ys, zs, dVs, div = _integrate(s.x, s.y, s.z, dV, cfg, simulate=False, on_divergence=on_divergence)
    return Ensemble(cfg, np.arange(dV.shape[0]), xs, ys, zs, np.array(dVs), div)
