"""Domain types, random streams and configuration shared by the toolkit.

Sign convention: ``z = +1`` is the GROUND state and ``z = -1`` the excited
state, so that ``z = 1 - 2*rho11`` with ``rho11`` the excited population.
Several textbooks use the opposite orientation; every routine in this
package uses this one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

#: Purity tolerance for analytically constructed states.
EPS_PURITY = 1e-9

#: Substream tags. A trajectory's measurement noise and its simulated
#: projective readout come from different, non-overlapping streams.
NOISE_STREAM = 0
TOMOGRAPHY_STREAM = 1

_SEED_MAX = 2**64


class HomodyneError(Exception):
    """Base class for errors raised by this package."""


class InvalidParameterError(HomodyneError, ValueError):
    pass


class UnsupportedStateError(HomodyneError, ValueError):
    pass


class IntegrationDivergedError(HomodyneError, ArithmeticError):
    """The integrated Bloch vector left the admissible region.

    ``step`` is the index of the first offending step and ``trajectory`` the
    ensemble index (``None`` for single-trajectory calls).
    """

    def __init__(self, step: int, norm: float, bound: float, trajectory: int | None = None):
        self.step = step
        self.norm = norm
        self.bound = bound
        self.trajectory = trajectory
        where = f"step {step}" if trajectory is None else f"trajectory {trajectory}, step {step}"
        super().__init__(f"integration diverged at {where}: |r| = {norm:.6g} exceeds 1 + {bound:.6g}")


@dataclass(frozen=True)
class BlochState:
    """Conditioned emitter state as expectation values of the Pauli operators."""

    x: float
    y: float = 0.0
    z: float = 1.0

    def __post_init__(self):
        for name in ("x", "y", "z"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise InvalidParameterError(f"{name} must be finite, got {v!r}")
            object.__setattr__(self, name, float(v))

    @property
    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)

    def validate(self, eps: float = EPS_PURITY) -> "BlochState":
        if self.norm > 1.0 + eps:
            raise InvalidParameterError(f"Bloch vector {self} lies outside the unit ball (|r| = {self.norm})")
        return self

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @classmethod
    def from_label(cls, label: str) -> "BlochState":
        """Cardinal states by axis label: ``+x``, ``-x``, ``+y``, ``-y``, ``+z``, ``-z``.

        ``+z``/``ground``/``g`` is the ground state, ``-z``/``excited``/``e``
        the excited state.
        """
        key = label.strip().lower()
        aliases = {"ground": "+z", "g": "+z", "excited": "-z", "e": "-z"}
        key = aliases.get(key, key)
        if len(key) == 1:
            key = "+" + key
        table = {
            "+x": (1.0, 0.0, 0.0),
            "-x": (-1.0, 0.0, 0.0),
            "+y": (0.0, 1.0, 0.0),
            "-y": (0.0, -1.0, 0.0),
            "+z": (0.0, 0.0, 1.0),
            "-z": (0.0, 0.0, -1.0),
        }
        if key not in table:
            raise InvalidParameterError(f"unknown state label {label!r}")
        return cls(*table[key])

    @classmethod
    def parse(cls, text: str) -> "BlochState":
        """Parse a label (``-z``) or a comma-separated triple (``0.5,0,0.2``)."""
        if "," in text:
            parts = [float(p) for p in text.split(",")]
            if len(parts) != 3:
                raise InvalidParameterError(f"expected x,y,z, got {text!r}")
            return cls(*parts).validate()
        return cls.from_label(text)

    def to_density(self) -> "DensityMatrix2":
        return DensityMatrix2(rho11=(1.0 - self.z) / 2.0, rho01=complex(self.x / 2.0, -self.y / 2.0))


GROUND = BlochState(0.0, 0.0, 1.0)
EXCITED = BlochState(0.0, 0.0, -1.0)


@dataclass(frozen=True)
class DensityMatrix2:
    """Two-level density matrix by its excited population and coherence.

    ``z = 1 - 2*rho11``, ``x = 2*Re(rho01)`` and ``y = -2*Im(rho01)``, where
    ``rho01 = <g|rho|e>`` and ``sigma_- = |g><e|``.
    """

    rho11: float
    rho01: complex = 0j

    def __post_init__(self):
        object.__setattr__(self, "rho11", float(self.rho11))
        object.__setattr__(self, "rho01", complex(self.rho01))

    def validate(self, eps: float = EPS_PURITY) -> "DensityMatrix2":
        p = self.rho11
        if not (-eps <= p <= 1.0 + eps):
            raise InvalidParameterError(f"rho11 = {p} outside [0, 1]")
        if abs(self.rho01) ** 2 > p * (1.0 - p) + eps:
            raise InvalidParameterError("coherence exceeds positivity bound |rho01|^2 <= rho11 (1 - rho11)")
        return self

    def to_bloch(self) -> BlochState:
        return BlochState(2.0 * self.rho01.real, -2.0 * self.rho01.imag, 1.0 - 2.0 * self.rho11)


@dataclass(frozen=True)
class SimConfig:
    """Physical and numerical parameters of one simulated experiment.

    gamma : radiative decay rate, 1/s
    eta : quantum efficiency in [0, 1]
    dt : time step, s
    n_steps : number of steps
    seed : master seed, 0 <= seed < 2**64
    initial_state : preparation
    """

    gamma: float = 2.3e6
    eta: float = 0.3
    dt: float = 20e-9
    n_steps: int = 100
    seed: int = 0
    initial_state: BlochState = field(default_factory=lambda: EXCITED)

    def __post_init__(self):
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise InvalidParameterError(f"gamma must be positive, got {self.gamma}")
        if not (0.0 <= self.eta <= 1.0):
            raise InvalidParameterError(f"eta must lie in [0, 1], got {self.eta}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise InvalidParameterError(f"dt must be positive, got {self.dt}")
        if self.gamma * self.dt >= 0.5:
            raise InvalidParameterError(f"gamma*dt = {self.gamma * self.dt:.3g} must be below 0.5")
        if int(self.n_steps) != self.n_steps or self.n_steps < 0:
            raise InvalidParameterError(f"n_steps must be a non-negative integer, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "seed", check_seed(self.seed))
        if isinstance(self.initial_state, str):
            object.__setattr__(self, "initial_state", BlochState.parse(self.initial_state))
        self.initial_state.validate()

    @property
    def gamma_dt(self) -> float:
        return self.gamma * self.dt

    @property
    def duration(self) -> float:
        return self.n_steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def replace(self, **changes) -> "SimConfig":
        from dataclasses import replace

        return replace(self, **changes)

    def steps_for(self, duration: float, what: str = "duration") -> int:
        """Number of whole steps in ``duration``; rejects non-multiples of dt."""
        return steps_in(duration, self.dt, what)


def steps_in(duration: float, dt: float, what: str = "duration") -> int:
    n = duration / dt
    k = int(round(n))
    if k < 0 or abs(n - k) > 1e-6 * max(1.0, abs(n)):
        raise InvalidParameterError(f"{what} = {duration!r} s is not a multiple of dt = {dt!r} s")
    return k


@dataclass(frozen=True, eq=False)
class HomodyneRecord:
    """Dimensionless homodyne increments ``dV``, one per time step."""

    gamma: float
    eta: float
    dt: float
    samples: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.samples, dtype=np.float64)
        if arr.ndim != 1:
            raise InvalidParameterError("record samples must be one-dimensional")
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def __len__(self):
        return self.samples.size

    def __eq__(self, other):
        if not isinstance(other, HomodyneRecord):
            return NotImplemented
        return (
            self.gamma == other.gamma
            and self.eta == other.eta
            and self.dt == other.dt
            and np.array_equal(self.samples, other.samples)
        )

    @property
    def integrated(self) -> float:
        """Integrated signal, the sum of all increments."""
        return float(self.samples.sum())

    def variance_ratio(self) -> float:
        """Empirical per-step variance over the nominal ``gamma*dt``.

        Diagnostic only; records deviating from 1 are still accepted.
        """
        if self.samples.size < 2:
            return float("nan")
        return float(self.samples.var(ddof=1) / (self.gamma * self.dt))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Conditioned states at ``times``; ``x``, ``y``, ``z`` have length n_steps + 1."""

    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    source_record: HomodyneRecord | None = None

    def __post_init__(self):
        for name in ("times", "x", "y", "z"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.times.size
        if not (self.x.size == self.y.size == self.z.size == n):
            raise InvalidParameterError("trajectory arrays must share one length")

    def __len__(self):
        return self.times.size

    def __eq__(self, other):
        if not isinstance(other, Trajectory):
            return NotImplemented
        return all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("times", "x", "y", "z"))

    @property
    def states(self) -> list[BlochState]:
        return [BlochState(a, b, c) for a, b, c in zip(self.x, self.y, self.z)]

    def state(self, i: int) -> BlochState:
        return BlochState(self.x[i], self.y[i], self.z[i])

    @property
    def norm(self) -> np.ndarray:
        return np.sqrt(self.x**2 + self.y**2 + self.z**2)


def check_seed(seed) -> int:
    if isinstance(seed, bool) or int(seed) != seed:
        raise InvalidParameterError(f"seed must be an integer, got {seed!r}")
    seed = int(seed)
    if not 0 <= seed < _SEED_MAX:
        raise InvalidParameterError(f"seed must lie in [0, 2**64), got {seed}")
    return seed


def substream(seed: int, index: int = 0, stream: int = NOISE_STREAM) -> np.random.Generator:
    """Independent generator for ensemble member ``index`` under a master seed.

    Streams are keyed by ``SeedSequence(seed, spawn_key=(stream, index))``, so
    member ``i`` draws the same numbers whatever the ensemble size or the
    way indices are split among workers.
    """
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=(int(stream), int(index)))
    return np.random.Generator(np.random.PCG64(ss))


def wiener_increments(seed: int, n: int, dt: float, index: int = 0) -> np.ndarray:
    """``n`` Wiener increments ``dW ~ Normal(0, dt)`` from substream ``index``.

    Draws come from numpy's ziggurat standard-normal sampler scaled by
    ``sqrt(dt)``.
    """
    if not dt > 0:
        raise InvalidParameterError(f"dt must be positive, got {dt}")
    if n < 0:
        raise InvalidParameterError(f"n must be non-negative, got {n}")
    return _draw_increments(substream(seed, index), int(n), dt)


def _draw_increments(rng: np.random.Generator, n: int, dt: float) -> np.ndarray:
    return rng.standard_normal(n) * math.sqrt(dt)
