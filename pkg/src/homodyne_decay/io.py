"""Record files, run configuration, manifests and CSV tables.

Binary record layout (little-endian)::

    magic        8 bytes  b"HDREC\\x00\\x00\\x00"
    version      uint32   (1)
    reserved     uint32   (0)
    gamma_per_s  float64
    eta          float64
    dt_s         float64
    n_samples    uint64
    body         n_samples x float64   (the dV sequence)

The text form carries the same header as ``# key=value`` lines followed by
one ``repr`` float per line, which round-trips at full double precision.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import struct
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .core import BlochState, HomodyneError, HomodyneRecord, InvalidParameterError, SimConfig

MAGIC = b"HDREC\x00\x00\x00"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sII3dQ")
_TEXT_TAG = "# homodyne-record"


class RecordFormatError(HomodyneError, ValueError):
    pass


class MalformedHeaderError(RecordFormatError):
    pass


class LengthMismatchError(RecordFormatError):
    pass


class UnknownVersionError(RecordFormatError):
    pass


# -- records ---------------------------------------------------------------------


def write_record(record: HomodyneRecord, path, form: str = "binary") -> Path:
    path = Path(path)
    if form == "binary":
        head = _HEADER.pack(MAGIC, FORMAT_VERSION, 0, record.gamma, record.eta, record.dt, len(record))
        with open(path, "wb") as fh:
            fh.write(head)
            fh.write(record.samples.astype("<f8").tobytes())
    elif form == "text":
        lines = [
            f"{_TEXT_TAG}",
            f"# format_version={FORMAT_VERSION}",
            f"# gamma_per_s={record.gamma!r}",
            f"# eta={record.eta!r}",
            f"# dt_s={record.dt!r}",
            f"# n_samples={len(record)}",
        ]
        lines.extend(repr(float(v)) for v in record.samples)
        path.write_text("\n".join(lines) + "\n")
    else:
        raise InvalidParameterError(f"unknown record form {form!r}")
    return path


def read_record(path) -> HomodyneRecord:
    """Read a binary or text record; the form is detected from the first bytes."""
    data = Path(path).read_bytes()
    if data[:8] == MAGIC:
        return _parse_binary(data)
    if data[:1] == b"#":
        return _parse_text(data.decode("utf-8"))
    raise MalformedHeaderError(f"{path}: not a homodyne record (bad magic)")


def _parse_binary(data: bytes) -> HomodyneRecord:
    if len(data) < _HEADER.size:
        raise MalformedHeaderError(f"binary header truncated ({len(data)} of {_HEADER.size} bytes)")
    _, version, _, gamma, eta, dt, n = _HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise UnknownVersionError(f"unknown record format version {version}")
    body = data[_HEADER.size :]
    if len(body) != 8 * n:
        raise LengthMismatchError(f"header announces {n} samples, body holds {len(body) / 8:g}")
    return HomodyneRecord(gamma, eta, dt, np.frombuffer(body, dtype="<f8").astype(np.float64))


def _parse_text(text: str) -> HomodyneRecord:
    header = {}
    values = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                key, _, val = body.partition("=")
                header[key.strip()] = val.strip()
            continue
        try:
            values.append(float(line))
        except ValueError:
            raise MalformedHeaderError(f"line {lineno}: not a number: {line!r}") from None
    try:
        version = int(header.get("format_version", FORMAT_VERSION))
        gamma = float(header["gamma_per_s"])
        eta = float(header["eta"])
        dt = float(header["dt_s"])
        n = int(header["n_samples"])
    except (KeyError, ValueError) as exc:
        raise MalformedHeaderError(f"text header incomplete or invalid: {exc}") from None
    if version != FORMAT_VERSION:
        raise UnknownVersionError(f"unknown record format version {version}")
    if len(values) != n:
        raise LengthMismatchError(f"header announces {n} samples, body holds {len(values)}")
    return HomodyneRecord(gamma, eta, dt, np.array(values, dtype=np.float64))


# -- run configuration ------------------------------------------------------------------


def _floats(text) -> tuple[float, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    return tuple(float(v) for v in str(text).replace(";", ",").split(",") if v.strip())


def _ints(text) -> tuple[int, ...]:
    return tuple(int(v) for v in _floats(text))


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt(conv):
    def parse(text):
        if text is None or (isinstance(text, str) and text.strip().lower() in ("", "none")):
            return None
        return conv(text)

    return parse


@dataclasses.dataclass
class RunConfig:
    """Everything a CLI run depends on. Keys double as ``--key`` flags."""

    gamma: float = 2.3e6
    eta: float = 0.3
    dt: float = 20e-9
    steps: int = 100
    seed: int = 0
    init: str = "-z"
    ensemble: int = 900_000
    workers: int = 1
    bins: int = 10
    binning: str = "quantile"
    decay_times: tuple = (80e-9, 160e-9, 320e-9, 640e-9, 960e-9)
    thresholds: tuple | None = None
    times: tuple | None = None
    herald: str = "state"
    herald_times: tuple | None = None
    vbar_bins: int = 10
    grid: tuple = (8, 8)
    probe_dt: float = 40e-9
    min_count: int = 20
    estimator: str = "tracked"
    samples: int = 100_000
    integration_dt: float | None = None
    window: float = 0.12
    reference: int = 0
    contrast: float = 1.0
    rescale: bool = False
    record: str | None = None
    format: str = "binary"
    analytic: bool = False
    figures: bool = True
    out: str = "out"

    def sim_config(self, **changes) -> SimConfig:
        base = dict(
            gamma=self.gamma,
            eta=self.eta,
            dt=self.dt,
            n_steps=self.steps,
            seed=self.seed,
            initial_state=BlochState.parse(self.init),
        )
        base.update(changes)
        return SimConfig(**base)

    def validate(self) -> "RunConfig":
        try:
            self.sim_config()
        except (ValueError, TypeError) as exc:
            raise InvalidParameterError(str(exc)) from None
        for name in ("ensemble", "bins", "samples", "vbar_bins", "workers"):
            if getattr(self, name) < 1:
                raise InvalidParameterError(f"{name} must be positive")
        if len(self.grid) != 2:
            raise InvalidParameterError("grid takes two integers: nx,nz")
        if self.format not in ("binary", "text"):
            raise InvalidParameterError("format must be 'binary' or 'text'")
        return self

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out


_PARSERS = {
    "gamma": float,
    "eta": float,
    "dt": float,
    "steps": int,
    "seed": int,
    "init": str,
    "ensemble": int,
    "workers": int,
    "bins": int,
    "binning": str,
    "decay_times": _floats,
    "thresholds": _opt(_floats),
    "times": _opt(_floats),
    "herald": str,
    "herald_times": _opt(_floats),
    "vbar_bins": int,
    "grid": _ints,
    "probe_dt": float,
    "min_count": int,
    "estimator": str,
    "samples": int,
    "integration_dt": _opt(float),
    "window": float,
    "reference": int,
    "contrast": float,
    "rescale": _bool,
    "record": _opt(str),
    "format": str,
    "analytic": _bool,
    "figures": _bool,
    "out": str,
}

CONFIG_KEYS = tuple(_PARSERS)


def parse_value(key: str, value):
    if key not in _PARSERS:
        raise InvalidParameterError(f"unknown configuration key {key!r}")
    try:
        return _PARSERS[key](value)
    except (TypeError, ValueError) as exc:
        raise InvalidParameterError(f"bad value for {key}: {value!r} ({exc})") from None


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidParameterError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip().replace("-", "_")
        values[key] = parse_value(key, val.strip())
    return values


def load_config(path) -> dict:
    """Values from a ``key = value`` file or from the ``config`` block of a manifest."""
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        block = data.get("config", data)
        return {k: parse_value(k, v) for k, v in block.items()}
    return parse_config_text(text)


def resolve_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    merged = dict(file_values or {})
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})
    for k in merged:
        if k not in _PARSERS:
            raise InvalidParameterError(f"unknown configuration key {k!r}")
    return RunConfig(**merged).validate()


# -- manifest -------------------------------------------------------------------------


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, subcommand: str, cfg: RunConfig, outputs, version: str) -> Path:
    """Record the resolved configuration and output digests. Only ``created`` varies between reruns."""
    out_dir = Path(out_dir)
    data = {
        "tool": "homodyne-decay",
        "version": version,
        "subcommand": subcommand,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "outputs": {Path(p).name: sha256(p) for p in sorted(outputs, key=lambda p: Path(p).name)},
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


# -- CSV tables --------------------------------------------------------------------------

#: column layout per table; the version is written on the first line
SCHEMAS = {
    "trajectory": (1, ["step", "time_s", "x", "y", "z"]),
    "calibration": (1, ["delta_v", "eta_est", "eta_raw", "clamped", "stderr_eta", "stderr_delta_v", "n_samples", "integration_dt_s", "mean_plus", "mean_minus"]),
    "calibration_hist": (1, ["prep", "bin_lo", "bin_hi", "count"]),
    "tomogram": (1, ["decay_time_s", "bin", "vbar_lo", "vbar_hi", "count", "x", "y", "z", "x_true", "y_true", "z_true", "underpopulated"]),
    "backaction": (1, ["cell", "sign", "cell_x", "cell_z", "count", "populated", "x_i", "z_i", "dx", "dz"]),
    "probe_hist": (1, ["bin_lo", "bin_hi", "count"]),
    "excitation": (1, ["threshold", "time_s", "fraction", "stderr"]),
    "excitation_analytic": (1, ["gamma_per_s", "eta", "dt_s", "probability"]),
    "histograms": (1, ["time_s", "x_lo", "x_hi", "z_lo", "z_hi", "count", "density"]),
    "histogram_bounds": (1, ["time_s", "x_min", "x_max", "z_min", "z_max"]),
    "validation": (1, ["time_s", "x_ref", "z_ref", "x_cond", "z_cond", "count"]),
    "validation_scatter": (1, ["axis", "bin_center", "predicted", "measured", "count"]),
    "validation_fit": (1, ["axis", "slope", "slope_stderr", "intercept"]),
}


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path, schema: str, rows) -> Path:
    """Write ``rows`` under a versioned schema; floats use shortest round-trip repr."""
    version, columns = SCHEMAS[schema]
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={schema} version={version}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise ValueError(f"{schema}: row has {len(row)} fields, expected {len(columns)}")
            w.writerow([_fmt(v) for v in row])
    return path


def read_csv(path) -> tuple[str, list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        rows = list(csv.reader(fh))
    return first, rows[0], rows[1:]
