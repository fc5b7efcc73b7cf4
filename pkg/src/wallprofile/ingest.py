"""Measured S21 sweeps: parsing, averaging, resampling and calibration into features.

Sweep file dialect (UTF-8 text)::

    # wallprofile-sweep 1
    # position: 3
    # session: lab-2023-05-02
    1.395e9, 0.0123, -0.0045
    ...

Lines starting with ``#`` are comments; ``# key: value`` comments before the
first data row are kept as metadata. Data rows are ``frequency_Hz, real, imag``
with arbitrary surrounding whitespace. Frequencies must be strictly increasing.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._io import atomic_write_json, atomic_write_text
from .signal import BAND_BINS, N_RX, band_frequencies, features_from_band

SWEEP_HEADER = "# wallprofile-sweep 1"
SESSION_FORMAT = "wallprofile-session"
NORMALIZATIONS = ("none", "max-magnitude")


class ParseError(ValueError):
    def __init__(self, source, line, message):
        super().__init__(f"{source}:{line}: {message}")
        self.line = line


class SweepFormatError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


class CoverageError(ValueError):
    pass


class SessionError(ValueError):
    pass


@dataclass
class VnaSweep:
    frequencies: np.ndarray
    values: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.frequencies.shape != self.values.shape or self.frequencies.ndim != 1:
            raise SweepFormatError(
                f"frequency list {self.frequencies.shape} and values {self.values.shape} differ")
        _check_monotone(self.frequencies, self.metadata.get("source", "<sweep>"))

    def __len__(self):
        return len(self.frequencies)


def _check_monotone(freqs, source):
    steps = np.diff(freqs)
    if np.any(steps == 0):
        i = int(np.flatnonzero(steps == 0)[0])
        raise SweepFormatError(f"{source}: duplicate frequency {freqs[i + 1]!r}")
    if np.any(steps < 0):
        i = int(np.flatnonzero(steps < 0)[0])
        raise SweepFormatError(f"{source}: frequencies not increasing at {freqs[i + 1]!r}")


def parse_sweep_text(text: str, source: str = "<text>") -> VnaSweep:
    freqs, values, meta = [], [], {"source": source}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            body = line[1:].strip()
            if not freqs and ":" in body:
                key, _, value = body.partition(":")
                meta[key.strip()] = value.strip()
            continue
        fields = [f.strip() for f in line.split(",")]
        if len(fields) != 3:
            raise ParseError(source, lineno, f"expected 3 fields (frequency, real, imag), got {len(fields)}")
        try:
            f, re, im = (float(v) for v in fields)
        except ValueError as exc:
            raise ParseError(source, lineno, f"not a number: {exc}") from exc
        if not all(np.isfinite((f, re, im))):
            raise ParseError(source, lineno, "non-finite value")
        freqs.append(f)
        values.append(complex(re, im))
    if not freqs:
        raise SweepFormatError(f"{source}: no data rows")
    for key in ("position",):
        if key in meta:
            try:
                meta[key] = int(meta[key])
            except ValueError:
                pass
    return VnaSweep(np.array(freqs), np.array(values), meta)


def parse_sweep_file(path) -> VnaSweep:
    path = Path(path)
    return parse_sweep_text(path.read_text(encoding="utf-8"), str(path))


def format_sweep(sweep: VnaSweep) -> str:
    """Shortest round-tripping decimal text for every value."""
    lines = [SWEEP_HEADER]
    for k, v in sweep.metadata.items():
        if k != "source":
            lines.append(f"# {k}: {v}")
    lines += [f"{f!r}, {v.real!r}, {v.imag!r}"
              for f, v in zip(sweep.frequencies.tolist(), sweep.values.tolist())]
    return "\n".join(lines) + "\n"


def write_sweep_file(path, sweep: VnaSweep) -> None:
    atomic_write_text(path, format_sweep(sweep))


def average_sweeps(sweeps) -> VnaSweep:
    """Complex mean per frequency over repeated sweeps on one grid."""
    sweeps = list(sweeps)
    if not sweeps:
        raise AlignmentError("no sweeps to average")
    grid = sweeps[0].frequencies
    for i, s in enumerate(sweeps[1:], start=1):
        if s.frequencies.shape != grid.shape or not np.array_equal(s.frequencies, grid):
            raise AlignmentError(f"sweep {i} is on a different frequency grid than sweep 0")
    if len(sweeps) == 1:
        return VnaSweep(grid.copy(), sweeps[0].values.copy(), dict(sweeps[0].metadata))
    # sorting each column first makes the sum independent of repeat order
    stack = np.stack([s.values for s in sweeps])
    re = np.sort(stack.real, axis=0).sum(axis=0)
    im = np.sort(stack.imag, axis=0).sum(axis=0)
    meta = {k: v for k, v in sweeps[0].metadata.items() if k != "source"}
    meta["repeats"] = len(sweeps)
    return VnaSweep(grid.copy(), (re + 1j * im) / len(sweeps), meta)


def resample_to_feature_grid(sweep: VnaSweep, df: float) -> np.ndarray:
    """Linear interpolation of real and imaginary parts onto the 44 feature bins."""
    target = band_frequencies(df)
    lo, hi = sweep.frequencies[0], sweep.frequencies[-1]
    if lo > target[0] or hi < target[-1]:
        raise CoverageError(
            f"sweep covers {lo / 1e9:.4f}-{hi / 1e9:.4f} GHz but the feature band needs "
            f"{target[0] / 1e9:.4f}-{target[-1] / 1e9:.4f} GHz")
    re = np.interp(target, sweep.frequencies, sweep.values.real)
    im = np.interp(target, sweep.frequencies, sweep.values.imag)
    return re + 1j * im


# --- sessions ----------------------------------------------------------------------

@dataclass
class MeasurementSession:
    """Sweeps per receiver position (1..10) for the wall and free-space scenes."""

    wall: dict
    free_space: dict
    df: float
    normalization: str = "none"
    session_id: str = ""

    def validate(self) -> None:
        expected = set(range(1, N_RX + 1))
        for name, group in (("wall", self.wall), ("free_space", self.free_space)):
            missing = sorted(expected - set(group))
            if missing:
                raise SessionError(f"{name} session is missing position {', '.join(map(str, missing))}")
            extra = sorted(set(group) - expected)
            if extra:
                raise SessionError(f"{name} session has unknown position {', '.join(map(str, extra))}")
            counts = {len(group[p]) for p in expected}
            if len(counts) != 1 or 0 in counts:
                raise SessionError(f"{name} session: repeat counts differ across positions ({sorted(counts)})")
        if self.normalization not in NORMALIZATIONS:
            raise SessionError(f"unknown normalization {self.normalization!r}")


def load_session(manifest_path) -> MeasurementSession:
    """Read a session manifest (JSON) and every sweep it lists."""
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text(encoding="utf-8"))
    if doc.get("format") != SESSION_FORMAT or doc.get("format_version") != 1:
        raise SessionError(f"{manifest_path}: not a version-1 {SESSION_FORMAT} manifest")
    base = manifest_path.parent
    wall, free = {}, {}
    for entry in doc["positions"]:
        p = int(entry["position"])
        if p in wall:
            raise SessionError(f"position {p} listed twice")
        wall[p] = [parse_sweep_file(base / f) for f in entry["wall"]]
        free[p] = [parse_sweep_file(base / f) for f in entry["free_space"]]
    session = MeasurementSession(wall, free, float(doc["df"]), doc.get("normalization", "none"),
                                 doc.get("session_id", ""))
    session.validate()
    return session


def write_session(out, wall_band, free_band, df: float, session_id: str = "synthetic",
                  span=(25, 80)) -> Path:
    """Export per-position spectra as sweep files plus a manifest.

    ``wall_band``/``free_band`` are ``(10, n_bins)`` complex arrays indexed by
    DFT bin; bins ``span[0]..span[1]-1`` are written, one sweep per position.
    """
    out = Path(out)
    bins = np.arange(*span)
    freqs = bins * df
    positions = []
    for p in range(N_RX):
        entry = {"position": p + 1, "wall": [], "free_space": []}
        for name, data in (("wall", wall_band), ("free_space", free_band)):
            fname = f"{name}_p{p + 1:02d}_r001.csv"
            write_sweep_file(out / fname, VnaSweep(freqs, np.asarray(data)[p, bins],
                                                   {"position": p + 1, "session": session_id,
                                                    "scene": name}))
            entry[name].append(fname)
        positions.append(entry)
    manifest = {"format": SESSION_FORMAT, "format_version": 1, "session_id": session_id,
                "df": df, "normalization": "none", "positions": positions}
    atomic_write_json(out / "session.json", manifest)
    return out / "session.json"


def session_to_features(session: MeasurementSession) -> np.ndarray:
    """Average, resample, subtract free space and assemble the 880-vector (float64)."""
    session.validate()
    band = np.empty((N_RX, BAND_BINS), dtype=np.complex128)
    for p in range(1, N_RX + 1):
        w = resample_to_feature_grid(average_sweeps(session.wall[p]), session.df)
        f = resample_to_feature_grid(average_sweeps(session.free_space[p]), session.df)
        band[p - 1] = w - f
    if session.normalization == "max-magnitude":
        peak = np.abs(band).max()
        if peak > 0:
            band = band / peak
    return features_from_band(band)
