"""Spectra, free-space calibration and the 880-element network input."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_RX = 10
BAND_START = 30
BAND_BINS = 44
FEATURE_LEN = 880
SCALE_FLOOR = 1e-12

if BAND_BINS * N_RX * 2 != FEATURE_LEN:
    raise AssertionError("band selection must give exactly 880 features")


class CalibrationError(ValueError):
    """Wall and free-space records are not on the same bins/receivers."""


class BandError(ValueError):
    """The record does not contain the 44 feature bins."""


@dataclass
class SpectrumRecord:
    """Complex spectra, one row per receiver. Bin ``k`` sits at ``k * df``."""

    spectra: np.ndarray
    df: float

    @property
    def n_rx(self) -> int:
        return self.spectra.shape[0]

    @property
    def n_bins(self) -> int:
        return self.spectra.shape[1]

    def frequencies(self) -> np.ndarray:
        return np.arange(self.n_bins) * self.df


def to_spectrum(values, dt: float | None = None):
    """DFT of a full time record (numpy sign convention, no scaling)."""
    values = np.asarray(values, dtype=float)
    if values.shape[-1] < 2:
        raise ValueError("trace needs at least two samples")
    return np.fft.fft(values, axis=-1)


def traces_to_record(traces) -> SpectrumRecord:
    """Stack :class:`~wallprofile.fdtd.ProbeTrace` objects into a spectrum record."""
    values = np.stack([t.values for t in traces])
    dt = traces[0].dt
    return SpectrumRecord(to_spectrum(values), 1.0 / (values.shape[1] * dt))


def calibrate(wall: SpectrumRecord, free_space: SpectrumRecord) -> SpectrumRecord:
    """Remove direct coupling by subtracting the free-space record bin by bin."""
    if wall.spectra.shape != free_space.spectra.shape:
        raise CalibrationError(
            f"shape mismatch: wall {wall.spectra.shape} vs free space {free_space.spectra.shape}")
    if not np.isclose(wall.df, free_space.df, rtol=1e-12, atol=0.0):
        raise CalibrationError(f"bin spacing mismatch: {wall.df} vs {free_space.df}")
    return SpectrumRecord(wall.spectra - free_space.spectra, wall.df)


def band_bins() -> np.ndarray:
    return np.arange(BAND_START, BAND_START + BAND_BINS)


def band_frequencies(df: float) -> np.ndarray:
    return band_bins() * df


def assemble_features(record: SpectrumRecord) -> np.ndarray:
    """Real parts (receiver-major, 44 bins each) followed by imaginary parts."""
    if record.n_rx != N_RX:
        raise BandError(f"expected {N_RX} receivers, got {record.n_rx}")
    if record.n_bins < BAND_START + BAND_BINS:
        raise BandError(f"record has {record.n_bins} bins, needs {BAND_START + BAND_BINS}")
    band = record.spectra[:, BAND_START:BAND_START + BAND_BINS]
    return features_from_band(band)


def features_from_band(band) -> np.ndarray:
    band = np.asarray(band)
    if band.shape != (N_RX, BAND_BINS):
        raise BandError(f"band block must be {(N_RX, BAND_BINS)}, got {band.shape}")
    out = np.concatenate([band.real.reshape(-1), band.imag.reshape(-1)])
    if not np.isfinite(out).all():
        raise BandError("non-finite feature values")
    return out


def band_from_features(x) -> np.ndarray:
    """Inverse of :func:`features_from_band`."""
    x = np.asarray(x)
    if x.shape[-1] != FEATURE_LEN:
        raise BandError(f"feature vector must have length {FEATURE_LEN}, got {x.shape[-1]}")
    half = FEATURE_LEN // 2
    re = x[..., :half].reshape(x.shape[:-1] + (N_RX, BAND_BINS))
    im = x[..., half:].reshape(x.shape[:-1] + (N_RX, BAND_BINS))
    return re + 1j * im


@dataclass
class FeatureStats:
    """Per-dimension mean and scale computed on a training split."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X) -> "FeatureStats":
        X = np.asarray(X, dtype=np.float64)
        return cls(X.mean(axis=0), np.maximum(X.std(axis=0), SCALE_FLOOR))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d) -> "FeatureStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["scale"], dtype=np.float64))


def standardize_features(x, stats: FeatureStats) -> np.ndarray:
    scale = np.maximum(stats.scale, SCALE_FLOOR)
    return (np.asarray(x, dtype=np.float64) - stats.mean) / scale
