"""NMSE, thickness extraction, report tables and raster images."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from ._io import atomic_write_bytes, atomic_write_text
from .scene import CONDUCTIVITY, DIELECTRIC, PROFILE_KINDS, RASTER_SIZE, RASTER_Y

PIXEL_PITCH_Y = (RASTER_Y[1] - RASTER_Y[0]) / RASTER_SIZE
ARCH_LABELS = {"fcnn": "FC-NN", "cnn": "CNN", "gan": "GAN"}
NO_WALL_CONTRAST = 1e-3


class MetricError(ValueError):
    pass


class ReportError(RuntimeError):
    pass


def nmse(truth, estimate) -> float:
    """``||truth - estimate||^2 / ||truth||^2``."""
    t = np.asarray(truth, dtype=np.float64)
    e = np.asarray(estimate, dtype=np.float64)
    if t.shape != e.shape:
        raise MetricError(f"shape mismatch: truth {t.shape} vs estimate {e.shape}")
    denom = np.sum(t * t)
    if denom == 0:
        raise MetricError("NMSE is undefined for an all-zero truth")
    d = t - e
    return float(np.sum(d * d) / denom)


@dataclass(frozen=True)
class Thickness:
    """Extracted wall thickness; ``meters`` is None when no wall was found."""

    meters: float | None
    rows: tuple = ()

    @property
    def detected(self) -> bool:
        return self.meters is not None


def estimate_thickness(raster, contrast_floor: float = NO_WALL_CONTRAST) -> Thickness:
    """Half-rise thickness along y from a dielectric raster.

    Row means are compared with ``bg + 0.5 (peak - bg)`` where ``bg`` is the
    smallest and ``peak`` the largest row mean; the wall is the contiguous run
    of rows above threshold that contains the peak row.
    """
    r = np.asarray(raster, dtype=np.float64)
    if r.ndim == 1:
        r = r.reshape(RASTER_SIZE, RASTER_SIZE)
    rows = r.mean(axis=1)
    bg, peak = rows.min(), rows.max()
    if peak - bg <= contrast_floor:
        return Thickness(None)
    above = rows > bg + 0.5 * (peak - bg)
    top = int(np.argmax(rows))
    lo = top
    while lo > 0 and above[lo - 1]:
        lo -= 1
    hi = top
    while hi < len(rows) - 1 and above[hi + 1]:
        hi += 1
    return Thickness((hi - lo + 1) * PIXEL_PITCH_Y, (lo, hi))


# --- reports -----------------------------------------------------------------------

@dataclass
class EvalReport:
    """Per-sample metrics keyed by ``(arch, profile, train_fraction)``."""

    rows: list = field(default_factory=list)      # per-sample dicts
    timing: dict = field(default_factory=dict)    # (arch, fraction) -> {train_minutes, infer_seconds}

    def averages(self, by=("arch", "profile", "fraction")) -> dict:
        groups = {}
        for r in self.rows:
            groups.setdefault(tuple(r[k] for k in by), []).append(r["nmse"])
        return {k: float(np.mean(v)) for k, v in groups.items()}

    def thickness_errors(self) -> dict:
        """``(arch, fraction) -> list`` of relative thickness errors (dielectric rows)."""
        out = {}
        for r in self.rows:
            if r["profile"] == DIELECTRIC and r.get("thickness_rel_error") is not None:
                out.setdefault((r["arch"], r["fraction"]), []).append(r["thickness_rel_error"])
        return out


def evaluate_model(model, dataset, indices, fraction: float, predictions=None) -> list:
    """Per-sample NMSE (and thickness for dielectric models) on ``indices``."""
    from .models import predict

    labels = dataset.labels(model.profile)
    preds = predictions if predictions is not None else predict(model, dataset.features[indices])
    rows = []
    for j, i in enumerate(indices):
        spec = dataset.specs[i]
        row = {"arch": model.arch, "profile": model.profile, "fraction": fraction,
               "index": int(i), "case_id": spec.case_id, "wall_type": spec.wall_type,
               "nmse": nmse(labels[i], preds[j])}
        if model.profile == DIELECTRIC:
            th = estimate_thickness(preds[j])
            row["thickness_true"] = spec.thickness
            row["thickness_est"] = th.meters
            row["thickness_rel_error"] = (abs(th.meters - spec.thickness) / spec.thickness
                                          if th.detected else None)
        rows.append(row)
    return rows


def build_report(models: dict, dataset, splits: dict, infer_seconds: dict | None = None) -> EvalReport:
    """``models[(arch, profile, fraction)]`` evaluated on ``splits[fraction].test``.

    Every architecture/fraction present must have both profile kinds.
    """
    keys = set(models)
    combos = {(a, f) for a, _, f in keys}
    missing = [(a, p, f) for a, f in sorted(combos) for p in PROFILE_KINDS if (a, p, f) not in keys]
    missing += [f"split {f}" for f in sorted({f for _, f in combos}) if f not in splits]
    if missing:
        raise ReportError(f"missing models/splits: {missing}")
    report = EvalReport()
    for (arch, profile, fraction), model in sorted(models.items()):
        report.rows.extend(evaluate_model(model, dataset, splits[fraction].test, fraction))
        t = report.timing.setdefault((arch, fraction), {"train_minutes": 0.0, "infer_seconds": None})
        t["train_minutes"] += model.record.get("train_seconds", 0.0) / 60.0
        if infer_seconds and (arch, profile, fraction) in infer_seconds:
            t["infer_seconds"] = max(t["infer_seconds"] or 0.0, infer_seconds[(arch, profile, fraction)])
    return report


def _table(header, body) -> str:
    cells = [header] + body
    widths = [max(len(str(row[c])) for row in cells) for c in range(len(header))]
    lines = ["  ".join(str(v).rjust(w) if c else str(v).ljust(w) for c, (v, w) in
                       enumerate(zip(row, widths))) for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _fmt(v, digits=3):
    return "-" if v is None else f"{v:.{digits}f}"


def method_table(report: EvalReport, fraction: float):
    """Rows of (method, NMSE eps, NMSE sigma, train minutes, s/sample), Table 2 layout."""
    avg = report.averages()
    header = ["Method", "NMSE dielectric", "NMSE conductivity", "Training (min)", "Testing (s/sample)"]
    body = []
    for arch in ARCH_LABELS:
        if (arch, DIELECTRIC, fraction) not in avg:
            continue
        t = report.timing.get((arch, fraction), {})
        body.append([ARCH_LABELS[arch], _fmt(avg[(arch, DIELECTRIC, fraction)]),
                     _fmt(avg[(arch, CONDUCTIVITY, fraction)]), _fmt(t.get("train_minutes"), 1),
                     _fmt(t.get("infer_seconds"), 4)])
    return header, body


def fraction_table(report: EvalReport):
    """Rows of (method, profile, one NMSE column per train fraction), Table 3 layout."""
    avg = report.averages()
    fractions = sorted({f for _, _, f in avg}, reverse=True)
    header = ["Method", "Profile"] + [f"{round(100 * f)}% train" for f in fractions]
    body = []
    for arch in ARCH_LABELS:
        for profile in PROFILE_KINDS:
            vals = [avg.get((arch, profile, f)) for f in fractions]
            if any(v is not None for v in vals):
                body.append([ARCH_LABELS[arch], profile] + [_fmt(v) for v in vals])
    return header, body


def type_table(report: EvalReport, fraction: float):
    avg = report.averages(by=("arch", "profile", "fraction", "wall_type"))
    types = sorted({k[3] for k in avg})
    header = ["Method", "Profile"] + [f"type {t}" for t in types]
    body = []
    for arch in ARCH_LABELS:
        for profile in PROFILE_KINDS:
            vals = [avg.get((arch, profile, fraction, t)) for t in types]
            if any(v is not None for v in vals):
                body.append([ARCH_LABELS[arch], profile] + [_fmt(v) for v in vals])
    return header, body


def to_csv(header, body) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(body)
    return buf.getvalue()


def write_report(report: EvalReport, out, primary_fraction: float = 0.9) -> dict:
    """Write Table-2/3 style CSV + aligned text and the per-sample CSV; returns file names."""
    from pathlib import Path

    out = Path(out)
    files = {}
    tables = {"methods": method_table(report, primary_fraction),
              "fractions": fraction_table(report),
              "wall_types": type_table(report, primary_fraction)}
    for name, (header, body) in tables.items():
        atomic_write_text(out / f"{name}.csv", to_csv(header, body))
        atomic_write_text(out / f"{name}.txt", _table(header, body))
        files[name] = [f"{name}.csv", f"{name}.txt"]
    cols = ["arch", "profile", "fraction", "index", "case_id", "wall_type", "nmse",
            "thickness_true", "thickness_est", "thickness_rel_error"]
    body = [[r.get(c, "") if r.get(c) is not None else "" for c in cols] for r in report.rows]
    atomic_write_text(out / "per_sample.csv", to_csv(cols, body))
    files["per_sample"] = ["per_sample.csv"]
    return files


# --- images ------------------------------------------------------------------------

def to_pgm(raster, vmin: float = 0.0, vmax: float = 1.0) -> bytes:
    """Binary 8-bit PGM; row 0 of the raster (front of the wall) is the top line."""
    r = np.asarray(raster, dtype=np.float64)
    if r.ndim == 1:
        r = r.reshape(RASTER_SIZE, RASTER_SIZE)
    scaled = np.clip((r - vmin) / (vmax - vmin), 0.0, 1.0)
    pixels = np.rint(scaled * 255.0).astype(np.uint8)
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + pixels.tobytes()


def read_pgm(data: bytes) -> np.ndarray:
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)


def grid_csv(raster) -> str:
    r = np.asarray(raster, dtype=np.float64)
    if r.ndim == 1:
        r = r.reshape(RASTER_SIZE, RASTER_SIZE)
    return "\n".join(",".join(repr(float(v)) for v in row) for row in r) + "\n"


def write_raster(stem, raster) -> list[str]:
    """``<stem>.pgm`` heatmap and ``<stem>.csv`` raw grid."""
    from pathlib import Path

    stem = Path(stem)
    # append rather than replace: case ids contain dots ("t1_e5.0_...")
    pgm, grid = stem.parent / f"{stem.name}.pgm", stem.parent / f"{stem.name}.csv"
    atomic_write_bytes(pgm, to_pgm(raster))
    atomic_write_text(grid, grid_csv(raster))
    return [pgm.name, grid.name]
