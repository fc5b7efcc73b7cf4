"""Dataset generation over all wall cases, on-disk container, and stratified splits.

Container layout::

    <root>/manifest.json            UTF-8 JSON, see ``_manifest``
    <root>/samples/<index>_<case_id>.bin

Each blob is little-endian float32 ``features[880] | dielectric[1024] |
conductivity[1024]`` followed by the CRC-32C of those bytes (uint32 LE).
"""

from __future__ import annotations

import json
import multiprocessing as mp
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from ._io import atomic_write_bytes, atomic_write_json, split_crc, with_crc
from .fdtd import SimConfig, run_simulation
from .scene import (CONDUCTIVITY, DIELECTRIC, EPS_MAX, RASTER_SIZE, SIGMA_FLOOR, SIGMA_MAX,
                    WallSpec, build_material_grid, enumerate_cases, rasterize_labels)
from .signal import FEATURE_LEN, assemble_features, calibrate, traces_to_record

FORMAT_NAME = "wallprofile-dataset"
FORMAT_VERSION = 1
N_PIXELS = RASTER_SIZE * RASTER_SIZE
SECTIONS = (("features", FEATURE_LEN), (DIELECTRIC, N_PIXELS), (CONDUCTIVITY, N_PIXELS))
PAYLOAD_BYTES = 4 * sum(n for _, n in SECTIONS)
BLOB_BYTES = PAYLOAD_BYTES + 4


class DatasetError(RuntimeError):
    pass


class UnsupportedVersionError(DatasetError):
    pass


class IntegrityError(DatasetError):
    pass


class SimulationFailure(DatasetError):
    pass


class SplitError(ValueError):
    pass


def _layout():
    offset = 0
    sections = []
    for name, count in SECTIONS:
        sections.append({"name": name, "offset": offset, "count": count})
        offset += 4 * count
    sections.append({"name": "crc32c", "offset": offset, "count": 1})
    return {"dtype": "float32-le", "sections": sections, "blob_bytes": BLOB_BYTES}


@dataclass
class Sample:
    case_id: str
    features: np.ndarray
    dielectric: np.ndarray
    conductivity: np.ndarray
    spec: WallSpec

    def to_blob(self) -> bytes:
        parts = [np.asarray(self.features, dtype="<f4").reshape(-1),
                 np.asarray(self.dielectric, dtype="<f4").reshape(-1),
                 np.asarray(self.conductivity, dtype="<f4").reshape(-1)]
        for (name, count), arr in zip(SECTIONS, parts):
            if arr.size != count:
                raise DatasetError(f"{self.case_id}: section {name} has {arr.size} values, expected {count}")
        return with_crc(b"".join(a.tobytes() for a in parts))

    @classmethod
    def from_blob(cls, blob: bytes, spec: WallSpec, where: str = "") -> "Sample":
        if len(blob) != BLOB_BYTES:
            raise IntegrityError(
                f"{where or spec.case_id}: blob truncated at byte offset {len(blob)} (expected {BLOB_BYTES})")
        payload, stored, computed = split_crc(blob)
        if stored != computed:
            raise IntegrityError(
                f"{where or spec.case_id}: CRC-32C mismatch (stored {stored:08x}, computed {computed:08x})")
        arr = np.frombuffer(payload, dtype="<f4")
        f = arr[:FEATURE_LEN]
        e = arr[FEATURE_LEN:FEATURE_LEN + N_PIXELS].reshape(RASTER_SIZE, RASTER_SIZE)
        s = arr[FEATURE_LEN + N_PIXELS:].reshape(RASTER_SIZE, RASTER_SIZE)
        return cls(spec.case_id, f, e, s, spec)


# --- generation -------------------------------------------------------------

def free_space_record(cfg: SimConfig):
    return traces_to_record(run_simulation(build_material_grid(None, cfg), cfg))


def simulate_case(spec: WallSpec, cfg: SimConfig, free_record) -> Sample:
    """Wall run, free-space calibration, feature assembly and labels for one case."""
    try:
        wall = traces_to_record(run_simulation(build_material_grid(spec, cfg), cfg))
    except Exception as exc:  # noqa: BLE001 - annotate and re-raise with the case id
        raise SimulationFailure(f"case {spec.case_id}: {exc}") from exc
    features = assemble_features(calibrate(wall, free_record))
    eps, sig = rasterize_labels(spec)
    return Sample(spec.case_id, features, eps.pixels, sig.pixels, spec)


_WORKER = {}


def _init_worker(cfg, free_record):
    _WORKER["cfg"] = cfg
    _WORKER["free"] = free_record


def _work(spec):
    return simulate_case(spec, _WORKER["cfg"], _WORKER["free"]).to_blob()


def _manifest(cfg: SimConfig, entries: list, created: dict) -> dict:
    return {
        "format": FORMAT_NAME,
        "format_version": FORMAT_VERSION,
        "sim_config": cfg.to_dict(),
        "sim_config_digest": cfg.digest(),
        "normalization": {"eps_max": EPS_MAX, "sigma_floor": SIGMA_FLOOR, "sigma_max": SIGMA_MAX,
                          "eps_map": "linear", "sigma_map": "log10"},
        "layout": _layout(),
        "samples": entries,
        "created": {"utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
                    "package_version": __version__, **created},
    }


def _blob_name(index: int, case_id: str) -> str:
    return f"samples/{index:04d}_{case_id}.bin"


def generate_dataset(cfg: SimConfig, out, workers: int = 1, cases=None, progress=None) -> dict:
    """Simulate every case (or ``cases``), write blobs and the manifest; return the manifest.

    Blobs are produced by a worker pool and committed in case order by the
    calling process, so the output does not depend on ``workers``.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    specs = enumerate_cases() if cases is None else list(cases)
    t0 = time.perf_counter()
    free = free_space_record(cfg)

    entries = []

    def commit(index, spec, blob):
        name = _blob_name(index, spec.case_id)
        atomic_write_bytes(out / name, blob)
        entries.append({"index": index, "case_id": spec.case_id, "file": name,
                        "crc32c": int.from_bytes(blob[-4:], "little"), "spec": spec.to_record()})
        if progress:
            progress(index + 1, len(specs), spec.case_id)

    if workers <= 1:
        _init_worker(cfg, free)
        for i, spec in enumerate(specs):
            commit(i, spec, _work(spec))
    else:
        ctx = mp.get_context("fork")
        with ctx.Pool(workers, initializer=_init_worker, initargs=(cfg, free)) as pool:
            for i, (spec, blob) in enumerate(zip(specs, pool.imap(_work, specs, chunksize=1))):
                commit(i, spec, blob)

    manifest = _manifest(cfg, entries, {"workers": workers, "seconds": round(time.perf_counter() - t0, 3)})
    atomic_write_json(out / "manifest.json", manifest)
    return manifest


# --- persistence --------------------------------------------------------------

@dataclass
class Dataset:
    manifest: dict
    specs: list
    features: np.ndarray
    dielectric: np.ndarray
    conductivity: np.ndarray
    root: Path | None = None

    def __len__(self):
        return len(self.specs)

    @property
    def case_ids(self):
        return [s.case_id for s in self.specs]

    @property
    def wall_types(self) -> np.ndarray:
        return np.array([s.wall_type for s in self.specs])

    def labels(self, kind: str) -> np.ndarray:
        if kind == DIELECTRIC:
            return self.dielectric
        if kind == CONDUCTIVITY:
            return self.conductivity
        raise ValueError(f"unknown profile kind {kind!r}")

    def sample(self, i: int) -> Sample:
        s = self.specs[i]
        return Sample(s.case_id, self.features[i], self.dielectric[i], self.conductivity[i], s)


def save_dataset(samples, out, cfg: SimConfig | None = None) -> dict:
    """Write already-computed samples in the container format."""
    out = Path(out)
    cfg = cfg or SimConfig()
    entries = []
    for i, smp in enumerate(samples):
        blob = smp.to_blob()
        name = _blob_name(i, smp.case_id)
        atomic_write_bytes(out / name, blob)
        entries.append({"index": i, "case_id": smp.case_id, "file": name,
                        "crc32c": int.from_bytes(blob[-4:], "little"), "spec": smp.spec.to_record()})
    manifest = _manifest(cfg, entries, {})
    atomic_write_json(out / "manifest.json", manifest)
    return manifest


def read_manifest(root) -> dict:
    root = Path(root)
    try:
        manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise DatasetError(f"no manifest.json in {root}") from exc
    if manifest.get("format") != FORMAT_NAME:
        raise DatasetError(f"{root}: not a {FORMAT_NAME} container")
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"{root}: dataset format version {version!r} is not supported (expected {FORMAT_VERSION})")
    offsets = [s["offset"] for s in manifest["layout"]["sections"]]
    if any(b <= a for a, b in zip(offsets, offsets[1:])):
        raise DatasetError(f"{root}: section offsets are not strictly increasing")
    return manifest


def load_dataset(root) -> Dataset:
    """Read and verify every blob. No data is returned if any check fails."""
    root = Path(root)
    manifest = read_manifest(root)
    entries = manifest["samples"]
    n = len(entries)
    specs = [WallSpec.from_record(e["spec"]) for e in entries]
    X = np.empty((n, FEATURE_LEN), dtype=np.float32)
    E = np.empty((n, RASTER_SIZE, RASTER_SIZE), dtype=np.float32)
    S = np.empty((n, RASTER_SIZE, RASTER_SIZE), dtype=np.float32)
    for i, (entry, spec) in enumerate(zip(entries, specs)):
        path = root / entry["file"]
        try:
            blob = path.read_bytes()
        except FileNotFoundError as exc:
            raise IntegrityError(f"sample {entry['case_id']}: missing blob {entry['file']}") from exc
        smp = Sample.from_blob(blob, spec, where=f"sample {entry['case_id']}")
        X[i], E[i], S[i] = smp.features, smp.dielectric, smp.conductivity
    return Dataset(manifest, specs, X, E, S, root)


# --- splits --------------------------------------------------------------------

@dataclass
class Split:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    seed: int
    fractions: tuple
    per_type: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"train": self.train.tolist(), "validation": self.validation.tolist(),
                "test": self.test.tolist(), "seed": self.seed, "fractions": list(self.fractions)}

    @classmethod
    def from_dict(cls, d) -> "Split":
        return cls(np.array(d["train"], dtype=int), np.array(d["validation"], dtype=int),
                   np.array(d["test"], dtype=int), d["seed"], tuple(d["fractions"]))


def _apportion(total: int, sizes: dict, fraction: float) -> dict:
    """Largest-remainder allocation of ``total`` picks across strata."""
    exact = {k: fraction * n for k, n in sizes.items()}
    alloc = {k: int(np.floor(v)) for k, v in exact.items()}
    short = total - sum(alloc.values())
    for k in sorted(sizes, key=lambda k: (-(exact[k] - alloc[k]), k))[:max(short, 0)]:
        alloc[k] += 1
    return alloc


def split(wall_types, fractions=(0.9, 0.05, 0.05), seed: int = 0) -> Split:
    """Stratified train/validation/test split.

    ``wall_types`` is a :class:`Dataset`, a manifest, a list of specs, or an
    array of wall-type labels. Held-out counts are ``floor(f * N)`` overall,
    distributed over wall types by largest remainder; the rest trains.
    """
    if isinstance(wall_types, Dataset):
        types = wall_types.wall_types
    elif isinstance(wall_types, dict):
        types = np.array([s["spec"]["wall_type"] for s in wall_types["samples"]])
    else:
        items = list(wall_types)
        types = np.array([s.wall_type if isinstance(s, WallSpec) else int(s) for s in items])
    f_train, f_val, f_test = (float(f) for f in fractions)
    if min(f_train, f_val, f_test) < 0 or f_train + f_val + f_test > 1 + 1e-9:
        raise SplitError(f"fractions {fractions} must be >= 0 and sum to at most 1")
    n = len(types)
    n_val, n_test = int(np.floor(f_val * n + 1e-9)), int(np.floor(f_test * n + 1e-9))
    for name, frac, count in (("validation", f_val, n_val), ("test", f_test, n_test)):
        if frac > 0 and count == 0:
            raise SplitError(f"{name} fraction {frac} of {n} samples yields an empty split")
    if f_train > 0 and n - n_val - n_test == 0:
        raise SplitError("train split would be empty")

    strata = sorted(set(types.tolist()))
    sizes = {t: int(np.sum(types == t)) for t in strata}
    val_alloc = _apportion(n_val, sizes, f_val)
    test_alloc = _apportion(n_test, sizes, f_test)
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    per_type = {}
    for t in strata:
        idx = np.flatnonzero(types == t)
        idx = idx[rng.permutation(len(idx))]
        a, b = val_alloc[t], test_alloc[t]
        val.extend(idx[:a])
        test.extend(idx[a:a + b])
        train.extend(idx[a + b:])
        per_type[t] = {"train": len(idx) - a - b, "validation": a, "test": b}
    return Split(np.sort(np.array(train, dtype=int)), np.sort(np.array(val, dtype=int)),
                 np.sort(np.array(test, dtype=int)), seed, (f_train, f_val, f_test), per_type)
