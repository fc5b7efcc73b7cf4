"""Wall cases, FDTD material grids and 32x32 label rasters.

Coordinates are in metres. ``x`` runs along the wall face, ``y`` away from
the radar: transmitter at y = 0.5, receivers at y = 0.8, wall front face at
y = 1.0. Walls are infinite along ``x`` (they run through the absorbing
layer), so the only lateral structure is the four lossy inclusions.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Iterator

import numpy as np

from .fdtd import SimConfig

WALL_FRONT_Y = 1.0

EPS_MAX = 8.0
SIGMA_FLOOR = 1e-5
SIGMA_MAX = 1e-2

RASTER_SIZE = 32
RASTER_X = (-1.0, 1.0)
RASTER_Y = (1.0, 1.8)

LOSSY_MARGIN = 0.10
LOSSY_WIDTH = 0.10
LOSSY_MIN_HEIGHT = 0.10
# four inclusion centres; outer edges sit LOSSY_MARGIN inside the raster extent
LOSSY_CENTERS = 0.85 * np.array([-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0])

SIGMA_VALUES = (1e-4, 1e-3, 1e-2)

DIELECTRIC = "dielectric"
CONDUCTIVITY = "conductivity"
PROFILE_KINDS = (DIELECTRIC, CONDUCTIVITY)


class GeometryError(ValueError):
    """Raised when a wall does not fit the simulation domain or is malformed."""


@dataclass(frozen=True)
class WallSpec:
    """One wall case.

    Types 1 and 2 use ``eps_r`` and ``th``; type 3 uses the layer fields
    (outer layers ``eps_r1``/``l1`` on both faces, inner ``eps_r2``/``l2``).
    ``sigma`` is the bulk conductivity for type 1 and the conductivity of the
    lossy inclusions for types 2 and 3.
    """

    wall_type: int
    sigma: float
    eps_r: float | None = None
    th: float | None = None
    eps_r1: float | None = None
    eps_r2: float | None = None
    l1: float | None = None
    l2: float | None = None
    case_id: str = ""

    @property
    def thickness(self) -> float:
        if self.wall_type == 3:
            return 2.0 * self.l1 + self.l2
        return self.th

    def layers(self) -> list[tuple[float, float, float]]:
        """``(y_start, y_stop, eps_r)`` per dielectric layer, absolute y."""
        y0 = WALL_FRONT_Y
        if self.wall_type == 3:
            a = y0 + self.l1
            b = a + self.l2
            return [(y0, a, self.eps_r1), (a, b, self.eps_r2), (b, b + self.l1, self.eps_r1)]
        return [(y0, y0 + self.th, self.eps_r)]

    def lossy_span_y(self) -> tuple[float, float]:
        """Vertical extent of the lossy inclusions (types 2 and 3)."""
        front = WALL_FRONT_Y
        back = WALL_FRONT_Y + self.thickness
        if self.wall_type == 2:
            height = max(self.th - 2.0 * LOSSY_MARGIN, LOSSY_MIN_HEIGHT)
            mid = 0.5 * (front + back)
            return mid - 0.5 * height, mid + 0.5 * height
        if self.wall_type == 3:
            inner0 = front + self.l1
            inner1 = inner0 + self.l2
            return max(inner0, front + LOSSY_MARGIN), min(inner1, back - LOSSY_MARGIN)
        raise GeometryError("type-1 walls have no lossy inclusions")

    def validate(self) -> None:
        def within(v, lo, hi, name):
            if v is None or not (lo - 1e-9 <= v <= hi + 1e-9):
                raise GeometryError(f"{self.case_id or 'wall'}: {name}={v} outside [{lo}, {hi}]")

        within(self.sigma, 1e-4, 1e-2, "sigma")
        if self.wall_type == 1:
            within(self.eps_r, 4, 8, "eps_r")
            within(self.th, 0.10, 0.50, "th")
        elif self.wall_type == 2:
            within(self.eps_r, 4, 8, "eps_r")
            within(self.th, 0.20, 0.50, "th")
        elif self.wall_type == 3:
            within(self.eps_r2, 4, 8, "eps_r2")
            within(self.eps_r1, 2, 3, "eps_r1")
            within(self.l2, 0.20, 0.40, "l2")
            within(self.l1, 0.05, 0.10, "l1")
        else:
            raise GeometryError(f"unknown wall type {self.wall_type!r}")

    def to_record(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_record(cls, record: dict) -> "WallSpec":
        return cls(**record)


def _grid(lo, hi, n):
    return [round(float(v), 10) for v in np.linspace(lo, hi, n)]


def _case_id(spec_type, sigma, **params):
    parts = [f"t{spec_type}"]
    for name, value in params.items():
        if name.startswith("l") or name == "th":
            parts.append(f"{name}{round(value * 100):02d}cm")
        else:
            parts.append(f"{name}{value:.1f}")
    parts.append(f"s{int(round(np.log10(sigma))):+d}")
    return "_".join(parts)


def _iter_cases() -> Iterator[WallSpec]:
    for eps in _grid(4, 8, 21):
        for th in _grid(0.10, 0.50, 5):
            for sigma in SIGMA_VALUES:
                yield WallSpec(1, sigma, eps_r=eps, th=th,
                               case_id=_case_id(1, sigma, e=eps, th=th))
    for eps in _grid(4, 8, 21):
        for th in _grid(0.20, 0.50, 4):
            for sigma in SIGMA_VALUES:
                yield WallSpec(2, sigma, eps_r=eps, th=th,
                               case_id=_case_id(2, sigma, e=eps, th=th))
    for eps2 in _grid(4, 8, 5):
        for eps1 in _grid(2, 3, 2):
            for l2 in _grid(0.20, 0.40, 5):
                for l1 in _grid(0.05, 0.10, 2):
                    for sigma in SIGMA_VALUES:
                        yield WallSpec(3, sigma, eps_r1=eps1, eps_r2=eps2, l1=l1, l2=l2,
                                       case_id=_case_id(3, sigma, e1=eps1, e2=eps2, l1=l1, l2=l2))


def enumerate_cases() -> list[WallSpec]:
    """All 867 wall cases in a fixed order (type 1, then 2, then 3)."""
    return list(_iter_cases())


def material_at(spec: WallSpec | None, x, y):
    """Relative permittivity and conductivity at points ``(x, y)``.

    ``spec=None`` is an all-air scene. Layer membership is half-open in y,
    inclusion membership is symmetric in x so mirrored points agree exactly.
    """
    x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
    eps = np.ones(x.shape)
    sigma = np.zeros(x.shape)
    if spec is None:
        return eps, sigma
    for y0, y1, e in spec.layers():
        inside = (y >= y0) & (y < y1)
        eps[inside] = e
        if spec.wall_type == 1:
            sigma[inside] = spec.sigma
    if spec.wall_type in (2, 3):
        ly0, ly1 = spec.lossy_span_y()
        rows = (y >= ly0) & (y < ly1)
        for c in LOSSY_CENTERS:
            sigma[rows & (np.abs(x - c) < 0.5 * LOSSY_WIDTH)] = spec.sigma
    return eps, sigma


@dataclass
class MaterialGrid:
    """Per-node material over the FDTD lattice, indexed ``[ix, iy]``."""

    eps_r: np.ndarray
    sigma: np.ndarray
    dx: float
    origin: tuple[float, float]

    @property
    def shape(self):
        return self.eps_r.shape

    def coords(self):
        nx, ny = self.shape
        x = self.origin[0] + np.arange(nx) * self.dx
        y = self.origin[1] + np.arange(ny) * self.dx
        return x, y


def build_material_grid(spec: WallSpec | None, cfg: SimConfig) -> MaterialGrid:
    """Sample the wall onto the Ez nodes of ``cfg``'s lattice (``None`` = free space)."""
    if spec is not None:
        spec.validate()
        y_lo, y_hi = cfg.interior_y
        if WALL_FRONT_Y < y_lo or WALL_FRONT_Y + spec.thickness > y_hi:
            raise GeometryError(
                f"{spec.case_id}: wall y in [{WALL_FRONT_Y}, {WALL_FRONT_Y + spec.thickness}] "
                f"leaves the simulation domain [{y_lo}, {y_hi}]")
    x = cfg.node_x()
    y = cfg.node_y()
    eps, sigma = material_at(spec, x[:, None], y[None, :])
    return MaterialGrid(eps, sigma, cfg.dx, (float(x[0]), float(y[0])))


def normalize_material(eps_r, sigma):
    """Map (eps_r, sigma) to label units in [0, 1].

    Permittivity is linear from air (1) to ``EPS_MAX``; conductivity is
    logarithmic between ``SIGMA_FLOOR`` and ``SIGMA_MAX`` so that the three
    decade-spaced values land on 1/3, 2/3 and 1.
    """
    eps_r = np.asarray(eps_r, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    u_eps = np.clip((eps_r - 1.0) / (EPS_MAX - 1.0), 0.0, 1.0)
    floor = np.maximum(sigma, SIGMA_FLOOR)
    u_sig = np.clip(np.log10(floor / SIGMA_FLOOR) / np.log10(SIGMA_MAX / SIGMA_FLOOR), 0.0, 1.0)
    return u_eps, u_sig


def raster_centers():
    """Pixel-centre coordinates; rows follow y, columns follow x."""
    n = RASTER_SIZE
    px = RASTER_X[0] + (np.arange(n) + 0.5) * (RASTER_X[1] - RASTER_X[0]) / n
    py = RASTER_Y[0] + (np.arange(n) + 0.5) * (RASTER_Y[1] - RASTER_Y[0]) / n
    return px, py


@dataclass
class ProfileRaster:
    """A 32x32 normalized label image. ``pixels[row=y, col=x]``."""

    pixels: np.ndarray
    kind: str

    def flatten(self) -> np.ndarray:
        return self.pixels.reshape(-1)

    @classmethod
    def from_flat(cls, flat, kind: str) -> "ProfileRaster":
        return cls(np.asarray(flat).reshape(RASTER_SIZE, RASTER_SIZE), kind)

    def to_gan(self) -> np.ndarray:
        return 2.0 * self.pixels - 1.0


def rasterize_labels(spec: WallSpec | None) -> tuple[ProfileRaster, ProfileRaster]:
    px, py = raster_centers()
    eps, sigma = material_at(spec, px[None, :], py[:, None])
    u_eps, u_sig = normalize_material(eps, sigma)
    return ProfileRaster(u_eps, DIELECTRIC), ProfileRaster(u_sig, CONDUCTIVITY)
