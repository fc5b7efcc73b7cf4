"""2D TMz (Ez, Hx, Hy) FDTD solver with conductive media and CPML boundaries.

Field layout on the Yee lattice, arrays indexed ``[ix, iy]``:

* ``Ez`` at integer nodes ``(i, j)``, shape ``(nx, ny)``
* ``Hx`` at ``(i, j + 1/2)``, shape ``(nx, ny - 1)``
* ``Hy`` at ``(i + 1/2, j)``, shape ``(nx - 1, ny)``

The outer ring of Ez nodes is PEC behind the absorbing layer. A ``"sheet"``
source replaces the line source with a full row of sources and switches the
x walls to PMC, which yields a normally incident plane wave; it is used to
validate the solver against transfer-matrix reflection.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

C0 = 299792458.0
MU0 = 4e-7 * np.pi
EPS0 = 1.0 / (MU0 * C0**2)
ETA0 = MU0 * C0


class InstabilityError(RuntimeError):
    """A field value became non-finite during time stepping."""


@dataclass(frozen=True)
class SimConfig:
    """Simulation geometry and excitation. Lengths in m, times in s, frequencies in Hz."""

    domain_x: float = 2.5
    domain_y: float = 2.5
    fc: float = 2.4e9
    bandwidth: float = 2e9
    cells_per_wavelength: int = 10
    dt: float = 2e-11
    duration: float = 21.5e-9
    pml_wavelengths: float = 2.0
    pml_order: int = 3
    pml_alpha_max: float = 0.05
    sigma_t: float = 0.13e-9
    mu_t: float = 2e-9
    tx: tuple[float, float] = (0.0, 0.5)
    rx_x: tuple[float, float] = (-0.28, 0.28)
    rx_y: float = 0.8
    n_rx: int = 10
    envelope_base: str = "10"
    source_kind: str = "line"

    @property
    def wavelength(self) -> float:
        return C0 / self.fc

    @property
    def dx(self) -> float:
        return self.wavelength / self.cells_per_wavelength

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def npml(self) -> int:
        return int(round(self.pml_wavelengths * self.wavelength / self.dx))

    @property
    def npml_x(self) -> int:
        return 0 if self.source_kind == "sheet" else self.npml

    @property
    def _half_x(self) -> int:
        return int(round(0.5 * self.domain_x / self.dx))

    @property
    def _ny_interior(self) -> int:
        return int(round(self.domain_y / self.dx)) + 1

    @property
    def shape(self) -> tuple[int, int]:
        return (2 * self._half_x + 1 + 2 * self.npml_x, self._ny_interior + 2 * self.npml)

    @property
    def interior_y(self) -> tuple[float, float]:
        return 0.0, (self._ny_interior - 1) * self.dx

    def node_x(self) -> np.ndarray:
        # centred on x = 0 so that mirror-symmetric scenes stay symmetric on the lattice
        return (np.arange(self.shape[0]) - (self._half_x + self.npml_x)) * self.dx

    def node_y(self) -> np.ndarray:
        return (np.arange(self.shape[1]) - self.npml) * self.dx

    def node_index(self, x: float, y: float) -> tuple[int, int]:
        ix = int(np.rint(x / self.dx)) + self._half_x + self.npml_x
        iy = int(np.rint(y / self.dx)) + self.npml
        nx, ny = self.shape
        if not (0 < ix < nx - 1 and 0 < iy < ny - 1):
            raise ValueError(f"point ({x}, {y}) lies outside the lattice")
        return ix, iy

    def rx_positions(self) -> list[tuple[float, float]]:
        xs = np.linspace(self.rx_x[0], self.rx_x[1], self.n_rx)
        return [(float(x), self.rx_y) for x in xs]

    def rx_nodes(self) -> list[tuple[int, int]]:
        return [self.node_index(x, y) for x, y in self.rx_positions()]

    def tx_node(self) -> tuple[int, int]:
        return self.node_index(*self.tx)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def courant_number(cfg: SimConfig) -> float:
    return C0 * cfg.dt / cfg.dx


def source_amplitude(t, cfg: SimConfig):
    """Gaussian-modulated sine excitation.

    With ``envelope_base="10"`` the envelope is ``10**(-(t-mu)**2 / (2 s**2))``,
    identical to a natural Gaussian of width ``s / sqrt(ln 10)``.
    ``envelope_base="e"`` uses ``exp`` with width ``s`` itself.
    """
    t = np.asarray(t, dtype=float)
    s = cfg.sigma_t
    u = -((t - cfg.mu_t) ** 2) / (2.0 * s * s)
    if cfg.envelope_base == "10":
        env = 10.0**u
    elif cfg.envelope_base == "e":
        env = np.exp(u)
    else:
        raise ValueError(f"envelope_base must be '10' or 'e', got {cfg.envelope_base!r}")
    return env / np.sqrt(2.0 * np.pi * s * s) * np.sin(2.0 * np.pi * cfg.fc * t)


@dataclass
class FieldState:
    Ez: np.ndarray
    Hx: np.ndarray
    Hy: np.ndarray
    psi: dict = field(default_factory=dict)
    step_index: int = 0

    @classmethod
    def zeros(cls, shape) -> "FieldState":
        nx, ny = shape
        return cls(np.zeros((nx, ny)), np.zeros((nx, ny - 1)), np.zeros((nx - 1, ny)))

    def copy(self) -> "FieldState":
        return FieldState(self.Ez.copy(), self.Hx.copy(), self.Hy.copy(),
                          {k: v.copy() for k, v in self.psi.items()}, self.step_index)


@dataclass
class ProbeTrace:
    """Ez time series at one receiver; sample ``n`` is taken at ``(n + 1) * dt``."""

    values: np.ndarray
    rx_index: int
    dt: float
    position: tuple[float, float] = (0.0, 0.0)


def _pml_profile(depth, cfg: SimConfig, dt: float):
    """CPML recursion coefficients (b, c) for cells at ``depth`` metres into the layer."""
    thickness = cfg.npml * cfg.dx
    m = cfg.pml_order
    sigma_max = 0.8 * (m + 1) / (ETA0 * cfg.dx)
    rho = np.clip(depth / thickness, 0.0, 1.0)
    sigma = sigma_max * rho**m
    alpha = np.where(depth > 0, cfg.pml_alpha_max * (1.0 - rho), 0.0)
    b = np.exp(-(sigma + alpha) * dt / EPS0)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(sigma > 0, sigma / (sigma + alpha) * (b - 1.0), 0.0)
    return b, c


class _Strip:
    """CPML auxiliary field over a slab of rows (axis 0) or columns (axis 1)."""

    def __init__(self, axis, sl, b, c, other_len):
        self.axis = axis
        self.sl = sl
        n = len(b)
        shape = (n, other_len) if axis == 0 else (other_len, n)
        self.b = b[:, None] if axis == 0 else b[None, :]
        self.c = c[:, None] if axis == 0 else c[None, :]
        self.psi = np.zeros(shape)

    def view(self, arr):
        return arr[self.sl, :] if self.axis == 0 else arr[:, self.sl]

    def update(self, diff_view):
        self.psi *= self.b
        self.psi += self.c * diff_view
        return self.psi


class Yee2D:
    """Time stepper bound to one material grid and configuration."""

    def __init__(self, grid, cfg: SimConfig):
        if grid.eps_r.shape != cfg.shape:
            raise ValueError(f"grid shape {grid.eps_r.shape} does not match lattice {cfg.shape}")
        if np.any(grid.eps_r < 1.0) or np.any(grid.sigma < 0.0):
            raise ValueError("material grid needs eps_r >= 1 and sigma >= 0")
        self.cfg = cfg
        self.grid = grid
        dt, dx = cfg.dt, cfg.dx
        self.pmc_x = cfg.source_kind == "sheet"
        nx, ny = cfg.shape
        eps = EPS0 * grid.eps_r
        loss = grid.sigma * dt / (2.0 * eps)
        ca = (1.0 - loss) / (1.0 + loss)
        cb = dt / (eps * dx) / (1.0 + loss)
        rows = slice(None) if self.pmc_x else slice(1, -1)
        self.ca = ca[rows, 1:-1].copy()
        self.cb = cb[rows, 1:-1].copy()
        self.ch = dt / (MU0 * dx)
        self._build_pml()

    def _build_pml(self):
        cfg = self.cfg
        nx, ny = cfg.shape
        dt, dx = cfg.dt, cfg.dx
        npml = cfg.npml
        self.strips = {"hx_y": [], "hy_x": [], "ez_x": [], "ez_y": []}
        if npml == 0:
            return

        def depth(n, half):
            pos = np.arange(n) + (0.5 if half else 0.0)
            last = (n if half else n - 1) - npml
            return np.maximum(np.maximum(npml - pos, pos - last), 0.0) * dx

        def add(key, axis, n_axis, half, lo_range, hi_range, other_len, shift=0):
            d = depth(n_axis, half)
            for rng in (lo_range, hi_range):
                idx = np.arange(*rng)
                b, c = _pml_profile(d[idx], cfg, dt)
                self.strips[key].append(_Strip(axis, slice(rng[0] - shift, rng[1] - shift), b, c, other_len))

        # Hx(i, j+1/2): y-derivative of Ez, half-node depths along y
        add("hx_y", 1, ny - 1, True, (0, npml), (ny - 1 - npml, ny - 1), nx)
        # Ez interior rows/cols are offset by one in the curl arrays
        add("ez_y", 1, ny, False, (1, npml + 1), (ny - 1 - npml, ny - 1), nx if self.pmc_x else nx - 2, shift=1)
        if cfg.npml_x:
            add("hy_x", 0, nx - 1, True, (0, npml), (nx - 1 - npml, nx - 1), ny)
            add("ez_x", 0, nx, False, (1, npml + 1), (nx - 1 - npml, nx - 1), ny - 2, shift=1)

    def new_state(self) -> FieldState:
        return FieldState.zeros(self.cfg.shape)

    def step(self, state: FieldState, source_nodes=(), source_value: float = 0.0) -> FieldState:
        """Advance ``state`` in place by one step; returns it."""
        Ez, Hx, Hy = state.Ez, state.Hx, state.Hy
        ch = self.ch

        dEy = Ez[:, 1:] - Ez[:, :-1]
        for s in self.strips["hx_y"]:
            dEy_v = s.view(dEy)
            dEy_v += s.update(dEy_v)
        Hx -= ch * dEy

        dEx = Ez[1:, :] - Ez[:-1, :]
        for s in self.strips["hy_x"]:
            dEx_v = s.view(dEx)
            dEx_v += s.update(dEx_v)
        Hy += ch * dEx

        if self.pmc_x:
            hy = np.zeros((Hy.shape[0] + 2, Hy.shape[1] - 2))
            hy[1:-1] = Hy[:, 1:-1]
            dHy = hy[1:] - hy[:-1]
            dHx = Hx[:, 1:] - Hx[:, :-1]
            inner = Ez[:, 1:-1]
        else:
            dHy = Hy[1:, 1:-1] - Hy[:-1, 1:-1]
            dHx = Hx[1:-1, 1:] - Hx[1:-1, :-1]
            inner = Ez[1:-1, 1:-1]
        for s in self.strips["ez_x"]:
            v = s.view(dHy)
            v += s.update(v)
        for s in self.strips["ez_y"]:
            v = s.view(dHx)
            v += s.update(v)
        with np.errstate(over="ignore", invalid="ignore"):  # reported below as InstabilityError
            inner *= self.ca
            inner += self.cb * (dHy - dHx)

        if source_value:
            for ix, iy in source_nodes:
                Ez[ix, iy] += source_value
        state.step_index += 1
        if not np.isfinite(inner).all():
            raise InstabilityError(f"non-finite Ez at step {state.step_index}")
        return state

    def source_nodes(self):
        cfg = self.cfg
        ix, iy = cfg.tx_node()
        if cfg.source_kind == "sheet":
            return [(i, iy) for i in range(cfg.shape[0])]
        return [(ix, iy)]

    def run(self, source_nodes=None, probe_nodes=None, n_steps=None, energy_every=0,
            snapshot_dir=None, snapshot_every=0):
        """Time-step from rest.

        Returns ``(traces, energies)`` where ``traces`` has shape
        ``(n_probes, n_steps)`` and ``energies`` lists ``(step, interior energy)``.
        """
        cfg = self.cfg
        source_nodes = self.source_nodes() if source_nodes is None else list(source_nodes)
        probe_nodes = cfg.rx_nodes() if probe_nodes is None else list(probe_nodes)
        n_steps = cfg.n_steps if n_steps is None else n_steps
        times = np.arange(n_steps) * cfg.dt
        amps = source_amplitude(times, cfg)
        pi = np.array([p[0] for p in probe_nodes])
        pj = np.array([p[1] for p in probe_nodes])
        traces = np.empty((len(probe_nodes), n_steps))
        energies = []
        state = self.new_state()
        for n in range(n_steps):
            self.step(state, source_nodes, amps[n])
            traces[:, n] = state.Ez[pi, pj]
            if energy_every and (n + 1) % energy_every == 0:
                energies.append((n + 1, field_energy(state, self.grid, cfg)))
            if snapshot_every and (n + 1) % snapshot_every == 0:
                write_snapshot(Path(snapshot_dir) / f"ez_{n + 1:05d}", state.Ez, cfg.dx, n + 1)
        self.state = state
        return traces, energies


def step(state: FieldState, grid, cfg: SimConfig, source_value: float = 0.0) -> FieldState:
    """One leapfrog update of ``state`` (a copy is returned; the input is untouched).

    PML auxiliary fields are carried in ``state.psi``. Repeated stepping is
    much faster through :class:`Yee2D`.
    """
    solver = Yee2D(grid, cfg)
    new = state.copy()
    for key, strips in solver.strips.items():
        for k, s in enumerate(strips):
            name = f"{key}{k}"
            if name in new.psi:
                s.psi = new.psi[name]
            new.psi[name] = s.psi
    return solver.step(new, solver.source_nodes(), source_value)


def run_simulation(grid, cfg: SimConfig) -> list[ProbeTrace]:
    """Soft-source run recording Ez at every receiver for ``cfg.n_steps`` steps."""
    solver = Yee2D(grid, cfg)
    traces, _ = solver.run()
    return [ProbeTrace(traces[k], k, cfg.dt, pos) for k, pos in enumerate(cfg.rx_positions())]


def field_energy(state: FieldState, grid, cfg: SimConfig, interior_only: bool = True) -> float:
    """Electromagnetic energy per unit length (J/m) over the non-PML region."""
    n = cfg.npml
    nx_pml = cfg.npml_x
    ex = slice(nx_pml, cfg.shape[0] - nx_pml) if interior_only else slice(None)
    ey = slice(n, cfg.shape[1] - n) if interior_only else slice(None)
    we = 0.5 * EPS0 * np.sum(grid.eps_r[ex, ey] * state.Ez[ex, ey] ** 2)
    wh = 0.5 * MU0 * (np.sum(state.Hx[ex, ey] ** 2) + np.sum(state.Hy[ex, ey] ** 2))
    return float((we + wh) * cfg.dx**2)


def write_snapshot(stem, array, dx: float, step_index: int) -> None:
    """Dump a field as ``<stem>.f32`` (little-endian float32, C order) plus ``<stem>.hdr``."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    stem.with_suffix(".f32").write_bytes(np.ascontiguousarray(array, dtype="<f4").tobytes())
    stem.with_suffix(".hdr").write_text(
        f"shape {array.shape[0]} {array.shape[1]}\ndtype float32-le\norder C\ndx {dx!r}\nstep {step_index}\n")


def read_snapshot(stem):
    stem = Path(stem)
    meta = dict(line.split(" ", 1) for line in stem.with_suffix(".hdr").read_text().splitlines())
    shape = tuple(int(v) for v in meta["shape"].split())
    data = np.frombuffer(stem.with_suffix(".f32").read_bytes(), dtype="<f4").reshape(shape)
    return data, float(meta["dx"]), int(meta["step"])
