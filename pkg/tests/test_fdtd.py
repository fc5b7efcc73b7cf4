import numpy as np
import pytest

from oracles import SHEET_CFG, continuum_gamma, fdtd_gamma, pml_residuals_db
from wallprofile import fdtd, scene
from wallprofile.fdtd import C0, InstabilityError, SimConfig, Yee2D

CFG = SimConfig()


@pytest.fixture(scope="module")
def free_grid():
    return scene.build_material_grid(None, CFG)


@pytest.fixture(scope="module")
def free_run(free_grid):
    solver = Yee2D(free_grid, CFG)
    traces, energies = solver.run(energy_every=25)
    return traces, energies


def test_default_lattice():
    assert CFG.n_steps == 1075
    assert CFG.dx == pytest.approx(C0 / 2.4e9 / 10)
    assert CFG.npml == 20
    assert CFG.shape == (241, 241)
    pitch = np.diff([x for x, _ in CFG.rx_positions()])
    assert np.allclose(pitch, 0.56 / 9)
    assert len(set(CFG.rx_nodes())) == 10


def test_courant_number():
    assert fdtd.courant_number(CFG) == pytest.approx(0.480, abs=5e-4)
    assert fdtd.courant_number(SimConfig(dt=0.0)) == 0.0
    assert fdtd.courant_number(SimConfig(dt=4e-11)) == pytest.approx(2 * fdtd.courant_number(CFG))
    assert fdtd.courant_number(CFG) <= 1 / np.sqrt(2)


def test_source_amplitude_values():
    s = CFG.sigma_t
    peak = 1 / np.sqrt(2 * np.pi * s * s)
    assert peak == pytest.approx(3.068e9, rel=1e-3)
    assert fdtd.source_amplitude(2e-9, CFG) == pytest.approx(peak * np.sin(9.6 * np.pi), rel=1e-12)
    assert fdtd.source_amplitude(2e-9, CFG) == pytest.approx(-2.918e9, rel=1e-3)
    assert abs(fdtd.source_amplitude(0.0, CFG)) < 1e-100 * peak


def test_source_envelope_bases():
    t = np.linspace(0, 4e-9, 4001)
    # base 10 with width s equals base e with width s / sqrt(ln 10)
    a = fdtd.source_amplitude(t, CFG)
    narrow = SimConfig(envelope_base="e", sigma_t=CFG.sigma_t / np.sqrt(np.log(10)))
    b = fdtd.source_amplitude(t, narrow) * narrow.sigma_t / CFG.sigma_t
    assert np.allclose(a, b, rtol=1e-9, atol=1e-9 * np.abs(a).max())
    with pytest.raises(ValueError):
        fdtd.source_amplitude(0.0, SimConfig(envelope_base="2"))


def test_zero_fields_stay_zero(free_grid):
    solver = Yee2D(free_grid, CFG)
    state = solver.new_state()
    for _ in range(50):
        solver.step(state)
    assert not state.Ez.any() and not state.Hx.any() and not state.Hy.any()
    assert state.step_index == 50


def test_single_impulse_curl_signs(free_grid):
    solver = Yee2D(free_grid, CFG)
    state = solver.new_state()
    i, j = 120, 120
    state.Ez[i, j] = 1.0
    solver.step(state)
    ch = CFG.dt / (fdtd.MU0 * CFG.dx)
    assert state.Hx[i, j] == pytest.approx(ch) and state.Hx[i, j - 1] == pytest.approx(-ch)
    assert state.Hy[i, j] == pytest.approx(-ch) and state.Hy[i - 1, j] == pytest.approx(ch)
    assert np.count_nonzero(state.Hx) == 2 and np.count_nonzero(state.Hy) == 2


def test_functional_step_leaves_input_untouched(free_grid):
    state = fdtd.FieldState.zeros(CFG.shape)
    state.Ez[100, 100] = 1.0
    new = fdtd.step(state, free_grid, CFG)
    assert state.step_index == 0 and not state.Hx.any()
    assert new.step_index == 1 and new.Hx.any()


def test_instability_is_reported():
    unstable = SimConfig(dt=5e-11)  # Courant 1.2
    solver = Yee2D(scene.build_material_grid(None, unstable), unstable)
    with pytest.raises(InstabilityError, match="step"):
        solver.run(n_steps=2000)


def test_grid_mismatch_rejected(free_grid):
    with pytest.raises(ValueError):
        Yee2D(free_grid, SimConfig(domain_x=2.0))


def test_free_space_traces_nonzero_and_bounded(free_run):
    traces, _ = free_run
    assert traces.shape == (10, 1075)
    assert np.all(np.abs(traces).max(axis=1) > 0)
    assert np.isfinite(traces).all()
    late = np.abs(traces[:, -100:]).max()
    assert late < 1e-2 * np.abs(traces).max()


def test_free_space_energy_absorbed(free_run):
    _, energies = free_run
    e = np.array([v for _, v in energies])
    assert e[-1] < 1e-4 * e.max()
    tail = e[3 * len(e) // 4:]
    assert np.all(np.diff(tail) <= 0)


def test_free_space_traces_mirror_symmetric(free_run):
    traces, _ = free_run
    assert np.abs(traces - traces[::-1]).max() <= 1e-6 * np.abs(traces).max()


def test_wall_traces_mirror_symmetric():
    spec = scene.WallSpec(2, 1e-2, eps_r=5.4, th=0.4)
    g = scene.build_material_grid(spec, CFG)
    traces, _ = Yee2D(g, CFG).run()
    assert np.abs(traces - traces[::-1]).max() <= 1e-6 * np.abs(traces).max()


def test_reciprocity(free_grid):
    tx, rx = CFG.tx_node(), CFG.rx_nodes()[2]
    a, _ = Yee2D(free_grid, CFG).run(source_nodes=[tx], probe_nodes=[rx])
    b, _ = Yee2D(free_grid, CFG).run(source_nodes=[rx], probe_nodes=[tx])
    assert np.abs(a - b).max() <= 1e-6 * np.abs(a).max()


def test_runs_are_bit_identical():
    spec = scene.WallSpec(1, 1e-3, eps_r=6.0, th=0.2)
    g = scene.build_material_grid(spec, CFG)
    a = [t.values for t in fdtd.run_simulation(g, CFG)]
    b = [t.values for t in fdtd.run_simulation(g, CFG)]
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


@pytest.mark.parametrize("eps,th", [(4.0, 0.2), (8.0, 0.3)])
def test_plane_wave_slab_matches_discrete_oracle(eps, th):
    sim, disc = fdtd_gamma(scene.WallSpec(1, 1e-4, eps_r=eps, th=th), 2.4e9, SHEET_CFG)
    assert abs(abs(sim) - abs(disc)) <= 0.01 * abs(disc)


def test_continuum_oracle_limits():
    # half-wave slab is transparent; air slab reflects nothing
    eps, f = 4.0, 2.4e9
    half_wave = C0 / f / np.sqrt(eps) / 2
    assert abs(continuum_gamma(eps, half_wave, f)) < 1e-12
    assert abs(continuum_gamma(1.0, 0.3, f)) < 1e-15
    # quarter-wave slab reaches the maximum |r(1 - ph)/(1 - r^2 ph)| with ph = -1
    r = (1 - 2) / (1 + 2)
    assert abs(continuum_gamma(eps, half_wave / 2, f)) == pytest.approx(abs(2 * r / (1 + r * r)))


def test_pml_reflection_below_minus_40db():
    assert pml_residuals_db().max() < -40.0


def test_snapshot_round_trip(tmp_path):
    a = np.arange(12.0).reshape(3, 4)
    fdtd.write_snapshot(tmp_path / "ez_00010", a, 0.0125, 10)
    data, dx, step = fdtd.read_snapshot(tmp_path / "ez_00010")
    assert np.array_equal(data, a) and dx == 0.0125 and step == 10
    assert (tmp_path / "ez_00010.f32").stat().st_size == 48


def test_run_writes_snapshots(tmp_path, free_grid):
    Yee2D(free_grid, CFG).run(n_steps=20, snapshot_dir=tmp_path, snapshot_every=10)
    assert sorted(p.name for p in tmp_path.glob("*.f32")) == ["ez_00010.f32", "ez_00020.f32"]
