"""One wall, one simulation: from material map to the 880-value feature vector.

Builds a homogeneous lossy wall, runs the solver with and without it,
subtracts the free-space record and prints where the wall echo sits in time
and frequency. A few Ez snapshots are written so the wavefront can be viewed.

    python demos/forward_simulation.py [OUT]        # default OUT: demo_out/forward
"""

import sys
from pathlib import Path

import numpy as np

from wallprofile import fdtd, scene
from wallprofile.signal import assemble_features, band_frequencies, calibrate, traces_to_record

OUT = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out/forward")
cfg = fdtd.SimConfig()
print(f"lattice {cfg.shape}, dx {1e3 * cfg.dx:.2f} mm, dt {1e12 * cfg.dt:.0f} ps, "
      f"{cfg.n_steps} steps, Courant {fdtd.courant_number(cfg):.2f}")

wall = scene.WallSpec(1, 1e-3, eps_r=6.0, th=0.2, case_id="demo-wall")
grid = scene.build_material_grid(wall, cfg)
print(f"wall cells: {(grid.eps_r > 1).sum()} with eps_r {grid.eps_r.max():.1f}, "
      f"sigma {grid.sigma.max():.0e} S/m")

# the wall run also dumps Ez every 200 steps for inspection
sim = fdtd.Yee2D(grid, cfg)
traces, _ = sim.run(snapshot_dir=OUT / "snapshots", snapshot_every=200)
free = traces_to_record(fdtd.run_simulation(scene.build_material_grid(None, cfg), cfg))
probe_traces = [fdtd.ProbeTrace(v, i, cfg.dt) for i, v in enumerate(traces)]
record = calibrate(traces_to_record(probe_traces), free)

# time domain: the calibrated trace is the wall echo alone
t = (np.arange(cfg.n_steps) + 1) * cfg.dt
echo = traces[0] - np.real(np.fft.ifft(free.spectra[0]))
peak = t[np.argmax(np.abs(echo))]
rx = cfg.rx_positions()[0]
path = np.hypot(rx[0] - cfg.tx[0], 2 * scene.WALL_FRONT_Y - cfg.tx[1] - rx[1])
print(f"strongest echo at receiver 1: {1e9 * peak:.2f} ns; pulse centre {1e9 * cfg.mu_t:.2f} ns "
      f"plus the {path:.2f} m mirror path gives {1e9 * (cfg.mu_t + path / 2.998e8):.2f} ns")

# frequency domain: the band the networks see
x = assemble_features(record)
f = band_frequencies(record.df)
mag = np.abs(x[:440] + 1j * x[440:]).reshape(10, -1).mean(axis=0)
print(f"feature band {f[0] / 1e9:.3f}-{f[-1] / 1e9:.3f} GHz in {len(f)} bins, "
      f"strongest echo near {f[np.argmax(mag)] / 1e9:.2f} GHz")
OUT.mkdir(parents=True, exist_ok=True)
np.save(OUT / "features.npy", x)
print(f"feature vector ({x.size} values) and {len(list((OUT / 'snapshots').glob('*.f32')))} "
      f"snapshots written under {OUT}")
