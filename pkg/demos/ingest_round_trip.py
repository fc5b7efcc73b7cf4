"""From sweep files on disk to a predicted wall profile.

A measurement session is a folder of per-position sweep files (frequency,
real, imaginary) plus a ``session.json``. Here the "measurement" is a
simulated case exported in that format, so the ingested features can be
compared with the ones computed straight from the solver.

    python demos/ingest_round_trip.py [MODELS] [OUT]
        MODELS  folder with trained models (default .acceptance/models/frac90)
        OUT     where the session is written (default demo_out/session)
"""

import sys
from pathlib import Path

import numpy as np

from wallprofile import dataset, fdtd, scene
from wallprofile.evaluation import estimate_thickness
from wallprofile.ingest import load_session, parse_sweep_file, session_to_features, write_session
from wallprofile.models import load_model, predict
from wallprofile.signal import assemble_features, calibrate, traces_to_record

MODELS = Path(sys.argv[1] if len(sys.argv) > 1 else ".acceptance/models/frac90")
OUT = Path(sys.argv[2] if len(sys.argv) > 2 else "demo_out/session")

cfg = fdtd.SimConfig()
spec = scene.WallSpec(2, 1e-2, eps_r=5.0, th=0.25, case_id="demo-lossy-strips")
free = dataset.free_space_record(cfg)
wall = traces_to_record(fdtd.run_simulation(scene.build_material_grid(spec, cfg), cfg))
direct = assemble_features(calibrate(wall, free))

manifest = write_session(OUT, wall.spectra, free.spectra, wall.df, spec.case_id)
first = parse_sweep_file(OUT / "wall_p01_r001.csv")
print(f"session written to {manifest.parent}: {len(first)} points per sweep, "
      f"{first.frequencies[0] / 1e9:.3f}-{first.frequencies[-1] / 1e9:.3f} GHz, metadata {first.metadata}")

ingested = session_to_features(load_session(manifest))
print(f"ingested features equal the direct ones: {np.array_equal(direct, ingested)} "
      f"(max difference {np.abs(direct - ingested).max():.1e})")

for d in sorted(MODELS.glob("*_dielectric")):
    model = load_model(d)
    raster = predict(model, ingested)
    th = estimate_thickness(raster)
    estimate = f"{100 * th.meters:.1f} cm" if th.detected else "no wall"
    print(f"{model.arch:5s} thickness estimate {estimate} (true {100 * spec.thickness:.1f} cm)")
