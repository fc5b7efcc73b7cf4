"""Train a small FC-NN on a generated dataset and look at what it predicts.

Uses the library API directly (the CLI wraps the same calls). A short run of
20 epochs is enough to see the dielectric profile take shape; the full
100-epoch runs live in ``reproduce_tables.py``.

    python demos/training_quickstart.py [DATASET]     # default: .acceptance/dataset
"""

import sys

import numpy as np

from wallprofile import dataset
from wallprofile.evaluation import estimate_thickness, evaluate_model
from wallprofile.models import TrainConfig, denormalize, predict, prepare_data, train

ds = dataset.load_dataset(sys.argv[1] if len(sys.argv) > 1 else ".acceptance/dataset")
sp = dataset.split(ds, (0.9, 0.05, 0.05), seed=20230)
print(f"{len(ds)} samples: {len(sp.train)} train, {len(sp.validation)} validation, {len(sp.test)} test")

data, stats = prepare_data(ds, sp, "dielectric")
cfg = TrainConfig.for_arch("fcnn", epochs=20, seed=1)


def show(epoch, rec):
    if (epoch + 1) % 5 == 0:
        print(f"  epoch {epoch + 1:3d}  train BCE {rec['train_loss'][-1]:.4f}  val BCE {rec['val_loss'][-1]:.4f}")


model = train("fcnn", data, "dielectric", cfg, stats, progress=show)

rows = evaluate_model(model, ds, sp.test, 0.9)
by_type = {t: np.mean([r["nmse"] for r in rows if r["wall_type"] == t]) for t in (1, 2, 3)}
print("test NMSE by wall type:", ", ".join(f"type {t} {v:.3f}" for t, v in by_type.items()))

i = int(sp.test[0])
spec = ds.specs[i]
raster = predict(model, ds.features[i])
th = estimate_thickness(raster)
estimate = f"{100 * th.meters:.1f} cm" if th.detected else "no wall detected"
print(f"case {spec.case_id}: true thickness {100 * spec.thickness:.1f} cm, estimated {estimate}")
print(f"peak permittivity: true {denormalize(ds.dielectric[i].max(), 'dielectric'):.2f}, "
      f"predicted {denormalize(raster.max(), 'dielectric'):.2f}")
