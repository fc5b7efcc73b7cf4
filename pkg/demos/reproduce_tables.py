"""Full pipeline behind the comparison tables: dataset, 18 trained models, reports.

Stages run through the command-line interface so each one leaves a run log.
Anything already on disk is reused, so the script can be interrupted and
restarted. On one CPU core expect roughly half an hour for the dataset, a few
minutes per FC-NN, ~15 minutes per CNN and 2-3 hours per GAN.

    python demos/reproduce_tables.py [ROOT]        # default ROOT: .acceptance
"""

import sys
import time
from pathlib import Path

from wallprofile import cli

ROOT = Path(sys.argv[1] if len(sys.argv) > 1 else ".acceptance")
SEED = cli.DEFAULT_SEED
FRACTIONS = {90: "90,5,5", 80: "80,10,10", 70: "70,15,15"}


def step(argv):
    t = time.time()
    print(">>", "wallprofile", " ".join(argv), flush=True)
    status = cli.run(argv)
    print(f"<< exit {status} after {(time.time() - t) / 60:.1f} min", flush=True)
    if status:
        sys.exit(status)


dataset = ROOT / "dataset"
if not (dataset / "manifest.json").exists():
    step(["gen-dataset", "--out", str(dataset), "--workers", "4"])

# 90/5/5 first: it feeds the main table and the thickness/GAN-health checks
for pct, split in FRACTIONS.items():
    for arch in ("fcnn", "cnn", "gan"):
        out = ROOT / "models" / f"frac{pct}"
        if all((out / f"{arch}_{p}" / "model.json").exists() for p in ("dielectric", "conductivity")):
            continue
        step(["train", "--arch", arch, "--dataset", str(dataset), "--split", split,
              "--split-seed", str(SEED), "--seed", str(SEED), "--out", str(out)])

step(["evaluate", "--models", str(ROOT / "models"), "--dataset", str(dataset),
      "--out", str(ROOT / "report")])
step(["plot", "--dataset", str(dataset), "--models", str(ROOT / "models" / "frac90"),
      "--count", "3", "--out", str(ROOT / "figures")])
