"""Command-line entry point: ``wallprofile <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from ._io import atomic_write_json

DEFAULT_SEED = 20230
OUT_ENV = "WALLPROFILE_OUT"


class UsageError(Exception):
    pass


def _out_dir(args) -> Path:
    out = args.out or os.environ.get(OUT_ENV)
    if not out:
        raise UsageError(f"--out is required (or set {OUT_ENV})")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _fractions(text: str):
    try:
        parts = [float(p) for p in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad split {text!r}") from exc
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("split needs three comma-separated percentages")
    return tuple(p / 100.0 for p in parts)


def _existing_dir(text: str) -> Path:
    p = Path(text)
    if not p.is_dir():
        raise argparse.ArgumentTypeError(f"directory not found: {text}")
    return p


def _write_log(out: Path, name: str, argv, config: dict, started: float, summary: dict) -> None:
    atomic_write_json(out / f"run_log_{name}.json", {
        "subcommand": name,
        "argv": list(argv),
        "config": config,
        "seconds": round(time.perf_counter() - started, 3),
        "summary": summary,
    })


# --- subcommands -----------------------------------------------------------------

def cmd_gen_dataset(args, argv):
    from .dataset import generate_dataset
    from .fdtd import SimConfig
    from .scene import enumerate_cases

    out = _out_dir(args)
    cfg = SimConfig(envelope_base=args.envelope)
    cases = enumerate_cases()
    if args.limit:
        cases = cases[: args.limit]
    if args.every > 1:
        cases = cases[:: args.every]
    t0 = time.perf_counter()

    def progress(done, total, case_id):
        if args.verbose:
            print(f"[{done}/{total}] {case_id}", file=sys.stderr, flush=True)

    manifest = generate_dataset(cfg, out, workers=args.workers, cases=cases, progress=progress)
    counts = {}
    for e in manifest["samples"]:
        t = e["spec"]["wall_type"]
        counts[str(t)] = counts.get(str(t), 0) + 1
    summary = {"samples": len(manifest["samples"]), "per_type": counts,
               "generation_seconds": manifest["created"]["seconds"]}
    _write_log(out, "gen-dataset", argv, {"workers": args.workers, "sim_config": cfg.to_dict()}, t0, summary)
    print(json.dumps(summary))


def _load_split(dataset, fractions, seed):
    from .dataset import split

    return split(dataset, fractions, seed=seed)


def cmd_train(args, argv):
    from .dataset import load_dataset
    from .models import TrainConfig, prepare_data, save_model, train
    from .scene import PROFILE_KINDS

    out = _out_dir(args)
    dataset = load_dataset(args.dataset)
    sp = _load_split(dataset, args.split, args.split_seed)
    profiles = PROFILE_KINDS if args.profile == "both" else (args.profile,)
    t0 = time.perf_counter()
    summary = {}
    for profile in profiles:
        cfg = TrainConfig.for_arch(args.arch, epochs=args.epochs, lr=args.lr, seed=args.seed,
                                   batch_size=args.batch_size, lambda_rec=args.lambda_rec)
        data, stats = prepare_data(dataset, sp, profile)

        def progress(epoch, record, profile=profile):
            if args.verbose:
                last = {k: round(v[-1], 5) for k, v in record.items() if isinstance(v, list) and v}
                print(f"[{args.arch}/{profile}] epoch {epoch + 1}/{cfg.epochs} {last}",
                      file=sys.stderr, flush=True)

        model = train(args.arch, data, profile, cfg, stats, progress)
        model.split = sp.to_dict()
        target = out / f"{args.arch}_{profile}"
        save_model(model, target)
        rec = model.record
        summary[profile] = {"model": str(target), "train_seconds": round(rec["train_seconds"], 2),
                            **{k: rec[k][-1] for k in ("train_loss", "val_loss", "g_adv", "g_rec",
                                                       "c_real", "c_fake") if rec.get(k)}}
    config = {"arch": args.arch, "profiles": list(profiles), "dataset": str(args.dataset),
              "split": list(args.split), "split_seed": args.split_seed, "seed": args.seed,
              "epochs": args.epochs, "lr": args.lr, "batch_size": args.batch_size,
              "lambda_rec": args.lambda_rec}
    _write_log(out, "train", argv, config, t0, summary)
    print(json.dumps(summary))


def _model_dirs(root: Path):
    if (root / "model.json").exists():
        return [root]
    dirs = sorted(p.parent for p in root.glob("**/model.json"))
    if not dirs:
        raise UsageError(f"no model.json found under {root}")
    return dirs


def _timed_predict(model, X):
    from .models import predict

    t = time.perf_counter()
    preds = predict(model, X)
    return preds, (time.perf_counter() - t) / max(len(X), 1)


def cmd_evaluate(args, argv):
    from .dataset import Split, load_dataset
    from .evaluation import build_report, evaluate_model, write_report
    from .models import load_model

    out = _out_dir(args)
    dataset = load_dataset(args.dataset)
    t0 = time.perf_counter()
    models, splits, infer = {}, {}, {}
    for d in _model_dirs(args.models):
        m = load_model(d)
        if m.split is None:
            raise UsageError(f"{d}: model has no recorded split")
        sp = Split.from_dict(m.split)
        frac = round(sp.fractions[0], 6)
        splits[frac] = sp
        key = (m.arch, m.profile, frac)
        if key in models:
            raise UsageError(f"two models for {key}: {d}")
        models[key] = m
    report = build_report(models, dataset, splits)
    for key, m in models.items():
        _, infer[key] = _timed_predict(m, dataset.features[splits[key[2]].test[:8]])
        report.timing[(key[0], key[2])]["infer_seconds"] = max(
            report.timing[(key[0], key[2])]["infer_seconds"] or 0.0, infer[key])
    primary = max(splits)
    files = write_report(report, out, primary_fraction=primary)
    summary = {f"{a}/{p}/{f}": round(v, 5) for (a, p, f), v in sorted(report.averages().items())}
    _write_log(out, "evaluate", argv, {"models": str(args.models), "dataset": str(args.dataset)},
               t0, {"nmse": summary, "files": files})
    print((out / "methods.txt").read_text(), end="")
    if len(splits) > 1:
        print((out / "fractions.txt").read_text(), end="")


def _features_from_args(args):
    import numpy as np

    if args.session:
        from .ingest import load_session, session_to_features

        return session_to_features(load_session(args.session)), str(args.session)
    if args.features:
        x = np.load(args.features)
        return np.asarray(x, dtype=np.float64).reshape(-1), str(args.features)
    if args.dataset is not None:
        from .dataset import load_dataset

        ds = load_dataset(args.dataset)
        if not 0 <= args.index < len(ds):
            raise UsageError(f"--index {args.index} out of range for {len(ds)} samples")
        return ds.features[args.index].astype(np.float64), f"{args.dataset}#{args.index}"
    raise UsageError("give one of --session, --features or --dataset/--index")


def cmd_infer(args, argv):
    import numpy as np

    from .evaluation import estimate_thickness, write_raster
    from .models import denormalize, load_model, predict

    out = _out_dir(args)
    t0 = time.perf_counter()
    x, source = _features_from_args(args)
    summary = {"source": source, "outputs": {}}
    for d in _model_dirs(args.model):
        m = load_model(d)
        raster = predict(m, x)
        stem = out / f"{m.arch}_{m.profile}"
        files = write_raster(stem, raster)
        np.save(stem.with_suffix(".npy"), raster)
        entry = {"files": files + [stem.with_suffix(".npy").name],
                 "max_physical": float(denormalize(raster, m.profile).max())}
        if m.profile == "dielectric":
            th = estimate_thickness(raster)
            entry["thickness_m"] = th.meters
        summary["outputs"][f"{m.arch}/{m.profile}"] = entry
    _write_log(out, "infer", argv, {"model": str(args.model), "source": source}, t0, summary)
    print(json.dumps(summary))


def cmd_ingest(args, argv):
    import numpy as np

    from .ingest import load_session, session_to_features

    out = _out_dir(args)
    t0 = time.perf_counter()
    session = load_session(args.session)
    if args.normalize:
        session.normalization = args.normalize
    x = session_to_features(session)
    np.save(out / "features.npy", x)
    summary = {"session_id": session.session_id, "features": "features.npy", "length": int(x.size),
               "repeats": len(session.wall[1]), "normalization": session.normalization}
    _write_log(out, "ingest", argv, {"session": str(args.session)}, t0, summary)
    print(json.dumps(summary))


def cmd_plot(args, argv):
    from .dataset import Split, load_dataset
    from .evaluation import write_raster
    from .models import load_model, predict

    out = _out_dir(args)
    t0 = time.perf_counter()
    dataset = load_dataset(args.dataset)
    models = [load_model(d) for d in _model_dirs(args.models)] if args.models else []
    if args.indices:
        indices = args.indices
    elif models and models[0].split:
        indices = [int(i) for i in Split.from_dict(models[0].split).test[: args.count]]
    else:
        indices = list(range(min(args.count, len(dataset))))
    written = []
    for i in indices:
        cid = dataset.specs[i].case_id
        for kind in ("dielectric", "conductivity"):
            written += write_raster(out / f"{i:04d}_{cid}_{kind}_truth", dataset.labels(kind)[i])
        for m in models:
            written += write_raster(out / f"{i:04d}_{cid}_{m.profile}_{m.arch}",
                                    predict(m, dataset.features[i]))
    _write_log(out, "plot", argv, {"dataset": str(args.dataset), "indices": indices}, t0,
               {"files": len(written)})
    print(json.dumps({"files": len(written), "indices": indices}))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="wallprofile",
        description="Estimate wall permittivity/conductivity profiles from scattered fields.")
    sub = p.add_subparsers(dest="command", metavar="SUBCOMMAND")

    g = sub.add_parser("gen-dataset", help="simulate all wall cases and write a dataset container")
    g.add_argument("--out", help=f"output directory (default: ${OUT_ENV})")
    g.add_argument("--workers", type=int, default=1, help="parallel simulation processes (count)")
    g.add_argument("--limit", type=int, default=0, help="only the first N cases (count; 0 = all 867)")
    g.add_argument("--every", type=int, default=1, help="take every k-th case (stride; 1 = all)")
    g.add_argument("--envelope", choices=("10", "e"), default="10",
                   help="source envelope exponential base (dimensionless)")
    g.add_argument("-v", "--verbose", action="store_true", help="print per-case progress")
    g.set_defaults(func=cmd_gen_dataset)

    t = sub.add_parser("train", help="train one architecture for one or both profile kinds")
    t.add_argument("--arch", required=True, choices=("fcnn", "cnn", "gan"), help="network architecture")
    t.add_argument("--profile", default="both", choices=("dielectric", "conductivity", "both"),
                   help="which label raster to learn")
    t.add_argument("--dataset", required=True, type=_existing_dir, help="dataset directory")
    t.add_argument("--split", type=_fractions, default=(0.9, 0.05, 0.05),
                   help="train,validation,test percentages (default 90,5,5)")
    t.add_argument("--split-seed", type=int, default=DEFAULT_SEED,
                   help=f"seed for the stratified split (integer; default {DEFAULT_SEED})")
    t.add_argument("--seed", type=int, default=DEFAULT_SEED,
                   help=f"seed for initialization and shuffling (integer; default {DEFAULT_SEED})")
    t.add_argument("--epochs", type=int, help="training epochs (count; default 100, GAN 500)")
    t.add_argument("--lr", type=float, help="Adam learning rate (dimensionless; default 2e-4, CNN 1e-4)")
    t.add_argument("--batch-size", type=int, help="mini-batch size (samples; default 32)")
    t.add_argument("--lambda-rec", type=float,
                   help="GAN reconstruction weight (dimensionless; default 100, 0 = adversarial only)")
    t.add_argument("--out", help=f"output directory (default: ${OUT_ENV})")
    t.add_argument("-v", "--verbose", action="store_true", help="print per-epoch losses")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="NMSE and thickness tables for trained models")
    e.add_argument("--models", required=True, type=_existing_dir,
                   help="a model directory or a directory tree containing several")
    e.add_argument("--dataset", required=True, type=_existing_dir, help="dataset directory")
    e.add_argument("--out", help=f"output directory (default: ${OUT_ENV})")
    e.set_defaults(func=cmd_evaluate)

    i = sub.add_parser("infer", help="predict profile rasters for one feature vector")
    i.add_argument("--model", required=True, type=_existing_dir,
                   help="a model directory or a directory tree containing several")
    src = i.add_mutually_exclusive_group()
    src.add_argument("--session", type=Path, help="measurement session manifest (JSON)")
    src.add_argument("--features", type=Path, help=".npy file holding the 880 calibrated features")
    src.add_argument("--dataset", type=_existing_dir, help="dataset directory (use with --index)")
    i.add_argument("--index", type=int, default=0, help="sample index within --dataset (integer)")
    i.add_argument("--out", help=f"output directory (default: ${OUT_ENV})")
    i.set_defaults(func=cmd_infer)

    n = sub.add_parser("ingest", help="turn a measured sweep session into a feature vector")
    n.add_argument("--session", required=True, type=Path, help="session manifest (JSON)")
    n.add_argument("--normalize", choices=("none", "max-magnitude"),
                   help="override the manifest's amplitude normalization")
    n.add_argument("--out", help=f"output directory (default: ${OUT_ENV})")
    n.set_defaults(func=cmd_ingest)

    pl = sub.add_parser("plot", help="write truth/prediction rasters as PGM heatmaps and CSV grids")
    pl.add_argument("--dataset", required=True, type=_existing_dir, help="dataset directory")
    pl.add_argument("--models", type=_existing_dir, help="model directory tree (optional)")
    pl.add_argument("--indices", type=int, nargs="*", help="sample indices (default: first test samples)")
    pl.add_argument("--count", type=int, default=4, help="number of samples when --indices is absent")
    pl.add_argument("--out", help=f"output directory (default: ${OUT_ENV})")
    pl.set_defaults(func=cmd_plot)
    return p


def run(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 2
    try:
        args.func(args, argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report every pipeline failure as exit 1
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())
