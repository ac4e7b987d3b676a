"""Command-line entry point for the full pipeline.

Subcommands: ingest, stats, split, train, search, eval, explain, stream,
synth. Every run writes <out>/manifest.json capturing the resolved arguments
and derived seeds, so any run can be repeated exactly from its manifest.

Randomness: all randomness flows from --seed. Component seeds are derived as
SeedSequence([seed, INDEX]) with fixed component indices (split=1, train=2,
search=3, synth=4, stream=5), so different stages never share a stream.

Path flags fall back to environment variables (paths only): CROWDFACE_RATINGS,
CROWDFACE_IMAGES, CROWDFACE_OUT, CROWDFACE_CHECKPOINT.

On failure the process exits nonzero and writes a single machine-parsable
JSON line to stderr: {"error": "<ExceptionType>", "message": "..."}.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, dataset, explain, model, ratings, search, stream
from .errors import CrowdfaceError, NoDataError
from .presets import PRESETS, get_preset

_COMPONENT_INDEX = {"split": 1, "train": 2, "search": 3, "synth": 4, "stream": 5}


def derive_seed(master: int, component: str) -> int:
    """Documented fan-out rule: SeedSequence([master, component index])."""
    idx = _COMPONENT_INDEX[component]
    return int(np.random.SeedSequence([abs(int(master)), idx]).generate_state(1)[0])


def _env_default(var: str):
    return os.environ.get(var)


def _write_manifest(out_dir: Path, subcommand: str, args: argparse.Namespace,
                    derived: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    resolved = {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in sorted(vars(args).items())
        if k != "func"
    }
    manifest = {
        "tool": "crowdface",
        "version": __version__,
        "subcommand": subcommand,
        "args": resolved,
        "derived_seeds": derived,
    }
    with (out_dir / "manifest.json").open("w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _load_scored(args, trait: str | None):
    """Load images (+optional alignment) and consensus scores into one batch."""
    if args.consensus:
        scores = ratings.read_consensus(args.consensus)
    elif args.ratings:
        scores = ratings.aggregate(ratings.read_ratings(args.ratings))
    else:
        raise NoDataError("need --consensus or --ratings")
    traits = sorted({s.trait for s in scores})
    if trait is None:
        if len(traits) != 1:
            raise NoDataError(f"--trait required; file has traits {traits}")
        trait = traits[0]
    landmarks = dataset.read_landmarks(args.landmarks) if getattr(args, "landmarks", None) else None
    images = dataset.load_images(args.images, landmarks=landmarks)
    if landmarks is not None:
        images = [dataset.align_face(im, side=args.side) for im in images]
    return dataset.ScoredImages.from_pairs(images, scores, trait)


def _split_sets(scored, args):
    if getattr(args, "split", None):
        split = dataset.DataSplit.from_dict(dataset.load_manifest(args.split))
    else:
        split = dataset.make_split(scored.ids, derive_seed(args.seed, "split"))
    return (
        scored.subset(split.train_ids),
        scored.subset(split.val_ids),
        scored.subset(split.test_ids),
        split,
    )


def _resolve_model_config(args):
    if args.preset:
        preset = get_preset(args.preset)
        arch, lr = preset.architecture, preset.learning_rate
    elif args.config:
        arch, lr = model.ArchitectureConfig.load(args.config), 1e-4
    else:
        raise NoDataError("need --preset or --config")
    if getattr(args, "lr", None):
        lr = args.lr
    return arch, lr


# --- subcommands -------------------------------------------------------------


def cmd_ingest(args) -> int:
    out = Path(args.out)
    scores = ratings.aggregate(ratings.read_ratings(args.ratings))
    out.mkdir(parents=True, exist_ok=True)
    ratings.write_consensus(scores, out / "consensus.csv")
    _write_manifest(out, "ingest", args, {})
    print(f"wrote {len(scores)} consensus rows to {out / 'consensus.csv'}")
    return 0


def cmd_stats(args) -> int:
    out = Path(args.out)
    scores = ratings.aggregate(ratings.read_ratings(args.ratings))
    traits = [args.trait] if args.trait else sorted({s.trait for s in scores})
    rows = [ratings.trait_stats(scores, t) for t in traits]
    header = (f"{'trait':<18} {'mean':>7} {'std':>7} {'mean_std':>9} {'mean_n':>8} "
              f"{'images':>7}")
    print(header)
    lines = [header]
    for st in rows:
        line = (f"{st.trait:<18} {st.mean_of_ratings:>7.2f} {st.std_of_ratings:>7.2f} "
                f"{st.mean_std_of_ratings:>9.2f} {st.mean_num_of_ratings:>8.2f} "
                f"{st.n_images:>7d}")
        print(line)
        lines.append(line)
    out.mkdir(parents=True, exist_ok=True)
    (out / "stats.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    with (out / "stats.json").open("w", encoding="utf-8") as fh:
        json.dump([st.__dict__ for st in rows], fh, indent=2)
    _write_manifest(out, "stats", args, {})
    return 0


def cmd_split(args) -> int:
    out = Path(args.out)
    if args.ids:
        ids = [ln.strip() for ln in Path(args.ids).read_text(encoding="utf-8").splitlines()
               if ln.strip()]
    elif args.images:
        ids = [p.stem for p in sorted(Path(args.images).glob("*.png"))]
    elif args.n:
        ids = [f"img{i:05d}" for i in range(args.n)]
    else:
        raise NoDataError("need --ids, --images, or --n")
    seed = derive_seed(args.seed, "split")
    split = dataset.make_split(ids, seed)
    out.mkdir(parents=True, exist_ok=True)
    dataset.save_manifest(split.to_dict(), out / "split.json")
    _write_manifest(out, "split", args, {"split": seed})
    print(f"split {len(ids)} ids -> {len(split.train_ids)}/{len(split.val_ids)}/"
          f"{len(split.test_ids)} (train/val/test) at {out / 'split.json'}")
    return 0


def cmd_train(args) -> int:
    out = Path(args.out)
    scored = _load_scored(args, args.trait)
    train_set, val_set, _, split = _split_sets(scored, args)
    arch, lr = _resolve_model_config(args)
    seed = derive_seed(args.seed, "train")
    tcfg = model.TrainingConfig(
        learning_rate=lr,
        batch_size=args.batch_size,
        max_epochs=args.epochs,
        early_stopping_patience=args.patience,
        augmentation=dataset.AugmentationConfig(amount=args.augment),
        seed=seed,
    )
    trained = model.train(arch, tcfg, train_set, val_set, trait=scored.trait,
                          log_fn=print)
    out.mkdir(parents=True, exist_ok=True)
    model.save(trained, out / "model.npz")
    dataset.save_manifest(split.to_dict(), out / "split.json")
    with (out / "history.csv").open("w", encoding="utf-8") as fh:
        fh.write("epoch,train_r2,val_r2\n")
        for h in trained.history:
            fh.write(f"{h.epoch},{h.train_r2!r},{h.val_r2!r}\n")
    _write_manifest(out, "train", args, {"train": seed, "split": split.seed})
    best = max((h.val_r2 for h in trained.history if np.isfinite(h.val_r2)), default=float("nan"))
    print(f"trained {scored.trait}: best val R2 {best:.4f} "
          f"(epoch {trained.best_epoch}); checkpoint at {out / 'model.npz'}")
    return 0


def cmd_search(args) -> int:
    out = Path(args.out)
    scored = _load_scored(args, args.trait)
    train_set, val_set, _, split = _split_sets(scored, args)
    space = (search.SearchSpace.load(args.space) if args.space
             else search.SearchSpace.for_side(scored.side))
    seed = derive_seed(args.seed, "search")
    out.mkdir(parents=True, exist_ok=True)
    result = search.run_search(
        space, args.budget, args.strategy, (train_set, val_set),
        short_epochs=args.epochs, seed=seed, log_path=out / "trials.jsonl",
        keep_best_model=True, log_fn=print,
    )
    with (out / "search.json").open("w", encoding="utf-8") as fh:
        json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
    if result.best_model is not None:
        model.save(result.best_model, out / "model.npz")
    _write_manifest(out, "search", args, {"search": seed, "split": split.seed})
    if result.best is None:
        print("search finished: no successful trials")
        return 1
    print(f"search finished: best trial {result.best.trial_id} "
          f"val R2 {result.best.val_r2:.4f}; log at {out / 'trials.jsonl'}")
    return 0


def cmd_eval(args) -> int:
    out = Path(args.out)
    trained = model.load(args.checkpoint)
    scored = _load_scored(args, args.trait or trained.trait or None)
    if args.split:
        train_set, val_set, test_set, _ = _split_sets(scored, args)
        subsets = {"train": train_set, "val": val_set, "test": test_set}
        targets = subsets if args.subset == "all" else {args.subset: subsets[args.subset]}
    else:
        targets = {"all": scored}
    reports = [model.evaluate(trained, s, split=name) for name, s in sorted(targets.items())]
    out.mkdir(parents=True, exist_ok=True)
    with (out / "eval.json").open("w", encoding="utf-8") as fh:
        json.dump([r.__dict__ for r in reports], fh, indent=2, sort_keys=True)
    for r in reports:
        print(f"{r.trait:>12} {r.split:>6}  R2 {r.r_squared:.3f}  (n={r.n_images})")
    _write_manifest(out, "eval", args, {})
    return 0


def cmd_explain(args) -> int:
    out = Path(args.out)
    trained = model.load(args.checkpoint)
    images_path = Path(args.images)
    landmarks = dataset.read_landmarks(args.landmarks) if args.landmarks else None
    if images_path.is_file():
        imgs = [dataset.load_image(images_path)]
    else:
        imgs = dataset.load_images(images_path, landmarks=landmarks)
        if landmarks is not None:
            imgs = [dataset.align_face(im, side=trained.side) for im in imgs]
        imgs = imgs[: args.count]
    cfg = explain.OcclusionConfig.for_side(trained.side)
    out.mkdir(parents=True, exist_ok=True)
    if len(imgs) == 1:
        heat = explain.occlusion_map(trained, imgs[0], cfg)
        face_px = imgs[0].pixels
    else:
        heat, face_px = explain.average_heatmap(trained, imgs, cfg)
    explain.save_heatmap(heat, out / "heatmap.csv")
    explain.render_overlay(heat, face_px, out / "overlay.png")
    grid = explain.filter_responses(trained, imgs[0])
    explain.save_filter_grid(grid, out / "filters.npz")
    explain.save_filter_montage(grid, out / "filters.png")
    _write_manifest(out, "explain", args, {})
    print(f"explained {len(imgs)} image(s): heatmap/overlay/filters under {out}")
    return 0


def cmd_stream(args) -> int:
    out = Path(args.out)
    models = {}
    for ckpt in args.checkpoint:
        m = model.load(ckpt)
        models[m.trait or Path(ckpt).stem] = m
    detector = stream.FixtureDetector(args.detections)
    frames = stream.frames_from_dir(args.frames, fps=args.fps)
    scores, stats = stream.measure_stream(frames, models, detector,
                                          workers=args.workers)
    paths = stream.summarize_stream(scores, out)
    if args.annotate:
        stream.annotate_frames(frames, scores, out / "frames")
    _write_manifest(out, "stream", args, {})
    found = sum(1 for s in scores if s.face_found)
    print(f"processed {stats.n_frames} frames ({found} with faces) at "
          f"{stats.fps:.1f} fps; outputs under {out}")
    return 0


def cmd_synth(args) -> int:
    out = Path(args.out)
    seed = derive_seed(args.seed, "synth")
    images, scores, manifest = dataset.generate_synthetic(
        n=args.n, side=args.side, seed=seed, sigma=args.sigma
    )
    dataset.save_images(images, out / "images")
    ratings.write_consensus(scores, out / "consensus.csv")
    dataset.save_manifest(manifest, out / "synthetic.json")
    _write_manifest(out, "synth", args, {"synth": seed})
    print(f"generated {len(images)} synthetic images under {out}")
    return 0


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crowdface",
        description="Crowd-consensus face attribute models: ingest ratings, "
                    "train and search CNN regressors, evaluate, explain, and "
                    "score image sequences.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=fn)
        p.add_argument("--out", default=_env_default("CROWDFACE_OUT"), required=False,
                       help="output directory (env CROWDFACE_OUT)")
        p.add_argument("--seed", type=int, default=0, help="master seed")
        p.add_argument("--workers", type=int, default=1,
                       help="worker threads for compute-heavy stages")
        return p

    def add_data_flags(p, need_images=True):
        p.add_argument("--ratings", default=_env_default("CROWDFACE_RATINGS"),
                       help="raw ratings CSV (env CROWDFACE_RATINGS)")
        p.add_argument("--consensus", help="pre-aggregated consensus CSV")
        p.add_argument("--trait", help="trait name (required if file has several)")
        if need_images:
            p.add_argument("--images", default=_env_default("CROWDFACE_IMAGES"),
                           help="directory of <image_id>.png files (env CROWDFACE_IMAGES)")
            p.add_argument("--landmarks", help="JSON eye-landmark file; triggers alignment")
            p.add_argument("--side", type=int, default=dataset.DEFAULT_SIDE,
                           help="aligned image side length")
            p.add_argument("--split", help="existing split.json to reuse")

    p = add("ingest", cmd_ingest, "aggregate raw ratings into consensus scores")
    p.add_argument("--ratings", default=_env_default("CROWDFACE_RATINGS"), required=False)

    p = add("stats", cmd_stats, "per-trait consensus statistics report")
    p.add_argument("--ratings", default=_env_default("CROWDFACE_RATINGS"), required=False)
    p.add_argument("--trait")

    p = add("split", cmd_split, "write a deterministic 80/10/10 split manifest")
    p.add_argument("--ids", help="text file with one image id per line")
    p.add_argument("--images", default=_env_default("CROWDFACE_IMAGES"))
    p.add_argument("--n", type=int, help="synthesize ids img00000..img<n-1>")

    p = add("train", cmd_train, "train one trait model")
    add_data_flags(p)
    p.add_argument("--preset", help=f"one of: {', '.join(sorted(PRESETS))}")
    p.add_argument("--config", help="architecture config JSON")
    p.add_argument("--lr", type=float, help="override the preset learning rate")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--augment", type=float, default=0.0,
                   help="augmentation amount in [0, 1]")

    p = add("search", cmd_search, "hyperparameter search (random or TPE)")
    add_data_flags(p)
    p.add_argument("--budget", type=int, default=30)
    p.add_argument("--strategy", choices=("random", "tpe"), default="tpe")
    p.add_argument("--epochs", type=int, default=15, help="short-trial epochs")
    p.add_argument("--space", help="search space JSON")

    p = add("eval", cmd_eval, "R^2 of a checkpoint on a scored image set")
    add_data_flags(p)
    p.add_argument("--checkpoint", default=_env_default("CROWDFACE_CHECKPOINT"))
    p.add_argument("--subset", choices=("train", "val", "test", "all"), default="all")

    p = add("explain", cmd_explain, "occlusion heatmaps, overlays, filter grids")
    p.add_argument("--checkpoint", default=_env_default("CROWDFACE_CHECKPOINT"))
    p.add_argument("--images", default=_env_default("CROWDFACE_IMAGES"),
                   help="image directory or a single PNG")
    p.add_argument("--landmarks")
    p.add_argument("--count", type=int, default=100,
                   help="max images for the averaged heatmap")

    p = add("stream", cmd_stream, "score frame sequences per trait")
    p.add_argument("--checkpoint", action="append", required=False, default=None,
                   help="model checkpoint (repeat per trait)")
    p.add_argument("--frames", help="directory of numbered frame PNGs")
    p.add_argument("--detections", help="sidecar JSON with boxes and landmarks")
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--annotate", action="store_true",
                   help="also write annotated frames")

    p = add("synth", cmd_synth, "generate a planted-patch synthetic dataset")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--side", type=int, default=64)
    p.add_argument("--sigma", type=float, default=0.05)

    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if not args.out:
        raise NoDataError("need --out (or env CROWDFACE_OUT)")
    if args.subcommand == "stream" and not args.checkpoint:
        env = _env_default("CROWDFACE_CHECKPOINT")
        if env:
            args.checkpoint = [env]
        else:
            raise NoDataError("need at least one --checkpoint")
    if getattr(args, "workers", 1) and args.workers > 1:
        import torch

        torch.set_num_threads(args.workers)
    return args.func(args)


def main(argv=None) -> int:
    try:
        return run(argv)
    except (CrowdfaceError, OSError, ValueError, KeyError) as exc:
        line = json.dumps({"error": type(exc).__name__, "message": str(exc)})
        print(line, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
