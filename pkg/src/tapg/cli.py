"""Command-line entry point: synth, train, infer, eval, ablate, gradcheck."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import MODES, RunConfig, dump_config, load_config
from .data import FeatureSequence, GroundTruth, load_annotations, load_features, save_annotations, \
    save_features
from .tensor import ConfigError

logger = logging.getLogger("tapg")

ANNOTATIONS = "annotations.json"
FEATURES = "features"


def load_dataset(data_dir) -> tuple[list[FeatureSequence], dict[str, GroundTruth]]:
    """``data_dir/features/*.meta.json`` (or bare CSVs) plus ``data_dir/annotations.json``."""
    data_dir = Path(data_dir)
    feat_dir = data_dir / FEATURES
    if not feat_dir.is_dir():
        raise FileNotFoundError(f"{feat_dir}: feature directory not found")
    metas = sorted(feat_dir.glob("*.meta.json"))
    covered = {m.name[: -len(".meta.json")] for m in metas}
    bare = sorted(p for p in feat_dir.glob("*.csv") if p.stem not in covered)
    seqs = [load_features(p) for p in metas + bare]
    for s in seqs:
        s.validate()
    ann = data_dir / ANNOTATIONS
    gts = load_annotations(ann) if ann.exists() else {}
    return seqs, gts


def _pairs(seqs, gts):
    missing = [s.video_id for s in seqs if s.video_id not in gts]
    if missing:
        raise ConfigError(f"no annotations for videos: {missing[:5]}")
    return [(s, gts[s.video_id]) for s in seqs]


def _config(args) -> RunConfig:
    overrides = {"seed": args.seed, "precision": args.precision}
    for key in ("epochs", "suppress"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    return load_config(args.config, args.mode, **overrides)


# subcommands

def cmd_synth(args) -> int:
    from .synth import DatasetSpec, synth_generate

    spec = DatasetSpec.load(args.spec) if args.spec else DatasetSpec()
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    if args.num_videos is not None:
        spec = replace(spec, num_videos=args.num_videos)
    out = Path(args.out)
    videos = synth_generate(spec)
    for v in videos:
        save_features(v.seq, out / FEATURES, args.format)
    save_annotations([v.gt for v in videos], out / ANNOTATIONS)
    (out / "noise_segments.json").write_text(json.dumps(
        {v.seq.video_id: [list(s) for s in v.noise_segments] for v in videos}, indent=1))
    (out / "spec.json").write_text(spec.to_json())
    print(f"wrote {len(videos)} videos to {out}")
    return 0


def cmd_train(args) -> int:
    from .train import train

    cfg = _config(args)
    seqs, gts = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg))
    res = train(cfg, _pairs(seqs, gts), out, resume=args.resume, log_every=args.log_every)
    if res.halted:
        print(f"training halted: {res.halted}", file=sys.stderr)
        return 2
    if res.history:
        h = res.history
        print(f"trained {len(h)} epochs: loss {h[0]['total']:.4f} -> {h[-1]['total']:.4f}")
    print(f"checkpoint: {res.checkpoint}")
    return 0


def cmd_infer(args) -> int:
    from .postproc import write_proposals
    from .train import infer, model_from_checkpoint

    model, ck = model_from_checkpoint(args.checkpoint)
    cfg = ck.config
    if args.suppress is not None:
        cfg = replace(cfg, suppress=args.suppress)
    if args.precision is not None and args.precision != cfg.precision:
        raise ConfigError(f"checkpoint precision is {cfg.precision}; cannot infer at {args.precision}")
    if args.mode is not None and args.mode != cfg.mode:
        raise ConfigError(f"checkpoint was trained in mode {cfg.mode!r}, not {args.mode!r}")
    seqs, _ = load_dataset(args.data)
    props = infer(model, seqs, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "proposals.jsonl"
    write_proposals(path, [p for s in seqs for p in props[s.video_id]])
    print(f"wrote {sum(len(v) for v in props.values())} proposals to {path}")
    return 0


def cmd_eval(args) -> int:
    from .postproc import read_proposals
    from .train import evaluate

    props = read_proposals(args.proposals)
    gts = load_annotations(args.annotations)
    report = evaluate(props, gts, args.mode or "synthetic")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2))
    report.write_curve(out / "ar_curve.csv")
    for k, v in report.to_dict().items():
        print(f"{k:>8}: {v:.2f}")
    return 0


def cmd_ablate(args) -> int:
    from .ablation import format_summary, run_ablation

    cfg = _config(args)
    seqs, gts = load_dataset(args.data)
    fusions = tuple(args.fusions.split(",")) if args.fusions else None
    variants = tuple(args.variants.split(",")) if args.variants else None
    kw = {}
    if fusions:
        kw["fusions"] = fusions
    if variants:
        kw["variants"] = variants
    results = run_ablation(cfg, _pairs(seqs, gts), out_dir=args.out, **kw)
    print(format_summary(results))
    return 0 if all(c.decreased for c in results) else 2


def cmd_gradcheck(args) -> int:
    from .data import GroundTruth as GT
    from .gradcheck import grad_check
    from .model import ProposalModel
    from .tensor import set_precision

    base = {"T": 8, "C": 8, "D": 6, "heads": 2, "num_samples": 8, "bnd_hidden": 8,
            "cmp_hidden_3d": 8, "cmp_hidden_2d": 8, "precision": "f64"}
    cfg = load_config(args.config, args.mode, **{**base, "seed": args.seed,
                                                 "precision": args.precision or "f64"})
    set_precision(cfg.precision)
    model = ProposalModel(cfg)
    rng = np.random.default_rng(cfg.seed)
    x = rng.standard_normal((cfg.T, cfg.C))
    gt = GT("gradcheck", [(1.0, cfg.T / 2), (cfg.T / 2 + 1, cfg.T - 1.0)], cfg.T)
    labels = model.labels(gt)

    def loss_fn():
        return model.loss(model.forward(x), labels)[0]

    report = grad_check(loss_fn, model.params, tol=args.tol)
    print(report.format())
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "gradcheck.txt").write_text(report.format() + "\n")
    return 0 if report.passed else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' config file")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", help="output directory")
    common.add_argument("--mode", choices=MODES, default=None)
    common.add_argument("--precision", choices=("f32", "f64"), default=None)
    common.add_argument("--suppress", choices=("nms", "soft-nms", "none"), default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="tapg", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--spec", help="dataset spec JSON")
    s.add_argument("--num-videos", type=int)
    s.add_argument("--format", choices=("bin", "csv"), default="bin")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common], help="train a model")
    s.add_argument("--data", required=True, help="dataset directory")
    s.add_argument("--epochs", type=int)
    s.add_argument("--resume", help="checkpoint to continue from")
    s.add_argument("--log-every", type=int, default=10)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", parents=[common], help="generate proposals")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", parents=[common], help="score a proposal file")
    s.add_argument("--proposals", required=True)
    s.add_argument("--annotations", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", parents=[common], help="fusion x local-variant grid")
    s.add_argument("--data", required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--fusions", help="comma-separated subset of concat,sum,late")
    s.add_argument("--variants", help="comma-separated subset of the local variants")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    s.add_argument("--tol", type=float, default=1e-4)
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose or args.command in ("train", "ablate")
                        else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    needs_out = args.command in ("synth", "train", "infer", "eval", "ablate")
    if needs_out and not args.out:
        print(f"tapg {args.command}: --out is required", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"tapg {args.command}: error: {exc}", file=sys.stderr)
        return 2
