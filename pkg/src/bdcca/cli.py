"""Command-line interface.

Each pipeline stage is available as its own subcommand operating on files,
and ``run`` chains them with caching. Global flags (``--config``, ``--seed``,
``--mode``, ``--out``) are accepted before or after the subcommand.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from ._validation import ConfigError
from .cca import cca_fit
from .classifier import FrameClassifier, binarize
from .config import MODES, dump_config, load_config
from .data import DatasetSplit, export_synthetic, ingest, synthesize
from .dcca import DCCA, write_loss_log
from .evaluation import evaluate_clips, metrics_to_json, write_per_clip, write_predictions
from .pipeline import (
    StageError,
    make_classifier,
    make_dcca,
    make_sampler,
    median_f1,
    report,
    run_modes,
    shared_split,
)
from .sampler import index_from_counts, occupancy_counts, read_index, write_index

logger = logging.getLogger("bdcca")


def _global_flags(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", default=default, help="YAML pipeline config")
    parser.add_argument("--seed", type=int, default=default, help="global seed")
    parser.add_argument("--mode", choices=MODES, default=default, help="detection mode")
    parser.add_argument("--out", default=default, help="output directory")
    parser.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS if suppress else 0)


def build_parser():
    parser = argparse.ArgumentParser(prog="bdcca", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text)

    p = add("synth", "generate the synthetic dataset")
    p.add_argument("--wav", action="store_true", help="also export WAV files and a manifest")
    p = add("ingest", "clip and featurize WAV files listed in a manifest")
    p.add_argument("manifest")
    p = add("train-bootstrap", "train the bootstrap classifier on labeled accel clips")
    p.add_argument("--data", required=True)
    p = add("build-index", "pseudo-label unlabeled accel clips and bin them")
    p.add_argument("--data", required=True)
    p.add_argument("--bootstrap", required=True)
    p = add("train-dcca", "train the paired encoders (balanced batches with --index)")
    p.add_argument("--data", required=True)
    p.add_argument("--index", help="occupancy index CSV; required in BDCCA mode")
    p = add("embed", "encode labeled clips with a trained encoder")
    p.add_argument("--data", required=True)
    p.add_argument("--dcca", required=True)
    p.add_argument("--view", choices=("mic", "accel"), default="mic")
    p = add("train-detector", "train the frame detector")
    p.add_argument("--data", required=True)
    p.add_argument("--embeddings", help="embedding .npy (DCCA and BDCCA modes)")
    p = add("evaluate", "segment-based metrics on the held-out labeled clips")
    p.add_argument("--data", required=True)
    p.add_argument("--detector", required=True)
    p.add_argument("--embeddings")
    p = add("run", "end-to-end pipeline with stage caching")
    p.add_argument("--modes", default=None,
                   help="comma-separated modes or 'all' (default: --mode)")
    p.add_argument("--seeds", default=None, help="comma-separated seeds (default: --seed)")
    p = add("cca-diag", "canonical correlations of two CSV matrices (rows = samples)")
    p.add_argument("x1")
    p.add_argument("x2")
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--reg", type=float, default=0.0)
    return parser


def _config(args):
    return load_config(args.config, seed=args.seed, mode=args.mode, out=args.out)


def _out(cfg, name):
    os.makedirs(cfg.out, exist_ok=True)
    return os.path.join(cfg.out, name)


def _features(cfg, split, embeddings):
    if cfg.mode in ("DCCA", "BDCCA"):
        if not embeddings:
            raise ConfigError(f"mode {cfg.mode} needs --embeddings")
        return np.load(embeddings), False
    return (split.labeled.mic if cfg.mode == "DCRNN" else split.labeled.accel), True


def cmd_synth(cfg, args):
    split, truth = synthesize(cfg.synth_config(), cfg.stft)
    split.save(_out(cfg, "dataset.npz"))
    fraction = np.mean([v.mean() for v in truth.mic.values()])
    print(f"wrote {len(split.labeled)} labeled + {len(split.unlabeled)} unlabeled clips; "
          f"positive mic frames {fraction:.3%}")
    if args.wav:
        print(export_synthetic(cfg.synth_config(), _out(cfg, "wav"), cfg.stft))


def cmd_ingest(cfg, args):
    split = ingest(args.manifest, cfg.stft)
    split.save(_out(cfg, "dataset.npz"))
    print(f"wrote {len(split.labeled)} labeled + {len(split.unlabeled)} unlabeled clips")


def cmd_train_bootstrap(cfg, args):
    split = DatasetSplit.load(args.data)
    train, _ = shared_split(cfg, split)
    model = make_classifier(cfg.bootstrap, cfg, True, "bootstrap")
    model.fit(split.labeled.accel[train], split.labeled.labels[train])
    model.save(_out(cfg, "bootstrap.bdcc"))
    write_loss_log(_out(cfg, "bootstrap_loss.csv"), model.loss_curve_)
    print(_out(cfg, "bootstrap.bdcc"))


def cmd_build_index(cfg, args):
    split = DatasetSplit.load(args.data)
    model = FrameClassifier.load(args.bootstrap)
    counts = occupancy_counts(model, split.unlabeled.accel, cfg.detection.threshold)
    records, max_count = index_from_counts(counts, split.unlabeled.clip_ids, cfg.binning.n_bins)
    write_index(_out(cfg, "index.csv"), records)
    sizes = np.bincount([r.bin for r in records], minlength=cfg.binning.n_bins + 1)[1:]
    print(f"M = {max_count}; bin sizes {sizes.tolist()}")


def cmd_train_dcca(cfg, args):
    split = DatasetSplit.load(args.data)
    U = split.unlabeled
    sampler = None
    if cfg.mode == "BDCCA":
        if not args.index:
            raise ConfigError("BDCCA mode needs --index")
        records = read_index(args.index)
        if [r.clip_id for r in records] != U.clip_ids:
            raise ValueError("index clip ids do not match the unlabeled set")
        sampler = make_sampler(cfg).fit([r.positive_frame_count for r in records], U.clip_ids)
    model = make_dcca(cfg).fit(U.mic, U.accel, sampler=sampler)
    model.save(_out(cfg, "dcca.bdcc"))
    write_loss_log(_out(cfg, "dcca_loss.csv"), model.loss_curve_)
    print(f"final loss {model.loss_curve_[-1] if model.loss_curve_ else float('nan'):.4f}")


def cmd_embed(cfg, args):
    split = DatasetSplit.load(args.data)
    model = DCCA.load(args.dcca)
    x = split.labeled.mic if args.view == "mic" else split.labeled.accel
    np.save(_out(cfg, "embeddings.npy"), model.transform(x, args.view))
    print(_out(cfg, "embeddings.npy"))


def cmd_train_detector(cfg, args):
    split = DatasetSplit.load(args.data)
    train, _ = shared_split(cfg, split)
    features, log_input = _features(cfg, split, args.embeddings)
    model = make_classifier(cfg.detector, cfg, log_input, "detector")
    model.fit(features[train], split.labeled.labels[train])
    model.save(_out(cfg, "detector.bdcc"))
    write_loss_log(_out(cfg, "detector_loss.csv"), model.loss_curve_)
    print(_out(cfg, "detector.bdcc"))


def cmd_evaluate(cfg, args):
    split = DatasetSplit.load(args.data)
    _, test = shared_split(cfg, split)
    features, _ = _features(cfg, split, args.embeddings)
    model = FrameClassifier.load(args.detector)
    probs = model.predict_proba(features[test])
    preds = binarize(probs, cfg.detector.threshold)
    agg, per_clip = evaluate_clips(split.labeled.labels[test], preds, split.frame_hop,
                                   cfg.eval.segment_length)
    ids = [split.labeled.clip_ids[i] for i in test]
    text = metrics_to_json(agg, len(test))
    with open(_out(cfg, "metrics.json"), "w", encoding="utf-8") as fh:
        fh.write(text + "\n")
    write_per_clip(_out(cfg, "per_clip.csv"), ids, per_clip)
    write_predictions(_out(cfg, "predictions.csv"), ids, probs)
    print(text)


def cmd_run(cfg, args):
    modes = [cfg.mode] if not args.modes else (
        list(MODES) if args.modes == "all" else args.modes.split(","))
    for m in modes:
        if m not in MODES:
            raise ConfigError(f"unknown mode {m!r}")
    seeds = [cfg.seed] if not args.seeds else [int(s) for s in args.seeds.split(",")]
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, "config.yaml"), "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg))
    results = run_modes(cfg, modes, seeds)
    paths = report(os.path.join(cfg.out, "report"), results)
    for r in results:
        m = r.metrics
        print(f"{r.mode:<12} seed {r.seed}: P={m.precision:.3f} R={m.recall:.3f} F1={m.f1:.3f}")
    print(json.dumps({"median_f1": median_f1(results), **paths}, indent=2, sort_keys=True))


def _read_matrix(path):
    x = np.loadtxt(path, delimiter=",", ndmin=2)
    return x.T  # rows are samples on disk, variables internally


def cmd_cca_diag(cfg, args):
    sol = cca_fit(_read_matrix(args.x1), _read_matrix(args.x2), args.k, args.reg)
    for i, c in enumerate(sol.correlations, 1):
        print(f"rho_{i} = {c:.6f}")
    print(f"total = {sol.correlations.sum():.6f}")


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "train-bootstrap": cmd_train_bootstrap,
    "build-index": cmd_build_index,
    "train-dcca": cmd_train_dcca,
    "embed": cmd_embed,
    "train-detector": cmd_train_detector,
    "evaluate": cmd_evaluate,
    "run": cmd_run,
    "cca-diag": cmd_cca_diag,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        COMMANDS[args.command](cfg, args)
    except (ConfigError, StageError, ValueError, OSError) as exc:
        print(f"bdcca {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
