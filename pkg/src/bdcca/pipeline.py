"""End-to-end orchestration of the four detection modes.

BDCCA: bootstrap classifier on labeled accel -> occupancy index over the
unlabeled accel clips -> DCCA on bin-balanced batches -> mic-encoder
embeddings of the labeled clips -> detector -> segment metrics.
DCCA skips the bootstrap and index and samples clips uniformly. DCRNN and
DCRNN_Accel train the detector directly on labeled mic or accel
spectrograms and never read the unlabeled set.

Every cached stage lives in ``<out>/cache/<stage>-<hash>`` where the hash
covers the stage's own settings and the hashes of its inputs, so a rerun
with unchanged upstream settings reuses the stored artifacts. Downstream
stages always read artifacts back from disk, which keeps fresh and cached
runs identical.
"""

import csv
import json
import logging
import os
import shutil
import tempfile
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np

from .classifier import FrameClassifier, binarize
from .config import MODES, PipelineConfig, config_hash, stage_seed
from .data import DatasetSplit, ingest, split_train_test, synthesize
from .dcca import DCCA, write_loss_log
from .evaluation import (
    evaluate_clips,
    metrics_to_dict,
    metrics_to_json,
    write_per_clip,
    write_predictions,
)
from .sampler import (
    BalancedBinSampler,
    index_from_counts,
    occupancy_counts,
    read_index,
    write_index,
)

logger = logging.getLogger(__name__)


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` and ``artifacts`` point at the evidence."""

    def __init__(self, stage, artifacts, cause):
        self.stage = stage
        self.artifacts = artifacts
        super().__init__(f"stage {stage!r} failed: {cause} (artifacts kept in {artifacts})")


@dataclass
class ExperimentReport:
    mode: str
    seed: int
    metrics: object
    n_test_clips: int
    timings: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    examples: list = field(default_factory=list, repr=False)

    def to_dict(self):
        return {
            "mode": self.mode,
            "seed": self.seed,
            "metrics": metrics_to_dict(self.metrics, self.n_test_clips),
            "timings_sec": {k: round(v, 3) for k, v in self.timings.items()},
            "paths": self.paths,
            "config": self.config,
        }


class _Run:
    def __init__(self, cfg):
        self.cfg = cfg
        self.cache = os.path.join(cfg.out, "cache")
        self.run_dir = os.path.join(cfg.out, cfg.mode, f"seed{cfg.seed}")
        self.timings = {}
        self.paths = {}

    @contextmanager
    def stage(self, name, where=None):
        start = time.perf_counter()
        logger.info("stage %s: start", name)
        try:
            yield
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, where or self.run_dir, exc) from exc
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - start
        logger.info("stage %s: done in %.1f s", name, self.timings[name])

    def cached(self, name, key, build):
        """Return the directory for ``name``/``key``, building it if absent."""
        path = os.path.join(self.cache, f"{name}-{key}")
        self.paths[name] = path
        with self.stage(name, path):
            if os.path.isdir(path):
                logger.info("stage %s: reusing %s", name, path)
                return path
            os.makedirs(self.cache, exist_ok=True)
            tmp = tempfile.mkdtemp(prefix=f".{name}-", dir=self.cache)
            try:
                build(tmp)
            except Exception as exc:
                failed = path + ".failed"
                shutil.rmtree(failed, ignore_errors=True)
                os.replace(tmp, failed)
                self.paths[name] = failed
                raise StageError(name, failed, exc) from exc
            os.replace(tmp, path)
        return path


def _data_key(cfg):
    source = {"manifest": os.path.abspath(cfg.data.manifest)} if cfg.data.manifest else {
        "synth": asdict(cfg.synth_config())}
    return config_hash("data", source, asdict(cfg.stft))


def load_dataset(cfg):
    """Build the labeled/unlabeled split described by ``cfg.data``."""
    if cfg.data.manifest:
        return ingest(cfg.data.manifest, cfg.stft)
    split, _ = synthesize(cfg.synth_config(), cfg.stft)
    return split


def shared_split(cfg, split):
    """Train/test clip indices of the labeled set; identical across modes."""
    return split_train_test(split.labeled.clip_ids, cfg.eval.test_fraction,
                            stage_seed(cfg.seed, "split"))


def make_classifier(section, cfg, log_input, stage):
    return FrameClassifier(
        conv_channels=section.conv_channels, pool=section.pool, hidden=section.hidden,
        log_input=log_input, learning_rate=section.learning_rate, epochs=section.epochs,
        batch_size=section.batch_size, optimizer=section.optimizer,
        threshold=section.threshold, balance_target=section.balance_target,
        augment=asdict(cfg.augment), random_state=stage_seed(cfg.seed, stage))


def make_dcca(cfg):
    d = cfg.dcca
    return DCCA(n_components=d.n_components, channels=d.channels, kernel_size=d.kernel_size,
                reg=d.r1, learning_rate=d.learning_rate, n_steps=d.steps,
                batch_size=d.batch_size, optimizer=d.optimizer,
                input_transform=d.input_transform, edge_frames=d.edge_frames,
                random_state=stage_seed(cfg.seed, "dcca"))


def make_sampler(cfg):
    b = cfg.binning
    return BalancedBinSampler(n_bins=b.n_bins, batch_size=cfg.dcca.batch_size,
                              min_bin_population=b.min_bin_population,
                              on_empty_bin=b.on_empty_bin, augment=asdict(cfg.augment),
                              random_state=stage_seed(cfg.seed, "sampler"))


def run(cfg: PipelineConfig):
    """Execute one mode end to end and write its metrics to ``<out>/<mode>/seed<seed>``."""
    r = _Run(cfg)
    data_key = _data_key(cfg)

    def build_data(d):
        load_dataset(cfg).save(os.path.join(d, "split.npz"))

    data_dir = r.cached("data", data_key, build_data)
    split = DatasetSplit.load(os.path.join(data_dir, "split.npz"))
    L, U = split.labeled, split.unlabeled
    if len(L) < 2:
        raise StageError("data", data_dir, "need at least two labeled clips")
    with r.stage("split"):
        train, test = shared_split(cfg, split)
    split_key = config_hash(data_key, cfg.eval.test_fraction, stage_seed(cfg.seed, "split"))

    if cfg.mode in ("DCCA", "BDCCA"):
        if len(U) == 0:
            raise StageError("dcca", data_dir, "the unlabeled set is empty")
        sampler, index_key = None, None
        if cfg.mode == "BDCCA":
            boot_key = config_hash(split_key, "bootstrap", asdict(cfg.bootstrap),
                                   asdict(cfg.augment), stage_seed(cfg.seed, "bootstrap"))

            def build_boot(d):
                model = make_classifier(cfg.bootstrap, cfg, True, "bootstrap")
                model.fit(L.accel[train], L.labels[train])
                model.save(os.path.join(d, "bootstrap.bdcc"))
                write_loss_log(os.path.join(d, "bootstrap_loss.csv"), model.loss_curve_)

            boot_dir = r.cached("bootstrap", boot_key, build_boot)
            index_key = config_hash(boot_key, cfg.detection.threshold, cfg.binning.n_bins)

            def build_index(d):
                model = FrameClassifier.load(os.path.join(boot_dir, "bootstrap.bdcc"))
                counts = occupancy_counts(model, U.accel, cfg.detection.threshold)
                records, _ = index_from_counts(counts, U.clip_ids, cfg.binning.n_bins)
                write_index(os.path.join(d, "index.csv"), records)

            index_dir = r.cached("index", index_key, build_index)
            with r.stage("sampler", index_dir):
                records = read_index(os.path.join(index_dir, "index.csv"))
                if [x.clip_id for x in records] != U.clip_ids:
                    raise ValueError("index clip ids do not match the unlabeled set")
                sampler = make_sampler(cfg).fit([x.positive_frame_count for x in records],
                                                U.clip_ids)
        dcca_key = config_hash(data_key, "dcca", cfg.mode, asdict(cfg.dcca),
                               stage_seed(cfg.seed, "dcca"),
                               [index_key, asdict(cfg.binning), asdict(cfg.augment),
                                stage_seed(cfg.seed, "sampler")] if sampler else None)

        def build_dcca(d):
            model = make_dcca(cfg).fit(U.mic, U.accel, sampler=sampler)
            model.save(os.path.join(d, "dcca.bdcc"))
            write_loss_log(os.path.join(d, "dcca_loss.csv"), model.loss_curve_)

        dcca_dir = r.cached("dcca", dcca_key, build_dcca)
        embed_key = config_hash(dcca_key, "embed")

        def build_embed(d):
            model = DCCA.load(os.path.join(dcca_dir, "dcca.bdcc"))
            # only the mic encoder is used from here on
            np.save(os.path.join(d, "h1.npy"), model.transform(L.mic, "mic"))

        embed_dir = r.cached("embed", embed_key, build_embed)
        features = np.load(os.path.join(embed_dir, "h1.npy"))
        input_key, log_input = embed_key, False
    else:
        features = L.mic if cfg.mode == "DCRNN" else L.accel
        input_key, log_input = config_hash(data_key, cfg.mode), True

    det_key = config_hash(split_key, input_key, "detector", asdict(cfg.detector),
                          asdict(cfg.augment), stage_seed(cfg.seed, "detector"))

    def build_detector(d):
        model = make_classifier(cfg.detector, cfg, log_input, "detector")
        model.fit(features[train], L.labels[train])
        model.save(os.path.join(d, "detector.bdcc"))
        write_loss_log(os.path.join(d, "detector_loss.csv"), model.loss_curve_)

    det_dir = r.cached("detector", det_key, build_detector)

    with r.stage("evaluate", r.run_dir):
        model = FrameClassifier.load(os.path.join(det_dir, "detector.bdcc"))
        probs = model.predict_proba(features[test])
        preds = binarize(probs, cfg.detector.threshold).astype(np.uint8)
        agg, per_clip = evaluate_clips(L.labels[test], preds, split.frame_hop,
                                       cfg.eval.segment_length)
        test_ids = [L.clip_ids[i] for i in test]
        os.makedirs(r.run_dir, exist_ok=True)
        with open(os.path.join(r.run_dir, "metrics.json"), "w", encoding="utf-8") as fh:
            fh.write(metrics_to_json(agg, len(test)) + "\n")
        write_per_clip(os.path.join(r.run_dir, "per_clip.csv"), test_ids, per_clip)
        write_predictions(os.path.join(r.run_dir, "predictions.csv"), test_ids, probs)
    r.paths["run"] = r.run_dir
    examples = [(test_ids[k], L.mic[i], L.labels[i], probs[k], preds[k])
                for k, i in enumerate(test[: cfg.eval.n_figures])]
    report_obj = ExperimentReport(cfg.mode, cfg.seed, agg, len(test), r.timings, r.paths,
                                  cfg.to_dict(), examples)
    with open(os.path.join(r.run_dir, "run.json"), "w", encoding="utf-8") as fh:
        json.dump(report_obj.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    logger.info("%s seed %d: P=%.3f R=%.3f F1=%.3f", cfg.mode, cfg.seed,
                agg.precision, agg.recall, agg.f1)
    return report_obj


def run_modes(cfg, modes=MODES, seeds=None):
    """Run several modes (and seeds) sharing one data cache; returns a list of reports."""
    seeds = [cfg.seed] if seeds is None else list(seeds)
    return [run(cfg.replace(mode=m, seed=s)) for s in seeds for m in modes]


def median_f1(reports):
    """``{mode: median segment F1 over the reports of that mode}``."""
    by_mode = {}
    for rep in reports:
        by_mode.setdefault(rep.mode, []).append(rep.metrics.f1)
    return {m: float(np.median(v)) for m, v in by_mode.items()}


def report(out, results):
    """Write a summary JSON, a CSV table and per-clip figures for ``results``."""
    results = list(results)
    if not results:
        raise ValueError("no results to report")
    os.makedirs(out, exist_ok=True)
    rows = [r.to_dict() for r in results]
    summary = {"runs": rows, "median_f1": median_f1(results)}
    with open(os.path.join(out, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out, "summary.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["mode", "seed", "precision", "recall", "f1", "tp", "fp", "fn"])
        for r in results:
            m = r.metrics
            writer.writerow([r.mode, r.seed, repr(m.precision), repr(m.recall), repr(m.f1),
                             m.tp, m.fp, m.fn])
    figures = _plot_examples(out, results)
    return {"report": os.path.join(out, "report.json"),
            "summary": os.path.join(out, "summary.csv"), "figures": figures}


def _plot_examples(out, results):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig_dir = os.path.join(out, "figures")
    os.makedirs(fig_dir, exist_ok=True)
    paths = []
    for r in results:
        for clip_id, spec, ref, prob, pred in r.examples:
            fig, axes = plt.subplots(3, 1, figsize=(8, 5), sharex=True,
                                     gridspec_kw={"height_ratios": [3, 1, 1]})
            axes[0].imshow(np.log1p(spec), origin="lower", aspect="auto", cmap="magma")
            axes[0].set_ylabel("freq bin")
            axes[0].set_title(f"{r.mode} seed {r.seed}: {clip_id}")
            axes[1].step(np.arange(ref.size), ref, where="post", color="k")
            axes[1].set_ylabel("truth")
            axes[2].plot(prob, color="tab:blue", lw=0.8)
            axes[2].step(np.arange(pred.size), pred, where="post", color="tab:red")
            axes[2].set_ylabel("pred")
            axes[2].set_xlabel("frame")
            for ax in axes[1:]:
                ax.set_ylim(-0.1, 1.1)
            fig.tight_layout()
            path = os.path.join(fig_dir, f"{r.mode}_seed{r.seed}_{clip_id}.png")
            fig.savefig(path, dpi=80)
            plt.close(fig)
            paths.append(path)
    return paths
