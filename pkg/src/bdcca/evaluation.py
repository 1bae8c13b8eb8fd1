"""Segment-based precision, recall and F1 for binary event detection.

Frame ``j`` belongs to segment ``floor(j * hop / segment_length)``. A
segment is active when any of its frames is active. Counts are
micro-averaged over clips, following the sed_eval convention.
"""

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_binary
from .dsp import FrameTrack

DEFAULT_SEGMENT_LENGTH = 1.0


@dataclass(frozen=True)
class SegmentMetrics:
    tp: int
    fp: int
    fn: int
    segment_length: float = DEFAULT_SEGMENT_LENGTH

    @property
    def precision(self):
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self):
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


def segment_activity(track, frame_hop, segment_length=DEFAULT_SEGMENT_LENGTH):
    """Boolean activity per segment, final partial segment included."""
    values = check_binary(track.values if isinstance(track, FrameTrack) else track)
    # tolerance keeps frames that land exactly on a boundary in the later segment
    seg = np.floor(np.arange(values.size) * frame_hop / segment_length + 1e-9).astype(np.int64)
    active = np.zeros(seg[-1] + 1 if values.size else 0, dtype=bool)
    np.logical_or.at(active, seg, values.astype(bool))
    return active


def segment_scores(reference, prediction, frame_hop, segment_length=DEFAULT_SEGMENT_LENGTH):
    ref = reference.values if isinstance(reference, FrameTrack) else np.asarray(reference)
    est = prediction.values if isinstance(prediction, FrameTrack) else np.asarray(prediction)
    if ref.shape != est.shape:
        raise ValueError(f"reference and prediction lengths differ: {ref.shape} vs {est.shape}")
    r = segment_activity(ref, frame_hop, segment_length)
    e = segment_activity(est, frame_hop, segment_length)
    return SegmentMetrics(int(np.sum(r & e)), int(np.sum(e & ~r)), int(np.sum(r & ~e)),
                          segment_length)


def aggregate(metrics):
    """Micro-average: sum counts over clips, then derive P/R/F1."""
    metrics = list(metrics)
    if not metrics:
        raise ValueError("cannot aggregate an empty list of metrics")
    lengths = {m.segment_length for m in metrics}
    if len(lengths) != 1:
        raise ValueError(f"mixed segment lengths {sorted(lengths)}")
    return SegmentMetrics(sum(m.tp for m in metrics), sum(m.fp for m in metrics),
                          sum(m.fn for m in metrics), lengths.pop())


def evaluate_clips(references, predictions, frame_hop, segment_length=DEFAULT_SEGMENT_LENGTH):
    """Per-clip metrics and their micro-average for (clips, frames) label arrays."""
    per_clip = [segment_scores(r, p, frame_hop, segment_length)
                for r, p in zip(np.asarray(references), np.asarray(predictions))]
    return aggregate(per_clip), per_clip


def metrics_to_dict(m, n_clips):
    return {
        "precision": m.precision,
        "recall": m.recall,
        "f1": m.f1,
        "tp": m.tp,
        "fp": m.fp,
        "fn": m.fn,
        "segment_length_sec": m.segment_length,
        "n_clips": int(n_clips),
    }


def metrics_to_json(m, n_clips):
    return json.dumps(metrics_to_dict(m, n_clips), indent=2, sort_keys=True)


def metrics_from_dict(d):
    m = SegmentMetrics(int(d["tp"]), int(d["fp"]), int(d["fn"]), float(d["segment_length_sec"]))
    for key in ("precision", "recall", "f1"):
        if key in d and not math.isclose(getattr(m, key), d[key], abs_tol=1e-12):
            raise ValueError(f"{key}={d[key]} is inconsistent with tp/fp/fn counts")
    return m, int(d["n_clips"])


def metrics_from_json(text):
    """Inverse of :func:`metrics_to_json`; returns ``(SegmentMetrics, n_clips)``."""
    return metrics_from_dict(json.loads(text))


def write_per_clip(path, clip_ids, per_clip):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["clip_id", "tp", "fp", "fn", "precision", "recall", "f1"])
        for cid, m in zip(clip_ids, per_clip):
            writer.writerow([cid, m.tp, m.fp, m.fn, repr(m.precision), repr(m.recall), repr(m.f1)])


def write_predictions(path, clip_ids, probabilities):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["clip_id", "frame", "probability"])
        for cid, probs in zip(clip_ids, probabilities):
            for j, p in enumerate(probs):
                writer.writerow([cid, j, f"{p:.6f}"])


__all__ = [
    "SegmentMetrics", "segment_scores", "aggregate", "evaluate_clips", "segment_activity",
    "metrics_to_json", "metrics_from_json", "metrics_to_dict", "metrics_from_dict",
]
