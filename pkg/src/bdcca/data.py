"""Dataset containers, WAV ingestion and a synthetic two-modality generator.

The synthetic data mimic the bird recordings at desk scale. Events are
Hann-enveloped linear chirps placed by a clustered Poisson process: a
random subset of clips is active and the rest are silent. The microphone
view adds broadband noise at a low SNR. The accelerometer view low-passes
the chirps at 1 kHz and adds independent noise at a higher SNR.
"""

import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import signal
from sklearn.model_selection import train_test_split

from ._validation import ConfigError, check_random_state
from .dsp import (
    ChannelId,
    StftConfig,
    Waveform,
    merge_accelerometers,
    rasterize_annotations,
    read_annotations,
    read_wav,
    stft_power,
    write_annotations,
    write_wav,
)

logger = logging.getLogger(__name__)


@dataclass
class ClipSet:
    """Synchronized mic/accel spectrogram stacks, shaped (clips, freq_bins, frames)."""

    clip_ids: list
    mic: np.ndarray
    accel: np.ndarray
    labels: np.ndarray = None

    def __post_init__(self):
        self.clip_ids = [str(c) for c in self.clip_ids]
        if len(set(self.clip_ids)) != len(self.clip_ids):
            raise ValueError("clip ids must be unique")
        if self.mic.shape != self.accel.shape:
            raise ValueError(f"views are not synchronized: {self.mic.shape} vs {self.accel.shape}")
        if self.mic.shape[0] != len(self.clip_ids):
            raise ValueError("clip id count does not match the spectrogram stack")
        if self.labels is not None and self.labels.shape != (self.mic.shape[0], self.mic.shape[2]):
            raise ValueError(f"labels shape {self.labels.shape} does not match the spectrograms")

    def __len__(self):
        return len(self.clip_ids)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return ClipSet([self.clip_ids[i] for i in idx], self.mic[idx], self.accel[idx],
                       None if self.labels is None else self.labels[idx])


@dataclass
class DatasetSplit:
    labeled: ClipSet
    unlabeled: ClipSet
    frame_hop: float

    def __post_init__(self):
        if self.labeled.labels is None:
            raise ValueError("labeled clips need frame labels")
        overlap = set(self.labeled.clip_ids) & set(self.unlabeled.clip_ids)
        if overlap:
            raise ValueError(f"clip ids appear in both subsets: {sorted(overlap)[:5]}")

    def save(self, path):
        np.savez(
            path,
            frame_hop=self.frame_hop,
            labeled_ids=np.array(self.labeled.clip_ids, dtype=str),
            labeled_mic=self.labeled.mic,
            labeled_accel=self.labeled.accel,
            labels=self.labeled.labels,
            unlabeled_ids=np.array(self.unlabeled.clip_ids, dtype=str),
            unlabeled_mic=self.unlabeled.mic,
            unlabeled_accel=self.unlabeled.accel,
        )

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            return cls(
                ClipSet(list(z["labeled_ids"]), z["labeled_mic"], z["labeled_accel"], z["labels"]),
                ClipSet(list(z["unlabeled_ids"]), z["unlabeled_mic"], z["unlabeled_accel"]),
                float(z["frame_hop"]),
            )


@dataclass
class SynthConfig:
    n_clips: int = 300
    n_labeled: int = 60
    clip_seconds: float = 4.0
    event_rate: float = 1.2
    active_fraction: float = 0.25
    event_duration: tuple = (0.05, 0.3)
    chirp_band: tuple = (500.0, 4000.0)
    snr_mic: float = -6.0
    snr_accel: float = 0.0
    accel_cutoff: float = 1000.0
    cross_map: str = "filtered_copy"
    seed: int = 0

    def __post_init__(self):
        self.event_duration = tuple(self.event_duration)
        self.chirp_band = tuple(self.chirp_band)
        if self.event_rate < 0:
            raise ConfigError("event_rate must be >= 0")
        if self.clip_seconds <= 0:
            raise ConfigError("clip_seconds must be > 0")
        if not 0 < self.active_fraction <= 1:
            raise ConfigError("active_fraction must lie in (0, 1]")
        if not 0 <= self.n_labeled <= self.n_clips:
            raise ConfigError("need 0 <= n_labeled <= n_clips")
        lo, hi = self.event_duration
        if not 0 < lo <= hi:
            raise ConfigError("event_duration must be a (min, max) range of positive seconds")
        if hi >= self.clip_seconds:
            raise ConfigError(
                f"event_duration up to {hi} s does not fit in {self.clip_seconds} s clips"
            )
        if self.cross_map not in ("filtered_copy", "shared_chirps"):
            raise ConfigError(f"unknown cross_map {self.cross_map!r}")


def rate_for_positive_fraction(fraction, synth=None, stft=None):
    """Event rate giving roughly ``fraction`` positive frames under the any-overlap rule.

    An event of length ``d`` touches ``d / hop + 1`` frames on average. Inside
    an active clip, Poisson events cover a frame with probability
    ``1 - exp(-rate_active * span / frames)``; the overall fraction scales that
    by ``active_fraction``. Edge truncation is ignored.
    """
    synth = synth or SynthConfig()
    stft = stft or StftConfig(clip_seconds=synth.clip_seconds)
    a = synth.active_fraction
    if not 0 <= fraction < a:
        raise ValueError(f"fraction must lie in [0, active_fraction={a}), got {fraction}")
    frames = stft.n_frames(int(round(synth.clip_seconds * stft.sample_rate)))
    span = sum(synth.event_duration) / 2.0 / stft.frame_hop + 1.0
    return -a * frames / span * np.log1p(-fraction / a)


def _chirp(duration, band, sample_rate):
    n = max(int(round(duration * sample_rate)), 2)
    t = np.arange(n) / sample_rate
    f0, f1 = band
    phase = 2 * np.pi * (f0 * t + 0.5 * (f1 - f0) / duration * t**2)
    return np.sin(phase) * signal.windows.hann(n, sym=True)


# RMS of a unit Hann-enveloped sinusoid: sqrt(mean(hann^2) / 2) = sqrt(3/16)
CHIRP_RMS = np.sqrt(3.0 / 16.0)


def _visible_interval(onset, duration, band, sos, sample_rate, floor_db=-30.0):
    """Part of a chirp whose instantaneous frequency survives the accel filter."""
    freqs = np.linspace(band[0], band[1], 64)
    _, h = signal.sosfreqz(sos, worN=freqs, fs=sample_rate)
    visible = 20 * np.log10(np.maximum(np.abs(h), 1e-300)) >= floor_db
    if not visible.any():
        return None
    idx = np.flatnonzero(visible)
    lo, hi = idx[0] / (len(freqs) - 1), (idx[-1] + 1) / (len(freqs) - 1)
    return onset + lo * duration, onset + min(hi, 1.0) * duration


def synthesize_waveforms(cfg, stft=None):
    """Yield ``(clip_id, is_labeled, mic, accel, events, accel_events)`` per clip."""
    stft = stft or StftConfig(clip_seconds=cfg.clip_seconds)
    sr = stft.sample_rate
    n = int(round(cfg.clip_seconds * sr))
    rng = check_random_state(cfg.seed)
    sos = signal.butter(2, cfg.accel_cutoff, btype="low", fs=sr, output="sos")
    sigma_mic = CHIRP_RMS * 10 ** (-cfg.snr_mic / 20)
    sigma_accel = CHIRP_RMS * 10 ** (-cfg.snr_accel / 20)
    lo, hi = cfg.event_duration
    # clustered process: a fixed share of clips carries activity at a
    # proportionally higher rate, so the mean rate stays event_rate
    n_active = int(round(cfg.active_fraction * cfg.n_clips))
    active = np.zeros(cfg.n_clips, dtype=bool)
    active[rng.permutation(cfg.n_clips)[:n_active]] = True
    for k in range(cfg.n_clips):
        labeled = k < cfg.n_labeled
        clip_id = f"labeled_{k:04d}" if labeled else f"unlabeled_{k - cfg.n_labeled:04d}"
        clean = np.zeros(n)
        events, accel_events = [], []
        count = rng.poisson(cfg.event_rate / cfg.active_fraction) if active[k] else 0
        for _ in range(count):
            duration = rng.uniform(lo, hi)
            onset = rng.uniform(0.0, cfg.clip_seconds - duration)
            chirp = _chirp(duration, cfg.chirp_band, sr)
            start = int(round(onset * sr))
            stop = min(start + chirp.size, n)
            clean[start:stop] += chirp[: stop - start]
            events.append((onset, onset + duration))
            vis = _visible_interval(onset, duration, cfg.chirp_band, sos, sr)
            if vis is not None:
                accel_events.append(vis)
        mic_noise = rng.normal(0.0, sigma_mic, n)
        accel_noise = rng.normal(0.0, sigma_accel, n)
        if cfg.cross_map == "filtered_copy":
            accel_clean = signal.sosfilt(sos, clean)
        else:
            accel_clean = clean
        mic = (clean + mic_noise).astype(np.float32)
        accel = (accel_clean + accel_noise).astype(np.float32)
        yield clip_id, labeled, mic, accel, events, accel_events


@dataclass
class SynthTruth:
    events: dict = field(default_factory=dict)
    mic: dict = field(default_factory=dict)
    accel: dict = field(default_factory=dict)


def synthesize(cfg=None, stft=None):
    """Build a synthetic :class:`DatasetSplit` and its ground truth.

    Labeled clips carry the microphone-view labels. The truth object holds
    frame labels for both views of every clip, including unlabeled ones.
    """
    cfg = cfg or SynthConfig()
    stft = stft or StftConfig(clip_seconds=cfg.clip_seconds)
    n = int(round(cfg.clip_seconds * stft.sample_rate))
    t = stft.n_frames(n)
    mic = np.empty((cfg.n_clips, stft.freq_bins, t), dtype=np.float32)
    accel = np.empty_like(mic)
    ids, truth = [], SynthTruth()
    for k, (cid, _, m, a, events, accel_events) in enumerate(synthesize_waveforms(cfg, stft)):
        mic[k] = stft_power(m, stft)
        accel[k] = stft_power(a, stft)
        ids.append(cid)
        truth.events[cid] = events
        truth.mic[cid] = rasterize_annotations(events, t, stft.frame_hop).values.astype(np.uint8)
        truth.accel[cid] = rasterize_annotations(accel_events, t, stft.frame_hop).values.astype(np.uint8)
    nl = cfg.n_labeled
    labels = np.stack([truth.mic[c] for c in ids[:nl]]) if nl else np.zeros((0, t), np.uint8)
    split = DatasetSplit(
        ClipSet(ids[:nl], mic[:nl], accel[:nl], labels),
        ClipSet(ids[nl:], mic[nl:], accel[nl:]),
        stft.frame_hop,
    )
    return split, truth


MANIFEST_HEADER = ["path", "role", "mic_channel", "accel_channels", "annotations"]


@dataclass
class ManifestEntry:
    path: str
    role: str
    mic_channel: int
    accel_channels: tuple
    annotations: str = ""


def read_manifest(path):
    """Parse a manifest CSV; relative paths resolve against its directory."""
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_HEADER:
            raise ValueError(f"{path}: expected header {','.join(MANIFEST_HEADER)}")
        for row in reader:
            if row["role"] not in ("labeled", "unlabeled"):
                raise ValueError(f"{path}: role must be labeled or unlabeled, got {row['role']!r}")
            resolve = lambda p: p if not p or os.path.isabs(p) else os.path.join(base, p)
            accel = tuple(int(c) for c in row["accel_channels"].split(";") if c.strip())
            if not 1 <= len(accel) <= 2:
                raise ValueError(f"{path}: need one or two accelerometer channels per file")
            entries.append(ManifestEntry(resolve(row["path"]), row["role"],
                                         int(row["mic_channel"]), accel,
                                         resolve(row["annotations"] or "")))
    return entries


def write_manifest(path, entries):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for e in entries:
            writer.writerow([e.path, e.role, e.mic_channel,
                             ";".join(str(c) for c in e.accel_channels), e.annotations])


def _file_clips(entry, stft):
    rate, data = read_wav(entry.path)
    if rate != stft.sample_rate:
        raise ValueError(f"{entry.path}: sample rate {rate} != configured {stft.sample_rate}")
    needed = max((entry.mic_channel,) + entry.accel_channels)
    if needed >= data.shape[0]:
        raise ValueError(f"{entry.path}: channel {needed} requested but file has {data.shape[0]}")
    mic = data[entry.mic_channel]
    if len(entry.accel_channels) == 2:
        a, b = entry.accel_channels
        accel = merge_accelerometers(Waveform(data[a], rate, ChannelId.ACCEL_MALE),
                                     Waveform(data[b], rate, ChannelId.ACCEL_FEMALE)).samples
    else:
        accel = data[entry.accel_channels[0]]
    return mic, accel, data.shape[1] / rate


def ingest(manifest_path, stft=None):
    """Clip every manifest file, merge accelerometers and compute spectrograms.

    Clip ids are ``<file stem>_<index>``. Annotation rows refer to the file
    stem as ``clip_id`` with file-relative times; all channels are merged by
    union onto the frame grid.
    """
    stft = stft or StftConfig()
    entries = read_manifest(manifest_path)
    width = stft.clip_samples
    buckets = {"labeled": ([], [], [], []), "unlabeled": ([], [], [], [])}
    for entry in entries:
        stem = os.path.splitext(os.path.basename(entry.path))[0]
        mic, accel, duration = _file_clips(entry, stft)
        n_clips = mic.size // width
        events = []
        if entry.annotations:
            rows = read_annotations(entry.annotations).get(stem, [])
            if entry.role == "unlabeled":
                if rows:
                    logger.warning("%s is unlabeled; ignoring %d annotations", entry.path, len(rows))
                rows = []
            for _, onset, offset in rows:
                if offset > duration + 1e-9:
                    raise ValueError(f"{entry.annotations}: event ({onset}, {offset}) "
                                     f"exceeds the {duration:.3f} s duration of {entry.path}")
            events = [(on, off) for _, on, off in rows]
        elif entry.role == "labeled":
            logger.warning("%s is labeled but has no annotation file; all frames negative", entry.path)
        ids, mics, accels, labels = buckets[entry.role]
        for k in range(n_clips):
            s = slice(k * width, (k + 1) * width)
            ids.append(f"{stem}_{k:04d}")
            mics.append(stft_power(mic[s], stft).astype(np.float32))
            accels.append(stft_power(accel[s], stft).astype(np.float32))
            if entry.role == "labeled":
                t0 = k * stft.clip_seconds
                local = [(max(on - t0, 0.0), min(off - t0, stft.clip_seconds))
                         for on, off in events if off > t0 and on < t0 + stft.clip_seconds]
                track = rasterize_annotations(local, mics[-1].shape[1], stft.frame_hop)
                labels.append(track.values.astype(np.uint8))

    def stack(bucket, with_labels):
        ids, mics, accels, labels = bucket
        f, t = stft.freq_bins, stft.n_frames(width)
        empty = np.zeros((0, f, t), dtype=np.float32)
        return ClipSet(ids, np.stack(mics) if mics else empty, np.stack(accels) if accels else empty,
                       (np.stack(labels) if labels else np.zeros((0, t), np.uint8)) if with_labels else None)

    return DatasetSplit(stack(buckets["labeled"], True), stack(buckets["unlabeled"], False),
                        stft.frame_hop)


def export_synthetic(cfg, out_dir, stft=None):
    """Write a synthetic dataset as WAV files + annotations + manifest.

    Produces ``labeled.wav`` and ``unlabeled.wav`` (clips concatenated;
    channels mic, accel, accel) so that :func:`ingest` reproduces the same
    spectrograms as :func:`synthesize`. Returns the manifest path.
    """
    stft = stft or StftConfig(clip_seconds=cfg.clip_seconds)
    os.makedirs(out_dir, exist_ok=True)
    audio = {"labeled": [], "unlabeled": []}
    rows = []
    for cid, labeled, mic, accel, events, _ in synthesize_waveforms(cfg, stft):
        role = "labeled" if labeled else "unlabeled"
        offset = len(audio[role]) * cfg.clip_seconds
        audio[role].append(np.stack([mic, accel, accel]))
        if labeled:
            rows += [(role, "accel_male", offset + on, offset + off) for on, off in events]
    entries = []
    for role, clips in audio.items():
        if not clips:
            continue
        write_wav(os.path.join(out_dir, f"{role}.wav"), np.concatenate(clips, axis=1), stft.sample_rate)
        ann = "annotations.csv" if role == "labeled" else ""
        entries.append(ManifestEntry(f"{role}.wav", role, 0, (1, 2), ann))
    write_annotations(os.path.join(out_dir, "annotations.csv"), rows)
    manifest = os.path.join(out_dir, "manifest.csv")
    write_manifest(manifest, entries)
    return manifest


def split_train_test(clip_ids, test_fraction=0.2, seed=0):
    """Seeded random partition of clip indices into (train, test)."""
    n = len(clip_ids)
    if n < 2:
        raise ValueError("need at least two clips to split")
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    train, test = train_test_split(np.arange(n), test_size=test_fraction, random_state=seed)
    return np.sort(train), np.sort(test)
