"""Waveform to power-spectrogram conversion and frame-level labels.

Framing rule: no centering. Frame ``j`` covers samples
``[j * hop, j * hop + win)``. A clip of ``n`` samples yields
``ceil(n / hop)`` frames, and the tail is zero-padded as needed. A 4 s
clip at 24 kHz with ``hop = 256`` therefore gives exactly 375 frames.
"""

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import ConfigError

SAMPLE_RATE = 24000


class ChannelId(str, enum.Enum):
    MICROPHONE = "mic"
    ACCEL_MALE = "accel_male"
    ACCEL_FEMALE = "accel_female"
    ACCEL_MERGED = "accel"


ACCEL_CHANNELS = (ChannelId.ACCEL_MALE, ChannelId.ACCEL_FEMALE)


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    channel_id: ChannelId = ChannelId.MICROPHONE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("waveform samples must be a non-empty 1-D array")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be > 0, got {self.sample_rate}")
        self.channel_id = ChannelId(self.channel_id)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


@dataclass
class StftConfig:
    """Short-time Fourier transform settings, in samples.

    The defaults (512-point FFT and window, 256 hop) produce (257, 375)
    spectrograms for 4 s clips at 24 kHz. :meth:`long_window` builds the
    1024-point variant.
    """

    n_fft: int = 512
    win_length: int = 512
    hop_length: int = 256
    window: str = "hann"
    clip_seconds: float = 4.0
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if not 0 < self.hop_length <= self.win_length <= self.n_fft:
            raise ConfigError(
                "need 0 < hop_length <= win_length <= n_fft, got "
                f"hop={self.hop_length}, win={self.win_length}, n_fft={self.n_fft}"
            )
        if self.window != "hann":
            raise ConfigError(f"only the Hann window is supported, got {self.window!r}")
        if self.clip_seconds <= 0:
            raise ConfigError("clip_seconds must be > 0")

    @classmethod
    def long_window(cls, clip_seconds=4.0):
        """1024-point FFT with a 1024-sample (~43 ms) window and 512-sample (~21.3 ms) hop."""
        return cls(n_fft=1024, win_length=1024, hop_length=512, clip_seconds=clip_seconds)

    @property
    def freq_bins(self):
        return self.n_fft // 2 + 1

    @property
    def frame_hop(self):
        """Hop between frames in seconds."""
        return self.hop_length / self.sample_rate

    @property
    def clip_samples(self):
        return int(round(self.clip_seconds * self.sample_rate))

    def n_frames(self, n_samples):
        return frame_count(n_samples, self.win_length, self.hop_length)


@dataclass
class Spectrogram:
    values: np.ndarray
    frame_hop: float
    clip_id: str = ""
    channel_id: ChannelId = ChannelId.MICROPHONE

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2:
            raise ValueError(f"spectrogram must be 2-D, got shape {self.values.shape}")
        self.channel_id = ChannelId(self.channel_id)

    @property
    def freq_bins(self):
        return self.values.shape[0]

    @property
    def frames(self):
        return self.values.shape[1]


@dataclass
class FrameTrack:
    values: np.ndarray
    kind: str = "label"  # "label" (binary) or "probability"
    clip_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.kind not in ("label", "probability"):
            raise ValueError(f"unknown FrameTrack kind {self.kind!r}")
        if np.any((self.values < 0) | (self.values > 1)):
            raise ValueError("FrameTrack values must lie in [0, 1]")
        if self.kind == "label" and not np.all((self.values == 0) | (self.values == 1)):
            raise ValueError("a label FrameTrack must be binary")

    def __len__(self):
        return self.values.size


def frame_count(n_samples, win_length, hop_length):
    """Number of frames for a signal of ``n_samples`` samples."""
    if n_samples < win_length:
        raise ValueError(
            f"signal of {n_samples} samples is shorter than one window ({win_length})"
        )
    return -(-n_samples // hop_length)


def merge_accelerometers(a, b):
    """Average two synchronized accelerometer channels into one view."""
    if len(a) != len(b) or a.sample_rate != b.sample_rate:
        raise ValueError(
            "accelerometer channels must match: "
            f"lengths {len(a)} vs {len(b)}, rates {a.sample_rate} vs {b.sample_rate}"
        )
    for w in (a, b):
        if w.channel_id not in ACCEL_CHANNELS:
            raise ValueError(f"{w.channel_id.value} is not an accelerometer channel")
    return Waveform((a.samples + b.samples) / 2.0, a.sample_rate, ChannelId.ACCEL_MERGED)


def stft_power(samples, cfg):
    """|STFT|^2 of a 1-D array as an (n_fft // 2 + 1, frames) array."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("expected a 1-D signal")
    if not np.all(np.isfinite(x)):
        raise ValueError("signal contains NaN or infinite samples")
    t = frame_count(x.size, cfg.win_length, cfg.hop_length)
    padded_len = (t - 1) * cfg.hop_length + cfg.win_length
    x = np.pad(x, (0, padded_len - x.size))
    frames = np.lib.stride_tricks.sliding_window_view(x, cfg.win_length)[:: cfg.hop_length]
    window = get_window(cfg.window, cfg.win_length, fftbins=True)
    spec = np.fft.rfft(frames * window, n=cfg.n_fft, axis=1)
    return (spec.real**2 + spec.imag**2).T


def power_spectrogram(w, cfg=None, clip_id=""):
    cfg = cfg or StftConfig()
    if w.sample_rate != cfg.sample_rate:
        raise ValueError(
            f"waveform rate {w.sample_rate} does not match config rate {cfg.sample_rate}"
        )
    return Spectrogram(stft_power(w.samples, cfg), cfg.frame_hop, clip_id, w.channel_id)


def rasterize_annotations(events, frames, frame_hop, clip_id=""):
    """Binary frame labels from (onset, offset) intervals in seconds.

    Frame ``j`` spans ``[j * hop, (j + 1) * hop)`` and is positive when it
    overlaps any event by a non-zero amount.
    """
    labels = np.zeros(frames, dtype=np.float64)
    starts = np.arange(frames) * frame_hop
    ends = starts + frame_hop
    horizon = frames * frame_hop
    for onset, offset in events:
        if onset < 0 or offset <= onset:
            raise ValueError(f"invalid event ({onset}, {offset}): need 0 <= onset < offset")
        onset, offset = min(onset, horizon), min(offset, horizon)
        labels[(starts < offset) & (ends > onset)] = 1.0
    return FrameTrack(labels, "label", clip_id)


class PowerSpectrogram(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping waveforms (clips, samples) to power spectrograms."""

    def __init__(self, n_fft=512, win_length=512, hop_length=256, sample_rate=SAMPLE_RATE):
        self.n_fft = n_fft
        self.win_length = win_length
        self.hop_length = hop_length
        self.sample_rate = sample_rate

    def fit(self, X=None, y=None):
        self.config_ = StftConfig(self.n_fft, self.win_length, self.hop_length,
                                  sample_rate=self.sample_rate)
        return self

    def transform(self, X):
        cfg = StftConfig(self.n_fft, self.win_length, self.hop_length,
                         sample_rate=self.sample_rate)
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.stack([stft_power(x, cfg) for x in X])


def read_wav(path):
    """Read a PCM WAV file as float64 in [-1, 1]; returns (rate, (channels, samples))."""
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        data = data / 32768.0
    elif data.dtype == np.int32:
        data = data / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        data = data.astype(np.float64)
    else:
        raise ValueError(f"unsupported WAV sample format {data.dtype} in {path}")
    if data.ndim == 1:
        data = data[:, np.newaxis]
    return rate, np.ascontiguousarray(data.T)


def write_wav(path, channels, sample_rate=SAMPLE_RATE):
    """Write a (channels, samples) array as 32-bit float WAV."""
    data = np.asarray(channels, dtype=np.float32)
    wavfile.write(path, sample_rate, np.ascontiguousarray(data.T))


ANNOTATION_HEADER = ["clip_id", "channel", "onset_sec", "offset_sec"]


def read_annotations(path):
    """Parse an annotation CSV into ``{clip_id: [(channel, onset, offset), ...]}``."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ANNOTATION_HEADER:
            raise ValueError(
                f"{path}: expected header {','.join(ANNOTATION_HEADER)}, got {reader.fieldnames}"
            )
        for row in reader:
            onset, offset = float(row["onset_sec"]), float(row["offset_sec"])
            if onset < 0 or offset <= onset or not math.isfinite(offset):
                raise ValueError(f"{path}: invalid event {row}")
            out.setdefault(row["clip_id"], []).append((row["channel"], onset, offset))
    return out


def write_annotations(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ANNOTATION_HEADER)
        for clip_id, channel, onset, offset in rows:
            writer.writerow([clip_id, channel, repr(float(onset)), repr(float(offset))])
