"""Signal preparation: resampling, normalization, window sizing, windowing.

Sequences are variable-length multichannel measurements at a common sample
rate. Channels recorded at other rates are brought onto the common grid by
linear interpolation (upsampling) or by an anti-aliasing low-pass filter
followed by interpolation (downsampling). Channels are z-scored with
statistics fitted on the training pool only, the window size can be derived
from the longest autocorrelation lag across channels, and windowing slices
sequences at a configurable shift: half a window for training, one step for
detection.

Sequence files are a small versioned binary container (header with id,
label, rate and channel names, then the row-major float64 matrix); CSV
import and export cover interchange, and a JSON manifest records which file
belongs to which split.
"""

from __future__ import annotations

import csv
import io
import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import butter, sosfiltfilt

from .errors import ContractError, DataError, DimensionError

_SEQ_MAGIC = b"AVAESEQF"
_SEQ_VERSION = 1

STD_FLOOR = 1e-8
NORMAL_LABEL = "normal"


@dataclass(frozen=True)
class RawChannel:
    name: str
    rate_hz: float
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if self.rate_hz <= 0:
            raise ContractError(f"channel {self.name}: rate must be positive")
        if self.values.ndim != 1 or len(self.values) < 2:
            raise ContractError(f"channel {self.name}: need at least 2 samples")


@dataclass(frozen=True)
class Sequence:
    id: str
    label: str
    rate_hz: float
    channels: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if self.values.ndim != 2 or self.values.shape[1] != len(self.channels):
            raise DimensionError(
                f"sequence {self.id}: value matrix {self.values.shape} does not match "
                f"{len(self.channels)} channels")
        if self.values.shape[0] < 2:
            raise ContractError(f"sequence {self.id}: need at least 2 time steps")
        if np.isnan(self.values).any():
            raise DataError(f"sequence {self.id}: contains NaN")

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def is_anomalous(self) -> bool:
        return self.label != NORMAL_LABEL


@dataclass(frozen=True)
class NormStats:
    channels: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray


@dataclass(frozen=True)
class WindowSet:
    source_id: str
    windows: np.ndarray
    offsets: np.ndarray


def resample(channel: RawChannel, target_rate: float) -> np.ndarray:
    """Bring one channel onto the target-rate grid spanning the same duration.

    Slower channels are linearly interpolated; faster ones pass through a
    fourth-order low-pass filter with cutoff at half the target rate (applied
    forward and backward, so zero phase) before interpolation onto the grid.
    """
    if target_rate <= 0:
        raise ContractError("resample: target rate must be positive")
    values, rate = channel.values, channel.rate_hz
    duration = (len(values) - 1) / rate
    if duration < 1.0 / target_rate:
        raise ContractError(
            f"resample: channel {channel.name} spans {duration:.3g} s, shorter than one "
            f"target interval {1.0 / target_rate:.3g} s")
    if abs(rate - target_rate) <= 1e-12 * max(rate, target_rate):
        return values.copy()
    n_out = int(np.floor(duration * target_rate)) + 1
    t_out = np.arange(n_out) / target_rate
    t_in = np.arange(len(values)) / rate
    if rate < target_rate:
        return np.interp(t_out, t_in, values)
    sos = butter(4, target_rate / 2.0, fs=rate, output="sos")
    # the default reflection padding is much shorter than the filter's settling
    # time when the cutoff sits far below the sample rate, which bends the
    # first and last few output points; pad several settling times instead
    padlen = min(len(values) - 1, int(np.ceil(6.0 * rate / target_rate)))
    smoothed = sosfiltfilt(sos, values, padlen=padlen)
    return np.interp(t_out, t_in, smoothed)


def fit_norm(sequences: list[Sequence]) -> NormStats:
    """Per-channel mean and standard deviation pooled over the training set."""
    if not sequences:
        raise ContractError("fit_norm: empty training set")
    channels = sequences[0].channels
    for seq in sequences:
        if seq.channels != channels:
            raise ContractError(
                f"fit_norm: sequence {seq.id} channel list differs from {sequences[0].id}")
    pooled = np.concatenate([seq.values for seq in sequences], axis=0)
    mean = pooled.mean(axis=0)
    std = pooled.std(axis=0)
    low = std < STD_FLOOR
    if low.any():
        names = [channels[i] for i in np.nonzero(low)[0]]
        warnings.warn(f"constant channels floored at std={STD_FLOOR}: {names}")
        std = np.where(low, STD_FLOOR, std)
    return NormStats(channels, mean, std)


def apply_norm(seq: Sequence, stats: NormStats) -> Sequence:
    if seq.channels != stats.channels:
        raise ContractError(f"apply_norm: sequence {seq.id} channels do not match stats")
    return Sequence(seq.id, seq.label, seq.rate_hz, seq.channels,
                    (seq.values - stats.mean) / stats.std)


def invert_norm(values: np.ndarray, stats: NormStats) -> np.ndarray:
    return values * stats.std + stats.mean


def _autocorr(x: np.ndarray) -> np.ndarray:
    """Normalized autocorrelation r_0..r_{T-1}, biased estimator via FFT."""
    xc = x - x.mean()
    n = len(xc)
    f = np.fft.rfft(xc, n=2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    if acf[0] <= 0:
        return np.zeros(n)
    return acf / acf[0]


def autocorr_window_size(sequences: list[Sequence], threshold: float = 0.2) -> int:
    """Smallest power of two strictly greater than the longest qualifying lag.

    A lag qualifies when any channel's normalized autocorrelation exceeds the
    threshold there; channels with no qualifying lag (white noise, constants)
    contribute lag 1.
    """
    if not sequences:
        raise ContractError("autocorr_window_size: empty training set")
    longest = 1
    for seq in sequences:
        for c in range(seq.values.shape[1]):
            r = _autocorr(seq.values[:, c])
            above = np.nonzero(r[1:] > threshold)[0]
            lag = int(above[-1]) + 1 if len(above) else 1
            longest = max(longest, lag)
    w = 1
    while w <= longest:
        w *= 2
    return w


def make_windows(seq: Sequence, window: int, shift: int) -> WindowSet:
    """Contiguous slices of length ``window`` every ``shift`` steps."""
    if window < 1 or shift < 1:
        raise ContractError("make_windows: window and shift must be positive")
    t = seq.n_steps
    if t < window:
        raise ContractError(
            f"make_windows: sequence {seq.id} has {t} steps, shorter than window {window}")
    count = (t - window) // shift + 1
    offsets = np.arange(count) * shift
    windows = np.stack([seq.values[o:o + window] for o in offsets])
    return WindowSet(seq.id, windows, offsets)


def training_windows(sequences: list[Sequence], window: int) -> np.ndarray:
    """Half-overlapping windows pooled across sequences, in input order."""
    parts = [make_windows(seq, window, max(1, window // 2)).windows for seq in sequences]
    return np.concatenate(parts, axis=0)


def chronological_split(sequences: list[Sequence], train_fraction: float = 0.8
                        ) -> tuple[list[Sequence], list[Sequence]]:
    """Leading fraction for training, remainder for validation; order kept."""
    if not 0 < train_fraction < 1:
        raise ContractError("chronological_split: fraction must be inside (0, 1)")
    cut = int(round(len(sequences) * train_fraction))
    cut = min(max(cut, 1), len(sequences) - 1)
    if len(sequences) < 2:
        raise ContractError("chronological_split: need at least 2 sequences")
    return list(sequences[:cut]), list(sequences[cut:])


# -- persistence ----------------------------------------------------------


def _write_str(buf, text: str) -> None:
    raw = text.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)


def _read_exact(fh, n: int) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise DataError("sequence file is truncated")
    return raw


def _read_str(fh) -> str:
    (n,) = struct.unpack("<H", _read_exact(fh, 2))
    return _read_exact(fh, n).decode("utf-8")


def save_sequence(seq: Sequence, path) -> None:
    buf = io.BytesIO()
    buf.write(_SEQ_MAGIC)
    buf.write(struct.pack("<I", _SEQ_VERSION))
    _write_str(buf, seq.id)
    _write_str(buf, seq.label)
    buf.write(struct.pack("<d", seq.rate_hz))
    buf.write(struct.pack("<H", len(seq.channels)))
    for name in seq.channels:
        _write_str(buf, name)
    buf.write(struct.pack("<I", seq.n_steps))
    buf.write(np.ascontiguousarray(seq.values, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_sequence(path) -> Sequence:
    with open(path, "rb") as fh:
        if _read_exact(fh, len(_SEQ_MAGIC)) != _SEQ_MAGIC:
            raise DataError(f"{path} is not a sequence file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != _SEQ_VERSION:
            raise DataError(f"unsupported sequence file version {version}")
        seq_id = _read_str(fh)
        label = _read_str(fh)
        (rate,) = struct.unpack("<d", _read_exact(fh, 8))
        (n_channels,) = struct.unpack("<H", _read_exact(fh, 2))
        channels = tuple(_read_str(fh) for _ in range(n_channels))
        (t,) = struct.unpack("<I", _read_exact(fh, 4))
        data = np.frombuffer(_read_exact(fh, 8 * t * n_channels), dtype="<f8")
        return Sequence(seq_id, label, rate, channels,
                        data.astype(np.float64).reshape(t, n_channels))


def sequence_to_csv(seq: Sequence, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# id: {seq.id}\n")
        fh.write(f"# label: {seq.label}\n")
        fh.write(f"# rate_hz: {seq.rate_hz:.17g}\n")
        writer = csv.writer(fh)
        writer.writerow(seq.channels)
        for row in seq.values:
            writer.writerow([f"{v:.17g}" for v in row])


def sequence_from_csv(path) -> Sequence:
    meta: dict[str, str] = {}
    rows: list[list[str]] = []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].partition(":")
                meta[key.strip()] = value.strip()
            else:
                rows.append(line)
    if not {"id", "label", "rate_hz"} <= meta.keys():
        raise DataError(f"{path}: missing id/label/rate_hz header comments")
    parsed = list(csv.reader(rows))
    channels = tuple(parsed[0])
    values = np.array([[float(v) for v in row] for row in parsed[1:]])
    return Sequence(meta["id"], meta["label"], float(meta["rate_hz"]), channels, values)


def save_norm(stats: NormStats, path) -> None:
    with open(path, "w") as fh:
        json.dump({"channels": list(stats.channels),
                   "mean": [float(v) for v in stats.mean],
                   "std": [float(v) for v in stats.std]}, fh, indent=2)
        fh.write("\n")


def load_norm(path) -> NormStats:
    path = Path(path)
    if not path.exists():
        raise DataError(f"normalization file {path} does not exist")
    with open(path) as fh:
        raw = json.load(fh)
    return NormStats(tuple(raw["channels"]), np.array(raw["mean"], dtype=np.float64),
                     np.array(raw["std"], dtype=np.float64))


def write_manifest(splits: dict[str, list[str]], path) -> None:
    """Record split membership as {split name: [sequence file names]}."""
    with open(path, "w") as fh:
        json.dump(splits, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> dict[str, list[str]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"manifest {path} does not exist")
    with open(path) as fh:
        manifest = json.load(fh)
    if not isinstance(manifest, dict):
        raise DataError(f"manifest {path} must be a JSON object")
    return {str(k): [str(v) for v in vs] for k, vs in manifest.items()}


def load_split(manifest_path, split: str) -> list[Sequence]:
    manifest = load_manifest(manifest_path)
    if split not in manifest:
        raise DataError(f"manifest has no '{split}' split")
    base = Path(manifest_path).parent
    return [load_sequence(base / name) for name in manifest[split]]
