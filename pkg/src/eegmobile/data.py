"""EEG/gaze sample containers, label filtering, splitting and a synthetic
stand-in for the Absolute Position benchmark.

``EEGT`` file layout (little-endian)::

    offset  size  field
    0       4     magic b"EEGT"
    4       4     u32 version = 1
    8       8     u64 n_samples
    16      4     u32 channels
    20      4     u32 timesteps
    24      4     u32 label_dim = 2
    28      1     u8 has_participants
    29      ...   f32 eeg[n][channels][timesteps]
                  f32 labels[n][2]
                  u32 participant_ids[n]   (only if has_participants)
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError

MAGIC = b"EEGT"
VERSION = 1
HEADER = struct.Struct("<4sIQIIIB")
SCREEN_W, SCREEN_H = 800.0, 600.0


@dataclass
class DatasetContainer:
    eeg: np.ndarray                        # (n, channels, timesteps) float32
    labels: np.ndarray                     # (n, 2) float32, screen pixels
    participant_ids: np.ndarray | None = None

    def __post_init__(self):
        self.eeg = np.asarray(self.eeg, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.float32)
        if self.eeg.ndim != 3:
            raise ValueError(f"eeg must be (n, channels, timesteps), got {self.eeg.shape}")
        if self.labels.shape != (len(self.eeg), 2):
            raise ValueError(f"labels must be ({len(self.eeg)}, 2), got {self.labels.shape}")
        if self.participant_ids is not None:
            self.participant_ids = np.asarray(self.participant_ids, dtype=np.uint32)
            if self.participant_ids.shape != (len(self.eeg),):
                raise ValueError("participant_ids must have one entry per sample")

    @property
    def n_samples(self) -> int:
        return len(self.eeg)

    @property
    def channels(self) -> int:
        return self.eeg.shape[1]

    @property
    def timesteps(self) -> int:
        return self.eeg.shape[2]

    def subset(self, idx) -> "DatasetContainer":
        idx = np.asarray(idx, dtype=np.int64)
        pids = None if self.participant_ids is None else self.participant_ids[idx]
        return DatasetContainer(self.eeg[idx], self.labels[idx], pids)

    def equals(self, other: "DatasetContainer") -> bool:
        """Bit-exact equality of every array."""
        if (self.participant_ids is None) != (other.participant_ids is None):
            return False
        same = (self.eeg.shape == other.eeg.shape
                and self.eeg.tobytes() == other.eeg.tobytes()
                and self.labels.tobytes() == other.labels.tobytes())
        if same and self.participant_ids is not None:
            same = self.participant_ids.tobytes() == other.participant_ids.tobytes()
        return same


def write_container(path, d: DatasetContainer) -> None:
    has_p = d.participant_ids is not None
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, d.n_samples, d.channels, d.timesteps, 2, int(has_p)))
        fh.write(np.ascontiguousarray(d.eeg, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(d.labels, dtype="<f4").tobytes())
        if has_p:
            fh.write(np.ascontiguousarray(d.participant_ids, dtype="<u4").tobytes())


def read_container(path) -> DatasetContainer:
    buf = Path(path).read_bytes()
    if len(buf) < HEADER.size:
        if len(buf) >= 4 and buf[:4] != MAGIC:
            raise FormatError("bad magic, expected b'EEGT'", 0)
        raise FormatError("truncated header", len(buf))
    magic, version, n, channels, timesteps, label_dim, has_p = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise FormatError("bad magic, expected b'EEGT'", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if label_dim != 2:
        raise FormatError(f"label_dim must be 2, got {label_dim}", 24)
    if has_p not in (0, 1):
        raise FormatError(f"has_participants must be 0 or 1, got {has_p}", 28)
    pos = HEADER.size
    sections = [("eeg", n * channels * timesteps * 4), ("labels", n * 2 * 4)]
    if has_p:
        sections.append(("participant ids", n * 4))
    arrays = {}
    for name, size in sections:
        if pos + size > len(buf):
            raise FormatError(f"truncated {name} section", len(buf))
        arrays[name] = buf[pos:pos + size]
        pos += size
    if pos != len(buf):
        raise FormatError("trailing bytes after payload", pos)
    eeg = np.frombuffer(arrays["eeg"], dtype="<f4").astype(np.float32).reshape(n, channels, timesteps)
    labels = np.frombuffer(arrays["labels"], dtype="<f4").astype(np.float32).reshape(n, 2)
    pids = None
    if has_p:
        pids = np.frombuffer(arrays["participant ids"], dtype="<u4").astype(np.uint32)
    return DatasetContainer(eeg, labels, pids)


def filter_valid_labels(d: DatasetContainer) -> DatasetContainer:
    """Keep samples whose gaze lies on screen, bounds inclusive."""
    x, y = d.labels[:, 0], d.labels[:, 1]
    keep = (x >= 0) & (x <= SCREEN_W) & (y >= 0) & (y <= SCREEN_H)
    return d.subset(np.flatnonzero(keep))


@dataclass
class SplitSpec:
    train: float = 0.70
    val: float = 0.15
    test: float = 0.15
    seed: int = 0
    group_by_participant: bool = False

    def __post_init__(self):
        fr = (self.train, self.val, self.test)
        if min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be >= 0 and sum to 1, got {fr}")


def _partition_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    n_val = int(np.floor(n * spec.val + 1e-9))
    n_test = int(np.floor(n * spec.test + 1e-9))
    return n - n_val - n_test, n_val, n_test


def split_indices(d: DatasetContainer, s: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rng = np.random.default_rng(s.seed)
    if s.group_by_participant:
        if d.participant_ids is None:
            raise ConfigError("group_by_participant needs participant ids")
        groups = np.unique(d.participant_ids)
        order = rng.permutation(len(groups))
        n_tr, n_va, _ = _partition_sizes(len(groups), s)
        chosen = [groups[order[:n_tr]], groups[order[n_tr:n_tr + n_va]], groups[order[n_tr + n_va:]]]
        return tuple(np.flatnonzero(np.isin(d.participant_ids, g)) for g in chosen)
    perm = rng.permutation(d.n_samples)
    n_tr, n_va, _ = _partition_sizes(d.n_samples, s)
    return perm[:n_tr], perm[n_tr:n_tr + n_va], perm[n_tr + n_va:]


def split(d: DatasetContainer, s: SplitSpec) -> tuple[DatasetContainer, DatasetContainer, DatasetContainer]:
    """Seeded train/val/test partition. Leftover samples (or participants)
    after flooring the val and test shares go to train."""
    return tuple(d.subset(i) for i in split_indices(d, s))


@dataclass
class SyntheticSpec:
    n_samples: int = 512
    noise_std: float = 1.0
    signal_gain: float = 1.0
    seed: int = 0
    channels: int = 129
    timesteps: int = 500
    n_participants: int = 0
    smooth_window: int = 5

    def __post_init__(self):
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if self.channels < 32:
            raise ConfigError("synthetic data plants signal in channels 0-31; need >= 32 channels")
        if self.smooth_window < 1 or self.timesteps < 1:
            raise ConfigError("smooth_window and timesteps must be >= 1")


def grid_positions() -> np.ndarray:
    """The 25 fixation targets: a 5 x 5 grid at 5%..95% of the 800 x 600 screen."""
    xs = np.linspace(0.05, 0.95, 5) * SCREEN_W
    ys = np.linspace(0.05, 0.95, 5) * SCREEN_H
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    return np.stack([gx.ravel(), gy.ravel()], axis=1).astype(np.float32)


def _carriers(timesteps: int, rng: np.random.Generator) -> np.ndarray:
    # 32 fixed carriers 1 + 0.5 sin(...) with whole cycles, so the time mean is 1
    t = np.arange(timesteps) / timesteps
    freq = rng.integers(1, 12, size=32)
    phase = rng.uniform(0, 2 * np.pi, size=32)
    return 1.0 + 0.5 * np.sin(2 * np.pi * freq[:, None] * t[None, :] + phase[:, None])


def generate_synthetic(s: SyntheticSpec) -> DatasetContainer:
    """Labels uniform over the 25 grid targets; EEG is moving-average smoothed
    Gaussian noise plus ``signal_gain`` times a planted code: channels 0-15
    carry x/400 - 1 and channels 16-31 carry y/300 - 1, each modulating its own
    fixed sinusoidal carrier."""
    rng = np.random.default_rng(s.seed)
    carriers = _carriers(s.timesteps, np.random.default_rng(12345))
    grid = grid_positions()
    labels = grid[rng.integers(0, len(grid), size=s.n_samples)]

    eeg = np.empty((s.n_samples, s.channels, s.timesteps), dtype=np.float32)
    kernel = np.ones(s.smooth_window) / s.smooth_window
    code = np.concatenate([
        np.repeat(labels[:, :1] / 400.0 - 1.0, 16, axis=1),
        np.repeat(labels[:, 1:] / 300.0 - 1.0, 16, axis=1),
    ], axis=1)                                              # (n, 32)
    chunk = 64
    for start in range(0, s.n_samples, chunk):
        stop = min(start + chunk, s.n_samples)
        noise = rng.standard_normal((stop - start, s.channels, s.timesteps + s.smooth_window - 1))
        # valid-mode moving average via cumulative sums keeps the output length
        cs = np.cumsum(noise, axis=-1)
        cs = np.concatenate([np.zeros(cs.shape[:-1] + (1,)), cs], axis=-1)
        smooth = (cs[..., s.smooth_window:] - cs[..., :-s.smooth_window]) * kernel[0]
        block = s.noise_std * smooth
        block[:, :32, :] += s.signal_gain * code[start:stop, :, None] * carriers[None]
        eeg[start:stop] = block
    pids = None
    if s.n_participants > 0:
        pids = rng.integers(0, s.n_participants, size=s.n_samples).astype(np.uint32)
    return DatasetContainer(eeg, labels, pids)


def ridge_features(eeg: np.ndarray) -> np.ndarray:
    """Time-averaged channel means with a bias column."""
    f = eeg.mean(axis=2, dtype=np.float64)
    return np.concatenate([f, np.ones((len(f), 1))], axis=1)


def ridge_fit_predict(train: DatasetContainer, test: DatasetContainer, alpha: float = 1.0) -> np.ndarray:
    """Closed-form ridge regression on time-averaged features."""
    X = ridge_features(train.eeg)
    Y = train.labels.astype(np.float64)
    reg = alpha * np.eye(X.shape[1])
    reg[-1, -1] = 0.0
    W = np.linalg.solve(X.T @ X + reg, X.T @ Y)
    return ridge_features(test.eeg) @ W
