"""Synthetic labelled I/Q windows and the ISLD dataset file format.

Each user transmits Gray-coded QPSK with rectangular pulses at its own
samples-per-symbol rate (``DEFAULT_SPS``); the rate is the user's spectral
signature, standing in for the hardware/channel fingerprint of captured
traces. Every active user's stream gets a random symbol-timing offset and a
random unit-modulus flat channel gain. Noise is circular complex Gaussian,
scaled so that the strongest active user sits at the requested SNR; idle
windows use the strongest configured user as the SNR reference.
"""

from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

DEFAULT_SPS = (2, 8, 4, 16)
SNR_GRID_DB = (0.0, 5.0, 10.0, 15.0, 20.0)
WINDOW_SIZES = (32, 128, 512)
MAX_USERS = 3  # 2^L classifier outputs; kept small so every class is learnable

MAGIC = b"ISLD"
VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ClassLabel:
    active_flags: tuple[int, ...]

    @property
    def class_index(self) -> int:
        return encode_flags(self.active_flags)

    @classmethod
    def from_index(cls, index: int, n_users: int) -> "ClassLabel":
        return cls(decode_class(index, n_users))


@dataclass(frozen=True)
class IqWindow:
    samples: np.ndarray
    label: ClassLabel
    snr_db: float


def encode_flags(flags: Sequence[int]) -> int:
    """User ``i`` maps to bit ``i``: Idle=0, U1=1, U2=2, U1+U2=3."""
    return sum(int(bool(f)) << i for i, f in enumerate(flags))


def decode_class(index: int, n_users: int) -> tuple[int, ...]:
    if not 0 <= index < 2 ** n_users:
        raise ValueError(f"class {index} out of range for {n_users} users")
    return tuple((index >> i) & 1 for i in range(n_users))


def class_name(index: int, n_users: int) -> str:
    flags = decode_class(index, n_users)
    on = [f"U{i + 1}" for i, f in enumerate(flags) if f]
    if not on:
        return "Idle"
    if len(on) == 1:
        return f"Only {on[0]}"
    return "+".join(on)


def modulate(bits) -> np.ndarray:
    """Gray-coded QPSK, unit average power; bit pair (b0, b1) -> I, Q signs."""
    bits = np.asarray(bits, dtype=np.int64).ravel()
    if bits.size % 2:
        raise ValueError("QPSK needs an even number of bits")
    b = bits.reshape(-1, 2)
    return ((1 - 2 * b[:, 0]) + 1j * (1 - 2 * b[:, 1])) / math.sqrt(2.0)


def _user_stream(rng: np.random.Generator, w: int, sps: int) -> np.ndarray:
    n_sym = -(-w // sps) + 1
    symbols = modulate(rng.integers(0, 2, size=2 * n_sym))
    offset = int(rng.integers(sps))
    return np.repeat(symbols, sps)[offset:offset + w]


def synthesize_window(active_flags: Sequence[int], powers: Sequence[float], snr_db: float, w: int,
                      seed, sps: Sequence[int] | None = None) -> IqWindow:
    """One window: sum of active users' streams plus noise.

    ``powers`` are linear per-user powers. ``snr_db = inf`` disables noise.
    """
    if w <= 0:
        raise ValueError("window length must be positive")
    if math.isnan(snr_db) or snr_db == -math.inf:
        raise ValueError("snr_db must be finite or +inf")
    flags = tuple(int(bool(f)) for f in active_flags)
    powers = np.asarray(powers, dtype=float)
    if len(powers) != len(flags):
        raise ValueError("one power per user is required")
    sps = DEFAULT_SPS[: len(flags)] if sps is None else tuple(sps)
    rng = np.random.default_rng(seed)
    x = np.zeros(w, dtype=np.complex128)
    for i, on in enumerate(flags):
        if on:
            gain = np.exp(2j * math.pi * rng.random())
            x += math.sqrt(powers[i]) * gain * _user_stream(rng, w, sps[i])
    if math.isfinite(snr_db):
        active = powers[np.array(flags, dtype=bool)]
        ref = active.max() if active.size else powers.max()
        sigma2 = ref / 10.0 ** (snr_db / 10.0)
        x += math.sqrt(sigma2 / 2.0) * (rng.standard_normal(w) + 1j * rng.standard_normal(w))
    return IqWindow(x, ClassLabel(flags), float(snr_db))


@dataclass
class DatasetConfig:
    n_users: int = 2
    per_class: int = 4000
    window: int = 32
    snr_grid: tuple[float, ...] = SNR_GRID_DB
    powers: tuple[float, ...] | None = None
    sps: tuple[int, ...] | None = None
    classes: tuple[int, ...] | None = None
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    max_users: int = MAX_USERS

    def __post_init__(self):
        if not 1 <= self.n_users <= min(self.max_users, len(DEFAULT_SPS)):
            raise ValueError(f"n_users={self.n_users} outside 1..{min(self.max_users, len(DEFAULT_SPS))}")


@dataclass
class Dataset:
    samples: np.ndarray  # (n, w) complex64
    labels: np.ndarray  # (n,) uint16
    snr_db: np.ndarray  # (n,) float32
    n_users: int
    split: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if not math.isclose(sum(self.split), 1.0, abs_tol=1e-9):
            raise ValueError("split fractions must sum to 1")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def window(self) -> int:
        return self.samples.shape[1]

    @property
    def n_classes(self) -> int:
        return 2 ** self.n_users

    @property
    def windows(self) -> list[IqWindow]:
        return [
            IqWindow(self.samples[i], ClassLabel.from_index(int(self.labels[i]), self.n_users), float(self.snr_db[i]))
            for i in range(len(self))
        ]

    def split_indices(self, seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Stratified train/val/test index arrays; every class is shuffled on its own."""
        rng = np.random.default_rng(seed)
        parts = ([], [], [])
        for c in np.unique(self.labels):
            idx = np.flatnonzero(self.labels == c)
            idx = idx[rng.permutation(len(idx))]
            n_train = int(round(self.split[0] * len(idx)))
            n_val = int(round(self.split[1] * len(idx)))
            parts[0].append(idx[:n_train])
            parts[1].append(idx[n_train:n_train + n_val])
            parts[2].append(idx[n_train + n_val:])
        return tuple(np.sort(np.concatenate(p)) for p in parts)

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.samples[idx], self.labels[idx], self.snr_db[idx], self.n_users, self.split)


def build_dataset(config: DatasetConfig, seed: int = 0, workers: int = 1) -> Dataset:
    """Class-balanced dataset cycling through the SNR grid.

    Window ``i`` is seeded from ``(seed, i)`` alone, so any worker count
    yields the same dataset.
    """
    n_all = 2 ** config.n_users
    classes = tuple(range(n_all)) if config.classes is None else tuple(config.classes)
    if len(classes) > n_all or any(not 0 <= c < n_all for c in classes):
        raise ValueError(f"{config.n_users} users support at most {n_all} classes")
    if config.per_class < 1:
        raise ValueError("per_class must be at least 1")
    if not config.snr_grid:
        raise ValueError("SNR grid must not be empty")
    powers = (1.0,) * config.n_users if config.powers is None else tuple(config.powers)

    def one(i: int) -> IqWindow:
        c = classes[i // config.per_class]
        snr = config.snr_grid[(i % config.per_class) % len(config.snr_grid)]
        return synthesize_window(decode_class(c, config.n_users), powers, snr, config.window,
                                 seed=[seed, i], sps=config.sps)

    n = len(classes) * config.per_class
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            windows = list(pool.map(one, range(n), chunksize=256))
    else:
        windows = [one(i) for i in range(n)]
    return Dataset(
        samples=np.array([wnd.samples for wnd in windows], dtype=np.complex64).reshape(n, config.window),
        labels=np.array([wnd.label.class_index for wnd in windows], dtype=np.uint16),
        snr_db=np.array([wnd.snr_db for wnd in windows], dtype=np.float32),
        n_users=config.n_users,
        split=tuple(config.split),
    )


def _record_dtype(w: int) -> np.dtype:
    return np.dtype([("label", "<u2"), ("snr_db", "<f4"), ("iq", "<f4", (w, 2))])


def write_dataset(path: str | Path, dataset: Dataset) -> None:
    w = dataset.window
    rec = np.empty(len(dataset), dtype=_record_dtype(w))
    rec["label"] = dataset.labels
    rec["snr_db"] = dataset.snr_db
    rec["iq"][..., 0] = dataset.samples.real
    rec["iq"][..., 1] = dataset.samples.imag
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, dataset.n_users, w, len(dataset)))
        fh.write(rec.tobytes())


def read_dataset(path: str | Path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DatasetFormatError("file too short for an ISLD header")
    magic, version, n_users, w, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version}")
    dtype = _record_dtype(w)
    body = raw[_HEADER.size:]
    if len(body) != count * dtype.itemsize:
        raise DatasetFormatError(f"expected {count} records, file body has {len(body)} bytes")
    rec = np.frombuffer(body, dtype=dtype, count=count)
    samples = (rec["iq"][..., 0] + 1j * rec["iq"][..., 1]).astype(np.complex64)
    return Dataset(samples, rec["label"].astype(np.uint16), rec["snr_db"].astype(np.float32), int(n_users))
