"""Binary dataset container, normalization-stats sidecar, and manifest CSV.

Container layout (little-endian):

    "CNDS"  u32 version=1
    u64 sample count, u32 channels, u32 window length
    per sample: u16 label, raw float32 values (channels x length, row-major)

Stats sidecar shares the magic and version, then a u32 type flag (2),
u32 channels, and per-channel float64 mean then standard deviation.

Group ids (patient provenance for fold splitting) do not fit the fixed
record layout, so they ride in a plain-text sidecar `<path>.groups`, one id
per sample line.
"""

import csv
import io
import os
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import DataError, FormatError

MAGIC = b"CNDS"
VERSION = 1
STATS_FLAG = 2


@dataclass
class Dataset:
    samples: np.ndarray  # (n, channels, length) float32
    labels: np.ndarray  # (n,) int
    groups: list[str] | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.samples.ndim != 3:
            raise DataError(f"samples must be (n, channels, length), got {self.samples.shape}")
        if self.labels.shape != (self.samples.shape[0],):
            raise DataError(f"{self.samples.shape[0]} samples but {self.labels.shape} labels")
        if self.groups is not None and len(self.groups) != self.samples.shape[0]:
            raise DataError(f"{self.samples.shape[0]} samples but {len(self.groups)} group ids")

    def __len__(self) -> int:
        return self.samples.shape[0]


def _atomic_write(path, payload: bytes) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(payload)
    os.replace(tmp, path)


def groups_path(path) -> str:
    return f"{path}.groups"


def export_dataset(path, dataset: Dataset) -> None:
    n, channels, length = dataset.samples.shape
    if dataset.labels.size and (dataset.labels.min() < 0 or dataset.labels.max() > 0xFFFF):
        raise DataError("labels must fit an unsigned 16-bit field")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<IQII", VERSION, n, channels, length))
    flat = np.ascontiguousarray(dataset.samples, dtype="<f4")
    for i in range(n):
        buf.write(struct.pack("<H", int(dataset.labels[i])))
        buf.write(flat[i].tobytes())
    _atomic_write(path, buf.getvalue())
    if dataset.groups is not None:
        text = "".join(f"{g}\n" for g in dataset.groups)
        _atomic_write(groups_path(path), text.encode())


def import_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}", offset=0)
    header = struct.calcsize("<IQII")
    if len(buf) < 4 + header:
        raise FormatError("truncated header", offset=len(buf))
    version, n, channels, length = struct.unpack_from("<IQII", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    record = 2 + 4 * channels * length
    expected = 4 + header + record * n
    if len(buf) != expected:
        raise FormatError(f"expected {expected} bytes for {n} samples, file has {len(buf)}",
                          offset=min(len(buf), expected))
    samples = np.empty((n, channels, length), dtype=np.float32)
    labels = np.empty(n, dtype=np.int64)
    pos = 4 + header
    for i in range(n):
        labels[i] = struct.unpack_from("<H", buf, pos)[0]
        pos += 2
        samples[i] = np.frombuffer(buf, dtype="<f4", count=channels * length,
                                   offset=pos).reshape(channels, length)
        pos += 4 * channels * length

    groups = None
    gpath = groups_path(path)
    if os.path.exists(gpath):
        with open(gpath, "r") as f:
            groups = [line.rstrip("\n") for line in f if line.strip()]
        if len(groups) != n:
            raise FormatError(f"groups sidecar lists {len(groups)} ids for {n} samples")
    return Dataset(samples, labels, groups)


def save_stats(path, mean: np.ndarray, std: np.ndarray) -> None:
    mean = np.asarray(mean, dtype="<f8")
    std = np.asarray(std, dtype="<f8")
    if mean.shape != std.shape or mean.ndim != 1:
        raise DataError(f"stats must be matching vectors, got {mean.shape} and {std.shape}")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<III", VERSION, STATS_FLAG, mean.shape[0]))
    buf.write(mean.tobytes())
    buf.write(std.tobytes())
    _atomic_write(path, buf.getvalue())


def load_stats(path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}", offset=0)
    if len(buf) < 16:
        raise FormatError("truncated stats header", offset=len(buf))
    version, flag, channels = struct.unpack_from("<III", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if flag != STATS_FLAG:
        raise FormatError(f"not a stats sidecar (type flag {flag})", offset=8)
    expected = 16 + 16 * channels
    if len(buf) != expected:
        raise FormatError(f"expected {expected} bytes for {channels} channels, "
                          f"file has {len(buf)}", offset=min(len(buf), expected))
    mean = np.frombuffer(buf, dtype="<f8", count=channels, offset=16).copy()
    std = np.frombuffer(buf, dtype="<f8", count=channels, offset=16 + 8 * channels).copy()
    return mean, std


# ---------------------------------------------------------------------------
# Manifest CSV

MANIFEST_HEADER = ["path", "label", "patient_id", "split"]
LABEL_NAMES = {"normal": 0, "abnormal": 1}


@dataclass
class ManifestEntry:
    path: str
    label: int
    patient_id: str
    split: str


def read_manifest(path) -> list[ManifestEntry]:
    with open(path, "r", newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError("manifest is empty") from None
        if [h.strip() for h in header] != MANIFEST_HEADER:
            raise FormatError(f"manifest header must be {','.join(MANIFEST_HEADER)!r}, "
                              f"got {','.join(header)!r}")
        entries = []
        for lineno, row in enumerate(reader, start=2):
            if not row or not any(field.strip() for field in row):
                continue
            if len(row) != 4:
                raise FormatError(f"manifest line {lineno}: expected 4 fields, got {len(row)}")
            file_path, label_text, patient, split = (field.strip() for field in row)
            label_text = label_text.lower()
            if label_text in LABEL_NAMES:
                label = LABEL_NAMES[label_text]
            else:
                try:
                    label = int(label_text)
                except ValueError:
                    raise DataError(f"manifest line {lineno}: label must be "
                                    f"normal/abnormal or a class index, got {label_text!r}") \
                        from None
                if label < 0:
                    raise DataError(f"manifest line {lineno}: class index must be >= 0")
            if split not in ("train", "test"):
                raise DataError(f"manifest line {lineno}: split must be train or test, "
                                f"got {split!r}")
            entries.append(ManifestEntry(file_path, label, patient, split))

    by_split: dict[str, set[str]] = {"train": set(), "test": set()}
    for e in entries:
        by_split[e.split].add(e.patient_id)
    shared = by_split["train"] & by_split["test"]
    if shared:
        raise DataError(f"patients appear in both splits: {sorted(shared)}")
    return entries
