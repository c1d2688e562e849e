"""Little-endian, versioned binary containers for datasets, models and ICA corrections.

Every file starts with a 4-byte magic and a (major, minor) u16 pair.
Readers accept any minor revision of a major they know and reject newer
majors.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .features import TENSOR_SHAPE
from .network import VARIANTS, Architecture, ModelParams

DATASET_MAGIC = b"SNB1"
MODEL_MAGIC = b"SNM1"
CORRECTION_MAGIC = b"SNC1"
FORMAT_VERSION = (1, 0)

RECORD_DTYPE = np.dtype([("label", "u1"), ("origin", "u1"), ("timestamp", "<f8"),
                         ("tensor", "<f4", TENSOR_SHAPE)])
SCALING_CODES = {"fan_in": 0, "none": 1}


class FormatError(ValueError):
    """Base class for unreadable container files."""


class BadMagicError(FormatError):
    pass


class UnsupportedVersionError(FormatError):
    pass


class TruncatedFileError(FormatError):
    pass


class CorruptFileError(FormatError):
    pass


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(f"{self.path}: expected {n} more bytes at offset {self.pos}, "
                                     f"file has {len(self.data)}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype: str, count: int) -> np.ndarray:
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count), dtype=dt).copy()


def _header(magic: bytes) -> bytes:
    return magic + struct.pack("<HH", *FORMAT_VERSION)


def _check_header(r: _Reader, magic: bytes) -> tuple[int, int]:
    got = r.take(4) if len(r.data) >= 4 else None
    if got != magic:
        if got is None:
            raise TruncatedFileError(f"{r.path}: file too short for a header")
        raise BadMagicError(f"{r.path}: bad magic {got!r}, expected {magic!r}")
    major, minor = r.unpack("HH")
    if major > FORMAT_VERSION[0]:
        raise UnsupportedVersionError(f"{r.path}: version {major}.{minor} is newer than "
                                      f"{FORMAT_VERSION[0]}.{FORMAT_VERSION[1]}")
    if major < 1:
        raise UnsupportedVersionError(f"{r.path}: unknown version {major}.{minor}")
    return major, minor


def _pack_names(names) -> bytes:
    out = [struct.pack("<H", len(names))]
    for name in names:
        raw = name.encode("utf-8")
        if len(raw) > 255:
            raise ValueError(f"task name too long: {name!r}")
        out.append(struct.pack("<B", len(raw)) + raw)
    return b"".join(out)


def _read_names(r: _Reader) -> tuple[str, ...]:
    (n,) = r.unpack("H")
    return tuple(r.take(r.unpack("B")[0]).decode("utf-8") for _ in range(n))


def _read(path) -> bytes:
    return Path(path).read_bytes()


def _write(path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    tmp.write_bytes(payload)
    tmp.replace(path)


# datasets

def dataset_bytes(dataset: Dataset) -> bytes:
    records = np.empty(len(dataset), dtype=RECORD_DTYPE)
    records["label"] = dataset.labels
    records["origin"] = dataset.origins
    records["timestamp"] = dataset.timestamps
    records["tensor"] = dataset.tensors
    head = _header(DATASET_MAGIC) + struct.pack("<I3H", len(dataset), *TENSOR_SHAPE)
    return head + _pack_names(dataset.task_names) + records.tobytes()


def save_dataset(dataset: Dataset, path) -> None:
    _write(path, dataset_bytes(dataset))


def parse_dataset(data: bytes, path="<bytes>") -> Dataset:
    r = _Reader(data, path)
    _check_header(r, DATASET_MAGIC)
    count, *dims = r.unpack("I3H")
    if tuple(dims) != TENSOR_SHAPE:
        raise CorruptFileError(f"{path}: tensor dims {tuple(dims)}, expected {TENSOR_SHAPE}")
    names = _read_names(r)
    body = r.take(count * RECORD_DTYPE.itemsize)
    if r.pos != len(data):
        raise CorruptFileError(f"{path}: {len(data) - r.pos} trailing bytes after {count} records")
    rec = np.frombuffer(body, dtype=RECORD_DTYPE)
    return Dataset(rec["tensor"].copy(), rec["label"].astype(np.int64), rec["timestamp"].copy(),
                   rec["origin"].copy(), names)


def load_dataset(path) -> Dataset:
    return parse_dataset(_read(path), path)


# corrections

def correction_bytes(matrix: np.ndarray, flagged=()) -> bytes:
    m = np.asarray(matrix, dtype="<f8")
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError("correction matrix must be square")
    flagged = sorted(int(i) for i in flagged)
    return (_header(CORRECTION_MAGIC) + struct.pack("<HH", m.shape[0], len(flagged))
            + struct.pack(f"<{len(flagged)}H", *flagged) + m.tobytes())


def save_correction(matrix: np.ndarray, path, flagged=()) -> None:
    _write(path, correction_bytes(matrix, flagged))


def parse_correction(data: bytes, path="<bytes>") -> tuple[np.ndarray, tuple[int, ...]]:
    r = _Reader(data, path)
    _check_header(r, CORRECTION_MAGIC)
    n, n_flagged = r.unpack("HH")
    flagged = r.unpack(f"{n_flagged}H")
    m = r.array("<f8", n * n).reshape(n, n)
    if r.pos != len(data):
        raise CorruptFileError(f"{path}: trailing bytes")
    return m, tuple(flagged)


def load_correction(path) -> tuple[np.ndarray, tuple[int, ...]]:
    return parse_correction(_read(path), path)


# models

def _optional_block(arr) -> bytes:
    if arr is None:
        return struct.pack("<I", 0)
    a = np.asarray(arr, dtype="<f8").ravel()
    return struct.pack("<I", a.size) + a.tobytes()


def _read_optional(r: _Reader) -> np.ndarray | None:
    (n,) = r.unpack("I")
    return r.array("<f8", n) if n else None


def model_bytes(params: ModelParams, correction: np.ndarray | None = None) -> bytes:
    a = params.arch
    geom = struct.pack("<BHHHHHHHHHB", VARIANTS.index(a.variant), *a.kernel, a.feature_maps, a.fc_width,
                       *a.kernel3d, a.maps3d, a.n_classes, SCALING_CODES[a.weight_scaling])
    body = struct.pack("<qI", params.seed, params.flat.size) + params.flat.astype("<f4").tobytes()
    corr = b"\x00" if correction is None else b"\x01" + correction_bytes(correction)[8:]
    norm = _optional_block(params.input_mean) + _optional_block(params.input_std)
    return _header(MODEL_MAGIC) + geom + body + corr + norm


def save_model(params: ModelParams, path, correction: np.ndarray | None = None) -> None:
    _write(path, model_bytes(params, correction))


def parse_model(data: bytes, path="<bytes>") -> tuple[ModelParams, np.ndarray | None]:
    r = _Reader(data, path)
    _check_header(r, MODEL_MAGIC)
    vid, kh, kw, fmaps, fc, kd, k3h, k3w, maps3d, n_classes, scaling = r.unpack("BHHHHHHHHHB")
    if vid >= len(VARIANTS) or scaling not in SCALING_CODES.values():
        raise CorruptFileError(f"{path}: unknown variant or scaling code")
    scaling_name = {v: k for k, v in SCALING_CODES.items()}[scaling]
    arch = Architecture(VARIANTS[vid], (kh, kw), fmaps, fc, (kd, k3h, k3w), maps3d, n_classes,
                        weight_scaling=scaling_name)
    seed, n = r.unpack("qI")
    if n != arch.param_count():
        raise CorruptFileError(f"{path}: {n} parameters stored, architecture needs {arch.param_count()}")
    flat = r.array("<f4", n).astype(np.float64)
    correction = None
    if r.take(1) == b"\x01":
        size, n_flagged = r.unpack("HH")
        r.unpack(f"{n_flagged}H")
        correction = r.array("<f8", size * size).reshape(size, size)
    mean, std = _read_optional(r), _read_optional(r)
    if r.pos != len(data):
        raise CorruptFileError(f"{path}: trailing bytes")
    shape = arch.input_shape
    params = ModelParams(arch, flat, seed,
                         None if mean is None else mean.reshape(shape),
                         None if std is None else std.reshape(shape))
    return params, correction


def load_model(path) -> tuple[ModelParams, np.ndarray | None]:
    return parse_model(_read(path), path)
