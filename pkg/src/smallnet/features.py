"""Spectral-topographic feature tensors.

A 1.2 s chunk of the 64 EEG channels becomes a (129, 7, 11) stack: one
Welch power spectrum per channel, each frequency bin drawn as a 7x11 image
of the scalp. Chunks are cut every 300 ms.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .signal import EEG_CHANNELS, EOG_INDEX, RawRecording

GRID_SHAPE = (7, 11)
N_FREQS = 129
TENSOR_SHAPE = (N_FREQS,) + GRID_SHAPE

CHUNK_SAMPLES = 600
HOP_SAMPLES = 150
SEGMENT_SAMPLES = 150
SEGMENT_STEP = 37
NFFT = 256

_WINDOW = np.hamming(SEGMENT_SAMPLES)
_WINDOW_ENERGY = float(np.sum(_WINDOW ** 2))
_ONE_SIDED = np.full(N_FREQS, 2.0)
_ONE_SIDED[[0, -1]] = 1.0


def frequencies(sample_rate_hz: float = 500.0) -> np.ndarray:
    return np.arange(N_FREQS) * (sample_rate_hz / 2.0) / (N_FREQS - 1)


def welch_psd(chunk: np.ndarray) -> np.ndarray:
    """Welch power of a 600-sample chunk (last axis), 129 one-sided bins.

    Thirteen 150-sample Hamming segments at a 37-sample step are zero
    padded to 256 points; their squared DFT magnitudes are averaged and
    divided by the window energy. Accepts (600,) or (n_channels, 600).
    """
    chunk = np.asarray(chunk, dtype=np.float64)
    if chunk.shape[-1] != CHUNK_SAMPLES:
        raise ValueError(f"expected {CHUNK_SAMPLES} samples, got {chunk.shape[-1]}")
    segs = np.lib.stride_tricks.sliding_window_view(chunk, SEGMENT_SAMPLES, axis=-1)[..., ::SEGMENT_STEP, :]
    spec = np.fft.rfft(segs * _WINDOW, n=NFFT, axis=-1)
    power = (spec.real ** 2 + spec.imag ** 2).mean(axis=-2)
    return power * _ONE_SIDED / _WINDOW_ENERGY


# --- electrode grid -------------------------------------------------------

_ROW_OF_PREFIX = {"Fp": -4, "AF": -3, "F": -2, "FT": -1, "FC": -1, "T": 0, "C": 0,
                  "TP": 1, "CP": 1, "P": 2, "PO": 3, "O": 4}
_RING_DEG = 72.0
_STEP_DEG = 18.0


def projected_position(name: str) -> tuple[float, float]:
    """Azimuthal-equidistant (x, y) in degrees from Cz; x right, y posterior."""
    m = re.fullmatch(r"([A-Za-z]+?)(z|\d+)", name)
    if m is None:
        raise ValueError(f"not a 10-20 electrode name: {name!r}")
    prefix, idx = m.groups()
    row = _ROW_OF_PREFIX[prefix]
    lateral = 0 if idx == "z" else (int(idx) + 1) // 2
    side = 0 if idx == "z" else (-1 if int(idx) % 2 else 1)
    if abs(row) == 4:
        phi = math.radians(_STEP_DEG * lateral)
        if row > 0:
            phi = math.pi - phi
        return side * _RING_DEG * math.sin(phi), -_RING_DEG * math.cos(phi)
    phi = math.radians(90.0 + _STEP_DEG * row)
    ring = np.array([side * _RING_DEG * math.sin(phi), -_RING_DEG * math.cos(phi)])
    if lateral > 4:
        x, y = ring * (_RING_DEG + _STEP_DEG) / _RING_DEG
        return float(x), float(y)
    mid = np.array([0.0, _STEP_DEG * row])
    x, y = mid + lateral / 4.0 * (ring - mid)
    return float(x), float(y)


def build_grid_table(channels: Sequence[str] = EEG_CHANNELS) -> list[tuple[str, int, int]]:
    rows, cols = GRID_SHAPE
    table = []
    for ch in channels:
        x, y = projected_position(ch)
        col = math.floor((cols - 1) / 2 + x / _STEP_DEG + 0.5)
        row = math.floor((rows - 1) / 2 + y / 24.0 + 0.5)
        table.append((ch, min(max(row, 0), rows - 1), min(max(col, 0), cols - 1)))
    return table


@dataclass(frozen=True)
class ElectrodeGrid:
    cell_of: dict[str, tuple[int, int]]
    empty_cells: tuple[tuple[int, int], ...]
    fill_from: dict[tuple[int, int], tuple[int, int]]
    channels: tuple[str, ...]

    @classmethod
    def from_table(cls, table: Sequence[tuple[str, int, int]], channels: Sequence[str] = EEG_CHANNELS):
        cell_of = {}
        for ch, row, col in table:
            if not (0 <= row < GRID_SHAPE[0] and 0 <= col < GRID_SHAPE[1]):
                raise ValueError(f"cell ({row}, {col}) of {ch} outside the grid")
            cell_of[ch] = (int(row), int(col))
        missing = [ch for ch in channels if ch not in cell_of]
        if missing:
            raise ValueError(f"channels without a grid cell: {missing}")
        occupied = sorted(set(cell_of[ch] for ch in channels))
        occ = np.array(occupied, dtype=float)
        empty, fill = [], {}
        for r in range(GRID_SHAPE[0]):
            for c in range(GRID_SHAPE[1]):
                if (r, c) in occupied:
                    continue
                d = np.hypot(occ[:, 0] - r, occ[:, 1] - c)
                # argmin returns the first minimum; occupied is row-major sorted
                fill[(r, c)] = occupied[int(np.argmin(d))]
                empty.append((r, c))
        return cls(cell_of, tuple(empty), fill, tuple(channels))

    @classmethod
    def load(cls, path: str | Path | None = None) -> "ElectrodeGrid":
        if path is None:
            text = resources.files("smallnet.data").joinpath("grid_7x11.csv").read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
        table = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: expected channel,row,col")
            table.append((parts[0], int(parts[1]), int(parts[2])))
        return cls.from_table(table)

    def projection_matrix(self) -> np.ndarray:
        """(77, n_channels) matrix mapping channel values onto flattened cells."""
        n_cells = GRID_SHAPE[0] * GRID_SHAPE[1]
        m = np.zeros((n_cells, len(self.channels)))
        for j, ch in enumerate(self.channels):
            r, c = self.cell_of[ch]
            m[r * GRID_SHAPE[1] + c, j] = 1.0
        m /= np.maximum(m.sum(axis=1, keepdims=True), 1.0)
        for (r, c), (sr, sc) in self.fill_from.items():
            m[r * GRID_SHAPE[1] + c] = m[sr * GRID_SHAPE[1] + sc]
        return m


def write_grid_table(path: str | Path, table: Sequence[tuple[str, int, int]] | None = None) -> None:
    table = build_grid_table() if table is None else table
    lines = ["# channel,row,col  (azimuthal-equidistant 10-20 projection, nearest cell)"]
    lines += [f"{ch},{r},{c}" for ch, r, c in table]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class FeatureTensor:
    values: np.ndarray
    origin_time_s: float = 0.0

    def __post_init__(self):
        if self.values.shape != TENSOR_SHAPE:
            raise ValueError(f"tensor shape {self.values.shape} != {TENSOR_SHAPE}")


class Projector:
    """Caches the grid's projection matrix for repeated use."""

    def __init__(self, grid: ElectrodeGrid):
        self.grid = grid
        self.matrix = grid.projection_matrix()

    def __call__(self, spectra: np.ndarray) -> np.ndarray:
        spectra = np.asarray(spectra, dtype=np.float64)
        if spectra.shape != (len(self.grid.channels), N_FREQS):
            raise ValueError(f"spectra shape {spectra.shape} != ({len(self.grid.channels)}, {N_FREQS})")
        return (spectra.T @ self.matrix.T).reshape(TENSOR_SHAPE)


def project(spectra: np.ndarray, grid: ElectrodeGrid, channel_names: Sequence[str] | None = None,
            origin_time_s: float = 0.0) -> FeatureTensor:
    if channel_names is not None:
        unmapped = [ch for ch in channel_names if ch not in grid.cell_of]
        if unmapped:
            raise ValueError(f"unmapped channels {unmapped}")
        if tuple(channel_names) != grid.channels:
            order = [list(channel_names).index(ch) for ch in grid.channels]
            spectra = np.asarray(spectra)[order]
    return FeatureTensor(Projector(grid)(spectra), origin_time_s)


def chunk_tensor(eeg_chunk: np.ndarray, projector: Projector, correction: np.ndarray | None = None) -> np.ndarray:
    """(64, 600) raw EEG chunk -> (129, 7, 11) tensor."""
    if correction is not None:
        eeg_chunk = correction @ eeg_chunk
    return projector(welch_psd(eeg_chunk))


def chunk_starts(n_samples: int) -> range:
    if n_samples < CHUNK_SAMPLES:
        return range(0)
    return range(0, n_samples - CHUNK_SAMPLES + 1, HOP_SAMPLES)


def stream(recording: RawRecording, grid: ElectrodeGrid, correction: np.ndarray | None = None
           ) -> Iterator[FeatureTensor]:
    """Yield one tensor per 300 ms; tensor i covers samples [150 i, 150 i + 600)."""
    projector = Projector(grid)
    eeg = recording.samples[:EOG_INDEX]
    for start in chunk_starts(recording.n_samples):
        values = chunk_tensor(eeg[:, start:start + CHUNK_SAMPLES], projector, correction)
        yield FeatureTensor(values, start / recording.sample_rate_hz)


class ChunkRing:
    """Fixed-length multichannel ring holding the most recent samples."""

    def __init__(self, n_channels: int, length: int = CHUNK_SAMPLES):
        self.data = np.zeros((n_channels, length))
        self.length = length
        self.ptr = 0
        self.filled = 0

    def extend(self, block: np.ndarray) -> None:
        n = block.shape[1]
        if n >= self.length:
            self.data[:] = block[:, -self.length:]
            self.ptr = 0
        else:
            end = self.ptr + n
            if end <= self.length:
                self.data[:, self.ptr:end] = block
            else:
                split = self.length - self.ptr
                self.data[:, self.ptr:] = block[:, :split]
                self.data[:, :end - self.length] = block[:, split:]
            self.ptr = end % self.length
        self.filled = min(self.filled + n, self.length)

    @property
    def full(self) -> bool:
        return self.filled == self.length

    def view(self) -> np.ndarray:
        """Samples in chronological order."""
        return np.concatenate((self.data[:, self.ptr:], self.data[:, :self.ptr]), axis=1)
