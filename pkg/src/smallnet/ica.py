"""Offline ICA for ocular artefact removal.

The decomposition is fitted once on EEG channels only; components whose
time course tracks the EOG channel are dropped from the mixing matrix,
and the resulting fixed 64x64 matrix cleans every online chunk.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .signal import EOG_INDEX, RawRecording

MIN_FIT_SECONDS = 30.0


class ICAConvergenceError(RuntimeError):
    def __init__(self, message: str, trace: list[float]):
        super().__init__(message)
        self.trace = trace


@dataclass
class UnmixingModel:
    whitener: np.ndarray
    rotation: np.ndarray
    mean: np.ndarray
    flagged_eog: set[int] = field(default_factory=set)
    n_iter: int = 0
    trace: list[float] = field(default_factory=list)

    @property
    def unmixing(self) -> np.ndarray:
        return self.rotation @ self.whitener

    @property
    def mixing(self) -> np.ndarray:
        return np.linalg.pinv(self.unmixing)

    @property
    def n_components(self) -> int:
        return self.rotation.shape[0]

    def sources(self, eeg: np.ndarray) -> np.ndarray:
        return self.unmixing @ (eeg - self.mean[:, None])


def _sym_decorrelate(w: np.ndarray) -> np.ndarray:
    s, u = np.linalg.eigh(w @ w.T)
    s = np.clip(s, np.finfo(float).tiny, None)
    return (u * (1.0 / np.sqrt(s))) @ u.T @ w


def fit_ica(recording: RawRecording | np.ndarray, n_components: int = 64, max_iter: int = 500,
            tol: float = 1e-4, seed: int = 0, sample_rate_hz: float | None = None) -> UnmixingModel:
    """Symmetric FastICA with a tanh contrast on whitened, centred EEG.

    ``recording`` may be a RawRecording (EEG rows are used, the EOG row is
    ignored) or a bare (channels, samples) array.
    """
    if isinstance(recording, RawRecording):
        eeg = recording.eeg
        fs = recording.sample_rate_hz
    else:
        eeg = np.asarray(recording, dtype=np.float64)
        fs = sample_rate_hz or 500
    n_chan, n_samples = eeg.shape
    if n_samples / fs < MIN_FIT_SECONDS:
        raise ValueError(f"need at least {MIN_FIT_SECONDS} s of data, got {n_samples / fs:.1f} s")
    if not 1 <= n_components <= n_chan:
        raise ValueError(f"n_components must be in [1, {n_chan}]")

    mean = eeg.mean(axis=1)
    x = eeg - mean[:, None]
    cov = x @ x.T / n_samples
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:n_components]
    evals, evecs = evals[order], evecs[:, order]
    whitener = (evecs / np.sqrt(evals)).T
    z = whitener @ x

    rng = np.random.default_rng(seed)
    w = _sym_decorrelate(rng.standard_normal((n_components, n_components)))
    trace = []
    for it in range(1, max_iter + 1):
        y = np.tanh(w @ z)
        g_prime = (1.0 - y ** 2).mean(axis=1)
        w_new = _sym_decorrelate(y @ z.T / n_samples - g_prime[:, None] * w)
        change = float(np.max(np.abs(np.abs(np.sum(w_new * w, axis=1)) - 1.0)))
        trace.append(change)
        w = w_new
        if change < tol:
            return UnmixingModel(whitener, w, mean, n_iter=it, trace=trace)
    raise ICAConvergenceError(f"FastICA did not converge in {max_iter} iterations "
                              f"(last change {trace[-1]:.3g})", trace)


def flag_eog_components(model: UnmixingModel, recording: RawRecording, eog_channel_index: int = EOG_INDEX,
                        threshold: float = 0.7) -> set[int]:
    """Indices of components whose |corr| with the EOG channel exceeds ``threshold``.

    The flags are also stored on ``model``.
    """
    if recording.n_samples == 0:
        raise ValueError("empty recording")
    eeg = np.delete(recording.samples, eog_channel_index, axis=0)
    src = model.sources(eeg)
    eog = recording.samples[eog_channel_index]
    src = src - src.mean(axis=1, keepdims=True)
    eog = eog - eog.mean()
    denom = np.linalg.norm(src, axis=1) * np.linalg.norm(eog)
    corr = np.divide(src @ eog, denom, out=np.zeros(len(src)), where=denom > 0)
    flagged = {int(k) for k in np.flatnonzero(np.abs(corr) > threshold)}
    model.flagged_eog = flagged
    return flagged


def correction_matrix(model: UnmixingModel) -> np.ndarray:
    """C = A_zeroed @ W, with mixing columns of flagged components zeroed."""
    mixing = model.mixing.copy()
    if model.flagged_eog:
        mixing[:, sorted(model.flagged_eog)] = 0.0
    return mixing @ model.unmixing


def apply_correction(chunk: np.ndarray, correction: np.ndarray) -> np.ndarray:
    chunk = np.asarray(chunk)
    if chunk.ndim != 2 or chunk.shape[0] != correction.shape[1]:
        raise ValueError(f"chunk with {chunk.shape[0] if chunk.ndim else 0} rows cannot be "
                         f"corrected by a {correction.shape} matrix")
    return correction @ chunk
