"""Rate conversion, minute windowing, and z-score normalization."""

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ContractError, DataError
from .montage import Recording

FIR_TAPS = 63


def _lowpass_taps(cutoff_hz: float, rate_hz: float) -> np.ndarray:
    """Hamming-windowed sinc, normalized to unit gain at DC."""
    m = np.arange(FIR_TAPS) - (FIR_TAPS - 1) / 2
    fc = cutoff_hz / rate_hz  # cycles per input sample
    h = 2 * fc * np.sinc(2 * fc * m)
    h *= np.hamming(FIR_TAPS)
    return h / h.sum()


def resample(signal: np.ndarray, from_hz: float, to_hz: float = 250.0) -> np.ndarray:
    """Convert the last axis of `signal` onto a uniform to_hz grid.

    Downsampling low-passes at 0.45*to_hz first (group delay compensated by
    trimming half the filter), then linearly interpolates; upsampling
    interpolates directly. Output length is floor(n*to_hz/from_hz).
    """
    if from_hz <= 0 or to_hz <= 0:
        raise ContractError(f"rates must be positive, got {from_hz} -> {to_hz}")
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim == 1:
        return _resample_1d(signal, from_hz, to_hz)
    return np.stack([_resample_1d(row, from_hz, to_hz)
                     for row in signal.reshape(-1, signal.shape[-1])]
                    ).reshape(signal.shape[:-1] + (-1,))


def _resample_1d(x: np.ndarray, from_hz: float, to_hz: float) -> np.ndarray:
    if from_hz == to_hz:
        return x.copy()
    n = x.shape[0]
    out_n = math.floor(n * to_hz / from_hz + 1e-9)
    if to_hz < from_hz:
        taps = _lowpass_taps(0.45 * to_hz, from_hz)
        half = (FIR_TAPS - 1) // 2
        x = np.convolve(x, taps, mode="full")[half:half + n]
    positions = np.arange(out_n) * (from_hz / to_hz)
    return np.interp(positions, np.arange(n), x)


def resample_recording(rec: Recording, to_hz: float = 250.0) -> Recording:
    if rec.rate == to_hz:
        return rec
    return Recording(data=resample(rec.data, rec.rate, to_hz), rate=to_hz,
                     patient_id=rec.patient_id, session_id=rec.session_id)


@dataclass
class WindowSpec:
    window_seconds: int = 60
    max_train_windows: int = 11
    test_windows: int = 1
    target_hz: float = 250.0

    @property
    def window_samples(self) -> int:
        return int(self.window_seconds * self.target_hz)


def extract_windows(rec: Recording, spec: WindowSpec, split: str) -> list[np.ndarray]:
    """Cut consecutive non-overlapping windows starting at t=0.

    Train sessions contribute up to max_train_windows; test sessions exactly
    one (the first minute) and must therefore be at least one window long.
    """
    if split not in ("train", "test"):
        raise ConfigError(f"split must be 'train' or 'test', got {split!r}")
    if abs(rec.rate - spec.target_hz) > 1e-6:
        raise DataError(f"session {rec.session_id!r}: sampled at {rec.rate} Hz, "
                        f"windowing requires {spec.target_hz} Hz")
    w = spec.window_samples
    full = rec.samples // w
    if split == "test":
        if full < 1:
            raise DataError(f"session {rec.session_id!r}: {rec.duration:.1f} s is shorter "
                            f"than one {spec.window_seconds} s test window")
        count = spec.test_windows
    else:
        count = min(spec.max_train_windows, full)
    return [rec.data[:, i * w:(i + 1) * w].astype(np.float32) for i in range(count)]


def compute_stats(samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and population standard deviation over (N, C, T)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] == 0:
        raise ContractError(f"stats need a non-empty (samples, channels, time) array, "
                            f"got shape {x.shape}")
    return x.mean(axis=(0, 2)), x.std(axis=(0, 2))


def normalize(samples: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    """Z-score per channel; zero-variance channels are centered only."""
    safe = np.where(std > 0, std, 1.0)
    shaped = lambda v: np.asarray(v, dtype=np.float64)[:, None]
    out = (np.asarray(samples, dtype=np.float64) - shaped(mean)) / shaped(safe)
    return out.astype(np.float32)
