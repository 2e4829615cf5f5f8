"""Audio primitives: waveform container, STFT/ISTFT, energy and SNR gains, wav I/O.

All routines here work in float64 numpy. The network has its own torch STFT
(see :mod:`luseel.extractor`) that follows the same framing convention:
periodic Hann window, zero ("constant") centre padding of ``fft_size // 2`` on
both sides, giving ``1 + frames // hop_size`` analysis frames.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window, resample_poly

from .errors import ConfigurationError, DegenerateInputError, InputError

DEFAULT_SAMPLE_RATE = 16000


@dataclass
class Waveform:
    """Sampled audio, ``samples`` shaped ``[channels, frames]``."""

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[None, :]
        if samples.ndim != 2:
            raise InputError(f"waveform must be [channels, frames], got shape {samples.shape}")
        if samples.shape[0] not in (1, 2):
            raise InputError(f"waveform must have 1 or 2 channels, got {samples.shape[0]}")
        if samples.shape[1] < 1:
            raise InputError("waveform must contain at least one frame")
        if self.sample_rate <= 0:
            raise InputError(f"sample_rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise InputError("waveform contains non-finite samples")
        self.samples = samples

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def frames(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.frames / self.sample_rate

    def downmix(self) -> "Waveform":
        return Waveform(self.samples.mean(axis=0, keepdims=True), self.sample_rate)


@dataclass
class Spectrogram:
    """One-sided complex STFT, ``bins`` shaped ``[channels, freq_bins, time_frames]``."""

    bins: np.ndarray
    fft_size: int
    hop_size: int
    window: str = "hann"
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        if self.bins.ndim != 3:
            raise ConfigurationError("spectrogram must be [channels, freq_bins, time_frames]")
        if self.bins.shape[1] != self.fft_size // 2 + 1:
            raise ConfigurationError(
                f"freq_bins {self.bins.shape[1]} != fft_size/2 + 1 = {self.fft_size // 2 + 1}"
            )
        if self.hop_size > self.fft_size:
            raise ConfigurationError("hop_size must not exceed fft_size")

    @property
    def time_frames(self) -> int:
        return self.bins.shape[2]


def _check_sizes(fft_size: int, hop_size: int) -> None:
    if fft_size <= 0 or hop_size <= 0:
        raise ConfigurationError(f"fft_size and hop_size must be positive, got {fft_size}, {hop_size}")
    if fft_size & (fft_size - 1):
        raise ConfigurationError(f"fft_size must be a power of two, got {fft_size}")
    if hop_size > fft_size:
        raise ConfigurationError(f"hop_size {hop_size} exceeds fft_size {fft_size}")


def analysis_window(name: str, fft_size: int) -> np.ndarray:
    # periodic (DFT-even) windows, matching torch.hann_window(periodic=True)
    return get_window(name, fft_size, fftbins=True).astype(np.float64)


def num_frames(frames: int, hop_size: int) -> int:
    """Number of STFT frames produced for ``frames`` samples under centre padding."""
    return 1 + frames // hop_size


def stft(w: Waveform, fft_size: int = 1024, hop_size: int | None = None, window: str = "hann") -> Spectrogram:
    """Centre-padded one-sided STFT of every channel."""
    hop_size = fft_size // 4 if hop_size is None else hop_size
    _check_sizes(fft_size, hop_size)
    win = analysis_window(window, fft_size)
    pad = fft_size // 2
    x = np.pad(w.samples, ((0, 0), (pad, pad)))
    n_frames = num_frames(w.frames, hop_size)
    idx = np.arange(fft_size)[None, :] + hop_size * np.arange(n_frames)[:, None]
    frames = x[:, idx] * win  # [C, T, fft]
    bins = np.fft.rfft(frames, axis=-1).transpose(0, 2, 1)
    return Spectrogram(bins, fft_size, hop_size, window, w.sample_rate)


def window_envelope(win: np.ndarray, hop_size: int, n_frames: int) -> np.ndarray:
    """Overlap-added squared window over the padded signal span."""
    fft_size = len(win)
    env = np.zeros(fft_size + hop_size * (n_frames - 1))
    sq = win**2
    for t in range(n_frames):
        env[t * hop_size : t * hop_size + fft_size] += sq
    return env


def istft(s: Spectrogram, out_frames: int) -> Waveform:
    """Weighted overlap-add inverse of :func:`stft`, returning exactly ``out_frames`` samples."""
    _check_sizes(s.fft_size, s.hop_size)
    if out_frames < 1:
        raise ConfigurationError("out_frames must be positive")
    win = analysis_window(s.window, s.fft_size)
    n_frames = s.time_frames
    pad = s.fft_size // 2
    env = window_envelope(win, s.hop_size, n_frames)
    span = env[pad : pad + out_frames]
    if len(span) < out_frames:
        raise ConfigurationError("spectrogram has too few frames for the requested length")
    if np.min(span) < 1e-10:
        raise ConfigurationError(
            f"window '{s.window}' with hop {s.hop_size} violates the overlap-add reconstruction condition"
        )
    frames = np.fft.irfft(s.bins.transpose(0, 2, 1), n=s.fft_size, axis=-1) * win
    out = np.zeros((s.bins.shape[0], len(env)))
    for t in range(n_frames):
        out[:, t * s.hop_size : t * s.hop_size + s.fft_size] += frames[:, t]
    out = out[:, pad : pad + out_frames] / span
    return Waveform(out, s.sample_rate)


def rms(w: Waveform) -> np.ndarray:
    """Per-channel root mean square."""
    return np.sqrt(np.mean(w.samples**2, axis=1))


def _energy_rms(w: Waveform) -> float:
    # mean of per-channel mean squares
    return float(np.sqrt(np.mean(w.samples**2)))


def gain_for_snr(anchor: Waveform, interferer: Waveform, snr_db: float) -> float:
    """Gain ``g`` placing ``g * interferer`` at ``snr_db`` below the anchor's level.

    Raises:
        DegenerateInputError: if either signal is silent.
    """
    a = _energy_rms(anchor)
    b = _energy_rms(interferer)
    if a <= 0.0 or b <= 0.0:
        raise DegenerateInputError("cannot scale against a silent clip")
    return a / (b * 10.0 ** (snr_db / 20.0))


def snr_db(signal: Waveform, noise: Waveform) -> float:
    return 20.0 * math.log10(_energy_rms(signal) / _energy_rms(noise))


def fit_length(x: np.ndarray, frames: int) -> np.ndarray:
    """Crop or zero-pad the last axis to ``frames``."""
    if x.shape[-1] >= frames:
        return x[..., :frames]
    pad = [(0, 0)] * (x.ndim - 1) + [(0, frames - x.shape[-1])]
    return np.pad(x, pad)


def load_wav(path: str | Path, sample_rate: int = DEFAULT_SAMPLE_RATE) -> Waveform:
    """Read a PCM wave file and resample (polyphase) to ``sample_rate``."""
    rate, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        x = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    else:
        x = data.astype(np.float64)
    x = x.T if x.ndim == 2 else x[None, :]
    if rate != sample_rate:
        ratio = Fraction(sample_rate, rate)
        x = resample_poly(x, ratio.numerator, ratio.denominator, axis=-1)
    return Waveform(x, sample_rate)


def save_wav(path: str | Path, w: Waveform) -> None:
    """Write 16-bit PCM; samples are clipped to [-1, 1)."""
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype(np.int16)
    wavfile.write(str(path), w.sample_rate, pcm.T if w.channels > 1 else pcm[0])
