"""Training losses and evaluation metrics.

Every waveform function takes tensors shaped ``[..., C, N]``; per-channel
values are averaged over channels. Losses are averaged over any leading batch
axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import MetricUndefinedError

SNR_CLAMP_DB = 60.0
DEFAULT_RESOLUTIONS = ((512, 128), (1024, 256), (2048, 512))


@dataclass
class LossConfig:
    gamma: float = 10.0
    sigma_sq: float = 5.0
    freq_resolutions: list[tuple[int, int]] = field(default_factory=lambda: [tuple(r) for r in DEFAULT_RESOLUTIONS])

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if not self.freq_resolutions:
            raise ValueError("at least one STFT resolution is required")
        self.freq_resolutions = [tuple(r) for r in self.freq_resolutions]


def _as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x, dtype=np.float64))


def si_snr(est, ref, clamp: bool = True, check_ref: bool = True) -> torch.Tensor:
    """Scale-invariant SNR in dB, averaged over channels.

    With ``clamp`` each channel is limited to +/-60 dB; otherwise an exact
    reconstruction yields ``inf``.

    Raises:
        MetricUndefinedError: a reference channel is silent after mean removal.
    """
    est, ref = _as_tensor(est), _as_tensor(ref)
    est = est - est.mean(dim=-1, keepdim=True)
    ref = ref - ref.mean(dim=-1, keepdim=True)
    ref_energy = (ref**2).sum(dim=-1, keepdim=True)
    if check_ref and bool((ref_energy <= 0).any()):
        raise MetricUndefinedError("SI-SNR is undefined for a silent reference")
    target = (est * ref).sum(dim=-1, keepdim=True) / ref_energy * ref
    noise = est - target
    num = (target**2).sum(dim=-1)
    den = (noise**2).sum(dim=-1)
    if clamp:
        # floor at the clamp on both sides keeps log finite for exact or orthogonal estimates
        tiny = torch.finfo(est.dtype).tiny
        value = 10.0 * torch.log10(num.clamp_min(tiny)) - 10.0 * torch.log10(den.clamp_min(tiny))
        value = value.clamp(-SNR_CLAMP_DB, SNR_CLAMP_DB)
    else:
        value = 10.0 * torch.log10(num / den)
    return value.mean(dim=-1)


def sdr(est, ref, clamp: bool = True) -> torch.Tensor:
    """Plain (scale-variant) signal-to-distortion ratio in dB, averaged over channels."""
    est, ref = _as_tensor(est), _as_tensor(ref)
    num = (ref**2).sum(dim=-1)
    if bool((num <= 0).any()):
        raise MetricUndefinedError("SDR is undefined for a silent reference")
    den = ((est - ref) ** 2).sum(dim=-1)
    if clamp:
        tiny = torch.finfo(est.dtype).tiny
        value = (10.0 * torch.log10(num) - 10.0 * torch.log10(den.clamp_min(tiny))).clamp(-SNR_CLAMP_DB, SNR_CLAMP_DB)
    else:
        value = 10.0 * torch.log10(num / den)
    return value.mean(dim=-1)


def _magnitudes(x: torch.Tensor, fft_size: int, hop_size: int) -> torch.Tensor:
    flat = x.reshape(-1, x.shape[-1])
    window = torch.hann_window(fft_size, dtype=flat.dtype, device=flat.device)
    z = torch.stft(flat, fft_size, hop_size, window=window, center=True, pad_mode="constant", return_complex=True)
    return z.abs()


def spectral_terms(mag_est: torch.Tensor, mag_ref: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean L1 distance of magnitudes and of their first differences along time (last axis)."""
    mag_term = (mag_est - mag_ref).abs().mean()
    d_est = mag_est[..., 1:] - mag_est[..., :-1]
    d_ref = mag_ref[..., 1:] - mag_ref[..., :-1]
    delta_term = (d_est - d_ref).abs().mean() if d_est.shape[-1] else mag_term.new_zeros(())
    return mag_term, delta_term


def freq_loss(est, ref, resolutions=DEFAULT_RESOLUTIONS) -> torch.Tensor:
    """Multi-resolution magnitude plus delta-spectrum L1 loss (scale-variant)."""
    est, ref = _as_tensor(est), _as_tensor(ref)
    total = est.new_zeros(())
    for fft_size, hop_size in resolutions:
        m, d = spectral_terms(_magnitudes(est, fft_size, hop_size), _magnitudes(ref, fft_size, hop_size))
        total = total + m + d
    return total


def signal_loss(est, ref, resolutions=DEFAULT_RESOLUTIONS) -> torch.Tensor:
    return -si_snr(est, ref, clamp=True, check_ref=False).mean() + freq_loss(est, ref, resolutions)


def doa_loss(pred, label) -> torch.Tensor:
    """Sum of squared bin errors, averaged over any batch axes."""
    pred, label = _as_tensor(pred), _as_tensor(label)
    return ((pred - label) ** 2).sum(dim=-1).mean()


def total_loss(l_signal, l_mse, gamma: float = 10.0):
    return l_signal + gamma * l_mse


def si_snri(est, mix, ref, clamp: bool = True) -> torch.Tensor:
    return si_snr(est, ref, clamp) - si_snr(mix, ref, clamp)


def sdri(est, mix, ref, clamp: bool = True) -> torch.Tensor:
    return sdr(est, ref, clamp) - sdr(mix, ref, clamp)


def circular_error(pred_deg: float, true_deg: float) -> float:
    d = abs(pred_deg - true_deg) % 360.0
    return min(d, 360.0 - d)


def doa_metrics(pred_deg: float, true_deg: float, collar: float = 5.0) -> tuple[bool, float]:
    """``(hit, absolute circular error)``; a hit is an error of at most ``collar`` degrees."""
    e = circular_error(pred_deg, true_deg)
    return e <= collar, e


def format_db(value: float) -> str:
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(float(value))
