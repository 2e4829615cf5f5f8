"""Direction-of-arrival head and its signal-processing front end.

Lag convention for GCC-PHAT: a positive lag means the left channel leads,
i.e. the right channel is a delayed copy of the left. A source on the right
(azimuth in (0, 180)) therefore peaks at a negative lag.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .audio_core import Waveform
from .errors import ConfigurationError, InputError

N_BINS = 360
GCC_EPS = 1e-8


@dataclass
class GccFeatures:
    values: np.ndarray  # [time_frames, 2 * max_lag + 1]
    max_lag: int

    @property
    def lags(self) -> np.ndarray:
        return np.arange(-self.max_lag, self.max_lag + 1)

    def frame_delays(self) -> np.ndarray:
        """Argmax lag per frame."""
        return self.lags[np.argmax(self.values, axis=1)]


def gcc_phat_torch(x: torch.Tensor, frame_size: int = 1024, hop: int = 512, max_lag: int = 16,
                   energy_floor: float = 1e-10) -> torch.Tensor:
    """Batched framewise GCC-PHAT ``[B, 2, N] -> [B, T, 2*max_lag+1]``.

    Frames are Hann-windowed and zero-padded to twice their length so the
    correlation is linear rather than circular within ``max_lag``.
    """
    if x.dim() != 3 or x.shape[1] != 2:
        raise InputError(f"GCC-PHAT needs binaural [B, 2, N] input, got {tuple(x.shape)}")
    if max_lag > frame_size // 2:
        raise ConfigurationError(f"max_lag {max_lag} exceeds frame_size/2 = {frame_size // 2}")
    n = x.shape[-1]
    if n < frame_size:
        x = F.pad(x, (0, frame_size - n))
        n = frame_size
    frames = x.unfold(-1, frame_size, hop)  # [B, 2, T, frame]
    frames = frames * torch.hann_window(frame_size, dtype=x.dtype, device=x.device)
    spec = torch.fft.rfft(frames, n=2 * frame_size, dim=-1)
    cross = spec[:, 1] * spec[:, 0].conj()
    cc = torch.fft.irfft(cross / (cross.abs() + GCC_EPS), n=2 * frame_size, dim=-1)
    cc = torch.cat([cc[..., -max_lag:], cc[..., : max_lag + 1]], dim=-1)
    energy = (frames**2).mean(dim=(1, 3))
    active = (energy > energy_floor).to(cc.dtype)
    return cc * active[..., None]


def gcc_phat(x: Waveform, frame_size: int = 1024, hop: int = 512, max_lag: int = 16) -> GccFeatures:
    """Framewise PHAT-weighted cross-correlation of a binaural waveform."""
    if x.channels != 2:
        raise InputError("gcc_phat requires a 2-channel waveform")
    values = gcc_phat_torch(torch.from_numpy(x.samples)[None], frame_size, hop, max_lag)[0]
    return GccFeatures(values.numpy(), max_lag)


def gaussian_label(d_deg: float, sigma_sq: float = 5.0, n_bins: int = N_BINS) -> np.ndarray:
    """Circular Gaussian soft label over one-degree bins centred at 0, 1, ..., n_bins - 1."""
    if not 0.0 <= d_deg < 360.0:
        raise InputError(f"azimuth {d_deg} outside [0, 360)")
    if sigma_sq <= 0:
        raise InputError("sigma_sq must be positive")
    theta = np.arange(n_bins) * (360.0 / n_bins)
    delta = np.abs(theta - d_deg)
    delta = np.minimum(delta, 360.0 - delta)
    return np.exp(-(delta**2) / (2.0 * sigma_sq)) / math.sqrt(2.0 * math.pi * sigma_sq)


def decode_azimuth(probs) -> float:
    """Centre of the most likely bin; ties go to the lowest index."""
    p = np.asarray(probs)
    return float(np.argmax(p) * (360.0 / p.shape[-1]))


@dataclass
class LocalizationConfig:
    d_model: int = 64  # width of each spectral tap
    n_taps: int = 5
    tap_out: int = 8
    fdoa_channels: tuple[int, ...] = (64, 32)
    pooled_len: int = 8
    decoder_hidden: int = 128
    decoder_layers: int = 6
    n_bins: int = N_BINS
    max_lag: int = 16
    gcc_frame: int = 1024
    gcc_hop: int = 512
    dropout: float = 0.1
    use_gcc: bool = True

    @property
    def gcc_dim(self) -> int:
        return 2 * self.max_lag + 1

    def decoder_in(self, spatial_dim: int | None = None) -> int:
        spatial = self.pooled_len if spatial_dim is None else spatial_dim
        return spatial + (self.gcc_dim if self.use_gcc else 0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fdoa_channels"] = list(self.fdoa_channels)
        return d


class TapProjection(nn.Module):
    """One kernel-size-1 convolution per spectral tap, concatenated on channels."""

    def __init__(self, d_model: int, out_channels: int, n_taps: int = 5):
        super().__init__()
        self.convs = nn.ModuleList(nn.Conv1d(d_model, out_channels, 1) for _ in range(n_taps))

    def forward(self, taps: list[torch.Tensor]) -> torch.Tensor:
        if len(taps) != len(self.convs):
            raise InputError(f"expected {len(self.convs)} taps, got {len(taps)}")
        if len({t.shape[-1] for t in taps}) != 1:
            raise RuntimeError("spectral taps do not share a time axis")
        return torch.cat([conv(t) for conv, t in zip(self.convs, taps)], dim=1)


class FDoAEncoder(nn.Module):
    """Channel-reducing 1x1 convolutions down to a single map, pooled to a fixed length."""

    def __init__(self, in_channels: int, hidden: tuple[int, ...] = (512, 256), pooled_len: int = 8,
                 dropout: float = 0.1):
        super().__init__()
        chans = [in_channels, *hidden, 1]
        layers: list[nn.Module] = []
        for i in range(len(chans) - 1):
            layers.append(nn.Conv1d(chans[i], chans[i + 1], 1))
            if i < len(chans) - 2:
                layers += [nn.ReLU(), nn.Dropout(dropout)]
        self.net = nn.Sequential(*layers)
        self.in_channels = in_channels
        self.pooled_len = pooled_len

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        if h.shape[1] != self.in_channels:
            raise ConfigurationError(f"F-DoA encoder expects {self.in_channels} channels, got {h.shape[1]}")
        h = self.net(h)  # [B, 1, T]
        return F.adaptive_avg_pool1d(h, self.pooled_len).flatten(1)


class DoADecoder(nn.Module):
    """Stack of linear layers with batch norm, ReLU and dropout between them; sigmoid output."""

    def __init__(self, in_features: int, hidden: int = 1024, n_layers: int = 6, n_bins: int = N_BINS,
                 dropout: float = 0.1):
        super().__init__()
        dims = [in_features] + [hidden] * (n_layers - 1) + [n_bins]
        layers: list[nn.Module] = []
        for i in range(n_layers):
            layers.append(nn.Linear(dims[i], dims[i + 1]))
            if i < n_layers - 1:
                layers += [nn.BatchNorm1d(dims[i + 1]), nn.ReLU(), nn.Dropout(dropout)]
        self.net = nn.Sequential(*layers)
        self.in_features = in_features

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        if z.shape[-1] != self.in_features:
            raise ConfigurationError(f"DoA decoder expects {self.in_features} inputs, got {z.shape[-1]}")
        return torch.sigmoid(self.net(z))


def pooled_gcc(x: torch.Tensor, cfg: LocalizationConfig) -> torch.Tensor:
    """Frame-averaged GCC-PHAT vector ``[B, 2*max_lag+1]`` (no gradient)."""
    with torch.no_grad():
        return gcc_phat_torch(x, cfg.gcc_frame, cfg.gcc_hop, cfg.max_lag).mean(dim=1)


class LocalizationHead(nn.Module):
    """Spectral taps (plus optional GCC-PHAT) to a 360-bin DoA likelihood."""

    def __init__(self, cfg: LocalizationConfig):
        super().__init__()
        self.cfg = cfg
        self.tap_projection = TapProjection(cfg.d_model, cfg.tap_out, cfg.n_taps)
        self.fdoa = FDoAEncoder(cfg.n_taps * cfg.tap_out, tuple(cfg.fdoa_channels), cfg.pooled_len, cfg.dropout)
        self.decoder = DoADecoder(cfg.decoder_in(), cfg.decoder_hidden, cfg.decoder_layers, cfg.n_bins, cfg.dropout)

    def forward(self, taps: list[torch.Tensor], mixture: torch.Tensor | None = None) -> torch.Tensor:
        z = self.fdoa(self.tap_projection(taps))
        if self.cfg.use_gcc:
            if mixture is None:
                raise InputError("GCC-PHAT features need the binaural mixture")
            z = torch.cat([z, pooled_gcc(mixture, self.cfg).to(z.dtype)], dim=-1)
        return self.decoder(z)


def doa_decode(spatial: torch.Tensor, gcc: torch.Tensor | None, decoder: DoADecoder) -> torch.Tensor:
    z = spatial if gcc is None else torch.cat([spatial, gcc], dim=-1)
    return decoder(z)
