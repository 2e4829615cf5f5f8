"""Dual-domain text-conditioned extraction network.

A waveform branch and a spectrogram branch each encode the mixture with four
strided convolutions, exchange information through an interleaved stack of
self-attention (S) and cross-attention (C) layers ``S C S C S`` with FiLM text
conditioning in front of every self-attention layer, and are decoded back to
waveforms by four transposed convolutions with encoder skips. The two decoded
waveforms are added.

Shapes: waveforms are ``[B, C, N]``; stream features ``[B, d_model, T]``.
The time branch zero-pads ``N`` up to a multiple of ``stride**depth`` and crops
on decode. The spectral branch runs on the unpadded input, so its frame count
is exactly ``1 + N // hop_size``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .conditioning import sinusoidal_positions
from .errors import ConfigurationError, InputError, NumericError


@dataclass
class ExtractorConfig:
    channels_in: int = 2
    base_width: int = 16
    depth: int = 4
    n_self: int = 3
    n_cross: int = 2
    d_model: int = 64
    n_heads: int = 1
    ff_mult: int = 2
    cond_dim: int = 64
    fft_size: int = 1024
    hop_size: int = 256
    kernel_size: int = 8
    stride: int = 4
    dropout: float = 0.0

    def __post_init__(self):
        if self.channels_in not in (1, 2):
            raise ConfigurationError(f"channels_in must be 1 or 2, got {self.channels_in}")
        if self.n_self != self.n_cross + 1:
            raise ConfigurationError("attention stack alternates S C ... S: n_self must be n_cross + 1")
        if self.fft_size & (self.fft_size - 1) or self.hop_size > self.fft_size:
            raise ConfigurationError("fft_size must be a power of two and hop_size <= fft_size")
        if self.freq_fold < 1 or (self.fft_size // 2) % self.stride ** (self.depth - 1):
            raise ConfigurationError(
                f"fft_size/2 = {self.fft_size // 2} must be divisible by stride**(depth-1) = "
                f"{self.stride ** (self.depth - 1)}"
            )

    @property
    def widths(self) -> list[int]:
        return [self.base_width * 2**i for i in range(self.depth - 1)] + [self.d_model]

    @property
    def freq_fold(self) -> int:
        """Frequency extent left for the final encoder layer to fold into channels."""
        return (self.fft_size // 2) // self.stride ** (self.depth - 1)

    @property
    def layer_kinds(self) -> list[str]:
        return ["self", "cross"] * self.n_cross + ["self"]

    @property
    def n_taps(self) -> int:
        return self.n_self + self.n_cross

    @property
    def time_downsampling(self) -> int:
        return self.stride**self.depth

    def to_dict(self) -> dict:
        return asdict(self)


def spectro(x: torch.Tensor, fft_size: int, hop_size: int) -> torch.Tensor:
    """Complex STFT ``[B, C, fft/2+1, 1 + N//hop]``, same framing as :func:`luseel.audio_core.stft`."""
    b, c, n = x.shape
    window = torch.hann_window(fft_size, dtype=x.dtype, device=x.device)
    z = torch.stft(x.reshape(b * c, n), fft_size, hop_size, window=window, center=True,
                   pad_mode="constant", return_complex=True)
    return z.view(b, c, z.shape[-2], z.shape[-1])


def ispectro(z: torch.Tensor, fft_size: int, hop_size: int, length: int) -> torch.Tensor:
    b, c, f, t = z.shape
    window = torch.hann_window(fft_size, dtype=z.real.dtype, device=z.device)
    x = torch.istft(z.reshape(b * c, f, t), fft_size, hop_size, window=window, center=True, length=length)
    return x.view(b, c, length)


def _check_finite(t: torch.Tensor, where: str) -> torch.Tensor:
    if not torch.isfinite(t).all():
        raise NumericError(f"non-finite activations after {where}")
    return t


class FiLM(nn.Module):
    """``gamma(cond) * h + beta(cond)`` over the last (channel) axis of ``h``.

    Both affine maps start at zero weight, with the scale bias at one, so a fresh
    layer is the identity for every conditioning vector.
    """

    def __init__(self, cond_dim: int, channels: int):
        super().__init__()
        self.scale = nn.Linear(cond_dim, channels)
        self.shift = nn.Linear(cond_dim, channels)
        nn.init.zeros_(self.scale.weight)
        nn.init.ones_(self.scale.bias)
        nn.init.zeros_(self.shift.weight)
        nn.init.zeros_(self.shift.bias)

    def forward(self, h: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        gamma = self.scale(cond)
        beta = self.shift(cond)
        # broadcast over every axis between batch and channels
        for _ in range(h.dim() - 2):
            gamma = gamma.unsqueeze(1)
            beta = beta.unsqueeze(1)
        return gamma * h + beta


def film(h: torch.Tensor, cond: torch.Tensor, layer: FiLM) -> torch.Tensor:
    return layer(h, cond)


class CrossAttentionLayer(nn.Module):
    """Pre-norm cross-attention block: queries from one stream, keys/values from the other."""

    def __init__(self, d_model: int, n_heads: int, d_ff: int, dropout: float = 0.0):
        super().__init__()
        self.norm_q = nn.LayerNorm(d_model)
        self.norm_kv = nn.LayerNorm(d_model)
        self.attn = nn.MultiheadAttention(d_model, n_heads, dropout=dropout, batch_first=True)
        self.norm_ff = nn.LayerNorm(d_model)
        self.ff = nn.Sequential(nn.Linear(d_model, d_ff), nn.GELU(), nn.Dropout(dropout), nn.Linear(d_ff, d_model))
        self.drop = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, other: torch.Tensor) -> torch.Tensor:
        kv = self.norm_kv(other)
        x = x + self.drop(self.attn(self.norm_q(x), kv, kv, need_weights=False)[0])
        return x + self.drop(self.ff(self.norm_ff(x)))


def _self_layer(cfg: ExtractorConfig) -> nn.Module:
    return nn.TransformerEncoderLayer(cfg.d_model, cfg.n_heads, cfg.ff_mult * cfg.d_model, cfg.dropout,
                                      activation="gelu", batch_first=True, norm_first=True)


class Extractor(nn.Module):
    def __init__(self, cfg: ExtractorConfig):
        super().__init__()
        self.cfg = cfg
        k, s = cfg.kernel_size, cfg.stride
        pad = (k - s) // 2
        w = cfg.widths
        chans = [cfg.channels_in] + w
        spec_in = 2 * cfg.channels_in

        self.time_enc = nn.ModuleList(nn.Conv1d(chans[i], chans[i + 1], k, s, pad) for i in range(cfg.depth))
        self.time_dec = nn.ModuleList(
            nn.ConvTranspose1d(chans[i + 1], chans[i], k, s, pad) for i in reversed(range(cfg.depth))
        )

        fchans = [spec_in] + w
        self.freq_enc = nn.ModuleList()
        self.freq_dec = nn.ModuleList()
        for i in range(cfg.depth):
            if i < cfg.depth - 1:
                self.freq_enc.append(nn.Conv2d(fchans[i], fchans[i + 1], (k, 1), (s, 1), (pad, 0)))
            else:
                self.freq_enc.append(nn.Conv2d(fchans[i], fchans[i + 1], (cfg.freq_fold, 1), (cfg.freq_fold, 1)))
        for i in reversed(range(cfg.depth)):
            if i < cfg.depth - 1:
                self.freq_dec.append(nn.ConvTranspose2d(fchans[i + 1], fchans[i], (k, 1), (s, 1), (pad, 0)))
            else:
                self.freq_dec.append(
                    nn.ConvTranspose2d(fchans[i + 1], fchans[i], (cfg.freq_fold, 1), (cfg.freq_fold, 1))
                )

        d_ff = cfg.ff_mult * cfg.d_model
        self.time_layers = nn.ModuleList()
        self.freq_layers = nn.ModuleList()
        self.time_film = nn.ModuleList()
        self.freq_film = nn.ModuleList()
        for kind in cfg.layer_kinds:
            if kind == "self":
                self.time_layers.append(_self_layer(cfg))
                self.freq_layers.append(_self_layer(cfg))
                self.time_film.append(FiLM(cfg.cond_dim, cfg.d_model))
                self.freq_film.append(FiLM(cfg.cond_dim, cfg.d_model))
            else:
                self.time_layers.append(CrossAttentionLayer(cfg.d_model, cfg.n_heads, d_ff, cfg.dropout))
                self.freq_layers.append(CrossAttentionLayer(cfg.d_model, cfg.n_heads, d_ff, cfg.dropout))

    def _check_input(self, x: torch.Tensor) -> None:
        if x.dim() != 3 or x.shape[1] != self.cfg.channels_in:
            raise InputError(f"expected [B, {self.cfg.channels_in}, N] input, got {tuple(x.shape)}")
        if x.shape[-1] < max(self.cfg.fft_size, self.cfg.time_downsampling):
            raise InputError(
                f"input of {x.shape[-1]} frames is shorter than the receptive field "
                f"({max(self.cfg.fft_size, self.cfg.time_downsampling)} frames)"
            )

    def _pad_time(self, x: torch.Tensor) -> torch.Tensor:
        m = self.cfg.time_downsampling
        extra = (-x.shape[-1]) % m
        return F.pad(x, (0, extra)) if extra else x

    def _time_encode(self, x: torch.Tensor) -> list[torch.Tensor]:
        skips = []
        h = self._pad_time(x)
        for conv in self.time_enc:
            h = F.gelu(conv(h))
            skips.append(h)
        return skips

    def _freq_encode(self, x: torch.Tensor) -> list[torch.Tensor]:
        z = spectro(x, self.cfg.fft_size, self.cfg.hop_size)[:, :, :-1]  # drop Nyquist bin
        z = z / self.cfg.fft_size**0.5
        b, c, f, t = z.shape
        h = torch.view_as_real(z).permute(0, 1, 4, 2, 3).reshape(b, 2 * c, f, t)
        skips = []
        for conv in self.freq_enc:
            h = F.gelu(conv(h))
            skips.append(h)
        return skips

    def encode_time(self, x: torch.Tensor) -> torch.Tensor:
        """Frame-level waveform features ``[B, d_model, ceil(N / stride**depth)]``."""
        self._check_input(x)
        return self._time_encode(x)[-1]

    def encode_freq(self, x: torch.Tensor) -> torch.Tensor:
        """Frame-level spectral features ``[B, d_model, 1 + N // hop]``."""
        self._check_input(x)
        return self._freq_encode(x)[-1].squeeze(2)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        """Extract the conditioned target.

        Args:
            x: mixture ``[B, channels_in, N]``.
            cond: pooled text conditioning ``[B, cond_dim]``.

        Returns:
            ``(estimate [B, channels_in, N], taps)`` where ``taps`` holds one
            ``[B, d_model, T_f]`` map per attention layer of the spectral stream.
        """
        self._check_input(x)
        if cond.dim() != 2 or cond.shape[-1] != self.cfg.cond_dim:
            raise InputError(f"expected cond [B, {self.cfg.cond_dim}], got {tuple(cond.shape)}")
        n = x.shape[-1]
        mean = x.mean(dim=(1, 2), keepdim=True)
        std = x.std(dim=(1, 2), keepdim=True)
        x = (x - mean) / (std + 1e-5)

        t_skips = self._time_encode(x)
        f_skips = self._freq_encode(x)
        ht = _check_finite(t_skips[-1], "time encoder").transpose(1, 2)
        hf = _check_finite(f_skips[-1], "spectral encoder").squeeze(2).transpose(1, 2)
        ht = ht + sinusoidal_positions(ht.shape[1], ht.shape[2], ht.dtype, ht.device)
        hf = hf + sinusoidal_positions(hf.shape[1], hf.shape[2], hf.dtype, hf.device)

        taps = []
        film_idx = 0
        for i, kind in enumerate(self.cfg.layer_kinds):
            if kind == "self":
                ht = self.time_layers[i](self.time_film[film_idx](ht, cond))
                hf = self.freq_layers[i](self.freq_film[film_idx](hf, cond))
                film_idx += 1
            else:
                ht, hf = self.time_layers[i](ht, hf), self.freq_layers[i](hf, ht)
            _check_finite(hf, f"spectral attention layer {i} ({kind})")
            _check_finite(ht, f"time attention layer {i} ({kind})")
            taps.append(hf.transpose(1, 2))

        h = ht.transpose(1, 2)
        for i, deconv in enumerate(self.time_dec):
            h = deconv(h + t_skips[-1 - i])
            if i < len(self.time_dec) - 1:
                h = F.gelu(h)
        time_out = h[..., :n]

        h = hf.transpose(1, 2).unsqueeze(2)
        for i, deconv in enumerate(self.freq_dec):
            h = deconv(h + f_skips[-1 - i])
            if i < len(self.freq_dec) - 1:
                h = F.gelu(h)
        b, c2, f, t = h.shape
        z = torch.view_as_complex(h.view(b, c2 // 2, 2, f, t).permute(0, 1, 3, 4, 2).contiguous())
        z = F.pad(z, (0, 0, 0, 1)) * self.cfg.fft_size**0.5
        freq_out = ispectro(z, self.cfg.fft_size, self.cfg.hop_size, n)

        est = (time_out + freq_out) * (std + 1e-5) + mean
        return _check_finite(est, "decoders"), taps


def extract(model: Extractor, x: torch.Tensor, cond: torch.Tensor):
    return model(x, cond)
