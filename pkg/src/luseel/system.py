"""Full model assembly and the baseline/ablation variant matrix."""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch
from torch import nn

from .conditioning import TextProjection
from .extractor import Extractor, ExtractorConfig
from .localization import DoADecoder, LocalizationConfig, LocalizationHead, pooled_gcc
from .errors import ConfigurationError


@dataclass(frozen=True)
class Variant:
    name: str
    channels: int
    extraction: bool
    localization: bool
    use_gcc: bool

    @property
    def tasks(self) -> str:
        if self.extraction and self.localization:
            return "both"
        return "extraction" if self.extraction else "localization"


VARIANTS = {
    "t_htdemucs": Variant("t_htdemucs", 1, True, False, False),
    "mlp_gcc": Variant("mlp_gcc", 2, False, True, True),
    "luseel_dagger": Variant("luseel_dagger", 2, True, False, False),
    "luseel_circle": Variant("luseel_circle", 2, True, True, False),
    "luseel": Variant("luseel", 2, True, True, True),
}


def get_variant(name: str) -> Variant:
    try:
        return VARIANTS[name]
    except KeyError:
        raise ConfigurationError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}") from None


@dataclass
class TextConfig:
    provider: str = "toy_hash"
    sidecar: str | None = None
    d_text: int = 64
    n_layers: int = 2
    n_heads: int = 2
    d_ff: int = 128
    dropout: float = 0.0
    positional: bool = True


class GccTextHead(nn.Module):
    """Localization-only baseline: pooled text and pooled GCC-PHAT straight into the DoA decoder."""

    def __init__(self, d_text: int, cfg: LocalizationConfig):
        super().__init__()
        self.cfg = cfg
        self.decoder = DoADecoder(d_text + cfg.gcc_dim, cfg.decoder_hidden, cfg.decoder_layers, cfg.n_bins,
                                  cfg.dropout)

    def forward(self, pooled_text: torch.Tensor, mixture: torch.Tensor) -> torch.Tensor:
        return self.decoder(torch.cat([pooled_text, pooled_gcc(mixture, self.cfg).to(pooled_text.dtype)], dim=-1))


class JointModel(nn.Module):
    """Text projection plus whichever extraction/localization parts the variant enables.

    Parameter names are stable across variants (``text.*``, ``extractor.*``,
    ``localization.*``) so checkpoints can share weights where shapes agree.
    """

    def __init__(self, variant: Variant | str, text_cfg: TextConfig, extractor_cfg: ExtractorConfig,
                 loc_cfg: LocalizationConfig):
        super().__init__()
        self.variant = get_variant(variant) if isinstance(variant, str) else variant
        v = self.variant
        self.text = TextProjection(text_cfg.d_text, text_cfg.n_layers, text_cfg.n_heads, text_cfg.d_ff,
                                   text_cfg.dropout, text_cfg.positional)
        self.extractor_cfg = replace(extractor_cfg, channels_in=v.channels, cond_dim=text_cfg.d_text)
        self.loc_cfg = replace(loc_cfg, use_gcc=v.use_gcc, d_model=self.extractor_cfg.d_model,
                               n_taps=self.extractor_cfg.n_taps)
        self.extractor = Extractor(self.extractor_cfg) if v.extraction else None
        if v.localization and v.extraction:
            self.localization = LocalizationHead(self.loc_cfg)
        elif v.localization:
            self.localization = GccTextHead(text_cfg.d_text, self.loc_cfg)
        else:
            self.localization = None

    def model_input(self, mixture: torch.Tensor) -> torch.Tensor:
        return mixture.mean(dim=1, keepdim=True) if self.variant.channels == 1 else mixture

    def model_target(self, target: torch.Tensor) -> torch.Tensor:
        return target.mean(dim=1, keepdim=True) if self.variant.channels == 1 else target

    def forward(self, mixture: torch.Tensor, tokens: torch.Tensor, padding_mask: torch.Tensor | None = None):
        """Run the variant.

        Args:
            mixture: binaural mixture ``[B, 2, N]``.
            tokens: frozen provider embeddings ``[B, S, d_text]``.
            padding_mask: ``True`` at padded token positions.

        Returns:
            dict with ``est`` (``[B, channels, N]`` or None), ``doa`` (``[B, 360]``
            or None) and ``taps``.
        """
        cond = self.text(tokens, padding_mask).pooled
        est, taps, doa = None, [], None
        if self.extractor is not None:
            est, taps = self.extractor(self.model_input(mixture), cond)
        if isinstance(self.localization, LocalizationHead):
            doa = self.localization(taps, mixture)
        elif isinstance(self.localization, GccTextHead):
            doa = self.localization(cond, mixture)
        return {"est": est, "doa": doa, "taps": taps}
