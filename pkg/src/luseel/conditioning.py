"""Text conditioning: a frozen embedding provider followed by a trainable projection.

Two providers exist. ``toy_hash`` maps every whitespace token to a fixed
pseudo-random vector seeded by a stable hash of the token, which keeps tests
deterministic without any pretrained weights. ``pretrained_adapter`` serves
embeddings precomputed offline by an external encoder and stored in a JSON-lines
sidecar file of ``{"text": ..., "embedding": [[...], ...]}`` records.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .errors import ConfigurationError, DataError, InputError, ProviderError


@dataclass(frozen=True)
class TextPrompt:
    text: str

    def __post_init__(self):
        if not isinstance(self.text, str) or not self.text.strip():
            raise InputError("text prompt must be non-empty")

    def tokens(self) -> list[str]:
        return self.text.lower().split()


@dataclass
class ConditioningEmbedding:
    tokens: torch.Tensor  # [seq_len, d_text] or [batch, seq_len, d_text]
    pooled: torch.Tensor  # [d_text] or [batch, d_text]


class ToyHashProvider:
    """Deterministic token embedder without trainable state."""

    name = "toy_hash"

    def __init__(self, dim: int = 64):
        self.dim = dim
        self._cache: dict[str, np.ndarray] = {}

    def token_vector(self, token: str) -> np.ndarray:
        if token not in self._cache:
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            self._cache[token] = rng.standard_normal(self.dim)
        return self._cache[token]

    def embed(self, prompt: TextPrompt | str) -> torch.Tensor:
        prompt = prompt if isinstance(prompt, TextPrompt) else TextPrompt(prompt)
        vecs = np.stack([self.token_vector(t) for t in prompt.tokens()])
        return torch.from_numpy(vecs).float()

    def checksum(self) -> str:
        # no parameters; hash a fixed probe so callers can still assert immutability
        probe = np.concatenate([self.token_vector(t) for t in ("car", "horn", "dog", "bark")])
        return hashlib.sha256(probe.tobytes()).hexdigest()


class PretrainedAdapter:
    """Looks up precomputed token embeddings by exact (whitespace-trimmed) prompt text."""

    name = "pretrained_adapter"

    def __init__(self, table: dict[str, np.ndarray]):
        if not table:
            raise ProviderError("pretrained adapter sidecar is empty")
        dims = {v.shape[1] for v in table.values()}
        if len(dims) != 1:
            raise DataError(f"inconsistent embedding widths in sidecar: {sorted(dims)}")
        self.table = table
        self.dim = dims.pop()

    @classmethod
    def from_sidecar(cls, path: str | Path) -> "PretrainedAdapter":
        path = Path(path)
        if not path.exists():
            raise ProviderError(f"sidecar file not found: {path}")
        table = {}
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                emb = np.asarray(rec["embedding"], dtype=np.float64)
                if emb.ndim != 2 or emb.shape[0] < 1:
                    raise DataError(f"embedding for {rec['text']!r} must be [seq_len, dim]")
                table[rec["text"].strip()] = emb
        return cls(table)

    def embed(self, prompt: TextPrompt | str) -> torch.Tensor:
        prompt = prompt if isinstance(prompt, TextPrompt) else TextPrompt(prompt)
        key = prompt.text.strip()
        if key not in self.table:
            raise ProviderError(f"no precomputed embedding for prompt {key!r}")
        return torch.from_numpy(self.table[key]).float()

    def checksum(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.table):
            h.update(k.encode())
            h.update(self.table[k].tobytes())
        return h.hexdigest()


def make_provider(name: str, dim: int = 64, sidecar: str | None = None):
    if name == "toy_hash":
        return ToyHashProvider(dim)
    if name == "pretrained_adapter":
        if sidecar is None:
            raise ProviderError("pretrained_adapter requires a sidecar path")
        return PretrainedAdapter.from_sidecar(sidecar)
    raise ProviderError(f"unknown text provider {name!r}")


def embed_text(prompt: TextPrompt | str, provider) -> torch.Tensor:
    """Frozen token embeddings ``[seq_len, d]``; never carries gradient."""
    with torch.no_grad():
        return provider.embed(prompt).detach()


def embed_batch(prompts: Sequence[TextPrompt | str], provider) -> tuple[torch.Tensor, torch.Tensor]:
    """Pad a batch of prompts to ``[B, S, d]`` plus a boolean padding mask ``[B, S]``."""
    seqs = [embed_text(p, provider) for p in prompts]
    s_max = max(s.shape[0] for s in seqs)
    tokens = torch.zeros(len(seqs), s_max, seqs[0].shape[1])
    pad = torch.ones(len(seqs), s_max, dtype=torch.bool)
    for i, s in enumerate(seqs):
        tokens[i, : s.shape[0]] = s
        pad[i, : s.shape[0]] = False
    return tokens, pad


def sinusoidal_positions(length: int, dim: int, dtype=torch.float32, device=None) -> torch.Tensor:
    pos = torch.arange(length, dtype=dtype, device=device)[:, None]
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=dtype, device=device) / max(half, 1))
    pe = torch.zeros(length, dim, dtype=dtype, device=device)
    pe[:, 0 : 2 * half : 2] = torch.sin(pos * freqs)
    pe[:, 1 : 2 * half : 2] = torch.cos(pos * freqs)
    return pe


class TextProjection(nn.Module):
    """Trainable self-attention stack mapping provider tokens into the shared space.

    Args:
        d_text: embedding width; provider output must already have this width.
        n_layers: transformer encoder layers.
        n_heads: attention heads.
        d_ff: feed-forward hidden size.
        dropout: dropout inside the encoder layers.
        positional: add sinusoidal positions before the stack.
    """

    def __init__(self, d_text: int = 512, n_layers: int = 5, n_heads: int = 2, d_ff: int = 1024,
                 dropout: float = 0.0, positional: bool = True):
        super().__init__()
        self.d_text = d_text
        self.positional = positional
        layer = nn.TransformerEncoderLayer(d_text, n_heads, d_ff, dropout, activation="gelu",
                                           batch_first=True, norm_first=True)
        self.layers = nn.TransformerEncoder(layer, n_layers, enable_nested_tensor=False)

    def forward(self, tokens: torch.Tensor, padding_mask: torch.Tensor | None = None) -> ConditioningEmbedding:
        squeeze = tokens.dim() == 2
        if squeeze:
            tokens = tokens[None]
        if tokens.shape[-1] != self.d_text:
            raise ConfigurationError(f"token width {tokens.shape[-1]} != configured d_text {self.d_text}")
        h = tokens
        if self.positional:
            h = h + sinusoidal_positions(h.shape[1], self.d_text, h.dtype, h.device)
        h = self.layers(h, src_key_padding_mask=padding_mask)
        if padding_mask is None:
            pooled = h.mean(dim=1)
        else:
            keep = (~padding_mask).to(h.dtype)[..., None]
            h = h * keep
            pooled = h.sum(dim=1) / keep.sum(dim=1).clamp_min(1.0)
        if squeeze:
            return ConditioningEmbedding(h[0], pooled[0])
        return ConditioningEmbedding(h, pooled)


def project_text(tokens: torch.Tensor, projection: TextProjection) -> ConditioningEmbedding:
    return projection(tokens)
