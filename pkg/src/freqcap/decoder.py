"""Single-layer post-norm transformer decoder for caption generation."""
from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn


def sinusoidal_positions(t_max: int, d_h: int) -> torch.Tensor:
    pos = torch.arange(t_max, dtype=torch.float64)[:, None]
    inv = torch.exp(-math.log(10000.0) * torch.arange(0, d_h, 2, dtype=torch.float64) / d_h)
    table = torch.zeros(t_max, d_h, dtype=torch.float64)
    table[:, 0::2] = torch.sin(pos * inv)
    table[:, 1::2] = torch.cos(pos * inv)[:, : d_h // 2]
    return table.float()


class TokenEmbedding(nn.Module):
    def __init__(self, d_e: int, d_h: int, t_max: int):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(d_e, d_h))
        self.register_buffer("positions", sinusoidal_positions(t_max, d_h), persistent=False)

    def table(self, diffused: "DiffusedRows | None" = None) -> torch.Tensor:
        if diffused is None or len(diffused.ids) == 0:
            return self.weight
        return self.weight.index_copy(0, diffused.ids, diffused.rows.to(self.weight.dtype))

    def forward(self, ids: torch.Tensor, diffused: "DiffusedRows | None" = None) -> torch.Tensor:
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= self.weight.shape[0]):
            raise IndexError(f"token id out of range [0, {self.weight.shape[0]})")
        T = ids.shape[-1]
        if T > self.positions.shape[0]:
            raise IndexError(f"sequence length {T} exceeds positional table {self.positions.shape[0]}")
        return F.embedding(ids, self.table(diffused)) + self.positions[:T].to(self.weight.dtype)


class DiffusedRows:
    """Replacement embedding rows keyed by token id (built by :mod:`freqcap.fad`)."""

    def __init__(self, ids: torch.Tensor, rows: torch.Tensor):
        self.ids = ids
        self.rows = rows

    def __len__(self):
        return len(self.ids)


def embed_tokens(ids: torch.Tensor, table: TokenEmbedding, diffused: DiffusedRows | None = None) -> torch.Tensor:
    return table(ids, diffused)


class MultiHeadAttention(nn.Module):
    def __init__(self, d_h: int, n_heads: int, dropout: float = 0.0):
        super().__init__()
        if d_h % n_heads:
            raise ValueError(f"n_heads={n_heads} must divide d_h={d_h}")
        self.n_heads = n_heads
        self.d_k = d_h // n_heads
        self.W_q = nn.Linear(d_h, d_h, bias=False)
        self.W_k = nn.Linear(d_h, d_h, bias=False)
        self.W_v = nn.Linear(d_h, d_h, bias=False)
        self.W_h = nn.Linear(d_h, d_h, bias=False)
        self.dropout = nn.Dropout(dropout)
        self.last_weights: torch.Tensor | None = None

    def _split(self, x: torch.Tensor) -> torch.Tensor:
        # (..., L, d_h) -> (..., heads, L, d_k)
        return x.unflatten(-1, (self.n_heads, self.d_k)).transpose(-3, -2)

    def forward(self, query: torch.Tensor, memory: torch.Tensor, causal: bool = False) -> torch.Tensor:
        q, k, v = self._split(self.W_q(query)), self._split(self.W_k(memory)), self._split(self.W_v(memory))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.d_k)
        if causal:
            Lq, Lk = scores.shape[-2:]
            mask = torch.ones(Lq, Lk, dtype=torch.bool, device=scores.device).triu(1)
            scores = scores.masked_fill(mask, float("-inf"))
        weights = torch.softmax(scores, dim=-1)
        self.last_weights = weights.detach()
        heads = self.dropout(weights) @ v
        return self.W_h(heads.transpose(-3, -2).flatten(-2))


class DecoderBlock(nn.Module):
    def __init__(self, d_h: int, n_heads: int, dropout: float = 0.5, ffn_mult: int = 4):
        super().__init__()
        self.self_attn = MultiHeadAttention(d_h, n_heads, dropout)
        self.cross_attn = MultiHeadAttention(d_h, n_heads, dropout)
        self.ffn_in = nn.Linear(d_h, ffn_mult * d_h)
        self.ffn_out = nn.Linear(ffn_mult * d_h, d_h)
        self.ffn_drop = nn.Dropout(dropout)
        self.norm_self = nn.LayerNorm(d_h)
        self.norm_cross = nn.LayerNorm(d_h)
        self.norm_ffn = nn.LayerNorm(d_h)

    def forward(self, E: torch.Tensor, R: torch.Tensor) -> torch.Tensor:
        E1 = self.norm_self(E + self.self_attn(E, E, causal=True))
        D = self.norm_cross(E1 + self.cross_attn(E1, R))
        ffn = self.ffn_out(self.ffn_drop(torch.relu(self.ffn_in(D))))
        out = self.norm_ffn(D + ffn)
        if not torch.isfinite(out).all():
            raise FloatingPointError("non-finite decoder activations")
        return out


def decoder_block(E: torch.Tensor, R: torch.Tensor, block: DecoderBlock, train: bool = False) -> torch.Tensor:
    block.train(train)
    return block(E, R)


class OutputHead(nn.Module):
    def __init__(self, d_h: int, d_e: int):
        super().__init__()
        bound = 1.0 / math.sqrt(d_h)
        self.W_p = nn.Parameter(torch.empty(d_h, d_e).uniform_(-bound, bound))

    def forward(self, D: torch.Tensor) -> torch.Tensor:
        """Vocabulary logits."""
        return D @ self.W_p


def output_distribution(D: torch.Tensor, head: OutputHead) -> torch.Tensor:
    return torch.softmax(head(D), dim=-1)


def caption_loss(log_probs: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Negative log-likelihood summed over unmasked positions.

    ``log_probs`` is ``(..., T, d_e)``. With a leading batch axis the per
    sequence sums are averaged over the batch.
    """
    if not bool(mask.any()):
        raise ValueError("all target positions are masked")
    nll = -log_probs.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    per_seq = torch.where(mask, nll, torch.zeros_like(nll)).sum(-1)
    return per_seq.mean() if per_seq.dim() else per_seq
