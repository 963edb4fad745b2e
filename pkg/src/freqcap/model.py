from __future__ import annotations

import torch
from torch import nn

from .decoder import DecoderBlock, DiffusedRows, OutputHead, TokenEmbedding
from .dss import DivergentHead
from .encoder import VideoEncoder


class CaptionModel(nn.Module):
    """Highway video encoder + one decoder block + output head.

    The divergent head is always built so that parameter initialisation
    (and therefore the RNG stream) does not depend on whether it is used.
    """

    def __init__(self, d_v: int, d_h: int, n_heads: int, d_e: int, t_max: int, dropout: float = 0.5):
        super().__init__()
        self.dims = dict(d_v=d_v, d_h=d_h, n_heads=n_heads, d_e=d_e, t_max=t_max, dropout=dropout)
        self.encoder = VideoEncoder(d_v, d_h)
        self.embed = TokenEmbedding(d_e, d_h, t_max)
        self.block = DecoderBlock(d_h, n_heads, dropout)
        self.head = OutputHead(d_h, d_e)
        self.dss = DivergentHead(d_h)

    def encode(self, image: torch.Tensor, motion: torch.Tensor) -> torch.Tensor:
        return self.encoder(image, motion)

    def decode(self, ids: torch.Tensor, memory: torch.Tensor,
               diffused: DiffusedRows | None = None) -> torch.Tensor:
        return self.block(self.embed(ids, diffused), memory)

    def forward(self, image, motion, ids, diffused: DiffusedRows | None = None) -> torch.Tensor:
        """Decoder states ``D`` of shape ``(B, T, d_h)``."""
        return self.decode(ids, self.encode(image, motion), diffused)

    @torch.no_grad()
    def calibrate(self, image: torch.Tensor, motion: torch.Tensor) -> None:
        """Populate encoder normalisation statistics with one train-mode pass."""
        was = self.training
        self.encoder.train(True)
        self.encoder(image, motion)
        self.encoder.train(was)
