"""Highway embedding of per-modality video features.

    H = V W_eh,  P = tanh(H W_ep),  T = sigmoid(H W_et + b_t)
    out = BN(T * H + (1 - T) * P)

One highway layer per modality; the two outputs are stacked along the frame
axis (image rows first) to form the cross-attention memory.
"""
from __future__ import annotations

import math

import torch
from torch import nn

from .features import FeatureError, VideoFeatures


class FrameBatchNorm(nn.Module):
    """Batch norm over every leading axis (batch and frames), per channel.

    Unlike ``nn.BatchNorm1d`` a single row is accepted in training mode, and
    evaluating before any training batch raises instead of silently using
    the identity statistics.
    """

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.weight = nn.Parameter(torch.ones(dim))
        self.bias = nn.Parameter(torch.zeros(dim))
        self.register_buffer("running_mean", torch.zeros(dim))
        self.register_buffer("running_var", torch.ones(dim))
        self.register_buffer("num_batches", torch.zeros((), dtype=torch.long))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        flat = x.reshape(-1, x.shape[-1])
        if self.training:
            mean = flat.mean(0)
            var = flat.var(0, unbiased=False)
            with torch.no_grad():
                n = flat.shape[0]
                unbiased = var * n / (n - 1) if n > 1 else var
                self.running_mean.lerp_(mean.detach(), self.momentum)
                self.running_var.lerp_(unbiased.detach(), self.momentum)
                self.num_batches += 1
        else:
            if int(self.num_batches) == 0:
                raise RuntimeError("uninitialized normalization statistics")
            mean, var = self.running_mean, self.running_var
        out = (flat - mean) / torch.sqrt(var + self.eps) * self.weight + self.bias
        return out.reshape(x.shape)


class HighwayEmbedding(nn.Module):
    def __init__(self, d_v: int, d_h: int, gate_bias: float = -1.0):
        super().__init__()
        self.W_eh = nn.Parameter(torch.empty(d_v, d_h))
        self.W_ep = nn.Parameter(torch.empty(d_h, d_h))
        self.W_et = nn.Parameter(torch.empty(d_h, d_h))
        self.b_et = nn.Parameter(torch.full((d_h,), gate_bias))
        self.bn = FrameBatchNorm(d_h)
        for w in (self.W_eh, self.W_ep, self.W_et):
            bound = 1.0 / math.sqrt(w.shape[0])
            nn.init.uniform_(w, -bound, bound)

    def gated(self, V: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Return (pre-BN output, H, P); exposed for the gate-convexity property."""
        H = V @ self.W_eh
        P = torch.tanh(H @ self.W_ep)
        T = torch.sigmoid(H @ self.W_et + self.b_et)
        return T * H + (1 - T) * P, H, P

    def forward(self, V: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(V).all():
            raise FeatureError("non-finite input to highway embedding")
        return self.bn(self.gated(V)[0])


class VideoEncoder(nn.Module):
    def __init__(self, d_v: int, d_h: int):
        super().__init__()
        self.image = HighwayEmbedding(d_v, d_h)
        self.motion = HighwayEmbedding(d_v, d_h)

    def forward(self, image: torch.Tensor, motion: torch.Tensor) -> torch.Tensor:
        """``(..., K, d_v)`` per modality to memory ``(..., 2K, d_h)``."""
        if image.shape != motion.shape:
            raise FeatureError(f"modality shape mismatch: {tuple(image.shape)} vs {tuple(motion.shape)}")
        return torch.cat([self.image(image), self.motion(motion)], dim=-2)


def highway_embed(V: torch.Tensor, hel: HighwayEmbedding, train: bool = False) -> torch.Tensor:
    hel.train(train)
    return hel(V)


def encode_video(f: VideoFeatures, encoder: VideoEncoder, train: bool = False) -> torch.Tensor:
    """Memory ``R`` of shape ``(2K, d_h)`` for a single video."""
    encoder.train(train)
    dtype = encoder.image.W_eh.dtype
    return encoder(torch.as_tensor(f.image, dtype=dtype), torch.as_tensor(f.motion, dtype=dtype))
