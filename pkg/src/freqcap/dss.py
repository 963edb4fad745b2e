"""Divergent supervision: hidden states also predict their neighbours' targets.

A shared projection ``W_a`` maps the decoder output into a new space before
the (shared) output head. With window ``w`` the state at position ``t`` is
trained to predict ``y[t + k]`` (former) and ``y[t - k]`` (latter) for
``k = 1 .. (w - 1) / 2``. Only used in training; generation never calls it.
"""
from __future__ import annotations

import math

import torch
from torch import nn

from .decoder import OutputHead


class DivergentHead(nn.Module):
    def __init__(self, d_h: int):
        super().__init__()
        bound = 1.0 / math.sqrt(d_h)
        self.W_a = nn.Parameter(torch.empty(d_h, d_h).uniform_(-bound, bound))

    def forward(self, D: torch.Tensor, head: OutputHead) -> torch.Tensor:
        return head(D @ self.W_a)


def divergent_distributions(D: torch.Tensor, dss: DivergentHead, head: OutputHead) -> torch.Tensor:
    return torch.softmax(dss(D, head), dim=-1)


def window_offsets(window_size: int) -> range:
    if window_size < 3 or window_size % 2 == 0:
        raise ValueError(f"window size must be an odd integer >= 3, got {window_size}")
    return range(1, (window_size - 1) // 2 + 1)


def divergent_loss(log_probs: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor,
                   window_size: int = 5) -> torch.Tensor:
    """Sum of former and latter NLL terms over every offset in the window.

    Terms whose own position or shifted target lies outside the unpadded
    sequence are dropped; a sequence too short for any offset yields 0.
    """
    T = targets.shape[-1]
    total = log_probs.new_zeros(targets.shape[:-1])
    for k in window_offsets(window_size):
        if k >= T:
            break
        # former: state t predicts y[t + k]
        lp = log_probs[..., : T - k, :].gather(-1, targets[..., k:].unsqueeze(-1)).squeeze(-1)
        ok = mask[..., : T - k] & mask[..., k:]
        total = total - torch.where(ok, lp, torch.zeros_like(lp)).sum(-1)
        # latter: state t predicts y[t - k]
        lp = log_probs[..., k:, :].gather(-1, targets[..., : T - k].unsqueeze(-1)).squeeze(-1)
        ok = mask[..., k:] & mask[..., : T - k]
        total = total - torch.where(ok, lp, torch.zeros_like(lp)).sum(-1)
    return total.mean() if total.dim() else total


def count_terms(mask: torch.Tensor, window_size: int) -> int:
    """Number of log-terms :func:`divergent_loss` sums for ``mask``."""
    T = mask.shape[-1]
    n = 0
    for k in window_offsets(window_size):
        if k < T:
            n += 2 * int((mask[..., : T - k] & mask[..., k:]).sum())
    return n


def total_loss(loss_t: torch.Tensor, loss_div: torch.Tensor, lam: float) -> torch.Tensor:
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return loss_t + lam * loss_div
