"""Frequency-aware diffusion of low-frequency token embeddings.

Every low-frequency token (LFT) is assigned to its most cosine-similar
high-frequency token (HFT). Each HFT that received at least one LFT gets a
diffused embedding ``e_H + sum_i alpha_i * e_Li`` where the ``alpha`` are a
softmax of cosine similarities inside the HFT's group.

The plan (assignment and weights) is a detached snapshot. Diffused rows are
rebuilt from the live table with :func:`diffuse_rows`, so gradients reach
both the HFT row and the contributing LFT rows while the trainable table
itself is never overwritten.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .corpus import FrequencyLabels
from .decoder import DiffusedRows, TokenEmbedding


class DiffusionError(ValueError):
    pass


def _cosine(a: torch.Tensor, b: torch.Tensor, names_a=None, names_b=None) -> torch.Tensor:
    for x, names in ((a, names_a), (b, names_b)):
        norms = x.norm(dim=-1)
        zero = (norms == 0).nonzero().flatten()
        if len(zero):
            i = int(zero[0])
            name = names[i] if names is not None else f"row {i}"
            raise DiffusionError(f"zero-norm embedding for token {name}: cosine undefined")
    an = a / a.norm(dim=-1, keepdim=True)
    bn = b / b.norm(dim=-1, keepdim=True)
    return an @ bn.T


def build_similarity(lft_embs: torch.Tensor, hft_embs: torch.Tensor,
                     lft_names: Sequence[str] | None = None,
                     hft_names: Sequence[str] | None = None) -> torch.Tensor:
    """Row-softmax of the ``m x n`` LFT-to-HFT cosine similarity matrix."""
    if len(lft_embs) < 1 or len(hft_embs) < 1:
        raise DiffusionError("similarity needs at least one LFT and one HFT")
    return torch.softmax(_cosine(lft_embs, hft_embs, lft_names, hft_names), dim=1)


def assign_targets(S: torch.Tensor) -> list[int]:
    # np.argmax returns the first maximum, giving the lowest-index tie rule
    return [int(j) for j in np.argmax(S.detach().cpu().numpy(), axis=1)]


def noise_weights(lft_embs: torch.Tensor, hft_embs: torch.Tensor,
                  loh: Sequence[int]) -> tuple[torch.Tensor, dict[int, list[int]]]:
    """Per-LFT weights normalised within each HFT group, and the groups."""
    groups: dict[int, list[int]] = {}
    for i, j in enumerate(loh):
        groups.setdefault(int(j), []).append(i)
    alpha = torch.zeros(len(loh), dtype=lft_embs.dtype)
    for j, members in groups.items():
        sims = _cosine(lft_embs[members], hft_embs[j : j + 1])[:, 0]
        alpha[members] = torch.softmax(sims, dim=0)
    return alpha, groups


@dataclass
class DiffusionPlan:
    lft_ids: list[int]
    hft_ids: list[int]
    S: torch.Tensor
    loh: list[int]
    alpha: torch.Tensor
    groups: dict[int, list[int]]
    cosine: torch.Tensor = field(repr=False)  # LFT i to its assigned HFT

    @property
    def targets(self) -> list[int]:
        """Token id of the HFT each LFT diffuses into."""
        return [self.hft_ids[j] for j in self.loh]

    def pairs(self, id_to_token: Sequence[str]) -> list[dict]:
        return [
            {
                "lft": id_to_token[l],
                "hft": id_to_token[h],
                "alpha": float(self.alpha[i]),
                "cosine": float(self.cosine[i]),
            }
            for i, (l, h) in enumerate(zip(self.lft_ids, self.targets))
        ]


def build_plan(weight: torch.Tensor, labels: FrequencyLabels,
               id_to_token: Sequence[str] | None = None) -> DiffusionPlan | None:
    """Snapshot plan from the current embedding table; ``None`` when there are no LFTs."""
    hft_ids, lft_ids = labels.hft_ids, labels.lft_ids
    if not hft_ids:
        raise DiffusionError("diffusion requires high-frequency tokens")
    if not lft_ids:
        return None
    W = weight.detach()
    names = (lambda ids: [id_to_token[i] for i in ids]) if id_to_token is not None else (lambda ids: ids)
    lft, hft = W[lft_ids], W[hft_ids]
    S = build_similarity(lft, hft, names(lft_ids), names(hft_ids))
    loh = assign_targets(S)
    alpha, groups = noise_weights(lft, hft, loh)
    cos = _cosine(lft, hft)[torch.arange(len(loh)), torch.tensor(loh)]
    return DiffusionPlan(lft_ids, hft_ids, S, loh, alpha, groups, cos)


def diffuse_rows(weight: torch.Tensor, plan: DiffusionPlan | None) -> DiffusedRows | None:
    """Differentiable diffused rows for the HFTs with non-empty groups."""
    if plan is None:
        return None
    lft = torch.tensor(plan.lft_ids, dtype=torch.long)
    tgt = torch.tensor(plan.targets, dtype=torch.long)
    alpha = plan.alpha.to(weight.dtype)
    noise = torch.zeros_like(weight).index_add(0, tgt, alpha[:, None] * weight[lft])
    active = torch.tensor(sorted(plan.hft_ids[j] for j in plan.groups), dtype=torch.long)
    return DiffusedRows(active, weight[active] + noise[active])


@dataclass
class DiffusedEmbeddings:
    rows: dict[int, torch.Tensor]
    epoch_tag: int = 0
    plan: DiffusionPlan | None = None

    def as_override(self) -> DiffusedRows | None:
        if not self.rows:
            return None
        ids = sorted(self.rows)
        return DiffusedRows(torch.tensor(ids, dtype=torch.long), torch.stack([self.rows[i] for i in ids]))


def apply_diffusion(table: TokenEmbedding | torch.Tensor, labels: FrequencyLabels,
                    epoch_tag: int = 0) -> DiffusedEmbeddings:
    """Diffused HFT rows computed from a detached copy of the table."""
    weight = table.weight if isinstance(table, TokenEmbedding) else table
    weight = weight.detach()
    plan = build_plan(weight, labels)
    out = diffuse_rows(weight, plan)
    rows = {} if out is None else {int(i): r.clone() for i, r in zip(out.ids, out.rows)}
    return DiffusedEmbeddings(rows=rows, epoch_tag=epoch_tag, plan=plan)
