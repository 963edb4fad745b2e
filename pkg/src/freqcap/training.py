"""Teacher-forced training with optional diffusion and divergent supervision."""
from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .config import TrainConfig
from .corpus import (PAD, CaptionRecord, FrequencyLabels, Vocabulary, build_vocabulary,
                     classify_tokens, compute_frequency_stats, encode_caption)
from .decoder import caption_loss
from .dss import divergent_loss, total_loss
from .fad import DiffusionPlan, build_plan, diffuse_rows
from .features import FeatureError, VideoFeatures, read_features
from .model import CaptionModel

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class CaptionData:
    """Tensors for every (video, caption) pair of a split."""

    video_ids: list[str]
    image: torch.Tensor         # (V, K, d_v)
    motion: torch.Tensor        # (V, K, d_v)
    seqs: torch.Tensor          # (N, t_max) BOS ... EOS PAD*
    video_index: torch.Tensor   # (N,) row into image/motion
    references: dict[str, list[list[str]]]

    def __len__(self):
        return len(self.seqs)

    @property
    def d_v(self) -> int:
        return self.image.shape[-1]

    def features(self, video_id: str) -> VideoFeatures:
        i = self.video_ids.index(video_id)
        return VideoFeatures(self.image[i].numpy(), self.motion[i].numpy())


def load_features(records: Sequence[CaptionRecord], base_dir: str | Path) -> dict[str, VideoFeatures]:
    base = Path(base_dir)
    out = {}
    for rec in records:
        if rec.feature_file is None:
            raise FeatureError(f"no feature_file for video {rec.video_id}")
        out[rec.video_id] = read_features(base / rec.feature_file)
    return out


def prepare_data(records: Sequence[CaptionRecord], features: Mapping[str, VideoFeatures],
                 vocab: Vocabulary, t_max: int) -> CaptionData:
    video_ids = [r.video_id for r in records]
    shapes = {features[v].image.shape for v in video_ids}
    if len(shapes) != 1:
        raise FeatureError(f"inconsistent feature shapes across videos: {sorted(shapes)}")
    image = torch.from_numpy(np.stack([features[v].image for v in video_ids]))
    motion = torch.from_numpy(np.stack([features[v].motion for v in video_ids]))
    seqs, index = [], []
    for i, rec in enumerate(records):
        for cap in rec.captions:
            seqs.append(encode_caption(cap, vocab, t_max))
            index.append(i)
    return CaptionData(
        video_ids=video_ids,
        image=image,
        motion=motion,
        seqs=torch.tensor(seqs, dtype=torch.long),
        video_index=torch.tensor(index, dtype=torch.long),
        references={r.video_id: r.captions for r in records},
    )


def corpus_labels(records: Sequence[CaptionRecord], cfg: TrainConfig) -> tuple[Vocabulary, FrequencyLabels]:
    vocab = build_vocabulary(records, cfg.min_count)
    stats = compute_frequency_stats(records, vocab)
    return vocab, classify_tokens(stats, cfg.gamma, cfg.delta, vocab.d_e)


@dataclass
class ModelState:
    model: CaptionModel
    optimizer: torch.optim.Optimizer
    config: TrainConfig
    vocab: Vocabulary
    labels: FrequencyLabels
    epoch: int = 0
    plan: DiffusionPlan | None = field(default=None, repr=False)


def make_optimizer(model: CaptionModel, cfg: TrainConfig) -> torch.optim.Adam:
    # l2 penalty on everything except the batch-norm scale/shift
    decay, no_decay = [], []
    for name, p in model.named_parameters():
        (no_decay if ".bn." in name else decay).append(p)
    groups = [
        {"params": decay, "weight_decay": cfg.weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]
    return torch.optim.Adam(groups, lr=cfg.learning_rate)


def init_state(cfg: TrainConfig, vocab: Vocabulary, labels: FrequencyLabels, d_v: int) -> ModelState:
    torch.manual_seed(cfg.seed)
    model = CaptionModel(d_v, cfg.d_h, cfg.n_heads, vocab.d_e, cfg.t_max, cfg.dropout)
    return ModelState(model, make_optimizer(model, cfg), cfg, vocab, labels)


def _epoch_seed(seed: int, epoch: int) -> int:
    return (seed * 1_000_003 + epoch) % (2**63)


def clip_gradients(params: Iterable[torch.nn.Parameter], max_norm: float) -> float:
    # fixed-order float64 sum: an all-zero gradient leaves the norm bit-identical
    grads = [p.grad for p in params if p.grad is not None]
    total = 0.0
    for g in grads:
        total += float(g.double().pow(2).sum())
    norm = math.sqrt(total)
    coef = max_norm / (norm + 1e-6)
    if coef < 1.0:
        for g in grads:
            g.mul_(coef)
    return norm


def batch_losses(state: ModelState, data: CaptionData, idx: torch.Tensor,
                 plan: DiffusionPlan | None) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor, int]:
    """Forward one batch; returns (total, caption, divergent, n_target_tokens)."""
    cfg, model = state.config, state.model
    seqs = data.seqs[idx]
    vids = data.video_index[idx]
    inp, tgt = seqs[:, :-1], seqs[:, 1:]
    mask = tgt != PAD
    diffused = diffuse_rows(model.embed.weight, plan)
    D = model(data.image[vids], data.motion[vids], inp, diffused)
    loss_t = caption_loss_from_states(model, D, tgt, mask)
    if cfg.dss_enabled:
        div_logp = F.log_softmax(model.dss(D, model.head), dim=-1)
        loss_div = divergent_loss(div_logp, tgt, mask, cfg.window_size)
        loss = total_loss(loss_t, loss_div, cfg.lam)
    else:
        loss_div = torch.zeros(())
        loss = loss_t
    return loss, loss_t, loss_div, int(mask.sum())


def caption_loss_from_states(model: CaptionModel, D: torch.Tensor, tgt: torch.Tensor,
                             mask: torch.Tensor) -> torch.Tensor:
    return caption_loss(F.log_softmax(model.head(D), dim=-1), tgt, mask)


def train_epoch(state: ModelState, data: CaptionData) -> dict:
    """One pass over ``data``; the diffusion plan is rebuilt first when enabled."""
    cfg, model, opt = state.config, state.model, state.optimizer
    epoch = state.epoch + 1
    seed = _epoch_seed(cfg.seed, epoch)
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    plan = build_plan(model.embed.weight, state.labels, state.vocab.id_to_token) if cfg.fad_enabled else None
    state.plan = plan
    model.train()
    perm = torch.randperm(len(data), generator=gen)
    sums = {"loss": 0.0, "loss_t": 0.0, "loss_div": 0.0}
    n_batches = n_tokens = 0
    nll_tokens = 0.0
    t0 = time.perf_counter()
    for bi, start in enumerate(range(0, len(data), cfg.batch_size)):
        idx = perm[start : start + cfg.batch_size]
        loss, loss_t, loss_div, ntok = batch_losses(state, data, idx, plan)
        if not torch.isfinite(loss):
            raise TrainingError(f"non-finite loss at batch {bi} of epoch {epoch}")
        opt.zero_grad(set_to_none=True)
        loss.backward()
        clip_gradients(model.parameters(), cfg.grad_clip)
        opt.step()
        sums["loss"] += loss.item()
        sums["loss_t"] += loss_t.item()
        sums["loss_div"] += loss_div.item()
        nll_tokens += loss_t.item() * len(idx)
        n_tokens += ntok
        n_batches += 1
    state.epoch = epoch
    metrics = {k: v / n_batches for k, v in sums.items()}
    metrics.update(
        epoch=epoch,
        token_loss=nll_tokens / n_tokens,
        lr=opt.param_groups[0]["lr"],
        fad_pairs=0 if plan is None else len(plan.lft_ids),
        seconds=time.perf_counter() - t0,
    )
    return metrics


@torch.no_grad()
def token_loss(state: ModelState, data: CaptionData) -> float:
    """Eval-mode mean NLL per target token over all of ``data``."""
    model = state.model
    model.eval()
    total, count = 0.0, 0
    for start in range(0, len(data), 256):
        idx = torch.arange(start, min(start + 256, len(data)))
        seqs = data.seqs[idx]
        vids = data.video_index[idx]
        tgt = seqs[:, 1:]
        mask = tgt != PAD
        D = model(data.image[vids], data.motion[vids], seqs[:, :-1])
        total += float(caption_loss_from_states(model, D, tgt, mask)) * len(idx)
        count += int(mask.sum())
    return total / count


def fit(state: ModelState, data: CaptionData, epochs: int | None = None,
        log_path: str | Path | None = None,
        callback: Callable[[dict], None] | None = None) -> list[dict]:
    epochs = state.config.epochs if epochs is None else epochs
    history = []
    fh = open(log_path, "a") if log_path else None
    try:
        for _ in range(epochs):
            m = train_epoch(state, data)
            history.append(m)
            log.info("epoch %d loss_t %.4f loss_div %.4f fad_pairs %d",
                     m["epoch"], m["loss_t"], m["loss_div"], m["fad_pairs"])
            if fh:
                row = {k: m[k] for k in ("epoch", "loss_t", "loss_div", "lr", "fad_pairs")}
                fh.write(json.dumps(row) + "\n")
                fh.flush()
            if callback:
                callback(m)
    finally:
        if fh:
            fh.close()
    return history
