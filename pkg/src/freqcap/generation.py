"""Caption generation. Uses only the encoder, embedding table, decoder block
and output head: no diffusion plan and no divergent head."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .corpus import BOS, EOS, PAD
from .features import VideoFeatures
from .model import CaptionModel

# never generated
BANNED = (BOS, PAD)


@dataclass
class Hypothesis:
    tokens: list[int]               # generated ids, EOS included when present
    logprob: float
    step_probs: list[torch.Tensor]  # distribution over the vocabulary at each step

    @property
    def score(self) -> float:
        return self.logprob / len(self.tokens)

    @property
    def finished(self) -> bool:
        return bool(self.tokens) and self.tokens[-1] == EOS


def _memory(model: CaptionModel, feats: VideoFeatures) -> torch.Tensor:
    dtype = model.head.W_p.dtype
    image = torch.as_tensor(feats.image, dtype=dtype)[None]
    motion = torch.as_tensor(feats.motion, dtype=dtype)[None]
    return model.encode(image, motion)


def next_log_probs(model: CaptionModel, memory: torch.Tensor, prefixes: torch.Tensor) -> torch.Tensor:
    """Log-distribution of the token following each prefix (which starts with BOS)."""
    D = model.decode(prefixes, memory.expand(len(prefixes), -1, -1))
    logp = F.log_softmax(model.head(D[:, -1]), dim=-1)
    logp[:, list(BANNED)] = float("-inf")
    return logp


@torch.no_grad()
def beam_search(model: CaptionModel, feats: VideoFeatures, beam_size: int = 5,
                t_max: int = 30) -> Hypothesis:
    """Best hypothesis by length-normalised log-probability.

    Live beams are ranked by summed log-probability; a candidate ending in
    EOS retires to the finished pool. At most ``t_max - 1`` tokens follow BOS.
    """
    model.eval()
    memory = _memory(model, feats)
    max_len = t_max - 1
    live = [Hypothesis([], 0.0, [])]
    finished: list[Hypothesis] = []
    for step in range(max_len):
        prefixes = torch.tensor([[BOS, *h.tokens] for h in live], dtype=torch.long)
        logp = next_log_probs(model, memory, prefixes)
        total = torch.tensor([h.logprob for h in live], dtype=torch.float64)[:, None] + logp.double()
        flat = total.flatten()
        n_valid = int(torch.isfinite(flat).sum())
        k = min(beam_size, n_valid)
        # stable sort keeps the lowest (beam, token) index first among equal scores
        order = torch.sort(flat, descending=True, stable=True).indices[:k]
        d_e = logp.shape[1]
        next_live = []
        for flat_idx in order.tolist():
            b, tok = divmod(flat_idx, d_e)
            parent = live[b]
            hyp = Hypothesis(parent.tokens + [tok], float(flat[flat_idx]),
                             parent.step_probs + [logp[b].exp()])
            if tok == EOS or step == max_len - 1:
                finished.append(hyp)
            else:
                next_live.append(hyp)
        live = next_live
        if not live:
            break
    return _best(finished)


def _best(hyps: list[Hypothesis]) -> Hypothesis:
    best = hyps[0]
    for h in hyps[1:]:
        if h.score > best.score:
            best = h
    return best


@torch.no_grad()
def greedy_decode(model: CaptionModel, feats: VideoFeatures, t_max: int = 30) -> Hypothesis:
    model.eval()
    memory = _memory(model, feats)
    hyp = Hypothesis([], 0.0, [])
    for _ in range(t_max - 1):
        logp = next_log_probs(model, memory, torch.tensor([[BOS, *hyp.tokens]]))[0]
        tok = int(torch.argmax(logp))
        hyp = Hypothesis(hyp.tokens + [tok], hyp.logprob + float(logp[tok]), hyp.step_probs + [logp.exp()])
        if tok == EOS:
            break
    return hyp


@torch.no_grad()
def sequence_logprob(model: CaptionModel, feats: VideoFeatures, tokens: list[int]) -> float:
    """Teacher-forced log-probability of ``tokens`` after BOS, with the same banned-token masking."""
    model.eval()
    memory = _memory(model, feats)
    ids = torch.tensor([[BOS, *tokens[:-1]]])
    D = model.decode(ids, memory)
    logp = F.log_softmax(model.head(D[0]), dim=-1)
    logp[:, list(BANNED)] = float("-inf")
    total = 0.0
    for t, tok in enumerate(tokens):
        total += float(logp[t, tok])
    return total
