"""Versioned checkpoint container.

Layout::

    b"FQCAPCKP"  8-byte magic
    u32          format version
    u64          metadata length in bytes
    metadata     UTF-8 JSON (config, vocabulary, labels, counters, blob index)
    blobs        little-endian float32 arrays, back to back

Only float32 tensors are stored as blobs; integer counters live in the
metadata. Loading validates the blob index against the file size before
anything is built, so a truncated file never yields a partial state.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .config import TrainConfig
from .corpus import FrequencyLabels, Vocabulary
from .model import CaptionModel
from .training import ModelState, make_optimizer

MAGIC = b"FQCAPCKP"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sIQ")


class CheckpointError(RuntimeError):
    pass


def _blob(t: torch.Tensor) -> bytes:
    if t.dtype != torch.float32:
        raise CheckpointError(f"only float32 tensors are stored, got {t.dtype}")
    return t.detach().cpu().contiguous().numpy().astype("<f4", copy=False).tobytes()


def save_checkpoint(state: ModelState, path: str | Path) -> None:
    model, opt = state.model, state.optimizer
    tensors: dict[str, torch.Tensor] = {}
    counters: dict[str, int] = {}
    for name, t in model.state_dict().items():
        if t.is_floating_point():
            tensors[f"model/{name}"] = t
        else:
            counters[f"model/{name}"] = int(t)
    names = {id(p): n for n, p in model.named_parameters()}
    for group in opt.param_groups:
        for p in group["params"]:
            st = opt.state.get(p)
            if not st:
                continue
            n = names[id(p)]
            tensors[f"optim/{n}/exp_avg"] = st["exp_avg"]
            tensors[f"optim/{n}/exp_avg_sq"] = st["exp_avg_sq"]
            counters[f"optim/{n}/step"] = int(st["step"])
    index, offset, chunks = [], 0, []
    for name, t in tensors.items():
        raw = _blob(t)
        index.append({"name": name, "shape": list(t.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    meta = {
        "config": state.config.to_dict(),
        "config_hash": state.config.digest(),
        "dims": model.dims,
        "epoch": state.epoch,
        "vocabulary": state.vocab.to_json(),
        "labels": state.labels.to_json(state.vocab),
        "counters": counters,
        "blobs": index,
    }
    header = json.dumps(meta, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header)))
        fh.write(header)
        for c in chunks:
            fh.write(c)
    tmp.replace(path)


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint format version {version} does not match supported version {FORMAT_VERSION}"
        )
    start = _PREFIX.size + hlen
    if len(raw) < start:
        raise CheckpointError(f"{path}: truncated checkpoint metadata")
    try:
        meta = json.loads(raw[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt metadata ({exc})") from None
    payload = len(raw) - start
    need = sum(b["nbytes"] for b in meta["blobs"])
    if payload != need:
        raise CheckpointError(f"{path}: truncated or padded blob section ({payload} of {need} bytes)")
    arrays = {}
    for b in meta["blobs"]:
        lo = start + b["offset"]
        arr = np.frombuffer(raw, dtype="<f4", count=b["nbytes"] // 4, offset=lo)
        arrays[b["name"]] = arr.reshape(b["shape"]).astype(np.float32)
    return meta, arrays


def load_checkpoint(path: str | Path) -> ModelState:
    meta, arrays = read_checkpoint(path)
    cfg = TrainConfig.from_mapping(meta["config"])
    vocab = Vocabulary.from_json(meta["vocabulary"])
    labels = FrequencyLabels.from_json(meta["labels"], vocab)
    model = CaptionModel(**meta["dims"])
    counters = meta["counters"]
    sd = {}
    for name, ref in model.state_dict().items():
        key = f"model/{name}"
        if key in arrays:
            sd[name] = torch.from_numpy(arrays[key].copy())
        elif key in counters:
            sd[name] = torch.tensor(counters[key], dtype=ref.dtype)
        else:
            raise CheckpointError(f"{path}: missing tensor {name}")
    model.load_state_dict(sd)
    opt = make_optimizer(model, cfg)
    for name, p in model.named_parameters():
        key = f"optim/{name}"
        if f"{key}/exp_avg" in arrays:
            opt.state[p] = {
                "step": torch.tensor(float(counters[f"{key}/step"])),
                "exp_avg": torch.from_numpy(arrays[f"{key}/exp_avg"].copy()),
                "exp_avg_sq": torch.from_numpy(arrays[f"{key}/exp_avg_sq"].copy()),
            }
    return ModelState(model, opt, cfg, vocab, labels, epoch=int(meta["epoch"]))
