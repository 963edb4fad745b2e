import json
import random
import sys

import numpy as np
import pytest
import torch

from freqcap.config import desk_config
from freqcap.corpus import CaptionRecord, build_vocabulary, classify_tokens, compute_frequency_stats
from freqcap.features import VideoFeatures
from freqcap.model import CaptionModel
from freqcap.synthetic import SyntheticSpec, generate_corpus
from freqcap.training import corpus_labels, init_state, prepare_data

WORDS = ["a", "man", "dog", "runs", "on", "the", "grass", "red", "car", "zebra", "kayak", "sings"]


def random_records(seed: int, max_captions: int = 50) -> list[CaptionRecord]:
    """Random Zipf-ish corpus with at most ``max_captions`` captions."""
    rng = random.Random(seed)
    n_videos = rng.randint(2, 10)
    records = []
    budget = max_captions
    weights = [1.0 / (i + 1) for i in range(len(WORDS))]
    for v in range(n_videos):
        n_caps = rng.randint(1, max(1, min(6, budget - (n_videos - v - 1))))
        budget -= n_caps
        caps = [rng.choices(WORDS, weights, k=rng.randint(1, 8)) for _ in range(n_caps)]
        records.append(CaptionRecord(f"v{v}", caps))
    return records


def by_video(records):
    return {r.video_id: r.captions for r in records}


def write_jsonl(path, rows):
    with open(path, "w") as fh:
        for row in rows:
            fh.write((row if isinstance(row, str) else json.dumps(row)) + "\n")
    return path


def random_features(rng: np.random.Generator, K=2, d_v=6) -> VideoFeatures:
    return VideoFeatures(rng.standard_normal((K, d_v)), rng.standard_normal((K, d_v)))


def tiny_model(seed: int, d_e: int = 8, d_h: int = 8, n_heads: int = 2, t_max: int = 4,
               d_v: int = 6, K: int = 2, dtype=torch.float32) -> tuple[CaptionModel, VideoFeatures]:
    """Untrained model with calibrated encoder statistics and one video."""
    torch.manual_seed(seed)
    model = CaptionModel(d_v, d_h, n_heads, d_e, t_max, dropout=0.0).to(dtype)
    rng = np.random.default_rng(seed)
    calib = torch.as_tensor(rng.standard_normal((4, K, d_v)), dtype=dtype)
    model.calibrate(calib, calib.flip(0))
    # sharpen the output head so scores differ clearly between sequences
    with torch.no_grad():
        model.head.W_p.mul_(4.0)
    return model.eval(), random_features(rng, K, d_v)


@pytest.fixture
def toy_corpus():
    recs = [
        CaptionRecord("v1", [["a", "man", "swims"], ["a", "man", "is", "swimming"]]),
        CaptionRecord("v2", [["a", "dog", "runs"], ["the", "dog", "runs", "fast"]]),
        CaptionRecord("v3", [["a", "zebra", "kayaks"]]),
    ]
    return recs


@pytest.fixture(scope="session")
def synthetic_small():
    spec = SyntheticSpec(n_videos=24, captions_per_video=3, vocab_size=30, K=2, d_v=8, seed=3)
    return generate_corpus(spec)


@pytest.fixture
def small_state(synthetic_small):
    records, feats = synthetic_small
    cfg = desk_config(d_h=16, n_heads=2, gamma=0.05, delta=0.1, epochs=2, batch_size=16, t_max=10)
    vocab, labels = corpus_labels(records, cfg)
    data = prepare_data(records, feats, vocab, cfg.t_max)
    return init_state(cfg, vocab, labels, data.d_v), data


def labels_for(records, gamma, delta):
    vocab = build_vocabulary(records)
    return vocab, classify_tokens(compute_frequency_stats(records, vocab), gamma, delta, vocab.d_e)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
