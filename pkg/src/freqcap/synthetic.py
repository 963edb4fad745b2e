"""Seeded long-tailed caption corpora with token-correlated video features.

Each video plants a few content tokens drawn from the same Zipf law as the
filler words. Its features are the sum of per-token prototype vectors of
the planted tokens plus noise, so a model can in principle recover every
planted token (including rare ones) from the video alone.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .corpus import CaptionRecord, write_dataset
from .features import VideoFeatures, write_features


class SyntheticSpecError(ValueError):
    pass


@dataclass
class SyntheticSpec:
    vocab_size: int = 60
    zipf_exponent: float = 1.1
    n_videos: int = 200
    captions_per_video: int = 5
    planted_per_video: int = 2
    plant_prob: float = 0.9
    min_filler: int = 3
    max_filler: int = 6
    K: int = 4
    d_v: int = 32
    noise: float = 0.3
    seed: int = 0

    def validate(self) -> None:
        if self.planted_per_video > self.vocab_size:
            raise SyntheticSpecError(
                f"infeasible spec: {self.planted_per_video} planted tokens per video "
                f"but only {self.vocab_size} vocabulary tokens"
            )
        if min(self.vocab_size, self.n_videos, self.captions_per_video, self.K, self.d_v) < 1:
            raise SyntheticSpecError("sizes must be positive")
        if not 0 <= self.min_filler <= self.max_filler:
            raise SyntheticSpecError("need 0 <= min_filler <= max_filler")
        if self.min_filler == 0 and self.planted_per_video == 0:
            raise SyntheticSpecError("captions could be empty")

    def to_json(self) -> dict:
        return asdict(self)


def word(rank: int) -> str:
    return f"w{rank:03d}"


def zipf_probs(n: int, s: float) -> np.ndarray:
    w = np.arange(1, n + 1, dtype=np.float64) ** -s
    return w / w.sum()


def generate_corpus(spec: SyntheticSpec) -> tuple[list[CaptionRecord], dict[str, VideoFeatures]]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    p = zipf_probs(spec.vocab_size, spec.zipf_exponent)
    proto_img = rng.standard_normal((spec.vocab_size, spec.d_v))
    proto_mot = rng.standard_normal((spec.vocab_size, spec.d_v))
    records, feats = [], {}
    for v in range(spec.n_videos):
        vid = f"v{v:04d}"
        planted = rng.choice(spec.vocab_size, size=spec.planted_per_video, replace=False, p=p)
        image = proto_img[planted].sum(0) + spec.noise * rng.standard_normal((spec.K, spec.d_v))
        motion = proto_mot[planted].sum(0) + spec.noise * rng.standard_normal((spec.K, spec.d_v))
        caps = []
        for _ in range(spec.captions_per_video):
            n_fill = int(rng.integers(spec.min_filler, spec.max_filler + 1))
            toks = list(rng.choice(spec.vocab_size, size=n_fill, p=p))
            for t in planted:
                if rng.random() < spec.plant_prob:
                    toks.insert(int(rng.integers(0, len(toks) + 1)), t)
            if not toks:
                toks = [planted[0]]
            caps.append([word(int(t)) for t in toks])
        records.append(CaptionRecord(vid, caps, feature_file=f"features/{vid}.bin"))
        feats[vid] = VideoFeatures(image, motion)
    return records, feats


def write_synthetic(spec: SyntheticSpec, out_dir: str | Path) -> Path:
    """Write ``dataset.jsonl`` plus one feature file per video; returns the dataset path."""
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    records, feats = generate_corpus(spec)
    for rec in records:
        write_features(feats[rec.video_id], out / rec.feature_file)
    path = out / "dataset.jsonl"
    write_dataset(records, path)
    return path


def rank_frequency_slope(records: list[CaptionRecord]) -> float:
    """Least-squares slope of log count against log rank."""
    counts = sorted(Counter(t for r in records for c in r.captions for t in c).values(), reverse=True)
    x = np.log(np.arange(1, len(counts) + 1))
    y = np.log(np.asarray(counts, dtype=np.float64))
    return float(np.polyfit(x, y, 1)[0])
