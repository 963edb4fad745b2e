"""Caption corpus ingestion, vocabulary and token-frequency classification.

Tokens are split into three classes from two frequency ratios:

* inter-frequency ``|tok| / |cap|``: corpus occurrences over caption count;
* intra-frequency ``|vid(tok)| / |vid_all(tok)|``: occurrences inside one
  video's captions over the total number of tokens in those captions.

HFT = high-frequency, LFT = low-frequency, UMT = unmarked.
"""
from __future__ import annotations

import json
import re
import string
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

BOS, EOS, PAD, UNK = 0, 1, 2, 3
RESERVED_TOKENS = ("<bos>", "<eos>", "<pad>", "<unk>")
N_RESERVED = len(RESERVED_TOKENS)

HFT, LFT, UMT = "HFT", "LFT", "UMT"

_PUNCT_RE = re.compile("[" + re.escape(string.punctuation) + "]")


class CorpusError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase, replace punctuation with spaces, split on whitespace."""
    return _PUNCT_RE.sub(" ", text.lower()).split()


@dataclass
class CaptionRecord:
    video_id: str
    captions: list[list[str]]
    feature_file: str | None = None

    def __post_init__(self):
        if not self.captions:
            raise CorpusError(f"empty captions for {self.video_id}")
        for i, cap in enumerate(self.captions):
            if len(cap) == 0:
                raise CorpusError(f"empty caption {i} for {self.video_id} after tokenization")


def parse_record(obj: dict, line_no: int | None = None) -> CaptionRecord:
    where = f"line {line_no}: " if line_no is not None else ""
    if not isinstance(obj, dict) or "video_id" not in obj or "captions" not in obj:
        raise CorpusError(f"{where}expected object with 'video_id' and 'captions'")
    caps = obj["captions"]
    if not isinstance(caps, list) or not all(isinstance(c, str) for c in caps):
        raise CorpusError(f"{where}'captions' must be a list of strings")
    try:
        return CaptionRecord(
            video_id=str(obj["video_id"]),
            captions=[tokenize(c) for c in caps],
            feature_file=obj.get("feature_file"),
        )
    except CorpusError as exc:
        raise CorpusError(f"{where}{exc}") from None


def ingest_dataset(path: str | Path) -> list[CaptionRecord]:
    """Read a JSON-lines caption file, one video per line.

    Blank lines are skipped. Errors carry the 1-based line number.
    """
    records = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {line_no}: malformed JSON ({exc.msg})") from None
            records.append(parse_record(obj, line_no))
    return records


def write_dataset(records: Iterable[CaptionRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {"video_id": rec.video_id, "captions": [" ".join(c) for c in rec.captions]}
            if rec.feature_file is not None:
                obj["feature_file"] = rec.feature_file
            fh.write(json.dumps(obj) + "\n")


@dataclass
class Vocabulary:
    id_to_token: list[str]
    token_to_id: dict[str, int] = field(init=False)

    def __post_init__(self):
        if tuple(self.id_to_token[:N_RESERVED]) != RESERVED_TOKENS:
            raise CorpusError("vocabulary must start with the reserved tokens")
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise CorpusError("duplicate tokens in vocabulary")

    @property
    def d_e(self) -> int:
        return len(self.id_to_token)

    def __len__(self):
        return self.d_e

    def lookup(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.lookup(t) for t in tokens]

    def decode(self, ids: Iterable[int], strip: bool = True) -> list[str]:
        out = []
        for i in ids:
            i = int(i)
            if strip and i == EOS:
                break
            if strip and i in (BOS, PAD):
                continue
            out.append(self.id_to_token[i])
        return out

    def to_json(self) -> list[str]:
        return list(self.id_to_token)

    @classmethod
    def from_json(cls, tokens: list[str]) -> "Vocabulary":
        return cls(list(tokens))


def build_vocabulary(records: Sequence[CaptionRecord], min_count: int = 1) -> Vocabulary:
    """Reserved ids first, then tokens by descending count, ties lexicographic.

    Tokens seen fewer than ``min_count`` times are left out and map to UNK.
    """
    if min_count < 1:
        raise CorpusError("min_count must be >= 1")
    counts = Counter(tok for rec in records for cap in rec.captions for tok in cap)
    if not counts:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    for tok in RESERVED_TOKENS:
        counts.pop(tok, None)
    kept = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(list(RESERVED_TOKENS) + kept)


@dataclass
class FrequencyStats:
    """Raw counts behind the inter/intra frequency ratios, keyed by token id."""

    token_count: dict[int, int]
    caption_count: int
    video_counts: dict[str, dict[int, int]]
    video_totals: dict[str, int]

    def inter_freq(self, tok: int) -> float:
        return self.token_count.get(tok, 0) / self.caption_count

    def intra_freq(self, tok: int, video_id: str) -> float:
        total = self.video_totals[video_id]
        return self.video_counts[video_id].get(tok, 0) / total if total else 0.0

    def mean_intra_freq(self, tok: int) -> float:
        """Arithmetic mean of intra-frequency over the videos containing ``tok``."""
        vals = [
            cnt[tok] / self.video_totals[vid]
            for vid, cnt in self.video_counts.items()
            if cnt.get(tok, 0) > 0
        ]
        return sum(vals) / len(vals) if vals else 0.0


def compute_frequency_stats(records: Sequence[CaptionRecord], vocab: Vocabulary) -> FrequencyStats:
    token_count: Counter = Counter()
    video_counts: dict[str, Counter] = defaultdict(Counter)
    n_caps = 0
    for rec in records:
        vc = video_counts[rec.video_id]
        for cap in rec.captions:
            n_caps += 1
            ids = vocab.encode(cap)
            token_count.update(ids)
            vc.update(ids)
    for counter in (token_count, *video_counts.values()):
        for r in (BOS, EOS, PAD):
            counter.pop(r, None)
    if n_caps == 0:
        raise CorpusError("corpus has no captions")
    return FrequencyStats(
        token_count=dict(token_count),
        caption_count=n_caps,
        video_counts={vid: dict(c) for vid, c in video_counts.items()},
        video_totals={vid: sum(c.values()) for vid, c in video_counts.items()},
    )


@dataclass
class FrequencyLabels:
    labels: dict[int, str]
    gamma: float
    delta: float

    def ids_with(self, label: str) -> list[int]:
        return sorted(i for i, lab in self.labels.items() if lab == label)

    @property
    def hft_ids(self) -> list[int]:
        return self.ids_with(HFT)

    @property
    def lft_ids(self) -> list[int]:
        return self.ids_with(LFT)

    @property
    def umt_ids(self) -> list[int]:
        return self.ids_with(UMT)

    def to_json(self, vocab: Vocabulary) -> dict:
        return {
            "gamma": self.gamma,
            "delta": self.delta,
            "labels": {vocab.id_to_token[i]: self.labels[i] for i in sorted(self.labels)},
        }

    @classmethod
    def from_json(cls, obj: dict, vocab: Vocabulary) -> "FrequencyLabels":
        labels = {vocab.token_to_id[t]: lab for t, lab in obj["labels"].items()}
        return cls(labels=labels, gamma=float(obj["gamma"]), delta=float(obj["delta"]))


def classify_tokens(stats: FrequencyStats, gamma: float, delta: float,
                    vocab_size: int | None = None) -> FrequencyLabels:
    """Label every non-reserved token HFT, LFT or UMT.

    Thresholds are inclusive on the high side. When ``vocab_size`` is given,
    tokens with no occurrences are labelled too (as LFT).
    """
    if not (0 < gamma <= 1 and 0 < delta <= 1):
        raise CorpusError(f"thresholds must lie in (0, 1], got gamma={gamma}, delta={delta}")
    ids = set(stats.token_count)
    if vocab_size is not None:
        ids.update(range(N_RESERVED, vocab_size))
    labels = {}
    for tok in sorted(ids):
        if tok < N_RESERVED:
            continue
        frequent = stats.inter_freq(tok) >= delta
        grounded = stats.mean_intra_freq(tok) >= gamma
        if grounded:
            labels[tok] = HFT if frequent else UMT
        else:
            labels[tok] = LFT
    return FrequencyLabels(labels=labels, gamma=gamma, delta=delta)


def encode_caption(tokens: Sequence[str], vocab: Vocabulary, t_max: int) -> list[int]:
    """``[BOS] + ids + [EOS]`` cut to ``t_max`` (keeping the EOS) and PAD-filled."""
    if t_max < 3:
        raise CorpusError("t_max must be >= 3")
    ids = vocab.encode(tokens)[: t_max - 2]
    seq = [BOS, *ids, EOS]
    return seq + [PAD] * (t_max - len(seq))


def frequency_report(stats: FrequencyStats, labels: FrequencyLabels, vocab: Vocabulary) -> dict:
    tok = vocab.id_to_token
    ids = sorted(labels.labels)
    total = sum(stats.token_count.values())
    summary = {}
    for lab in (HFT, LFT, UMT):
        members = labels.ids_with(lab)
        occ = sum(stats.token_count.get(i, 0) for i in members)
        summary[lab] = {
            "types": len(members),
            "occurrences": occ,
            "occurrence_share": occ / total if total else 0.0,
        }
    report = labels.to_json(vocab)
    report["stats"] = {
        "caption_count": stats.caption_count,
        "token_total": total,
        "token_count": {tok[i]: stats.token_count.get(i, 0) for i in ids},
        "inter_freq": {tok[i]: stats.inter_freq(i) for i in ids},
        "intra_freq_mean": {tok[i]: stats.mean_intra_freq(i) for i in ids},
        "video_token_total": dict(sorted(stats.video_totals.items())),
    }
    report["summary"] = summary
    return report


def summary_table(report: dict, top: int = 10) -> str:
    """Plain-text head/tail view of a frequency report."""
    counts = report["stats"]["token_count"]
    ranked = sorted(counts, key=lambda t: (-counts[t], t))
    lines = [f"gamma={report['gamma']} delta={report['delta']} "
             f"captions={report['stats']['caption_count']} tokens={report['stats']['token_total']}"]
    for lab, s in report["summary"].items():
        lines.append(f"{lab}: {s['types']:5d} types {s['occurrences']:7d} occ "
                     f"({100 * s['occurrence_share']:.1f}%)")
    lines.append("head: " + ", ".join(f"{t}:{counts[t]}({report['labels'][t]})" for t in ranked[:top]))
    lines.append("tail: " + ", ".join(f"{t}:{counts[t]}({report['labels'][t]})" for t in ranked[-top:]))
    return "\n".join(lines)
