"""Caption metrics: corpus BLEU-4, ROUGE-L, CIDEr and low-frequency recall.

Hypotheses map ``video_id -> tokens``; references map ``video_id -> list of
token lists``. Strings are tokenized with the corpus tokenizer. Scores are
reported on the usual percentage scale (CIDEr x 100, so a perfect CIDEr
reads 1000).
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

from .corpus import tokenize

Tokens = Sequence[str]


class MetricError(ValueError):
    pass


def _tok(x) -> list[str]:
    return tokenize(x) if isinstance(x, str) else list(x)


def _normalize(hypotheses: Mapping, references: Mapping) -> tuple[dict, dict]:
    if not hypotheses:
        raise MetricError("empty hypothesis set")
    hyps, refs = {}, {}
    for vid, h in hypotheses.items():
        if vid not in references or not references[vid]:
            raise MetricError(f"no references for {vid}")
        hyps[vid] = _tok(h)
        refs[vid] = [_tok(r) for r in references[vid]]
    return hyps, refs


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(hypotheses: Mapping, references: Mapping, max_n: int = 4) -> float:
    """Corpus BLEU with closest-reference brevity penalty; 0 if any precision is 0."""
    hyps, refs = _normalize(hypotheses, references)
    correct = [0] * max_n
    guess = [0] * max_n
    hyp_len = ref_len = 0
    for vid in sorted(hyps):
        h, rs = hyps[vid], refs[vid]
        hyp_len += len(h)
        ref_len += len(min(rs, key=lambda r: (abs(len(r) - len(h)), len(r))))
        for n in range(1, max_n + 1):
            counts = ngrams(h, n)
            maxref: Counter = Counter()
            for r in rs:
                maxref |= ngrams(r, n)
            correct[n - 1] += sum(min(c, maxref[g]) for g, c in counts.items())
            guess[n - 1] += max(0, len(h) - n + 1)
    if hyp_len == 0 or min(correct) == 0:
        return 0.0
    log_p = sum(math.log(c / g) for c, g in zip(correct, guess)) / max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1 - ref_len / hyp_len)
    return 100.0 * bp * math.exp(log_p)


def lcs_length(a: Tokens, b: Tokens) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_sentence(h: Tokens, refs: Sequence[Tokens], beta: float = 1.2) -> float:
    if not h:
        return 0.0
    lcs = [lcs_length(h, r) for r in refs]
    prec = max(l / len(h) for l in lcs)
    rec = max(l / len(r) for l, r in zip(lcs, refs) if r)
    if prec == 0 or rec == 0:
        return 0.0
    return (1 + beta**2) * prec * rec / (rec + beta**2 * prec)


def rouge_l(hypotheses: Mapping, references: Mapping, beta: float = 1.2) -> float:
    hyps, refs = _normalize(hypotheses, references)
    return 100.0 * sum(rouge_l_sentence(hyps[v], refs[v], beta) for v in sorted(hyps)) / len(hyps)


def _cider_scores(hyps: dict, refs: dict, max_n: int = 4) -> dict[str, float]:
    n_docs = len(refs)
    if n_docs < 2:
        raise MetricError("IDF undefined: CIDEr needs at least two videos")
    df: Counter = Counter()
    for rs in refs.values():
        seen = set()
        for r in rs:
            for n in range(1, max_n + 1):
                seen.update(ngrams(r, n))
        df.update(seen)
    log_n = math.log(n_docs)

    def vec(tokens, n):
        return {g: c * (log_n - math.log(max(1, df[g]))) for g, c in ngrams(tokens, n).items()}

    def cos(a, b):
        na = math.sqrt(sum(v * v for v in a.values()))
        nb = math.sqrt(sum(v * v for v in b.values()))
        if na == 0 or nb == 0:
            return 0.0
        return sum(v * b.get(g, 0.0) for g, v in a.items()) / (na * nb)

    out = {}
    for vid in sorted(hyps):
        total = 0.0
        for n in range(1, max_n + 1):
            hv = vec(hyps[vid], n)
            total += sum(cos(hv, vec(r, n)) for r in refs[vid]) / len(refs[vid])
        out[vid] = 10.0 * total / max_n
    return out


def cider(hypotheses: Mapping, references: Mapping) -> float:
    """Plain CIDEr (TF-IDF n-gram cosine, n = 1..4, x10), reported x100.

    Document frequencies come from the references of the hypotheses' videos.
    """
    hyps, refs = _normalize(hypotheses, references)
    scores = _cider_scores(hyps, refs)
    return 100.0 * sum(scores.values()) / len(scores)


def lft_recall_per_video(hypotheses: Mapping, references: Mapping,
                         lft_tokens: Iterable[str]) -> dict[str, float]:
    lft = set(lft_tokens)
    hyps, refs = _normalize(hypotheses, references)
    out = {}
    for vid in sorted(hyps):
        wanted = {t for r in refs[vid] for t in r} & lft
        if wanted:
            out[vid] = len(wanted & set(hyps[vid])) / len(wanted)
    return out


def lft_recall(hypotheses: Mapping, references: Mapping, lft_tokens: Iterable[str]) -> float:
    """Share of reference LFT types reproduced, averaged over videos that have any."""
    per = lft_recall_per_video(hypotheses, references, lft_tokens)
    return sum(per.values()) / len(per) if per else 0.0


@dataclass
class EvalReport:
    bleu4: float
    rouge_l: float
    cider: float
    lft_recall: float
    per_video: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    def row(self) -> dict[str, float]:
        return {"B-4": self.bleu4, "M": None, "R": self.rouge_l, "C": self.cider, "LFT-R": self.lft_recall}


def evaluate(hypotheses: Mapping, references: Mapping, lft_tokens: Iterable[str] = ()) -> EvalReport:
    hyps, refs = _normalize(hypotheses, references)
    lft_tokens = set(lft_tokens)
    cid = _cider_scores(hyps, refs)
    lft_per = lft_recall_per_video(hyps, refs, lft_tokens)
    per_video = {}
    for vid in sorted(hyps):
        entry = {
            "bleu4": bleu4({vid: hyps[vid]}, {vid: refs[vid]}),
            "rouge_l": 100.0 * rouge_l_sentence(hyps[vid], refs[vid]),
            "cider": 100.0 * cid[vid],
        }
        if vid in lft_per:
            entry["lft_recall"] = lft_per[vid]
        per_video[vid] = entry
    return EvalReport(
        bleu4=bleu4(hyps, refs),
        rouge_l=100.0 * sum(rouge_l_sentence(hyps[v], refs[v]) for v in sorted(hyps)) / len(hyps),
        cider=100.0 * sum(cid.values()) / len(cid),
        lft_recall=sum(lft_per[v] for v in sorted(lft_per)) / len(lft_per) if lft_per else 0.0,
        per_video=per_video,
    )


def format_table(rows: Mapping[str, EvalReport | Mapping], title: str = "Method") -> str:
    """Aligned text table with B-4, M, R, C columns plus LFT recall."""
    cols = ["B-4", "M", "R", "C", "LFT-R"]
    width = max([len(title)] + [len(k) for k in rows])
    lines = [f"{title:<{width}}  " + "  ".join(f"{c:>7}" for c in cols)]
    for name, rep in rows.items():
        vals = rep.row() if isinstance(rep, EvalReport) else rep
        cells = []
        for c in cols:
            v = vals.get(c)
            if v is None:
                cells.append(f"{'-':>7}")
            elif c == "LFT-R":
                cells.append(f"{v:7.3f}")
            else:
                cells.append(f"{v:7.1f}")
        lines.append(f"{name:<{width}}  " + "  ".join(cells))
    return "\n".join(lines)
