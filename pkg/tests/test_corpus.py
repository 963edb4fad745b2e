import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from conftest import by_video, labels_for, random_records, write_jsonl
import oracles
from freqcap.corpus import (BOS, EOS, HFT, LFT, PAD, UMT, UNK, CaptionRecord, CorpusError,
                            build_vocabulary, classify_tokens, compute_frequency_stats, encode_caption,
                            frequency_report, ingest_dataset, tokenize)

GRID = [0.01, 0.05, 0.1, 0.3, 1.0]


def planted_corpus():
    """~1000 captions where every label class is populated at gamma=0.015, delta=0.0015."""
    recs = []
    for v in range(100):
        caps = [["a", "man", "walks", "the", "dog", "in", "a", "park"] for _ in range(10)]
        if v == 0:
            caps[0] = caps[0] + ["kayak"]
        recs.append(CaptionRecord(f"bulk{v}", caps))
    recs.append(CaptionRecord("odd", [["zebra", "sings"]]))
    return recs


class TestIngest:
    def test_single_line(self, tmp_path):
        path = write_jsonl(tmp_path / "d.jsonl", [{"video_id": "v1", "captions": ["A man swims."]}])
        (rec,) = ingest_dataset(path)
        assert rec.video_id == "v1"
        assert rec.captions == [["a", "man", "swims"]]

    def test_three_lines(self, tmp_path):
        rows = [{"video_id": f"v{i}", "captions": ["x y"], "feature_file": f"f{i}.bin"} for i in range(3)]
        recs = ingest_dataset(write_jsonl(tmp_path / "d.jsonl", rows))
        assert [r.video_id for r in recs] == ["v0", "v1", "v2"]
        assert recs[2].feature_file == "f2.bin"

    def test_empty_captions(self, tmp_path):
        path = write_jsonl(tmp_path / "d.jsonl", [{"video_id": "v1", "captions": []}])
        with pytest.raises(CorpusError, match="empty captions for v1"):
            ingest_dataset(path)

    def test_malformed_line_number(self, tmp_path):
        path = write_jsonl(tmp_path / "d.jsonl", [{"video_id": "v1", "captions": ["ok"]}, "{not json"])
        with pytest.raises(CorpusError, match="line 2"):
            ingest_dataset(path)

    def test_caption_empty_after_tokenization(self, tmp_path):
        path = write_jsonl(tmp_path / "d.jsonl", [{"video_id": "v9", "captions": ["fine", "?!."]}])
        with pytest.raises(CorpusError, match="v9"):
            ingest_dataset(path)

    def test_tokenize_punctuation(self):
        assert tokenize("A dog, running; FAST!") == ["a", "dog", "running", "fast"]


class TestVocabulary:
    def test_min_count_one(self):
        vocab = build_vocabulary([CaptionRecord("v", [["a", "a", "b"]])], 1)
        assert vocab.d_e == 6
        assert vocab.id_to_token[4:] == ["a", "b"]

    def test_min_count_two(self):
        vocab = build_vocabulary([CaptionRecord("v", [["a", "a", "b"]])], 2)
        assert vocab.d_e == 5
        assert vocab.lookup("b") == UNK
        assert vocab.lookup("a") == 4

    def test_order_matches_counting_oracle(self, toy_corpus):
        vocab = build_vocabulary(toy_corpus)
        assert vocab.id_to_token[4:] == oracles.vocab_order(by_video(toy_corpus))

    @pytest.mark.parametrize("seed", range(5))
    def test_order_random(self, seed):
        recs = random_records(seed)
        assert build_vocabulary(recs).id_to_token[4:] == oracles.vocab_order(by_video(recs))

    def test_errors(self):
        with pytest.raises(CorpusError):
            build_vocabulary([])
        with pytest.raises(CorpusError):
            build_vocabulary([CaptionRecord("v", [["a"]])], 0)

    def test_bijective(self, toy_corpus):
        vocab = build_vocabulary(toy_corpus)
        for i, tok in enumerate(vocab.id_to_token):
            assert vocab.token_to_id[tok] == i


class TestStats:
    def test_hand_count(self):
        recs = [CaptionRecord("v", [["a", "a", "b"]])]
        vocab = build_vocabulary(recs)
        s = compute_frequency_stats(recs, vocab)
        a = vocab.lookup("a")
        assert s.token_count[a] == 2
        assert s.caption_count == 1
        assert s.inter_freq(a) == 2.0
        assert s.intra_freq(a, "v") == pytest.approx(2 / 3)

    def test_two_videos(self):
        recs = [CaptionRecord("v1", [["a", "b"]]), CaptionRecord("v2", [["a", "b"]])]
        vocab = build_vocabulary(recs)
        s = compute_frequency_stats(recs, vocab)
        assert s.intra_freq(vocab.lookup("a"), "v1") == 0.5
        assert s.intra_freq(vocab.lookup("a"), "v2") == 0.5

    def test_unk_counted_reserved_excluded(self):
        recs = [CaptionRecord("v", [["a", "a", "b"]])]
        vocab = build_vocabulary(recs, 2)
        s = compute_frequency_stats(recs, vocab)
        assert s.token_count[UNK] == 1
        assert all(r not in s.token_count for r in (BOS, EOS, PAD))

    def test_ten_video_fixture_matches_brute_force(self):
        recs = random_records(11, max_captions=50)
        while len(recs) < 10:
            recs.append(CaptionRecord(f"extra{len(recs)}", [["a", "zebra"]]))
        vocab = build_vocabulary(recs)
        s = compute_frequency_stats(recs, vocab)
        tok_count, n_caps, vid_count, vid_total = oracles.brute_stats(by_video(recs))
        assert s.caption_count == n_caps
        assert {vocab.id_to_token[i]: c for i, c in s.token_count.items()} == tok_count
        assert s.video_totals == vid_total
        for vid in vid_count:
            assert {vocab.id_to_token[i]: c for i, c in s.video_counts[vid].items()} == vid_count[vid]
            for tok in vid_count[vid]:
                assert s.intra_freq(vocab.lookup(tok), vid) == vid_count[vid][tok] / vid_total[vid]

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_count_conservation(self, seed):
        recs = random_records(seed)
        s = compute_frequency_stats(recs, build_vocabulary(recs))
        assert sum(s.token_count.values()) == sum(len(c) for r in recs for c in r.captions)
        for vid, counts in s.video_counts.items():
            assert sum(counts.values()) == s.video_totals[vid]
            assert all(0 <= s.intra_freq(t, vid) <= 1 for t in counts)


class TestClassify:
    def test_maximal_frequency_is_hft(self):
        _, labels = labels_for([CaptionRecord("v", [["a", "a", "a"]])], 0.015, 0.0015)
        assert labels.labels == {4: HFT}

    @pytest.mark.parametrize("other_tokens,expected", [(["b"], UMT), (["b"] * 99, LFT)])
    def test_single_occurrence_in_10k_captions(self, other_tokens, expected):
        # intra of 'rare' is 1/2 = 0.5 (UMT) or 1/100 = 0.01 (LFT); inter = 1e-4 < delta
        recs = [CaptionRecord(f"v{i}", [["x", "y"]] * 10) for i in range(999)]
        recs.append(CaptionRecord("last", [["rare", *other_tokens]] + [["z"]] * 9))
        vocab, labels = labels_for(recs, 0.015, 0.0015)
        assert sum(len(r.captions) for r in recs) == 10_000
        stats = compute_frequency_stats(recs, vocab)
        assert stats.inter_freq(vocab.lookup("rare")) == pytest.approx(1e-4)
        assert labels.labels[vocab.lookup("rare")] == expected

    def test_planted_fixture_matches_oracle(self):
        recs = planted_corpus()
        vocab, labels = labels_for(recs, 0.015, 0.0015)
        got = {vocab.id_to_token[i]: lab for i, lab in labels.labels.items()}
        assert got == oracles.brute_labels(by_video(recs), 0.015, 0.0015)
        assert got["a"] == HFT and got["kayak"] == LFT and got["zebra"] == UMT

    def test_threshold_inclusive(self):
        # inter(a) = 1.0 and intra(a) = 0.5 exactly
        recs = [CaptionRecord("v", [["a", "b"]])]
        vocab, labels = labels_for(recs, 0.5, 1.0)
        assert labels.labels[vocab.lookup("a")] == HFT

    def test_gamma_one_needs_whole_video(self):
        recs = [CaptionRecord("solo", [["a", "a"]]), CaptionRecord("mix", [["a", "b"]])]
        vocab, labels = labels_for(recs, 1.0, 0.0015)
        # 'b' fills half of 'mix'; 'a' averages (1.0 + 0.5) / 2
        assert labels.labels[vocab.lookup("b")] == LFT
        assert labels.labels[vocab.lookup("a")] == LFT
        vocab, labels = labels_for([CaptionRecord("solo", [["a", "a"]])], 1.0, 0.0015)
        assert labels.labels[vocab.lookup("a")] == HFT

    def test_bad_thresholds(self, toy_corpus):
        vocab = build_vocabulary(toy_corpus)
        s = compute_frequency_stats(toy_corpus, vocab)
        for g, d in [(0, 0.1), (0.1, 0), (1.5, 0.1)]:
            with pytest.raises(CorpusError):
                classify_tokens(s, g, d)

    @given(seed=st.integers(0, 10_000), gi=st.integers(0, 4), di=st.integers(0, 4))
    @settings(max_examples=60, deadline=None)
    def test_partition_and_order_invariance(self, seed, gi, di):
        recs = random_records(seed)
        vocab, labels = labels_for(recs, GRID[gi], GRID[di])
        assert set(labels.labels) == set(range(4, vocab.d_e))
        assert set(labels.labels.values()) <= {HFT, LFT, UMT}
        shuffled = recs[:]
        random.Random(seed).shuffle(shuffled)
        _, labels2 = labels_for(shuffled, GRID[gi], GRID[di])
        names = lambda lab, v: {v.id_to_token[i]: x for i, x in lab.labels.items()}
        assert names(labels2, build_vocabulary(shuffled)) == names(labels, vocab)

    @given(seed=st.integers(0, 10_000), i=st.integers(0, 4), j=st.integers(0, 4), k=st.integers(0, 4))
    @settings(max_examples=60, deadline=None)
    def test_monotonicity(self, seed, i, j, k):
        recs = random_records(seed)
        lo, hi = sorted((GRID[i], GRID[j]))
        fixed = GRID[k]
        _, by_delta_lo = labels_for(recs, fixed, lo)
        _, by_delta_hi = labels_for(recs, fixed, hi)
        _, by_gamma_lo = labels_for(recs, lo, fixed)
        _, by_gamma_hi = labels_for(recs, hi, fixed)
        for t, lab in by_delta_lo.labels.items():
            if lab == LFT:
                assert by_delta_hi.labels[t] != HFT
        for t, lab in by_gamma_lo.labels.items():
            if lab == LFT:
                assert by_gamma_hi.labels[t] == LFT


class TestEncode:
    def test_short(self):
        vocab = build_vocabulary([CaptionRecord("v", [["a"]])])
        assert encode_caption(["a"], vocab, 4) == [BOS, vocab.lookup("a"), EOS, PAD]

    def test_truncation(self):
        vocab = build_vocabulary([CaptionRecord("v", [["a", "b"]])])
        seq = encode_caption(["a", "b"] * 20, vocab, 30)
        assert len(seq) == 30 and seq[-1] == EOS and seq[0] == BOS

    def test_unknown(self):
        vocab = build_vocabulary([CaptionRecord("v", [["a"]])])
        assert encode_caption(["a", "nope"], vocab, 5) == [BOS, 4, UNK, EOS, PAD]

    def test_t_max_too_small(self):
        vocab = build_vocabulary([CaptionRecord("v", [["a"]])])
        with pytest.raises(CorpusError):
            encode_caption(["a"], vocab, 2)


def test_frequency_report_roundtrips_json():
    recs = planted_corpus()
    vocab, labels = labels_for(recs, 0.015, 0.0015)
    report = frequency_report(compute_frequency_stats(recs, vocab), labels, vocab)
    again = json.loads(json.dumps(report))
    assert again["gamma"] == 0.015 and again["delta"] == 0.0015
    assert set(again["labels"].values()) == {HFT, LFT, UMT}
    assert again["stats"]["caption_count"] == 1001
    assert sum(s["types"] for s in again["summary"].values()) == vocab.d_e - 4
