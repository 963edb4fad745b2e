import itertools

import pytest
import torch

from conftest import tiny_model
from freqcap.corpus import BOS, EOS, PAD
from freqcap.generation import BANNED, beam_search, greedy_decode, sequence_logprob

D_E, T_MAX = 8, 4


def exhaustive_best(model, feats, d_e=D_E, t_max=T_MAX):
    """Enumerate every sequence beam search could emit and score it by teacher forcing."""
    allowed = [t for t in range(d_e) if t not in BANNED]
    best = None
    for L in range(1, t_max):
        for seq in itertools.product(allowed, repeat=L):
            if EOS in seq[:-1] or (seq[-1] != EOS and L != t_max - 1):
                continue
            score = sequence_logprob(model, feats, list(seq)) / L
            if best is None or score > best[0]:
                best = (score, list(seq))
    return best


def model64(seed):
    return tiny_model(seed, d_e=D_E, t_max=T_MAX, dtype=torch.float64)


@pytest.mark.parametrize("seed", range(20))
def test_beam_ordering_against_exhaustive(seed):
    model, feats = model64(seed)
    best, _ = exhaustive_best(model, feats)
    b5 = beam_search(model, feats, 5, T_MAX)
    b1 = beam_search(model, feats, 1, T_MAX)
    assert best >= b5.score - 1e-9
    assert b5.score >= b1.score - 1e-9


@pytest.mark.parametrize("seed", range(20))
def test_beam_one_is_greedy(seed):
    model, feats = model64(seed)
    b1 = beam_search(model, feats, 1, T_MAX)
    g = greedy_decode(model, feats, T_MAX)
    assert b1.tokens == g.tokens
    assert b1.logprob == g.logprob


def test_wide_beam_finds_exhaustive_optimum():
    # a beam as wide as the vocabulary squared covers every prefix of length 2
    model, feats = model64(3)
    best, seq = exhaustive_best(model, feats)
    hyp = beam_search(model, feats, 64, T_MAX)
    assert hyp.score == pytest.approx(best, abs=1e-9)
    assert hyp.tokens == seq


def test_scores_match_teacher_forcing():
    model, feats = model64(4)
    hyp = beam_search(model, feats, 5, T_MAX)
    assert hyp.logprob == pytest.approx(sequence_logprob(model, feats, hyp.tokens), abs=1e-9)
    assert hyp.score == pytest.approx(hyp.logprob / len(hyp.tokens))


@pytest.mark.parametrize("seed", range(5))
def test_length_and_banned_tokens(seed):
    model, feats = tiny_model(seed, d_e=10, t_max=6)
    hyp = beam_search(model, feats, 3, 6)
    assert 1 <= len(hyp.tokens) <= 5
    assert BOS not in hyp.tokens and PAD not in hyp.tokens
    assert EOS not in hyp.tokens[:-1]
    assert len(hyp.step_probs) == len(hyp.tokens)
    for p in hyp.step_probs:
        assert p[BOS] == 0 and p[PAD] == 0


def test_deterministic():
    model, feats = tiny_model(5)
    a = beam_search(model, feats, 5, T_MAX)
    b = beam_search(model, feats, 5, T_MAX)
    assert a.tokens == b.tokens and a.logprob == b.logprob


def test_generation_does_not_need_divergent_head():
    model, feats = tiny_model(6)
    before = beam_search(model, feats, 5, T_MAX)
    del model.dss
    after = beam_search(model, feats, 5, T_MAX)
    assert before.tokens == after.tokens and before.logprob == after.logprob


def test_dropout_inactive_during_generation():
    torch.manual_seed(0)
    model, feats = tiny_model(7)
    model.block.ffn_drop.p = 0.9
    model.train()
    a = beam_search(model, feats, 3, T_MAX)
    b = beam_search(model, feats, 3, T_MAX)
    assert a.tokens == b.tokens and a.logprob == b.logprob
