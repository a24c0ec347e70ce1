import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from careerssm.errors import ValidationError
from careerssm.missingness import (
    ChainProbabilities,
    ModelVariant,
    ParticipationProbabilities,
    TransitionCounts,
    count_sufficient_stats,
    draw_missingness_params,
    pattern_loglik,
    pattern_loglik_matrix,
    pattern_stats,
    update_beta_params,
)

from oracles import career_sequences, chain_probability, participation_probability


def _counts_of(career, mask=None):
    career = np.asarray(career)[None]
    if mask is None:
        mask = np.zeros((1, 1, career.shape[1]), bool)
        mask[0, 0, career[0] == 1] = True
    return count_sufficient_stats(career, mask, np.array([0]), 1)


def test_transition_counts_example():
    c = _counts_of([0, 0, 1, 1, 1, 2, 2, 2])
    assert (c.n01[0], c.n00[0], c.n12[0], c.n11[0]) == (1, 2, 1, 2)


@pytest.mark.parametrize("T", [2, 5, 9])
def test_full_career_counts(T):
    c = _counts_of([1] * T)
    assert (c.n01[0], c.n00[0], c.n12[0], c.n11[0]) == (1, 0, 0, T - 1)


def test_participation_tally():
    mask = np.zeros((2, 1, 3), bool)
    mask[0, 0] = [True, False, True]
    mask[1, 0, 1] = True
    c = count_sufficient_stats(np.array([[1, 1, 1]]), mask, np.array([0]), 1)
    assert (c.obs[0, 0], c.miss[0, 0]) == (2, 1)
    assert (c.obs[1, 0], c.miss[1, 0]) == (1, 2)


def test_counts_by_group_and_inconsistency():
    careers = np.array([[0, 1, 1], [1, 1, 2], [1, 2, 2]])
    mask = np.zeros((1, 3, 3), bool)
    mask[0, 0, 1:] = mask[0, 1, :2] = mask[0, 2, 0] = True
    c = count_sufficient_stats(careers, mask, np.array([1, 0, 1]), 3)
    assert c.n01.tolist() == [1, 2, 0]
    assert c.n12.tolist() == [1, 1, 0]
    assert c.n11.tolist() == [1, 1, 0]
    assert c.n00.tolist() == [0, 1, 0]
    with pytest.raises(ValidationError):
        count_sufficient_stats(np.array([[0, 0, 2]]), mask[:, :1], np.array([0]), 1)


def test_no_missing_variant_is_zero():
    mask = np.array([[True, False, False]])
    assert pattern_loglik([1, 1, 2], mask, None, None, "no_missing") == 0.0


def test_chain_term_example():
    chain = ChainProbabilities(0.5, 0.5)
    mask = np.ones((1, 2), bool)
    assert pattern_loglik([1, 1], mask, chain, None, "history_only") == pytest.approx(2 * np.log(0.5))


def test_attitude_term_example():
    chain = ChainProbabilities(0.3, 0.2)
    part = ParticipationProbabilities(np.full(3, 0.25))
    mask = np.zeros((3, 2), bool)
    mask[0, 1] = True
    career = [0, 1]
    hist = pattern_loglik(career, mask, chain, part, "history_only")
    full = pattern_loglik(career, mask, chain, part, "complete")
    assert full - hist == pytest.approx(np.log(0.25) + 2 * np.log(0.75), abs=1e-14)
    assert hist == pytest.approx(np.log(0.7) + np.log(0.3), abs=1e-14)


def test_forbidden_patterns_have_zero_probability():
    chain = ChainProbabilities(0.4, 0.4)
    part = ParticipationProbabilities(np.array([0.5]))
    mask = np.zeros((1, 3), bool)
    mask[0, 0] = True
    assert pattern_loglik([1, 0, 0], mask, chain, part, "history_only") == -np.inf
    mask_out = np.zeros((1, 3), bool)
    mask_out[0, 2] = True
    assert pattern_loglik([1, 2, 2], mask_out, chain, part, "attitude_only") == -np.inf


def test_beta_updates():
    counts = TransitionCounts(
        n01=np.array([4, 0]), n00=np.array([6, 0]), n12=np.array([0, 0]), n11=np.array([0, 0]),
        obs=np.array([[0, 0]]), miss=np.array([[10, 0]]),
    )
    post = update_beta_params(counts)
    assert post.lambda1[0].tolist() == [5.0, 7.0]
    assert post.lambda1[1].tolist() == post.lambda2[1].tolist() == post.delta[0, 1].tolist() == [1.0, 1.0]
    a, b = post.delta[0, 0]
    assert (a, b) == (1.0, 11.0)
    assert a / (a + b) == pytest.approx(1 / 12)


def test_draws_respect_variant():
    counts = TransitionCounts(*(np.zeros(2, int) for _ in range(4)), obs=np.zeros((3, 2), int), miss=np.zeros((3, 2), int))
    post = update_beta_params(counts)
    rng = np.random.default_rng(0)
    chain, part = draw_missingness_params(post, "history_only", rng)
    assert part is None and chain.lambda1.shape == (2,)
    chain, part = draw_missingness_params(post, "attitude_only", rng)
    assert chain is None and part.delta.shape == (3, 2)
    assert ((part.delta > 0) & (part.delta < 1)).all()


@pytest.mark.parametrize("T,P", [(1, 1), (2, 1), (3, 2), (4, 1), (4, 2)])
def test_pattern_probabilities_sum_to_one(T, P):
    rng = np.random.default_rng(T * 10 + P)
    chain = ChainProbabilities(rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95))
    part = ParticipationProbabilities(rng.uniform(0.05, 0.95, P))
    total = 0.0
    for career in career_sequences(T):
        for bits in itertools.product([False, True], repeat=P * T):
            mask = np.array(bits).reshape(P, T)
            total += np.exp(pattern_loglik(career, mask, chain, part, "complete"))
    assert total == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("T", [2, 3, 4])
def test_pattern_loglik_matches_direct_product(T):
    rng = np.random.default_rng(T)
    lam1, lam2 = rng.uniform(0.1, 0.9, 2)
    delta = rng.uniform(0.1, 0.9, 2)
    chain, part = ChainProbabilities(lam1, lam2), ParticipationProbabilities(delta)
    for career in career_sequences(T):
        for bits in itertools.product([False, True], repeat=2 * T):
            mask = np.array(bits).reshape(2, T)
            want = chain_probability(career, lam1, lam2) * participation_probability(career, mask, delta)
            got = np.exp(pattern_loglik(career, mask, chain, part, "complete"))
            assert got == pytest.approx(want, abs=1e-14)


careers_st = st.integers(1, 6).flatmap(
    lambda T: st.tuples(st.integers(0, T), st.integers(0, T)).map(
        lambda ab: np.array([0] * min(ab) + [1] * (max(ab) - min(ab)) + [2] * (T - max(ab)), dtype=np.int8)
    )
)


@settings(max_examples=100, deadline=None)
@given(careers_st, st.integers(0, 2**18), st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.integers(0, 10_000))
def test_complete_is_sum_of_reduced(career, bits, lam1, lam2, seed):
    P, T = 3, career.size
    rng = np.random.default_rng(seed)
    mask = (np.array([(bits >> i) & 1 for i in range(P * T)], bool).reshape(P, T)) & (career == 1)
    chain = ChainProbabilities(lam1, lam2)
    part = ParticipationProbabilities(rng.uniform(0.01, 0.99, P))
    c = pattern_loglik(career, mask, chain, part, "complete")
    a = pattern_loglik(career, mask, chain, part, "attitude_only")
    h = pattern_loglik(career, mask, chain, part, "history_only")
    assert c == pytest.approx(a + h, abs=1e-12)


def test_matrix_form_matches_single_runner():
    rng = np.random.default_rng(5)
    Q, P, T, G = 6, 2, 5, 3
    careers = np.array([[0, 1, 1, 2, 2], [1, 1, 1, 1, 1], [0, 0, 0, 1, 1], [1, 2, 2, 2, 2], [0, 1, 2, 2, 2], [1, 1, 2, 2, 2]])
    mask = (rng.random((P, Q, T)) < 0.6) & (careers == 1)[None]
    lam1, lam2, delta = rng.random(G), rng.random(G), rng.random((P, G))
    stats = pattern_stats(careers, mask)
    for variant in ModelVariant:
        mat = pattern_loglik_matrix(stats, ChainProbabilities(lam1, lam2), ParticipationProbabilities(delta), variant, G)
        assert mat.shape == (Q, G)
        for q in range(Q):
            for g in range(G):
                single = pattern_loglik(
                    careers[q], mask[:, q], ChainProbabilities(lam1[g], lam2[g]),
                    ParticipationProbabilities(delta[:, g]), variant,
                )
                assert mat[q, g] == pytest.approx(single, abs=1e-12)


def test_variant_parsing():
    assert ModelVariant.parse("NM") is ModelVariant.NO_MISSING
    assert ModelVariant.parse("attitude-only") is ModelVariant.ATTITUDE_ONLY
    assert ModelVariant.parse("h") is ModelVariant.HISTORY_ONLY
    with pytest.raises(ValidationError):
        ModelVariant.parse("partial")
