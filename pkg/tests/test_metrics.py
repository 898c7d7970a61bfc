import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hltm.errors import EmptyGold, UnknownEntity
from hltm.eval.metrics import bleu1, leakage, mean_se, retrieval_prf, token_f1
from conftest import small_tree

words = st.lists(st.sampled_from(["a", "b", "c", "d", "sf", "bay", "area"]), min_size=1, max_size=8)


def test_token_f1_examples():
    assert token_f1("SF Bay Area", "sf bay area") == 1.0
    assert token_f1("a b", "b c") == 0.5
    assert token_f1("x y", "a b") == 0.0
    with pytest.raises(EmptyGold):
        token_f1("a", "  ")


def test_bleu1_examples():
    assert bleu1("the cat", "the cat") == 1.0
    assert bleu1("a a a", "a b") == pytest.approx(1 / 3)
    assert bleu1("", "a b") == 0.0
    # brevity penalty: 1 token against 2 -> exp(1 - 2/1)
    assert bleu1("a", "a b") == pytest.approx(2.718281828459045 ** -1)
    with pytest.raises(EmptyGold):
        bleu1("a", "")


def test_retrieval_prf_examples():
    assert retrieval_prf({"p1"}, {"p1"}) == (1.0, 1.0, 1.0)
    p, r, f = retrieval_prf({"p1", "p2", "x"}, {"p1", "p2"})
    assert (p, r, f) == pytest.approx((2 / 3, 1.0, 0.8))
    assert retrieval_prf({"x"}, {"p1"}) == (0.0, 0.0, 0.0)
    with pytest.raises(EmptyGold):
        retrieval_prf({"x"}, set())


def test_leakage_examples():
    t, ids = small_tree()
    in_scope = [(ids["s1"], {"p1": ids["p1"], "p2": ids["p2"]})]
    assert leakage(in_scope, t) == (0.0, 0.0)
    run = [(ids["s1"], {"a": ids["p1"], "b": ids["p2"], "c": ids["s1"], "d": ids["p3"]}),
           (ids["s2"], {"e": ids["p3"]})]
    assert leakage(run, t) == (0.5, 0.125)
    assert leakage([(ids["p1"], {})], t) == (0.0, 0.0)
    assert leakage([], t) == (0.0, 0.0)
    with pytest.raises(UnknownEntity):
        leakage([(ids["s1"], {"ghost": None})], t)


@settings(max_examples=100, deadline=None)
@given(words, words, st.randoms())
def test_metrics_permutation_and_whitespace_invariant(pred, gold, rnd):
    p2, g2 = pred[:], gold[:]
    rnd.shuffle(p2)
    rnd.shuffle(g2)
    assert token_f1(" ".join(pred), " ".join(gold)) == pytest.approx(token_f1(" ".join(p2), " ".join(g2)))
    assert bleu1(" ".join(pred), " ".join(gold)) == pytest.approx(bleu1(" ".join(p2), " ".join(g2)))
    assert token_f1("  ".join(pred) + "\n", "\t".join(gold)) == token_f1(" ".join(pred), " ".join(gold))
    assert 0.0 <= token_f1(" ".join(pred), " ".join(gold)) <= 1.0
    assert 0.0 <= bleu1(" ".join(pred), " ".join(gold)) <= 1.0


@settings(max_examples=100, deadline=None)
@given(st.sets(st.integers(0, 9)), st.sets(st.integers(0, 9), min_size=1))
def test_prf_bounds(pred, gold):
    p, r, f = retrieval_prf(pred, gold)
    assert 0 <= p <= 1 and 0 <= r <= 1 and 0 <= f <= 1
    assert retrieval_prf(list(reversed(sorted(pred))), gold) == (p, r, f)


def test_mean_se():
    assert mean_se([2.0, 2.0]) == {"mean": 2.0, "se": 0.0, "n": 2}
    s = mean_se([1.0, 3.0])
    assert s["mean"] == 2.0 and s["se"] == pytest.approx(1.0)
    assert mean_se([5.0]) == {"mean": 5.0, "se": 0.0, "n": 1}
    assert mean_se([]) == {"mean": None, "se": None, "n": 0}
