import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cmkr.textiou import (BASIC_COLORS, ColorLexicon, extract_colors, iou_matrix, kl_loss,
                          matching_prob, normalize_targets, paired_kl_loss, regularization_targets,
                          text_iou)

color_sets = st.frozensets(st.sampled_from(BASIC_COLORS), max_size=5)


def test_extract_examples():
    assert extract_colors("a man with red top and black pants") == {"red", "black"}
    assert extract_colors("a man with dark blue short sleeves and light blue jeans") == {
        "dark blue", "light blue"}
    assert extract_colors("a person walking") == frozenset()


def test_extract_compound_consumes_tokens():
    assert extract_colors("light blue jeans") == {"light blue"}
    assert extract_colors("LIGHT Blue jeans, Red cap") == {"light blue", "red"}
    # "light" alone is a modifier, not a color.
    assert extract_colors("a light jacket") == frozenset()


def test_extract_custom_lexicon_prefers_longest():
    lex = ColorLexicon(("navy", "navy blue", "blue"))
    assert extract_colors("navy blue coat and blue hat", lex) == {"navy blue", "blue"}


def test_lexicon_validation(tmp_path):
    with pytest.raises(ValueError):
        ColorLexicon(())
    with pytest.raises(ValueError):
        ColorLexicon(("red", "Red"))
    path = tmp_path / "lex.txt"
    path.write_text("# palette\nteal\n\nmaroon  # deep red\n", encoding="utf-8")
    assert ColorLexicon.from_file(path).terms == ("teal", "maroon")
    path.write_text("# nothing\n", encoding="utf-8")
    with pytest.raises(ValueError):
        ColorLexicon.from_file(path)


def test_iou_examples():
    assert text_iou({"red"}, {"red"}) == 1.0
    assert text_iou({"red", "black"}, {"red", "blue"}) == pytest.approx(1 / 3, abs=1e-15)
    assert text_iou({"red"}, {"blue"}) == 0.0
    assert text_iou(set(), set()) == 0.0


@settings(max_examples=100, deadline=None)
@given(color_sets, color_sets)
def test_iou_properties(a, b):
    v = text_iou(a, b)
    assert v == text_iou(b, a)
    assert 0.0 <= v <= 1.0
    if a or b:
        assert (v == 1.0) == (a == b)


def test_targets_worked_example():
    sets = [{"red", "black"}, {"red", "black"}, {"red"}, {"blue"}, {"green"}]
    iou = iou_matrix(sets)
    np.testing.assert_allclose(iou[0], [1, 1, 0.5, 0, 0])
    np.testing.assert_allclose(regularization_targets(sets)[0], [0.4, 0.4, 0.2, 0, 0], atol=1e-15)
    np.testing.assert_allclose(normalize_targets([1, 1, 0.5, 0, 0]), [0.4, 0.4, 0.2, 0, 0], atol=1e-15)


def test_targets_degenerate_batches():
    assert regularization_targets([{"red"}]).tolist() == [[1.0]]
    np.testing.assert_array_equal(regularization_targets([set()] * 4), np.full((4, 4), 0.25))
    with pytest.raises(ValueError):
        regularization_targets([])


@settings(max_examples=60, deadline=None)
@given(st.lists(color_sets, min_size=1, max_size=8))
def test_targets_stochastic(sets):
    t = regularization_targets(sets)
    assert (t >= 0).all()
    np.testing.assert_allclose(t.sum(axis=1), 1.0, atol=1e-9)
    for n, s in enumerate(sets):
        if s:
            assert t[n, n] > 0


def test_matching_prob_limits():
    eye = np.eye(4, 6)
    np.testing.assert_allclose(matching_prob(eye, eye, 1e-3), np.eye(4), atol=1e-12)
    np.testing.assert_allclose(matching_prob(eye, eye, 1e6), np.full((4, 4), 0.25), atol=1e-6)


def test_matching_prob_rows_and_errors():
    rng = np.random.default_rng(0)
    p = matching_prob(rng.standard_normal((4, 8)), rng.standard_normal((4, 8)))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    with pytest.raises(ValueError):
        matching_prob(np.zeros((2, 3)), np.ones((2, 3)))
    with pytest.raises(ValueError):
        matching_prob(np.ones((2, 3)), np.ones((3, 3)))
    with pytest.raises(ValueError):
        matching_prob(np.ones((2, 3)), np.ones((2, 3)), temperature=0)


def scalar_kl(p, q, eps=1e-8):
    total = 0.0
    for n in range(len(p)):
        for m in range(len(p[n])):
            if p[n][m] > 0:
                total += p[n][m] * math.log(p[n][m] / (q[n][m] + eps))
    return total / len(p)


def test_kl_examples():
    rng = np.random.default_rng(1)
    p = rng.random((3, 3)) + 0.05
    p /= p.sum(axis=1, keepdims=True)
    assert abs(kl_loss(p, p)) < 1e-6
    assert kl_loss([[1.0, 0.0]], [[0.0, 1.0]]) == pytest.approx(math.log(1e8), rel=1e-12)
    q = rng.random((3, 3))
    q /= q.sum(axis=1, keepdims=True)
    assert kl_loss(p, q) == pytest.approx(scalar_kl(p.tolist(), q.tolist()), abs=1e-12)
    with pytest.raises(ValueError):
        kl_loss(np.ones((2, 2)) / 2, np.ones((2, 3)) / 3)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 6))
def test_kl_lower_bound(seed, n):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(n), size=n)
    q = rng.dirichlet(np.ones(n), size=n)
    assert kl_loss(p, q) >= -2 * n * 1e-8


def test_paired_loss_sums_four_terms():
    rng = np.random.default_rng(2)
    v, i = rng.standard_normal((3, 5)), rng.standard_normal((3, 5))
    q = regularization_targets([{"red"}, {"red", "blue"}, {"black"}])
    want = sum(kl_loss(matching_prob(a, b), q) for a, b in ((v, i), (i, v), (v, v), (i, i)))
    assert paired_kl_loss(v, i, q) == pytest.approx(want, abs=1e-12)
