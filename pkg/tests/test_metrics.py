import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import make_codebook, make_dialogue, make_labels, make_seg
from dialseg.core import BoundarySet, RaterLabels
from dialseg.errors import UndefinedDistributionError, ValidationError
from dialseg.metrics import (
    EvalConfig,
    _length_weighted,
    adjacent_js,
    bootstrap_ci,
    boundary_change_rate,
    evaluate_corpus,
    granularity_stats,
    human_ai_js,
    js_divergence,
    normalized_entropy,
    purity,
    segment_distribution,
    weighted_entropy,
    weighted_purity,
)

# Frozen from tests/oracles.py (independent evaluation of the JS formula).
JS_HALF_VS_POINT = 0.31127812445913283
SOFT_09_05 = 0.9820137900379085


class TestDistributions:
    def test_counts(self):
        cb = make_codebook(("A", "B"), none=False)
        np.testing.assert_allclose(
            segment_distribution(range(3), make_labels(["A", "A", "B"]), cb), [2 / 3, 1 / 3], atol=1e-15
        )

    def test_none_category(self):
        cb = make_codebook(("A", "B"), none=True)
        np.testing.assert_allclose(
            segment_distribution(range(3), make_labels(["A", None, None]), cb), [1 / 3, 0, 2 / 3], atol=1e-15
        )

    def test_all_unlabeled_excluded(self):
        cb = make_codebook(("A", "B"), none=False)
        with pytest.raises(UndefinedDistributionError):
            segment_distribution(range(2), make_labels([None, None]), cb)

    @pytest.mark.parametrize(
        "p,expected", [([1, 0, 0, 0], 0.0), ([0.25] * 4, 1.0), ([0.5, 0.5, 0, 0], 0.5)]
    )
    def test_normalized_entropy(self, p, expected):
        assert normalized_entropy(p, 4) == expected

    def test_entropy_needs_two_categories(self):
        with pytest.raises(ValidationError):
            normalized_entropy([1.0], 1)

    @pytest.mark.parametrize("p,expected", [([1, 0], 1.0), ([0.25] * 4, 0.25), ([0.6, 0.3, 0.1], 0.6)])
    def test_purity(self, p, expected):
        assert purity(p) == expected

    def test_js_examples(self):
        assert js_divergence([0.3, 0.7], [0.3, 0.7]) == 0.0
        assert js_divergence([1, 0], [0, 1]) == 1.0
        assert js_divergence([0.5, 0.5], [1, 0]) == pytest.approx(JS_HALF_VS_POINT, abs=1e-12)

    def test_js_shape_mismatch(self):
        with pytest.raises(ValidationError):
            js_divergence([1, 0], [1, 0, 0])

    @settings(max_examples=300)
    @given(st.integers(2, 12), st.integers(0, 2**32 - 1))
    def test_js_symmetric_and_bounded(self, C, seed):
        rng = np.random.default_rng(seed)
        p, q = rng.dirichlet(np.ones(C)), rng.dirichlet(np.ones(C))
        a, b = js_divergence(p, q), js_divergence(q, p)
        assert abs(a - b) <= 1e-12
        assert 0.0 <= a <= 1.0

    @pytest.mark.parametrize("C", range(2, 40))
    def test_uniform_is_exactly_one(self, C):
        assert normalized_entropy(np.full(C, 1.0 / C), C) == 1.0
        assert purity(np.full(C, 1.0 / C)) == 1.0 / C


class TestWeighted:
    def test_two_pure_segments(self):
        cb = make_codebook(("A", "B"), none=False)
        lab = make_labels(["A", "A", "B", "B"])
        seg = make_seg([1], 4)
        assert weighted_entropy(seg, lab, cb) == 0.0
        assert weighted_purity(seg, lab, cb) == 1.0

    def test_one_uniform_segment(self):
        cb = make_codebook(("A", "B", "C", "D"), none=False)
        lab = make_labels(["A", "B", "C", "D"])
        seg = make_seg([], 4)
        assert weighted_entropy(seg, lab, cb) == 1.0
        assert weighted_purity(seg, lab, cb) == 0.25

    def test_three_to_one_weighting(self):
        # weights 3/4 and 1/4 on entropies 0 and 1
        assert _length_weighted([0.0, 1.0], np.array([3, 1]), np.array([True, True])) == 0.25
        cb = make_codebook(("A", "B"), none=False)
        lab = make_labels(["A"] * 6 + ["A", "B"])
        assert weighted_entropy(make_seg([5], 8), lab, cb) == 0.25

    def test_adjacent_identical(self):
        cb = make_codebook(("A", "B"), none=False)
        assert adjacent_js(make_seg([1], 4), make_labels(["A", "B", "A", "B"]), cb) == 0.0

    def test_adjacent_disjoint(self):
        cb = make_codebook(("A", "B"), none=False)
        seg, lab = make_seg([1], 4), make_labels(["A", "A", "B", "B"])
        # pair weight (2 + 2) / (2 * 4) = 0.5 as printed; the normalized variant reaches 1.0
        assert adjacent_js(seg, lab, cb) == 0.5
        assert adjacent_js(seg, lab, cb, normalized=True) == 1.0

    def test_adjacent_unnormalized_weights(self):
        cb = make_codebook(("A", "B"), none=False)
        lab = make_labels(["A", "A", "B", "B", "B", "B"])
        assert adjacent_js(make_seg([1, 3], 6), lab, cb) == pytest.approx(1 / 3, abs=1e-15)
        assert adjacent_js(make_seg([1, 3], 6), lab, cb, normalized=True) == pytest.approx(0.5, abs=1e-15)

    def test_adjacent_single_segment_undefined(self):
        assert adjacent_js(make_seg([], 3), make_labels(["A"] * 3), make_codebook()) is None

    @pytest.mark.parametrize(
        "labels,bounds,expected",
        [(["A", "A", "B", "B", "C"], [1, 3], 1.0), (["A", "A", "A"], [0], 0.0), (["A", "B", "B", "B"], [0, 1], 0.5)],
    )
    def test_bcr(self, labels, bounds, expected):
        cb = make_codebook(("A", "B", "C"))
        assert boundary_change_rate(make_seg(bounds, len(labels)), make_labels(labels), cb) == expected

    def test_bcr_no_boundaries(self):
        assert boundary_change_rate(make_seg([], 3), make_labels(["A"] * 3), make_codebook()) is None

    def test_human_ai(self):
        cb = make_codebook(("A", "B"), none=False)
        seg = make_seg([], 2)
        assert human_ai_js(seg, make_labels(["A", "B"]), make_labels(["A", "B"]), cb) == 0.0
        assert human_ai_js(seg, make_labels(["A", "A"]), make_labels(["B", "B"]), cb) == 1.0
        assert human_ai_js(seg, make_labels(["A", "A"]), make_labels(["A", "B"]), cb) == pytest.approx(
            JS_HALF_VS_POINT, abs=1e-12
        )

    def test_all_undefined_is_none(self):
        cb = make_codebook(("A", "B"), none=False)
        lab = make_labels([None, None, None])
        assert weighted_entropy(make_seg([0], 3), lab, cb) is None
        assert weighted_purity(make_seg([0], 3), lab, cb) is None

    def test_exclude_mode_drops_and_renormalizes(self):
        cb = make_codebook(("A", "B"), none=False)
        lab = make_labels(["A", "B", None, None])
        # second segment undefined; first carries all weight
        assert weighted_purity(make_seg([1], 4), lab, cb) == 0.5


class TestGranularity:
    def test_constant(self):
        assert granularity_stats([5, 5, 5]) == (5.0, 0.0)

    def test_sample_sd(self):
        mean, sd = granularity_stats([4, 6])
        assert mean == 5.0
        assert sd == pytest.approx(math.sqrt(2), abs=1e-12)

    def test_single(self):
        assert granularity_stats([7]) == (7.0, None)

    def test_merge_drops_k_by_one(self):
        assert BoundarySet((1, 3, 5), 8).K - BoundarySet((1, 5), 8).K == 1


class TestBootstrap:
    def test_constant(self):
        assert bootstrap_ci([0.4] * 50) == (0.4, 0.4)

    def test_deterministic(self):
        x = np.random.default_rng(3).random(40)
        assert bootstrap_ci(x, seed=7) == bootstrap_ci(x, seed=7)
        assert bootstrap_ci(x, seed=7) != bootstrap_ci(x, seed=8)

    def test_too_few(self):
        assert bootstrap_ci([0.3]) is None
        assert bootstrap_ci([]) is None

    def test_iterations_floor(self):
        with pytest.raises(ValidationError):
            bootstrap_ci([0.1, 0.2], iterations=999)

    def test_interval_brackets_mean(self):
        x = np.random.default_rng(5).normal(0.5, 0.1, 60)
        lo, hi = bootstrap_ci(x)
        assert lo < x.mean() < hi


def _random_case(rng, max_T=8, max_K=4, max_C=3):
    T = int(rng.integers(1, max_T + 1))
    C = int(rng.integers(1, max_C + 1))
    moves = [f"m{c}" for c in range(C)]
    n_b = int(rng.integers(0, min(max_K, T) ))
    bounds = sorted(rng.choice(np.arange(max(T - 1, 1)), size=min(n_b, T - 1), replace=False).tolist()) if T > 1 else []
    none = bool(rng.integers(0, 2))
    if not none and C < 2:
        none = True

    def labels():
        return [None if rng.random() < 0.3 else moves[int(rng.integers(0, C))] for _ in range(T)]

    return T, moves, bounds, none, labels(), labels()


def check_against_oracle(T, moves, bounds, none, lh, la, tol=1e-9):
    cb = make_codebook(tuple(moves), none=none)
    seg = make_seg(bounds, T)
    H, A = make_labels(lh), make_labels(la, "ai")
    pairs = [
        (weighted_entropy(seg, H, cb), oracles.weighted_entropy(lh, bounds, moves, none)),
        (weighted_purity(seg, H, cb), oracles.weighted_purity(lh, bounds, moves, none)),
        (adjacent_js(seg, H, cb), oracles.adjacent_js(lh, bounds, moves, none)),
        (adjacent_js(seg, H, cb, normalized=True), oracles.adjacent_js(lh, bounds, moves, none, normalized=True)),
        (boundary_change_rate(seg, H, cb), oracles.bcr(lh, bounds, none)),
        (human_ai_js(seg, H, A, cb), oracles.human_ai_js(lh, la, bounds, moves, none)),
    ]
    for got, want in pairs:
        if want is None:
            assert got is None
        else:
            assert got is not None and abs(got - want) <= tol, (got, want)
    return len(pairs)


class TestOracleEquivalence:
    def test_random_dialogues(self):
        rng = np.random.default_rng(2024)
        for _ in range(300):
            check_against_oracle(*_random_case(rng))

    @settings(max_examples=200)
    @given(st.integers(0, 2**32 - 1))
    def test_hypothesis_seeds(self, seed):
        check_against_oracle(*_random_case(np.random.default_rng(seed)))


class TestInvariance:
    @settings(max_examples=100)
    @given(st.integers(0, 2**32 - 1))
    def test_category_permutation(self, seed):
        rng = np.random.default_rng(seed)
        T, moves, bounds, none, lh, la = _random_case(rng, max_T=10, max_C=4)
        perm = list(rng.permutation(moves))
        cb1 = make_codebook(tuple(moves), none=none)
        cb2 = make_codebook(tuple(perm), none=none)
        seg = make_seg(bounds, T)
        H, A = make_labels(lh), make_labels(la, "ai")
        for fn in (weighted_entropy, weighted_purity, adjacent_js, boundary_change_rate):
            a, b = fn(seg, H, cb1), fn(seg, H, cb2)
            assert (a is None and b is None) or abs(a - b) <= 1e-12
        a, b = human_ai_js(seg, H, A, cb1), human_ai_js(seg, H, A, cb2)
        assert (a is None and b is None) or abs(a - b) <= 1e-12

    @settings(max_examples=200)
    @given(st.integers(0, 2**32 - 1))
    def test_ranges(self, seed):
        rng = np.random.default_rng(seed)
        T, moves, bounds, none, lh, la = _random_case(rng, max_T=20, max_K=8, max_C=5)
        cb = make_codebook(tuple(moves), none=none)
        seg = make_seg(bounds, T)
        H, A = make_labels(lh), make_labels(la, "ai")
        for v in (weighted_entropy(seg, H, cb), weighted_purity(seg, H, cb), adjacent_js(seg, H, cb),
                  boundary_change_rate(seg, H, cb), human_ai_js(seg, H, A, cb)):
            assert v is None or 0.0 <= v <= 1.0
        p = weighted_purity(seg, H, cb)
        assert p is None or p >= 1.0 / cb.C - 1e-12


class TestEvaluateCorpus:
    def _setup(self):
        cb = make_codebook(("A", "B"))
        dialogues = {f"s{i}": make_dialogue(4, f"s{i}") for i in range(3)}
        raters = {
            "human": {sid: make_labels(["A", "A", "B", "B"]) for sid in dialogues},
            "ai": {sid: make_labels(["A", "A", "B", "B"], "ai") for sid in dialogues},
        }
        segs = [make_seg([1], 4, sid) for sid in dialogues]
        return cb, dialogues, raters, segs

    def test_oracle_identities(self):
        cb, dialogues, raters, segs = self._setup()
        rep = evaluate_corpus(dialogues, segs, raters, cb, EvalConfig(bootstrap_iterations=1000))
        assert rep.aggregate("entropy").mean == 0.0
        assert rep.aggregate("purity").mean == 1.0
        assert rep.aggregate("bcr").mean == 1.0
        assert rep.aggregate("human_ai_js").mean == 0.0
        assert rep.aggregate("human_ai_js").ci == (0.0, 0.0)
        assert (rep.k_mean, rep.k_sd) == (2.0, 0.0)

    def test_errors(self):
        cb, dialogues, raters, segs = self._setup()
        with pytest.raises(ValidationError, match="no segmentations"):
            evaluate_corpus(dialogues, [], raters, cb)
        with pytest.raises(ValidationError, match="rater"):
            evaluate_corpus(dialogues, segs, {"human": raters["human"]}, cb)
        with pytest.raises(ValidationError, match="unknown session"):
            evaluate_corpus(dialogues, segs + [make_seg([], 4, "zz")], raters, cb)
        with pytest.raises(ValidationError, match="duplicate"):
            evaluate_corpus(dialogues, segs + segs[:1], raters, cb)
        with pytest.raises(ValidationError, match="T="):
            evaluate_corpus(dialogues, [make_seg([1], 5, "s0")], raters, cb)

    def test_unlabeled_mode_recorded(self):
        cb, dialogues, raters, segs = self._setup()
        rep = evaluate_corpus(dialogues, segs, raters, cb, EvalConfig(unlabeled="exclude", bootstrap_iterations=1000))
        assert rep.to_dict()["unlabeled_mode"] == "exclude"

    def test_jobs_match_serial(self):
        cb, dialogues, raters, segs = self._setup()
        a = evaluate_corpus(dialogues, segs, raters, cb, EvalConfig(bootstrap_iterations=1000))
        b = evaluate_corpus(dialogues, segs, raters, cb, EvalConfig(bootstrap_iterations=1000, jobs=3))
        assert a.to_dict() == b.to_dict()

    def test_missing_session_counts_unlabeled(self):
        cb, dialogues, raters, segs = self._setup()
        raters["ai"] = {"s0": RaterLabels("ai", {0: "B", 1: "B", 2: "A", 3: "A"})}
        rep = evaluate_corpus(dialogues, segs, raters, cb, EvalConfig(bootstrap_iterations=1000))
        assert rep.sessions[1].human_ai_js == 1.0
