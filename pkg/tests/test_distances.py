import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ordconverge.core import OrdinalScale, ResponseDistribution, ValidationError
from ordconverge.distances import (
    ScoringRule,
    country_distance,
    kolmogorov_distance,
    min_coupling_mismatch,
    owcad_bruteforce,
    tv_distance,
    wcad_bruteforce,
)

from conftest import random_simplex


@st.composite
def simplex(draw, k=None):
    size = k or draw(st.integers(2, 8))
    weights = draw(
        st.lists(st.floats(1e-3, 1.0), min_size=size, max_size=size)
    )
    total = math.fsum(weights)
    return tuple(w / total for w in weights)


@st.composite
def simplex_pair(draw):
    size = draw(st.integers(2, 8))
    return draw(simplex(k=size)), draw(simplex(k=size))


class TestTvDistance:
    def test_published_rounded_shares(self):
        # rounded per-category shares for the two sibling groups; the
        # unrounded-microdata value is 0.148
        value = tv_distance(
            [0.06, 0.13, 0.28, 0.26, 0.27], [0.02, 0.07, 0.23, 0.31, 0.36]
        )
        assert value == pytest.approx(0.145, abs=1e-12)
        assert abs(value - 0.148) <= 0.01

    def test_identity(self):
        p = (0.2, 0.3, 0.5)
        assert tv_distance(p, p) == 0.0

    def test_disjoint_supports(self):
        assert tv_distance([1, 0, 0, 0, 0], [0, 0, 0, 0, 1]) == 1.0

    def test_scale_mismatch(self):
        a = ResponseDistribution(OrdinalScale(("x", "y")), (0.5, 0.5))
        b = ResponseDistribution(OrdinalScale(("u", "v")), (0.5, 0.5))
        with pytest.raises(ValidationError, match="scale"):
            tv_distance(a, b)

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            tv_distance([0.5, 0.5], [0.3, 0.3, 0.4])

    def test_improper_vectors_accepted(self):
        # LPM counterfactuals can leave [0, 1]; the formula still applies
        assert tv_distance([-0.1, 0.6, 0.5], [0.2, 0.3, 0.5]) == pytest.approx(0.3)


class TestWcadBruteforce:
    def test_hand_enumeration_three_categories(self):
        result = wcad_bruteforce([0.5, 0.5, 0.0], [0.0, 0.5, 0.5])
        assert result.value == pytest.approx(0.5, abs=1e-15)
        assert result.witness == (1,)

    def test_identical_distributions(self):
        result = wcad_bruteforce([0.3, 0.7], [0.3, 0.7])
        assert result.value == 0.0
        assert result.witness == ()

    def test_four_subset_enumeration(self):
        result = wcad_bruteforce([0.6, 0.4], [0.4, 0.6])
        assert result.value == pytest.approx(0.2, abs=1e-15)
        assert result.witness == (1,)

    def test_enumeration_bound(self):
        k = 21
        with pytest.raises(ValidationError, match="cap"):
            wcad_bruteforce([1.0 / k] * k, [1.0 / k] * k)

    def test_matches_exhaustive_indicator_search(self):
        # independent oracle: evaluate every indicator rule explicitly
        rng = np.random.default_rng(7)
        for _ in range(25):
            k = int(rng.integers(2, 7))
            p, q = random_simplex(rng, k), random_simplex(rng, k)
            best = max(
                abs(sum(p[a] - q[a] for a in subset))
                for r in range(k + 1)
                for subset in itertools.combinations(range(k), r)
            )
            assert wcad_bruteforce(p, q).value == pytest.approx(best, abs=1e-12)


class TestMinCouplingMismatch:
    def test_overlap_formula(self):
        assert min_coupling_mismatch([0.6, 0.4], [0.4, 0.6]) == pytest.approx(0.2)

    def test_identity(self):
        assert min_coupling_mismatch([0.25, 0.75], [0.25, 0.75]) == 0.0

    def test_three_category_overlap(self):
        assert min_coupling_mismatch(
            [0.25, 0.25, 0.5], [0.5, 0.25, 0.25]
        ) == pytest.approx(0.25)


class TestKolmogorovDistance:
    def test_hand_cdf_published_shares(self):
        # hand CDF gaps: .03, .13, .10, .03 -> max .13 at cutoff 2
        result = kolmogorov_distance(
            [0.07, 0.26, 0.34, 0.24, 0.08], [0.04, 0.16, 0.37, 0.31, 0.13]
        )
        assert result.value == pytest.approx(0.13, abs=1e-12)
        assert result.argmax_cutoffs == (2,)

    def test_identity(self):
        assert kolmogorov_distance([0.4, 0.6], [0.4, 0.6]).value == 0.0

    def test_disjoint(self):
        result = kolmogorov_distance([1.0, 0.0], [0.0, 1.0])
        assert result.value == 1.0
        assert result.argmax_cutoffs == (1,)

    def test_reports_all_tied_cutoffs(self):
        result = kolmogorov_distance([0.5, 0.0, 0.5], [0.2, 0.6, 0.2])
        assert result.argmax_cutoffs == (1, 2)


class TestOwcadBruteforce:
    def test_threshold_evaluation(self):
        result = owcad_bruteforce([0.5, 0.3, 0.2], [0.2, 0.3, 0.5])
        assert result.value == pytest.approx(0.3, abs=1e-15)
        assert result.argmax_cutoffs == (1, 2)
        assert isinstance(result.witness, ScoringRule)
        assert result.witness.monotone
        assert result.witness.values == (0.0, 1.0, 1.0)

    def test_identity(self):
        assert owcad_bruteforce([0.5, 0.5], [0.5, 0.5]).value == 0.0

    def test_witness_attains_the_value(self):
        rng = np.random.default_rng(11)
        for _ in range(20):
            k = int(rng.integers(2, 8))
            p, q = random_simplex(rng, k), random_simplex(rng, k)
            result = owcad_bruteforce(p, q)
            gap = abs(result.witness.expectation(p) - result.witness.expectation(q))
            assert gap == pytest.approx(result.value, abs=1e-12)


class TestCountryDistance:
    def test_identity(self):
        assert country_distance([2.0, 2.0], [2.0, 2.0]) == 0.0

    def test_hand_arithmetic(self):
        assert country_distance([2, 2], [1, 1]) == pytest.approx(math.sqrt(2))

    def test_seven_item_identity(self):
        v = [1, 2, 3, 4, 1, 2, 3]
        assert country_distance(v, v) == 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            country_distance([1, 2], [1, 2, 3])


class TestEquivalences:
    @given(simplex_pair())
    @settings(max_examples=200)
    def test_tv_equals_wcad_and_coupling(self, pair):
        p, q = pair
        tv = tv_distance(p, q)
        assert abs(tv - wcad_bruteforce(p, q).value) < 1e-12
        assert abs(tv - min_coupling_mismatch(p, q)) < 1e-12

    @given(simplex_pair())
    @settings(max_examples=200)
    def test_kolmogorov_equals_owcad(self, pair):
        p, q = pair
        assert (
            abs(kolmogorov_distance(p, q).value - owcad_bruteforce(p, q).value)
            < 1e-12
        )

    @given(simplex_pair())
    @settings(max_examples=200)
    def test_kolmogorov_below_tv(self, pair):
        p, q = pair
        assert kolmogorov_distance(p, q).value <= tv_distance(p, q) + 1e-12

    @given(simplex_pair())
    @settings(max_examples=200)
    def test_wcad_witness_identity(self, pair):
        # the witness subset only over-covers: p >= q on it up to ties,
        # and its signed mass difference equals the value
        p, q = pair
        result = wcad_bruteforce(p, q)
        signed = sum(p[a - 1] - q[a - 1] for a in result.witness)
        assert signed == pytest.approx(result.value, abs=1e-12)
        assert all(p[a - 1] >= q[a - 1] - 1e-12 for a in result.witness)


class TestMetricAxioms:
    @given(simplex_pair())
    @settings(max_examples=150)
    def test_symmetry(self, pair):
        p, q = pair
        assert tv_distance(p, q) == pytest.approx(tv_distance(q, p), abs=1e-15)
        assert kolmogorov_distance(p, q).value == pytest.approx(
            kolmogorov_distance(q, p).value, abs=1e-15
        )

    @given(simplex())
    @settings(max_examples=100)
    def test_identity_of_indiscernibles(self, p):
        assert tv_distance(p, p) == 0.0
        assert kolmogorov_distance(p, p).value == 0.0

    @given(st.integers(2, 6), st.data())
    @settings(max_examples=150)
    def test_triangle_inequality(self, k, data):
        p = data.draw(simplex(k=k))
        q = data.draw(simplex(k=k))
        r = data.draw(simplex(k=k))
        assert tv_distance(p, q) <= tv_distance(p, r) + tv_distance(r, q) + 1e-12
        assert (
            kolmogorov_distance(p, q).value
            <= kolmogorov_distance(p, r).value + kolmogorov_distance(r, q).value + 1e-12
        )
