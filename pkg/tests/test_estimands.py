import numpy as np
import pytest

from ordconverge.core import (
    CategorySystemFit,
    EstimationError,
    Group,
    OrdinalScale,
    ResponseDistribution,
    ValidationError,
    empirical_distribution,
    sibling_subpanel,
)
from ordconverge.distances import kolmogorov_distance, tv_distance
from ordconverge.estimands import (
    MkdInterval,
    compute_estimands,
    counterfactual_distribution,
    delta_kd0,
    delta_tv0,
    heterogeneity_split,
    mkd,
    mtvd,
    perturbed_distribution,
)
from ordconverge.felpm import fit_category_system

from conftest import make_panel, make_record, random_panel, random_simplex

S2 = OrdinalScale(("lo", "hi"))
S3 = OrdinalScale(("lo", "mid", "hi"))


def dist(scale, probs):
    return ResponseDistribution(scale, tuple(probs))


class TestCounterfactualDistribution:
    def test_zero_slopes_recover_the_observed_distribution(self):
        rng = np.random.default_rng(21)
        panel = random_panel(rng, n_families=10, k=4)
        sub = sibling_subpanel(panel, "q1")
        fit = fit_category_system(sub, "q1")
        # rebuild the fit with slopes forced to zero: intercepts then equal
        # within-family mean shares, whose person average is the empirical
        # distribution of the estimation sample
        rows = sub.for_question("q1", Group.TREATED)
        effects = {}
        for fam in fit.family_effects:
            fam_rows = [r for r in rows if r.family_id == fam]
            shares = np.zeros(4)
            for r in fam_rows:
                shares[r.response - 1] += 1.0 / len(fam_rows)
            effects[fam] = shares
        zero_fit = CategorySystemFit(
            question_id="q1",
            betas=np.zeros(4),
            cluster_se=np.zeros(4),
            family_effects=effects,
            n_obs=fit.n_obs,
            n_families=fit.n_families,
        )
        cf = counterfactual_distribution(zero_fit, sub)
        observed = empirical_distribution(sub, "q1", Group.TREATED)
        assert np.allclose(cf.probs, observed.probs, atol=1e-12)

    def test_two_person_hand_average(self):
        effects = {"fa": np.array([0.2, 0.8]), "fb": np.array([0.4, 0.6])}
        fit = CategorySystemFit(
            question_id="q1",
            betas=np.zeros(2),
            cluster_se=np.zeros(2),
            family_effects=effects,
            n_obs=4,
            n_families=2,
        )
        panel = make_panel(
            [
                make_record(person="a", family="fa", response=1, scale=None)
                if False
                else make_record(person="a", family="fa", response=1),
                make_record(person="b", family="fb", response=2),
            ],
            scale=S2,
        )
        cf = counterfactual_distribution(fit, panel)
        assert cf.probs == pytest.approx((0.3, 0.7))

    def test_uncovered_person_raises_with_names(self):
        fit = CategorySystemFit(
            question_id="q1",
            betas=np.zeros(2),
            cluster_se=np.zeros(2),
            family_effects={"fa": np.array([0.5, 0.5])},
            n_obs=2,
            n_families=1,
        )
        panel = make_panel(
            [
                make_record(person="a", family="fa", response=1),
                make_record(person="lonely", family="fb", response=2),
            ],
            scale=S2,
        )
        with pytest.raises(EstimationError, match="lonely"):
            counterfactual_distribution(fit, panel)

    def test_sum_is_one_from_fitted_systems(self):
        rng = np.random.default_rng(22)
        for trial in range(10):
            panel = random_panel(rng, n_families=8, k=3)
            sub = sibling_subpanel(panel, "q1")
            fit = fit_category_system(sub, "q1")
            cf = counterfactual_distribution(fit, sub)
            assert abs(sum(cf.probs) - 1.0) < 1e-8


class TestPerturbedDistribution:
    def test_epsilon_zero_is_identity(self):
        base = dist(S2, (0.4, 0.6))
        out = perturbed_distribution(base, (0.01, -0.01), 0.0)
        assert out.probs == base.probs

    def test_hand_arithmetic(self):
        out = perturbed_distribution(dist(S2, (0.4, 0.6)), (0.01, -0.01), 2.0)
        assert out.probs == pytest.approx((0.42, 0.58))

    def test_large_shift_flips_proper_flag(self):
        out = perturbed_distribution(dist(S2, (0.4, 0.6)), (0.01, -0.01), 80.0)
        assert not out.proper
        assert sum(out.probs) == pytest.approx(1.0)


class TestMtvd:
    def test_sign_vector_example(self):
        value = mtvd(dist(S2, (0.4, 0.6)), dist(S2, (0.5, 0.5)), (0.01, -0.01))
        assert value == pytest.approx(-0.01, abs=1e-15)

    def test_zero_slopes(self):
        assert mtvd(dist(S2, (0.4, 0.6)), dist(S2, (0.5, 0.5)), (0.0, 0.0)) == 0.0

    def test_tie_gets_plus_sign(self):
        # equal shares in category 1: the weak inequality assigns +1
        value = mtvd(dist(S2, (0.5, 0.5)), dist(S2, (0.5, 0.5)), (0.02, -0.02))
        assert value == pytest.approx(0.0)
        # signs (+1 tie, -1, +1): 0.5*(0.02 - 0.0 - 0.02) = 0; a -1 tie
        # convention would instead give -0.02
        value = mtvd(
            dist(S3, (0.3, 0.3, 0.4)), dist(S3, (0.3, 0.4, 0.3)), (0.02, 0.0, -0.02)
        )
        assert value == pytest.approx(0.0, abs=1e-15)

    def test_matches_finite_difference_of_tv(self):
        rng = np.random.default_rng(31)
        eps = 1e-6
        for _ in range(200):
            k = int(rng.integers(2, 7))
            p_r = random_simplex(rng, k, floor=0.02)
            gap = rng.uniform(0.01, 0.05, size=k) * rng.choice([-1.0, 1.0], size=k)
            p_t = p_r + gap - gap.mean()
            if p_t.min() <= 0 or np.any(np.abs(p_t - p_r) < 1e-3):
                continue
            p_t = p_t / p_t.sum()
            if np.any(np.abs(p_t - p_r) < 1e-3):
                continue
            betas = rng.normal(scale=0.01, size=k)
            betas -= betas.mean()
            scale = OrdinalScale(tuple(f"c{i}" for i in range(k)))
            dt, dr = dist(scale, p_t), dist(scale, p_r)
            fd = (
                tv_distance(perturbed_distribution(dt, betas, eps), dr)
                - tv_distance(perturbed_distribution(dt, betas, -eps), dr)
            ) / (2 * eps)
            assert mtvd(dt, dr, betas) == pytest.approx(fd, abs=1e-6)

    def test_signed_sum_bound(self):
        rng = np.random.default_rng(32)
        for _ in range(100):
            k = int(rng.integers(2, 7))
            scale = OrdinalScale(tuple(f"c{i}" for i in range(k)))
            p_t = dist(scale, random_simplex(rng, k))
            p_r = dist(scale, random_simplex(rng, k))
            betas = rng.normal(scale=0.02, size=k)
            betas -= betas.mean()
            assert abs(mtvd(p_t, p_r, betas)) <= 0.5 * np.abs(betas).sum() + 1e-15


class TestDeltaEstimands:
    def test_counterfactual_equal_treated_gives_zero(self):
        p_r = dist(S3, (0.2, 0.3, 0.5))
        p_t = dist(S3, (0.5, 0.3, 0.2))
        assert delta_tv0(p_r, p_t, p_t) == 0.0
        assert delta_kd0(p_r, p_t, p_t) == 0.0

    def test_full_convergence_equals_observed_distance(self):
        p_r = dist(S3, (0.2, 0.3, 0.5))
        p_t = dist(S3, (0.5, 0.3, 0.2))
        assert delta_tv0(p_r, p_t, p_r) == pytest.approx(tv_distance(p_r, p_t))
        assert delta_kd0(p_r, p_t, p_r) == pytest.approx(
            kolmogorov_distance(p_r, p_t).value
        )

    def test_published_difference_arithmetic(self):
        # the published observed and counterfactual distances imply the
        # published reduction: 0.148 - 0.063 = 0.085
        assert 0.148 - 0.063 == pytest.approx(0.085)

    def test_antisymmetry_in_counterfactual_swap(self):
        rng = np.random.default_rng(41)
        for _ in range(50):
            k = int(rng.integers(2, 6))
            scale = OrdinalScale(tuple(f"c{i}" for i in range(k)))
            r = dist(scale, random_simplex(rng, k))
            t = dist(scale, random_simplex(rng, k))
            c = dist(scale, random_simplex(rng, k))
            assert delta_tv0(r, t, c) == pytest.approx(-delta_tv0(r, c, t), abs=1e-15)
            assert delta_kd0(r, t, c) == pytest.approx(-delta_kd0(r, c, t), abs=1e-15)


class TestMkd:
    def test_unique_cutoff_two_categories(self):
        value = mkd(dist(S2, (0.3, 0.7)), dist(S2, (0.5, 0.5)), (0.02, -0.02))
        assert value == pytest.approx(-0.02, abs=1e-15)

    def test_zero_slopes_give_zero(self):
        value = mkd(dist(S2, (0.3, 0.7)), dist(S2, (0.5, 0.5)), (0.0, 0.0))
        assert value == 0.0

    def test_tied_cutoffs_give_interval(self):
        p_t = dist(S3, (0.5, 0.0, 0.5))
        p_r = dist(S3, (0.2, 0.6, 0.2))
        result = mkd(p_t, p_r, (0.01, 0.02, -0.03))
        assert isinstance(result, MkdInterval)
        assert result.cutoffs == (1, 2)
        # candidates: sign(+.3)*.01 and sign(-.3)*(.01+.02)
        assert result.low == pytest.approx(-0.03)
        assert result.high == pytest.approx(0.01)
        assert not result.degenerate

    def test_identical_distributions_degenerate(self):
        p = dist(S3, (0.3, 0.3, 0.4))
        result = mkd(p, p, (0.01, 0.00, -0.01))
        assert isinstance(result, MkdInterval)
        assert result.degenerate
        assert result.low == -result.high
        assert result.high == pytest.approx(0.01)

    def test_matches_finite_difference_under_unique_argmax(self):
        rng = np.random.default_rng(51)
        eps = 1e-6
        tested = 0
        while tested < 200:
            k = int(rng.integers(2, 7))
            p_t = random_simplex(rng, k, floor=0.02)
            p_r = random_simplex(rng, k, floor=0.02)
            gaps = np.abs(np.cumsum(p_t - p_r)[:-1])
            order = np.sort(gaps)
            if order[-1] < 1e-3 or (k > 2 and order[-1] - order[-2] < 1e-3):
                continue
            betas = rng.normal(scale=0.01, size=k)
            betas -= betas.mean()
            scale = OrdinalScale(tuple(f"c{i}" for i in range(k)))
            dt, dr = dist(scale, p_t), dist(scale, p_r)
            value = mkd(dt, dr, betas)
            assert isinstance(value, float)
            fd = (
                kolmogorov_distance(perturbed_distribution(dt, betas, eps), dr).value
                - kolmogorov_distance(perturbed_distribution(dt, betas, -eps), dr).value
            ) / (2 * eps)
            assert value == pytest.approx(fd, abs=1e-6)
            tested += 1


class TestComputeEstimands:
    def test_deltas_are_exact_differences(self):
        rng = np.random.default_rng(61)
        scale = OrdinalScale(("a", "b", "c", "d"))
        p_r = dist(scale, random_simplex(rng, 4))
        p_t = dist(scale, random_simplex(rng, 4))
        p_c = dist(scale, random_simplex(rng, 4))
        betas = np.array([0.01, -0.02, 0.03, -0.02])
        es = compute_estimands(p_r, p_t, p_c, betas)
        assert es.delta_tv0 == es.tv_observed - es.tv_counterfactual
        assert es.delta_kd0 == es.kd_observed - es.kd_counterfactual
        assert es.mtvd_signs == tuple(
            1 if t >= r else -1 for t, r in zip(p_t.probs, p_r.probs)
        )

    def test_kink_flag_on_share_tie_with_nonzero_slope(self):
        p_r = dist(S3, (0.3, 0.3, 0.4))
        p_t = dist(S3, (0.3, 0.4, 0.3))
        es = compute_estimands(p_r, p_t, p_t, (0.01, 0.0, -0.01))
        assert "mtvd_kink" in es.flags

    def test_improper_counterfactual_flagged(self):
        p_r = dist(S3, (0.3, 0.3, 0.4))
        p_t = dist(S3, (0.2, 0.4, 0.4))
        p_c = dist(S3, (-0.05, 0.55, 0.5))
        es = compute_estimands(p_r, p_t, p_c, (0.0, 0.0, 0.0))
        assert "counterfactual_improper" in es.flags


class TestHeterogeneitySplit:
    def _panel_with_countries(self, codes):
        records = []
        for i, code in enumerate(codes):
            for s in range(2):
                records.append(
                    make_record(
                        person=f"p{i}_{s}",
                        family=f"f{i}",
                        response=1 + (i + s) % 5,
                        treatment=float(s),
                        country=code,
                    )
                )
        records.append(make_record(person="r1", family="rf", group="reference"))
        return make_panel(records)

    def test_region_split(self):
        panel = self._panel_with_countries(["FRA", "IND", "USA", "NGA"])
        west, rest = heterogeneity_split(panel, "region_list", {"FRA", "USA", "CAN"})
        west_countries = {r.country_code for r in west.records if r.group is Group.TREATED}
        rest_countries = {r.country_code for r in rest.records if r.group is Group.TREATED}
        assert west_countries == {"FRA", "USA"}
        assert rest_countries == {"IND", "NGA"}

    def test_reference_duplicated_into_both(self):
        panel = self._panel_with_countries(["FRA", "IND"])
        a, b = heterogeneity_split(panel, "region_list", {"FRA"})
        assert any(r.group is Group.REFERENCE for r in a.records)
        assert any(r.group is Group.REFERENCE for r in b.records)

    def test_median_split_convention(self):
        panel = self._panel_with_countries(["c1", "c2", "c3", "c4"])
        table = {"c1": 0.1, "c2": 0.2, "c3": 0.3, "c4": 0.4}
        similar, different = heterogeneity_split(
            panel, "median_country_distance", table
        )
        sim = {r.country_code for r in similar.records if r.group is Group.TREATED}
        diff = {r.country_code for r in different.records if r.group is Group.TREATED}
        assert sim == {"c1", "c2"}  # strictly below the median 0.25
        assert diff == {"c3", "c4"}

    def test_median_itself_goes_to_different(self):
        panel = self._panel_with_countries(["c1", "c2", "c3"])
        table = {"c1": 0.1, "c2": 0.2, "c3": 0.3}
        similar, different = heterogeneity_split(
            panel, "median_country_distance", table
        )
        diff = {r.country_code for r in different.records if r.group is Group.TREATED}
        assert "c2" in diff  # median country is not "strictly below"

    def test_single_country_warns_about_empty_side(self):
        panel = self._panel_with_countries(["IND", "IND"])
        with pytest.warns(UserWarning, match="without"):
            a, b = heterogeneity_split(panel, "region_list", {"FRA"})
        assert not [r for r in a.records if r.group is Group.TREATED]

    def test_uncovered_country_is_an_error(self):
        panel = self._panel_with_countries(["c1", "mystery"])
        with pytest.raises(ValidationError, match="mystery"):
            heterogeneity_split(panel, "median_country_distance", {"c1": 0.1})

    def test_missing_country_code_is_an_error(self):
        panel = make_panel(
            [
                make_record(person="a", family="f", treatment=1.0),
                make_record(person="r", family="rf", group="reference"),
            ]
        )
        with pytest.raises(ValidationError, match="country"):
            heterogeneity_split(panel, "region_list", {"FRA"})
