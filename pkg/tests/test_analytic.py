import math

import numpy as np
import pytest
from pydantic import ValidationError
from scipy import special

from effc_toolkit.analytic import (
    ModelParams,
    Regime,
    aldous_phi_moments,
    classify_regime,
    descent_time,
    excursion_reach_weight,
    expected_visits,
    frag_state_pmf,
    gamma_ratio,
    log_gamma_ratio,
    hitting_time_from_zero,
    hitting_time_via_return,
    holding_time,
    mean_return_time,
    mean_time_to_frag,
    occupation_before_one,
    occupation_series,
    p_descend,
    stationary_normalizer,
    stationary_pgf,
    stationary_pmf,
    stationary_table,
    stationary_tail,
)
from effc_toolkit.errors import DomainError, RegimeError


@pytest.mark.parametrize(
    "lam, regime",
    [(0.2, Regime.SUBCRITICAL), (0.5, Regime.CRITICAL), (0.8, Regime.SUPERCRITICAL)],
)
def test_classify_regime(lam, regime):
    assert classify_regime(ModelParams(c=1.0, lam=lam)) is regime


def test_model_params_alias_and_theta():
    params = ModelParams.model_validate({"c": 2.0, "lambda": 0.5})
    assert params.lam == 0.5
    assert params.theta == pytest.approx(0.5)
    assert ModelParams.from_theta(0.4, c=2.0).lam == pytest.approx(0.4)


def test_model_params_rejects_bad_rates():
    with pytest.raises(ValidationError):
        ModelParams(c=0.0, lam=0.2)
    with pytest.raises(ValidationError):
        ModelParams(c=1.0, lam=-0.1)


def test_gamma_ratio_matches_direct_values_across_crossover():
    x = np.array([1.0, 5.5, 19.5, 20.0, 25.0, 150.0])
    expected = special.gamma(x + 0.4) / special.gamma(x)
    assert np.allclose(gamma_ratio(x, 0.4), expected, rtol=1e-12)
    assert gamma_ratio(1e6, -0.6) == pytest.approx(math.exp(special.gammaln(1e6 - 0.6) - special.gammaln(1e6)), rel=1e-6)


def test_p_descend_examples():
    params = ModelParams.from_theta(0.5)
    assert p_descend(params, 4, 1) == pytest.approx(16.0 / 35.0, rel=1e-12)
    assert p_descend(params, 7, 7) == 1.0
    big = p_descend(ModelParams.from_theta(0.4), 10**6, 1)
    assert big == pytest.approx(special.gamma(1.4) * 1e6 ** -0.4, rel=1e-3)


@pytest.mark.parametrize("n, k", [(10, 1), (1_000, 500), (1_000_000, 1_000)])
def test_p_descend_recurrence_agrees_with_gamma_form(n, k):
    params = ModelParams.from_theta(0.7)
    assert p_descend(params, n, k, method="recurrence") == pytest.approx(p_descend(params, n, k), rel=1e-10)


def test_log_gamma_ratio_past_gamma_overflow():
    assert log_gamma_ratio(10.0, 200.0) == pytest.approx(special.gammaln(210.0) - special.gammaln(10.0), rel=1e-13)
    # Gamma(170.5) is finite but sits past the direct-quotient range
    assert gamma_ratio(1.5, 169.0) == pytest.approx(math.exp(special.gammaln(170.5) - special.gammaln(1.5)), rel=1e-10)


def test_closed_forms_stay_finite_for_large_theta():
    params = ModelParams(c=1.0, lam=100.0)
    exact = p_descend(params, 10, 1)
    assert exact == pytest.approx(p_descend(params, 10, 1, method="recurrence"), rel=1e-9)
    assert 0.0 < exact < 1e-15
    pmf = frag_state_pmf(params, 5)
    assert np.all(np.isfinite(pmf))
    assert math.fsum(pmf) == pytest.approx(1.0, abs=1e-12)
    # first step: E_n = u_n + (n-1)/(n-1+theta) * E_{n-1}
    previous = mean_time_to_frag(params, 4)
    step = holding_time(params, 5) + 4.0 / (4.0 + params.theta) * previous
    assert mean_time_to_frag(params, 5) == pytest.approx(step, rel=1e-9)
    assert mean_time_to_frag(params, 1) == pytest.approx(1.0 / params.lam, rel=1e-12)
    partial = occupation_series(params, 5)
    assert partial[0] == pytest.approx(1.0, rel=1e-12)
    assert np.all(np.isfinite(partial)) and np.all(np.diff(partial) > 0)


@pytest.mark.parametrize("theta", [0.25, 0.5, 0.9])
def test_descent_hitting_and_reach_monotonicity(theta):
    params = ModelParams.from_theta(theta)
    p = np.array([p_descend(params, n, 1) for n in range(1, 2_001)])
    assert np.all(np.diff(p) < 0)
    assert np.all(np.diff(hitting_time_from_zero(params, np.arange(1, 1_001))) < 0)
    assert np.all(np.diff(excursion_reach_weight(params, np.arange(1.0, 100_001.0))) > 0)


def test_p_descend_domain_errors():
    params = ModelParams.from_theta(0.5)
    with pytest.raises(DomainError):
        p_descend(params, 3, 4)
    with pytest.raises(DomainError):
        p_descend(params, 3, 0)
    with pytest.raises(DomainError):
        p_descend(params, 3, 1, method="series")


def test_frag_state_pmf_small_cases():
    params = ModelParams.from_theta(0.5)
    assert frag_state_pmf(params, 1) == pytest.approx([1.0])
    assert frag_state_pmf(params, 2) == pytest.approx([2.0 / 3.0, 1.0 / 3.0], rel=1e-12)


@pytest.mark.parametrize("n", [50, 10_000])
def test_frag_state_pmf_normalised(n):
    pmf = frag_state_pmf(ModelParams.from_theta(0.4), n)
    assert math.fsum(pmf) == pytest.approx(1.0, abs=1e-12)
    assert np.all(pmf > 0)


def test_frag_state_pmf_needs_fragmentation():
    with pytest.raises(DomainError):
        frag_state_pmf(ModelParams(c=1.0, lam=0.0), 5)


def test_holding_time_examples():
    assert holding_time(ModelParams(c=1.0, lam=0.2), 1) == pytest.approx(5.0)
    quarter = ModelParams(c=1.0, lam=0.25)
    assert holding_time(quarter, 2) == pytest.approx(2.0 / 3.0)
    assert holding_time(quarter, 10) == pytest.approx(2.0 / 95.0)
    assert holding_time(ModelParams(c=1.0, lam=0.0), 1) == math.inf


def test_descent_time_examples():
    quarter = ModelParams(c=1.0, lam=0.25)
    assert descent_time(quarter, 5, 5) == 0.0
    assert descent_time(quarter, 2, 1) == pytest.approx(2.0 / 3.0)
    assert descent_time(ModelParams.from_theta(0.5), 10_000, 10) <= 0.2


def test_mean_time_to_frag_examples():
    quarter = ModelParams(c=1.0, lam=0.25)
    assert mean_time_to_frag(quarter, 1) == pytest.approx(4.0)
    assert mean_time_to_frag(quarter, 2) == pytest.approx(10.0 / 3.0, rel=1e-12)


def test_mean_time_to_frag_converges_when_subcritical():
    params = ModelParams.from_theta(0.4)
    values = [mean_time_to_frag(params, n) for n in (1_000, 10_000, 100_000)]
    assert values[2] - values[1] < values[1] - values[0]


def test_stationary_pmf_examples():
    assert stationary_pmf(ModelParams.from_theta(0.4), 1) == pytest.approx(0.6, abs=1e-15)
    assert stationary_pmf(ModelParams.from_theta(0.5), 2) == pytest.approx(0.125, rel=1e-13)
    theta = 0.4
    asymptotic = (1 - theta) / special.gamma(theta) * 100 ** -(2 - theta)
    assert stationary_pmf(ModelParams.from_theta(theta), 100) == pytest.approx(asymptotic, rel=0.01)


def test_stationary_pmf_requires_subcritical():
    with pytest.raises(RegimeError):
        stationary_pmf(ModelParams.from_theta(1.2), 1)
    with pytest.raises(RegimeError):
        stationary_pmf(ModelParams(c=1.0, lam=0.0), 1)


def test_stationary_table_mass_plus_tail_is_one():
    table = stationary_table(ModelParams.from_theta(0.3), 1_000)
    assert table.k_max == 1_000
    assert table.total == pytest.approx(1.0, abs=1e-12)
    assert 0.0 < table.tail_mass < 1.0
    assert table.tail_mass == pytest.approx(stationary_tail(ModelParams.from_theta(0.3), 1_000))


def test_stationary_pgf_examples():
    params = ModelParams.from_theta(0.5)
    assert stationary_pgf(params, 0.0) == 0.0
    assert stationary_pgf(params, 0.75) == pytest.approx(0.5, rel=1e-14)
    assert stationary_pgf(ModelParams.from_theta(0.4), 1 - 1e-12) == pytest.approx(1.0, abs=1e-6)
    with pytest.raises(DomainError):
        stationary_pgf(params, 1.0)


def test_stationary_pgf_matches_pmf_series():
    params = ModelParams.from_theta(0.4)
    k = np.arange(1, 1_001, dtype=float)
    series = math.fsum(stationary_pmf(params, k) * 0.5 ** k)
    assert series == pytest.approx(stationary_pgf(params, 0.5), abs=1e-6)


def test_stationary_normalizer_closed_form():
    params = ModelParams(c=1.0, lam=0.2)
    k = np.arange(1, 200_001, dtype=float)
    partial = 2.0 / params.c * math.fsum(gamma_ratio(k, params.theta - 1.0) / k)
    assert partial == pytest.approx(stationary_normalizer(params), rel=1e-3)


@pytest.mark.parametrize("c, theta, k, expected", [(1.0, 0.4, 10, 1.0 / 3.0), (1.0, 0.5, 1, 4.0), (2.0, 0.5, 4, 0.5)])
def test_hitting_time_from_zero_examples(c, theta, k, expected):
    assert hitting_time_from_zero(ModelParams.from_theta(theta, c=c), k) == pytest.approx(expected)


@pytest.mark.parametrize("k", [1, 2, 10])
def test_hitting_time_via_return_agrees(k):
    params = ModelParams.from_theta(0.4)
    assert mean_return_time(params, k) > mean_time_to_frag(params, k)
    assert hitting_time_via_return(params, k) == pytest.approx(hitting_time_from_zero(params, k), rel=1e-9)


def test_excursion_reach_weight_examples():
    params = ModelParams.from_theta(0.5)
    assert excursion_reach_weight(params, 1) == pytest.approx(0.886227, rel=1e-6)
    for theta in (0.2, 0.7):
        p = ModelParams.from_theta(theta)
        assert excursion_reach_weight(p, 2) / excursion_reach_weight(p, 1) == pytest.approx(1 + theta)
    theta, n = 0.4, 10_000
    leading = n ** theta * (1 + theta * (theta - 1) / (2 * n))
    assert excursion_reach_weight(ModelParams.from_theta(theta), n) == pytest.approx(leading, rel=1e-3)


def test_occupation_before_one_examples():
    assert occupation_before_one(ModelParams(c=1.0, lam=0.25), 2) == pytest.approx(1.0)
    params = ModelParams.from_theta(0.5)
    expected = special.gamma(10.5) / (special.gamma(10) * special.gamma(1.5)) * holding_time(params, 10)
    assert occupation_before_one(params, 10) == pytest.approx(expected, rel=1e-12)
    tiny = ModelParams.from_theta(1e-9)
    assert occupation_before_one(tiny, 5) == pytest.approx(holding_time(tiny, 5), rel=1e-6)
    with pytest.raises(DomainError):
        occupation_before_one(params, 1)


def test_expected_visits_is_inverse_descent_probability():
    params = ModelParams.from_theta(0.5)
    assert expected_visits(params, 4) == pytest.approx(35.0 / 16.0)


def test_occupation_series_limits():
    sub = occupation_series(ModelParams.from_theta(0.5), 200_000)
    assert sub[0] == pytest.approx(1.0)
    assert sub[-1] == pytest.approx(2.0, rel=0.01)
    critical = occupation_series(ModelParams.from_theta(1.0), 20_000)
    assert critical[19_999] - critical[9_999] == pytest.approx(math.log(2.0), abs=1e-3)
    supercritical = occupation_series(ModelParams.from_theta(1.2), 20_000)
    assert supercritical[19_999] - supercritical[9_999] > 1.0


def test_aldous_phi_moments_pure_kingman_telescopes():
    params = ModelParams(c=1.0, lam=0.0)
    for j in (1, 3, 100, 5_000):
        assert aldous_phi_moments(params, j).mean == pytest.approx(2.0 / j, rel=1e-10)


def test_aldous_phi_moments_with_fragmentation():
    moments = aldous_phi_moments(ModelParams(c=1.0, lam=0.2), 100)
    assert moments.mean == pytest.approx(0.02, rel=0.02)
    assert moments.variance == pytest.approx(4.0 / (3.0 * 100**3), rel=0.05)


def test_aldous_phi_moments_branches_agree_with_direct_sum():
    for theta in (0.4, 3.0):
        params = ModelParams.from_theta(theta)
        i = np.arange(6, 2_000_001, dtype=float)
        rates = params.jump_rate(i)
        moments = aldous_phi_moments(params, 5)
        assert moments.mean == pytest.approx(math.fsum(1.0 / rates), rel=1e-5)
        assert moments.variance == pytest.approx(math.fsum(1.0 / rates**2), rel=1e-8)
