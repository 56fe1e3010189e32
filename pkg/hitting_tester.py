import math
import sys

import numpy as np
import pytest
from scipy import special as sp

from thresholdsim.errors import DomainError, RegimeError
from thresholdsim.hitting import (MAX_IMAGE_TERMS, HittingLawParams, crossing_probability, hitting_cdf,
                                  hitting_cdf_exponential_asymptotic, hitting_cdf_first_term,
                                  hitting_cdf_normal_form, hitting_cdf_theta_form,
                                  log_crossing_probability)


def params_for(eps_g, sigma2=1.0, threshold=1.0):
    """Unit gain; the window carries eps*g."""
    return HittingLawParams(sigma2, threshold, 1.0, eps_g * threshold / sigma2)


def test_derived_quantities():
    p = HittingLawParams(sigma2=2.0, threshold_energy=8.0, gain=4.0, window=0.5)
    assert p.barrier == pytest.approx(math.sqrt(2.0))
    assert p.epsilon == pytest.approx(0.125)
    assert p.eps_g == pytest.approx(0.5)
    assert p.x == pytest.approx(1.0 / math.sqrt(2.0 * p.eps_g))


def test_params_reject_bad_values():
    with pytest.raises(DomainError):
        HittingLawParams(0.0, 1.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        HittingLawParams(1.0, -1.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        HittingLawParams(1.0, 1.0, math.nan, 1.0)
    with pytest.raises(DomainError):
        HittingLawParams(1.0, 1.0, 1.0, math.inf)


def test_series_identity_on_grid():
    # erfc form and normal-cdf form of the same image series
    worst = 0.0
    for eps_g in np.geomspace(1e-3, 30.0, 50):
        for sigma2 in (0.3, 2.5):
            p = params_for(eps_g, sigma2=sigma2, threshold=1.7)
            worst = max(worst, abs(hitting_cdf(p).value - hitting_cdf_normal_form(p).value))
    assert worst <= 1e-12


def test_reference_value():
    # x = 1: 2 (erfc 1 - erfc 3 + erfc 5 - ...)
    p = params_for(0.5)
    ref = 2.0 * sum((-1) ** k * sp.erfc(2 * k + 1) for k in range(10))
    assert hitting_cdf(p).value == pytest.approx(ref, abs=1e-14)


def test_truncation_metadata():
    result = hitting_cdf(params_for(0.5), tol=1e-12)
    assert result.terms_used >= 2
    assert 0.0 <= result.truncation_bound < 1e-12
    loose = hitting_cdf(params_for(0.5), tol=1e-3)
    assert loose.terms_used < result.terms_used


def test_relative_stop_uses_fewer_terms():
    p = params_for(20.0)
    strict = hitting_cdf(p)
    relaxed = hitting_cdf(p, rel_tol=1e-3)
    assert relaxed.terms_used < strict.terms_used
    assert relaxed.value == pytest.approx(strict.value, rel=2e-3)


def test_theta_form_agrees_with_image_form():
    for eps_g in (0.05, 0.5, 2.0, 5.0):
        p = params_for(eps_g)
        assert hitting_cdf_theta_form(p).value == pytest.approx(hitting_cdf(p).value, abs=2e-12)


def test_tiny_barrier_switches_to_theta_form():
    p = params_for(1e10)
    assert (math.sqrt(-math.log(1e-12)) + 1.0) / (2.0 * p.x) > MAX_IMAGE_TERMS
    assert hitting_cdf(p).value == 1.0


def test_cdf_in_unit_interval_and_increasing():
    values = [hitting_cdf(params_for(e)).value for e in np.geomspace(1e-2, 1e2, 40)]
    assert all(0.0 <= v <= 1.0 for v in values)
    assert all(b >= a - 1e-14 for a, b in zip(values, values[1:]))
    assert values[-1] == pytest.approx(1.0, abs=1e-12)


def test_cdf_monotone_in_gain_and_threshold():
    rng = np.random.default_rng(17)
    for sigma2, threshold, window in zip(rng.uniform(0.2, 3.0, 25), rng.uniform(0.2, 3.0, 25),
                                         rng.uniform(0.05, 2.0, 25)):
        by_gain = [hitting_cdf(HittingLawParams(sigma2, threshold, g, window)).value
                   for g in np.geomspace(0.05, 20.0, 12)]
        assert all(b >= a - 1e-14 for a, b in zip(by_gain, by_gain[1:]))
        by_threshold = [hitting_cdf(HittingLawParams(sigma2, e, 1.0, window)).value
                        for e in np.geomspace(0.05, 20.0, 12)]
        assert all(b <= a + 1e-14 for a, b in zip(by_threshold, by_threshold[1:]))


def test_cdf_depends_only_on_eps_g():
    for eps_g in (1e-3, 0.05, 0.5, 3.0):
        reference = hitting_cdf(params_for(eps_g)).value
        # eps*g = sigma2 * window * g / threshold
        for sigma2, threshold, gain in ((2.0, 0.5, 4.0), (0.25, 3.0, 0.5), (7.0, 7.0, 1e-2)):
            window = eps_g * threshold / (sigma2 * gain)
            value = hitting_cdf(HittingLawParams(sigma2, threshold, gain, window)).value
            assert value == pytest.approx(reference, rel=1e-12, abs=1e-15)


def test_tolerance_must_be_positive():
    with pytest.raises(DomainError):
        hitting_cdf(params_for(0.5), tol=0.0)


def test_first_term_error_below_second_term():
    for eps_g in (1e-1, 1e-2, 1e-3):
        p = params_for(eps_g)
        full = hitting_cdf(p, tol=1e-300).value
        first = hitting_cdf_first_term(p)
        second = 2.0 * sp.erfc(3.0 * p.x)
        assert abs(first - full) <= second * (1.0 + 1e-12) + 1e-300


def test_exponential_asymptotic_improves_as_eps_g_shrinks():
    errors = []
    for eps_g in (1e-1, 1e-2, 1e-3):
        p = params_for(eps_g)
        full = hitting_cdf(p, tol=1e-300).value
        errors.append(abs(hitting_cdf_exponential_asymptotic(p) - full) / full)
    assert errors[0] > errors[1] > errors[2]
    # leading correction of the asymptote is eps*g
    assert errors[2] == pytest.approx(1e-3, rel=0.05)


def test_exponential_asymptotic_regime():
    with pytest.raises(RegimeError):
        hitting_cdf_exponential_asymptotic(params_for(1.0))
    with pytest.raises(DomainError):
        hitting_cdf_exponential_asymptotic(params_for(3.0))


def test_crossing_probability_matches_series():
    xs = np.concatenate([np.geomspace(0.02, 0.999, 30), np.linspace(1.0, 6.0, 30)])
    ours = crossing_probability(xs)
    ref = np.array([hitting_cdf(params_for(1.0 / (2.0 * x * x))).value for x in xs])
    assert np.allclose(ours, ref, rtol=0.0, atol=2e-12)


def test_crossing_probability_edges():
    assert crossing_probability(0.0) == 1.0
    assert crossing_probability(30.0) == 0.0
    assert isinstance(crossing_probability(1.0), float)
    values = crossing_probability(np.linspace(0.0, 8.0, 200))
    assert np.all(np.diff(values) <= 0.0)
    with pytest.raises(DomainError):
        crossing_probability(-0.1)


def test_log_crossing_probability():
    assert log_crossing_probability(3.0) == pytest.approx(math.log(crossing_probability(3.0)), rel=1e-13)
    far = log_crossing_probability(40.0)
    assert far == pytest.approx(math.log(2.0) + math.log(sp.erfcx(40.0)) - 1600.0, rel=1e-13)
    # ratio of two channels survives although both probabilities underflow
    assert crossing_probability(40.0) == 0.0
    assert log_crossing_probability(40.0) > log_crossing_probability(45.0)


if __name__ == "__main__":
    from colorama import Fore, Style
    failed = 0
    for name, test in list(globals().items()):
        if name.startswith("test_") and callable(test):
            try:
                test()
                print(f"{Fore.GREEN}PASS{Style.RESET_ALL} {name}")
            except Exception as e:
                failed += 1
                print(f"{Fore.RED}FAIL{Style.RESET_ALL} {name}: {e!r}")
    sys.exit(1 if failed else 0)
