import math
import sys

import numpy as np
import pytest
from scipy import integrate, special as sp, stats

from thresholdsim.channels import CovarianceOperator, born_probabilities, channel_powers, decompose_signal, \
    density_operator, diagonalizing_basis
from thresholdsim.detection import (ClickMethod, DetectorConfig, channel_detection_probabilities,
                                    detection_prob_fixed_gain, detection_prob_random_gain, expected_clicks,
                                    generalized_born_first_term, generalized_born_probabilities,
                                    series_term_integral, shared_config)
from thresholdsim.errors import DomainError, LimitUndefinedError, MisuseError, RegimeError
from thresholdsim.gain import ExponentialGain, LogNormalGain, PointMassGain, RayleighEtaGain
from thresholdsim.hitting import HittingLawParams, crossing_probability, hitting_cdf

CATALAN = 0.915965594177219015
EPSILONS = (1e-1, 1e-2, 1e-3)


def detector(eps, gain, sigma2=1.0, threshold=1.0):
    """Detector whose window gives eps = sigma2 dt / E_d."""
    return DetectorConfig(threshold, eps * threshold / sigma2, gain)


def test_fixed_gain_is_the_hitting_law():
    cfg = DetectorConfig(2.0, 0.3, PointMassGain(1.5))
    ours = detection_prob_fixed_gain(cfg, 4.0)
    assert ours == hitting_cdf(HittingLawParams(4.0, 2.0, 1.5, 0.3))
    assert detection_prob_random_gain(cfg, 4.0).value == ours.value


def test_silent_channel_never_clicks():
    assert detection_prob_fixed_gain(detector(0.1, PointMassGain(1.0)), 0.0).value == 0.0
    assert detection_prob_random_gain(detector(0.1, RayleighEtaGain(1.0)), 0.0).value == 0.0
    with pytest.raises(DomainError):
        detection_prob_random_gain(detector(0.1, RayleighEtaGain(1.0)), -1.0)


def test_fixed_gain_needs_point_mass():
    with pytest.raises(MisuseError):
        detection_prob_fixed_gain(detector(0.1, ExponentialGain(1.0)), 1.0)
    with pytest.raises(MisuseError):
        DetectorConfig(1.0, 1.0, "lognormal")


def test_random_gain_against_direct_quadrature():
    model = RayleighEtaGain(scale=1.0)
    for eps in (0.3, 1e-2):
        cfg = detector(eps, model)
        c = math.sqrt(1.0 / (2.0 * eps))
        ref = integrate.quad(lambda l: stats.rayleigh.pdf(l) * crossing_probability(c * l), 0.0, 28.0 / c,
                             points=[1.0 / c], epsabs=1e-14, epsrel=1e-11, limit=200)[0]
        ours = detection_prob_random_gain(cfg, 1.0)
        assert ours.value == pytest.approx(ref, rel=1e-8)
        assert ours.truncation_bound > 0.0


def test_eta_and_g_forms_agree():
    for model in (RayleighEtaGain(0.7), LogNormalGain(0.0, 0.5)):
        for eps in (0.2, 1e-2):
            cfg = detector(eps, model)
            eta = detection_prob_random_gain(cfg, 1.0, form="eta").value
            g = detection_prob_random_gain(cfg, 1.0, form="g").value
            assert eta == pytest.approx(g, rel=1e-7, abs=2e-11)
    with pytest.raises(DomainError):
        detection_prob_random_gain(detector(0.1, RayleighEtaGain(1.0)), 1.0, form="lambda")


def test_term_integrals_sum_to_the_probability():
    cfg = detector(0.1, LogNormalGain(0.0, 0.5))
    terms = [series_term_integral(cfg, 1.0, k) for k in range(12)]
    assert terms[0] > terms[1] > terms[2] > 0.0
    summed = 2.0 * sum((-1) ** k * t for k, t in enumerate(terms))
    assert summed == pytest.approx(detection_prob_random_gain(cfg, 1.0).value, abs=1e-9)


def test_term_integral_point_mass_and_errors():
    cfg = detector(0.1, PointMassGain(1.0))
    x = 1.0 / math.sqrt(0.2)
    assert series_term_integral(cfg, 1.0, 1) == pytest.approx(sp.erfc(3.0 * x))
    with pytest.raises(DomainError):
        series_term_integral(cfg, 1.0, -1)
    with pytest.raises(DomainError):
        series_term_integral(cfg, 1.0, 1.5)


def test_first_term_brackets_the_probability():
    cfg = detector(1e-3, RayleighEtaGain(1.0))
    full = detection_prob_random_gain(cfg, 1.0).value
    t0, t1 = (series_term_integral(cfg, 1.0, k) for k in (0, 1))
    assert 2.0 * (t0 - t1) <= full <= 2.0 * t0


def test_weak_signal_probability_is_catalan_times_eps():
    cfg = detector(1e-4, RayleighEtaGain(1.0))
    assert detection_prob_random_gain(cfg, 1.0).value == pytest.approx(CATALAN * 1e-4, rel=1e-3)


def test_clicks_over_one_window_equal_the_probability():
    cfg = detector(1e-2, RayleighEtaGain(1.0))
    p = detection_prob_random_gain(cfg, 1.0).value
    one = expected_clicks(cfg, 1.0, cfg.window)
    assert one.mean_clicks == pytest.approx(p, rel=1e-14)
    many = expected_clicks(cfg, 1.0, 1000.0 * cfg.window)
    assert many.mean_clicks == pytest.approx(1000.0 * p, rel=1e-12)
    assert many.method is ClickMethod.FULL_SERIES


def test_delta_limit_formula():
    cfg = detector(1e-2, RayleighEtaGain(2.0), sigma2=3.0, threshold=5.0)
    estimate = expected_clicks(cfg, 3.0, 10.0, ClickMethod.DELTA_LIMIT)
    # N = 2 sigma2 T f_eta(0+) / E_d with f_eta(0+) = 1/s^2
    assert estimate.mean_clicks == pytest.approx(2.0 * 3.0 * 10.0 * 0.25 / 5.0)


def test_click_ratios_approach_their_limits():
    gaps_full, gaps_first = [], []
    for eps in EPSILONS:
        cfg = detector(eps, RayleighEtaGain(1.0))
        run = 1e4 * cfg.window
        full = expected_clicks(cfg, 1.0, run, "full_series").mean_clicks
        first = expected_clicks(cfg, 1.0, run, "first_term").mean_clicks
        delta = expected_clicks(cfg, 1.0, run, "delta_limit").mean_clicks
        gaps_full.append(abs(full / delta - CATALAN / 2.0))
        gaps_first.append(abs(first / delta - 0.5))
    assert gaps_full[0] > gaps_full[1] > gaps_full[2]
    assert gaps_first[0] > gaps_first[1] > gaps_first[2]
    assert gaps_full[2] < 5e-3


def test_delta_limit_needs_a_valid_gain():
    cfg = detector(1e-2, LogNormalGain(0.0, 0.5))
    with pytest.raises(LimitUndefinedError):
        expected_clicks(cfg, 1.0, 10.0, ClickMethod.DELTA_LIMIT)


def test_click_estimates_reject_strong_signals():
    cfg = detector(0.8, RayleighEtaGain(1.0))
    with pytest.raises(RegimeError):
        expected_clicks(cfg, 1.0, 100.0, ClickMethod.DELTA_LIMIT)
    with pytest.raises(DomainError):
        expected_clicks(cfg, 1.0, 0.1 * cfg.window)


def test_shares_sum_to_one():
    cfg = detector(1e-2, RayleighEtaGain(1.0))
    for powers in ([0.25, 0.75], [0.2, 0.3, 0.5], [1.0, 1.0, 1.0, 1.0]):
        shares = generalized_born_probabilities(cfg, powers)
        assert math.fsum(shares) == pytest.approx(1.0, abs=1e-12)
        first = generalized_born_first_term(cfg, powers)
        assert math.fsum(first) == pytest.approx(1.0, abs=1e-12)
    equal = generalized_born_probabilities(cfg, [1.0, 1.0, 1.0, 1.0])
    assert np.allclose(equal, 0.25, atol=1e-14)


def test_shares_invariant_under_power_and_window_rescaling():
    powers = [0.2, 0.3, 0.5]
    for gain in (RayleighEtaGain(1.0), PointMassGain(1.0), ExponentialGain(2.0)):
        cfg = detector(5e-2, gain)
        reference = generalized_born_probabilities(cfg, powers)
        for c in (0.1, 3.0, 250.0):
            # sigma2 -> c sigma2 and dt -> dt / c leave every eps_j alone
            scaled = DetectorConfig(cfg.threshold_energy, cfg.window / c, gain)
            shares = generalized_born_probabilities(scaled, [c * p for p in powers])
            assert shares == pytest.approx(reference, rel=1e-9, abs=1e-12), (gain, c)


def test_shares_follow_channel_permutations():
    powers = [0.1, 0.25, 0.65]
    for gain in (RayleighEtaGain(1.0), PointMassGain(1.0)):
        cfg = detector(1e-2, gain)
        reference = generalized_born_probabilities(cfg, powers)
        for order in ((2, 0, 1), (1, 2, 0), (2, 1, 0)):
            shares = generalized_born_probabilities(cfg, [powers[i] for i in order])
            assert shares == pytest.approx([reference[i] for i in order], rel=1e-12, abs=1e-15)


def covariances():
    rotated = CovarianceOperator([[0.6, 0.2], [0.2, 0.4]])
    return [CovarianceOperator(np.diag([0.25, 0.75])),
            CovarianceOperator(np.diag([0.2, 0.3, 0.5])),
            decompose_signal(rotated, diagonalizing_basis(rotated))]


def test_born_rule_emerges_with_random_gain():
    for B in covariances():
        powers = channel_powers(B)
        born = born_probabilities(density_operator(B))
        total = sum(powers)
        worst = []
        for eps in EPSILONS:
            cfg = detector(eps, RayleighEtaGain(1.0), sigma2=total)
            shares = generalized_born_probabilities(cfg, powers)
            worst.append(max(abs(p - b) for p, b in zip(shares, born)))
        assert worst[0] > worst[1] > worst[2], B
        assert worst[2] < 1e-2


def test_fixed_gain_favours_the_strongest_channel():
    powers = [0.25, 0.75]
    leading = []
    for eps in EPSILONS:
        cfg = detector(eps, PointMassGain(1.0))
        shares = generalized_born_probabilities(cfg, powers)
        assert math.fsum(shares) == pytest.approx(1.0, abs=1e-12)
        leading.append(shares[1])
    assert 0.75 < leading[0] < leading[1] < leading[2]
    assert leading[2] > 0.999


def test_fixed_gain_shares_survive_underflow():
    cfg = detector(1e-4, PointMassGain(1.0))
    assert detection_prob_fixed_gain(cfg, 0.5).value == 0.0
    shares = generalized_born_probabilities(cfg, [0.5, 0.5])
    assert shares == pytest.approx([0.5, 0.5])


def test_silent_channels_get_zero_share():
    cfg = detector(1e-2, RayleighEtaGain(1.0))
    assert generalized_born_probabilities(cfg, [0.0, 1.0]) == [0.0, 1.0]
    with pytest.raises(DomainError):
        generalized_born_probabilities(cfg, [0.0, 0.0])
    with pytest.raises(DomainError):
        generalized_born_probabilities(cfg, [])


def test_per_channel_configs_must_match():
    a = detector(1e-2, RayleighEtaGain(1.0))
    b = detector(1e-2, RayleighEtaGain(2.0))
    assert shared_config([a, a], 2) is a
    with pytest.raises(DomainError):
        shared_config([a, b], 2)
    with pytest.raises(DomainError):
        shared_config([a], 2)


def test_channel_detection_probabilities():
    cfg = detector(1e-2, RayleighEtaGain(1.0))
    probs = channel_detection_probabilities(cfg, [0.25, 0.0, 0.75])
    assert probs[1] == 0.0
    assert probs[0] == detection_prob_random_gain(cfg, 0.25).value
    assert probs[2] == detection_prob_random_gain(cfg, 0.75).value
    assert probs[0] < probs[2]


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
