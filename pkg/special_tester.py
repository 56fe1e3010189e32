import math
import sys

import numpy as np
import pytest
from scipy import integrate, special as sp, stats

from thresholdsim.errors import DomainError
from thresholdsim.special import (erf, erfc, erfc_asymptotic, erfcx, gaussian_kernel, log_erfc,
                                  std_normal_cdf)

GRID = np.concatenate([np.linspace(-6.0, 6.0, 241), np.linspace(6.0, 26.0, 120)])


def test_erfc_matches_scipy():
    ours = erfc(GRID)
    ref = sp.erfc(GRID)
    assert np.allclose(ours, ref, rtol=2e-13, atol=0.0)


def test_erfc_edges():
    assert erfc(0.0) == 1.0
    assert erfc(28.0) == 0.0
    assert erfc(-40.0) == 2.0
    assert erfc(26.0) > 0.0


def test_erf_matches_scipy():
    xs = np.linspace(-8.0, 8.0, 801)
    assert np.allclose(erf(xs), sp.erf(xs), rtol=1e-14, atol=1e-16)
    assert np.allclose(erf(xs) + erfc(xs), 1.0, rtol=0.0, atol=4e-16)


def test_erfcx_matches_scipy():
    xs = np.concatenate([np.linspace(0.0, 5.0, 51), np.geomspace(5.0, 1e4, 60)])
    assert np.allclose(erfcx(xs), sp.erfcx(xs), rtol=1e-13, atol=0.0)


def test_log_erfc_survives_underflow():
    xs = np.array([0.5, 2.0, 10.0, 30.0, 100.0, 1000.0])
    ref = np.log(sp.erfcx(xs)) - xs * xs
    assert np.allclose(log_erfc(xs), ref, rtol=1e-13)
    assert np.isfinite(log_erfc(1000.0))


def test_scalar_in_scalar_out():
    assert isinstance(erfc(1.0), float)
    assert isinstance(erfcx(1.0), float)
    assert isinstance(log_erfc(40.0), float)
    out = erfc([0.5, 1.5])
    assert isinstance(out, np.ndarray) and out.shape == (2,)


def test_non_finite_input_rejected():
    with pytest.raises(DomainError):
        erfc(math.nan)
    with pytest.raises(DomainError):
        erf([0.0, math.inf])


def test_std_normal_cdf():
    xs = np.linspace(-7.0, 7.0, 141)
    assert np.allclose(std_normal_cdf(xs), stats.norm.cdf(xs), rtol=1e-13, atol=1e-300)


def test_asymptotic_expansion_brackets_erfc():
    for x in (3.0, 5.0, 8.0):
        result = erfc_asymptotic(x)
        assert result.terms_used >= 1
        assert result.error_bound > 0.0
        assert abs(result.value - sp.erfc(x)) <= result.error_bound + 1e-14 * result.value


def test_asymptotic_expansion_truncates_before_divergence():
    result = erfc_asymptotic(2.0)
    # terms grow once n exceeds about x^2
    assert result.terms_used <= 6
    one = erfc_asymptotic(5.0, max_terms=1)
    assert one.terms_used == 1
    assert one.value == pytest.approx(math.exp(-25.0) / (5.0 * math.sqrt(math.pi)))


def test_asymptotic_expansion_domain():
    with pytest.raises(DomainError):
        erfc_asymptotic(0.0)
    with pytest.raises(DomainError):
        erfc_asymptotic(-1.0)
    with pytest.raises(DomainError):
        erfc_asymptotic(2.0, max_terms=0)


def test_gaussian_kernel_is_a_delta_sequence():
    for eps in (1.0, 1e-2, 1e-4):
        half = 50.0 * math.sqrt(eps)
        mass, _ = integrate.quad(lambda l: gaussian_kernel(l, eps), -half, half, points=[0.0])
        assert mass == pytest.approx(1.0, abs=1e-10)
    # <D_eps, f> -> f(0) for a smooth f
    smooth = lambda l: math.cos(l) + 2.0
    values = [integrate.quad(lambda l: gaussian_kernel(l, eps) * smooth(l), -1, 1, points=[0.0])[0]
              for eps in (1e-2, 1e-3, 1e-4)]
    gaps = [abs(v - 3.0) for v in values]
    assert gaps[0] > gaps[1] > gaps[2]


def test_gaussian_kernel_domain():
    with pytest.raises(DomainError):
        gaussian_kernel(0.0, 0.0)
    with pytest.raises(DomainError):
        gaussian_kernel(0.0, -1.0)


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
