import math
import sys

import numpy as np
import pytest
from scipy import integrate, stats

from thresholdsim.errors import DomainError, LimitUndefinedError, MisuseError
from thresholdsim.gain import (DynodeCompoundGain, ExponentialGain, GainKind, GainModel, LogNormalGain,
                               PointMassGain, RayleighEtaGain, cdf_g, eta_density, f_eta,
                               gain_model_from_dict, require_atom, rho_eta, rho_g, sample_gain)
from thresholdsim.stats import ks_critical

CONTINUOUS = [LogNormalGain(mu=0.3, sigma=0.6), ExponentialGain(mean=2.0), RayleighEtaGain(scale=0.8)]


def dynode():
    return DynodeCompoundGain(collection_fraction=0.5, mean_yield=3.0, stages=4, density_samples=50_000)


def log_mass(fn, lo, hi, points=()):
    """Integral of fn over (lo, hi) in the variable u = ln(lambda)."""
    edges = [math.log(lo)] + sorted(math.log(p) for p in points if lo < p < hi) + [math.log(hi)]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        total += integrate.quad(lambda u: float(fn(math.exp(u))) * math.exp(u), a, b,
                                epsabs=1e-14, epsrel=1e-12, limit=400)[0]
    return total


def test_densities_normalize():
    for model in CONTINUOUS + [dynode()]:
        g_mass = log_mass(lambda l: rho_g(model, l), *model.g_bounds(), points=(model.g_median(),))
        eta_mass = log_mass(lambda l: rho_eta(model, l), *model.eta_bounds(), points=(model.eta_median(),))
        assert g_mass == pytest.approx(1.0, abs=1e-8), model
        assert eta_mass == pytest.approx(1.0, abs=1e-8), model


def test_g_eta_round_trip_is_identity():
    lams = np.geomspace(0.05, 20.0, 60)
    for model in CONTINUOUS:
        back = rho_eta(model, 1.0 / np.sqrt(lams)) / (2.0 * lams ** 1.5)
        assert np.allclose(back, rho_g(model, lams), rtol=1e-10, atol=0.0), model


def test_half_cube_jacobian_does_not_normalize():
    model = ExponentialGain(mean=1.0)
    lo, hi = model.eta_bounds()
    wrong = log_mass(lambda l: model.pdf_g(1.0 / (l * l)) / (2.0 * l ** 3), lo, hi, points=(model.eta_median(),))
    assert wrong == pytest.approx(0.25, abs=1e-8)


def test_rayleigh_eta_view_is_rayleigh():
    model = RayleighEtaGain(scale=1.3)
    lams = np.linspace(0.01, 6.0, 50)
    generic = GainModel.pdf_eta(model, lams)
    assert np.allclose(generic, stats.rayleigh(scale=1.3).pdf(lams), rtol=1e-10)


def test_born_limit_validity():
    assert eta_density(RayleighEtaGain(scale=2.0)).born_limit_valid
    assert eta_density(RayleighEtaGain(scale=2.0)).f_eta_at_zero == pytest.approx(0.25)
    for model in (LogNormalGain(0.0, 0.5), ExponentialGain(1.0), PointMassGain(1.0)):
        assert not eta_density(model).born_limit_valid, model


def test_numeric_limit_matches_closed_form():
    model = RayleighEtaGain(scale=2.0)
    limit, exists = GainModel.eta_limit_at_zero(model)
    assert exists
    assert limit == pytest.approx(0.25, rel=1e-6)


def test_eta_density_is_cached():
    model = LogNormalGain(0.0, 0.5)
    assert "eta_density" not in vars(model)
    first = eta_density(model)
    assert vars(model)["eta_density"] is first
    assert eta_density(model) is first and model.eta_density is first
    assert first.source is model
    assert eta_density(LogNormalGain(0.0, 0.5)) == first


def test_f_eta():
    model = RayleighEtaGain(scale=1.0)
    assert f_eta(model, 0.0) == 1.0
    assert f_eta(model, 0.5) == pytest.approx(math.exp(-0.125))
    assert f_eta(model, -0.5) == f_eta(model, 0.5)
    with pytest.raises(LimitUndefinedError):
        f_eta(LogNormalGain(0.0, 0.5), 0.0)
    with pytest.raises(DomainError):
        f_eta(model, math.nan)


def test_f_eta_point_mass():
    model = PointMassGain(4.0)
    assert model.eta_atom == 0.5
    assert f_eta(model, 0.5) == 2.0
    assert f_eta(model, 0.3) == 0.0
    with pytest.raises(LimitUndefinedError):
        f_eta(model, 0.0)


def test_density_arguments_validated():
    model = ExponentialGain(1.0)
    with pytest.raises(DomainError):
        rho_g(model, 0.0)
    with pytest.raises(DomainError):
        rho_eta(model, [1.0, -2.0])
    assert isinstance(rho_g(model, 1.0), float)
    assert rho_g(model, [1.0, 2.0]).shape == (2,)


def test_samplers_agree_with_cdfs():
    rng = np.random.default_rng(20240607)
    lognormal = LogNormalGain(mu=0.3, sigma=0.6)
    samples = sample_gain(lognormal, rng, size=100_000)
    assert stats.kstest(samples, lognormal.cdf).statistic < 0.006
    for model in CONTINUOUS[1:]:
        draws = sample_gain(model, rng, size=20_000)
        assert stats.kstest(draws, lambda x: cdf_g(model, x)).statistic < ks_critical(draws.size, 0.01), model


def test_sample_shapes():
    rng = np.random.default_rng(1)
    for model in CONTINUOUS + [PointMassGain(2.0)]:
        assert isinstance(sample_gain(model, rng), float)
        assert sample_gain(model, rng, size=7).shape == (7,)
        assert np.all(sample_gain(model, rng, size=100) > 0)


def test_exponential_cdf():
    model = ExponentialGain(mean=3.0)
    xs = np.array([0.5, 3.0, 10.0])
    assert np.allclose(cdf_g(model, xs), 1.0 - np.exp(-xs / 3.0))


def test_dynode_mean_and_extinction():
    model = dynode()
    q = 0.0
    for _ in range(4):
        q = math.exp(3.0 * (q - 1.0))
    assert model.extinction_probability() == pytest.approx(q)
    assert model.mean() == pytest.approx(0.5 * 81.0 / (1.0 - q))

    rng = np.random.default_rng(99)
    raw = model._cascade(rng, 200_000)
    dead = np.mean(raw == 0)
    assert abs(dead - q) <= 5.0 * math.sqrt(q * (1.0 - q) / raw.size)

    draws = model.sample(rng, 200_000)
    assert np.all(draws >= model.collection_fraction)
    assert abs(draws.mean() - model.mean()) <= 5.0 * draws.std() / math.sqrt(draws.size)


def test_dynode_histogram_matches_density():
    model = DynodeCompoundGain(collection_fraction=0.5, mean_yield=3.0, stages=4, density_samples=1_000_000)
    n = 1_000_000
    draws = sample_gain(model, np.random.default_rng(4242), size=n)
    # cell edges halfway between lattice points alpha*z; the last bin is open
    cells = np.array([1, 3, 6, 10, 15, 21, 28, 36, 45, 55, 66, 79, 94, 111, 131, 155, 184, 220, 265])
    edges = model.collection_fraction * (cells - 0.5)
    counts = np.bincount(np.searchsorted(edges, draws, side="right") - 1, minlength=edges.size)
    assert counts.sum() == n
    probs = np.diff(np.append(cdf_g(model, edges), 1.0))
    assert probs.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(probs > 1e-3)
    # the density carries the sampling noise of its own construction sample
    band = np.sqrt(n * probs * (1.0 - probs) * (1.0 + n / model.density_samples))
    z = (counts - n * probs) / band
    assert np.max(np.abs(z)) <= 4.0, z
    assert stats.chi2.sf(np.sum(z ** 2), df=z.size - 1) > 1e-3, z


def test_dynode_density_is_reproducible():
    a, b = dynode(), dynode()
    lams = np.geomspace(1.0, 200.0, 20)
    assert np.array_equal(a.pdf_g(lams), b.pdf_g(lams))
    assert a.pdf_g(1e-9) == 0.0
    assert a.cdf(np.array([1e9]))[0] == pytest.approx(1.0, abs=1e-9)


def test_dynode_validation():
    with pytest.raises(DomainError):
        DynodeCompoundGain(0.5, 1.0, 4)
    with pytest.raises(DomainError):
        DynodeCompoundGain(0.5, 3.0, 0)
    with pytest.raises(DomainError):
        DynodeCompoundGain(-0.5, 3.0, 4)


def test_dict_round_trip():
    for model in CONTINUOUS + [PointMassGain(2.5)]:
        again = gain_model_from_dict(model.to_dict())
        assert again == model
        assert hash(again) == hash(model)
    assert gain_model_from_dict({"kind": "point_mass", "gain": 3.0}).kind is GainKind.POINT_MASS


def test_dict_errors():
    with pytest.raises(DomainError):
        gain_model_from_dict({"kind": "gamma", "shape": 2.0})
    with pytest.raises(DomainError):
        gain_model_from_dict({"gain": 1.0})
    with pytest.raises(DomainError):
        gain_model_from_dict({"kind": "lognormal", "mu": 0.0})
    with pytest.raises(DomainError):
        LogNormalGain(0.0, -1.0)


def test_require_atom():
    atom = PointMassGain(1.0)
    assert require_atom(atom) is atom
    with pytest.raises(MisuseError):
        require_atom(ExponentialGain(1.0))


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
