"""
Detection probabilities averaged over the random gain, click counts, and the
generalized Born rule for detectors sharing threshold, window and gain law.

With c = sqrt(E_d / (2 sigma2 dt)) a pulse of gain g = 1/eta^2 crosses with
probability crossing_probability(c eta), so the per-window probability is
the integral of rho_eta(l) crossing_probability(c l) over l > 0. Summing the
image series inside the integral gives the same number as summing the
term-by-term integrals; series_term_integral exposes the individual terms.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from thresholdsim.errors import ConsistencyError, DomainError, MisuseError, NumericalError, RegimeError
from thresholdsim.gain import TAIL_MASS, GainModel, f_eta, require_atom
from thresholdsim.hitting import (CONDITIONAL_TERMS, DEFAULT_TOL, HittingLawParams, SeriesValue,
                                  clamp_probability, crossing_probability, hitting_cdf,
                                  log_crossing_probability, positive_float)
from thresholdsim.quadrature import QUAD_EPSREL, integrate_positive
from thresholdsim.special import erfc, log_erfc

logger = logging.getLogger(__name__)

# crossing_probability(x) and erfc(x) are exactly 0 in double precision past this
ZERO_CROSSING_X = 28.0
FORMS = ("eta", "g")


class ClickMethod(Enum):
    FULL_SERIES = "full_series"
    FIRST_TERM = "first_term"
    DELTA_LIMIT = "delta_limit"


@dataclass(frozen=True)
class DetectorConfig:
    """Threshold E_d, interaction window dt and the gain law of one detector."""
    threshold_energy: float
    window: float
    gain: GainModel

    def __post_init__(self):
        object.__setattr__(self, "threshold_energy", positive_float(self.threshold_energy, "threshold_energy"))
        object.__setattr__(self, "window", positive_float(self.window, "window"))
        if not isinstance(self.gain, GainModel):
            raise MisuseError(f"gain must be a GainModel, got {type(self.gain).__name__}")

    def epsilon(self, sigma2):
        return sigma2 * self.window / self.threshold_energy

    def barrier_scale(self, sigma2):
        """c with x = c * eta; infinite for a silent channel."""
        if sigma2 == 0:
            return math.inf
        return math.sqrt(self.threshold_energy / (2.0 * sigma2 * self.window))

    def hitting_params(self, sigma2):
        return HittingLawParams(sigma2, self.threshold_energy, require_atom(self.gain).gain, self.window)


@dataclass(frozen=True)
class ClickEstimate:
    mean_clicks: float
    run_duration: float
    method: ClickMethod
    window: float

    def __post_init__(self):
        if self.mean_clicks < 0:
            raise ConsistencyError("negative click count", {"mean_clicks": self.mean_clicks})
        windows = self.run_duration / self.window
        if self.mean_clicks > windows * (1.0 + 1e-12):
            raise RegimeError(f"{self.method.value} estimate {self.mean_clicks!r} exceeds one click "
                              f"per window ({windows!r} windows); the signal is not weak")


def _power(sigma2, name="sigma2"):
    try:
        value = float(sigma2)
    except (TypeError, ValueError):
        raise DomainError(f"{name} must be a number, got {sigma2!r}") from None
    if not math.isfinite(value) or value < 0:
        raise DomainError(f"{name} must be finite and >= 0, got {sigma2!r}")
    return value


def _form(form):
    if form not in FORMS:
        raise DomainError(f"form must be one of {FORMS}, got {form!r}")
    return form


def _gain_average(cfg, c, kernel, form, epsabs, epsrel):
    """
    E[kernel(c * eta)] over the gain law, kernel vanishing past ZERO_CROSSING_X.
    form 'eta' integrates rho_eta(l) kernel(c l); form 'g' integrates
    rho_g(l) kernel(c / sqrt(l)).
    """
    model = cfg.gain
    if form == "eta":
        lo, hi = model.eta_bounds()
        hi = min(hi, ZERO_CROSSING_X / c)
        if hi <= lo:
            return 0.0, 0.0
        fn = lambda lam: model.pdf_eta(lam) * kernel(c * lam)
        cuts = (1.0 / c, 4.0 / c, model.eta_median())
    else:
        lo, hi = model.g_bounds()
        lo = max(lo, (c / ZERO_CROSSING_X) ** 2)
        if hi <= lo:
            return 0.0, 0.0
        fn = lambda lam: model.pdf_g(lam) * kernel(c / math.sqrt(lam))
        cuts = (c * c, c * c / 16.0, model.g_median())
    return integrate_positive(fn, lo, hi, breakpoints=cuts, epsabs=epsabs, epsrel=epsrel,
                              what=f"gain average ({form} form, c={c:.6g})")


def detection_prob_fixed_gain(cfg, sigma2, tol=DEFAULT_TOL):
    """P(tau <= dt) for a point-mass gain; the hitting law itself."""
    require_atom(cfg.gain)
    sigma2 = _power(sigma2)
    if sigma2 == 0:
        return SeriesValue(0.0, 0, 0.0)
    return hitting_cdf(cfg.hitting_params(sigma2), tol)


def detection_prob_random_gain(cfg, sigma2, tol=DEFAULT_TOL, form="eta"):
    """
    Per-window detection probability averaged over the gain law.
    truncation_bound carries the quadrature error estimate plus the
    truncated tail mass of the gain density.
    """
    positive_float(tol, "tol")
    _form(form)
    sigma2 = _power(sigma2)
    if cfg.gain.is_atom:
        return detection_prob_fixed_gain(cfg, sigma2, tol)
    if sigma2 == 0:
        return SeriesValue(0.0, 0, 0.0)
    c = cfg.barrier_scale(sigma2)
    value, abserr = _gain_average(cfg, c, crossing_probability, form, epsabs=tol, epsrel=QUAD_EPSREL)
    bound = abserr + 2.0 * TAIL_MASS
    logger.debug("random-gain probability eps=%g form=%s: %.17g +- %g",
                 cfg.epsilon(sigma2), form, value, bound)
    return SeriesValue(clamp_probability(value, bound, "detection_prob_random_gain"),
                       CONDITIONAL_TERMS, bound)


def series_term_integral(cfg, sigma2, k, form="eta", tol=DEFAULT_TOL):
    """
    The k-th image term averaged over the gain law:
    integral of rho_eta(l) erfc((1+2k) c l) dl, absolute tolerance tol/(k+1)^2.
    """
    if int(k) != k or k < 0:
        raise DomainError(f"term index must be a non-negative integer, got {k!r}")
    positive_float(tol, "tol")
    _form(form)
    sigma2 = _power(sigma2)
    if sigma2 == 0:
        return 0.0
    odd = 1.0 + 2.0 * int(k)
    c = cfg.barrier_scale(sigma2)
    if cfg.gain.is_atom:
        return erfc(odd * c * cfg.gain.eta_atom)
    value, _ = _gain_average(cfg, c, lambda x: erfc(odd * x), form,
                             epsabs=tol / (k + 1.0) ** 2, epsrel=QUAD_EPSREL)
    return value


def expected_clicks(cfg, sigma2, run_duration, method=ClickMethod.FULL_SERIES, tol=DEFAULT_TOL):
    """
    Mean click count over a run of length T, one click at most per window.
    delta_limit is the weak-signal law N = 4 sigma2 T <delta, f_eta> / E_d with
    <delta, f_eta> = f_eta(0+)/2 on the one-sided eta axis.
    """
    run_duration = positive_float(run_duration, "run_duration")
    if run_duration < cfg.window:
        raise DomainError(f"run_duration {run_duration!r} is shorter than the window {cfg.window!r}")
    method = ClickMethod(method)
    sigma2 = _power(sigma2)
    windows = run_duration / cfg.window

    if method is ClickMethod.FULL_SERIES:
        clicks = windows * detection_prob_random_gain(cfg, sigma2, tol).value
    elif method is ClickMethod.FIRST_TERM:
        clicks = windows * 2.0 * series_term_integral(cfg, sigma2, 0, tol=tol)
    else:
        half_mass = 0.5 * f_eta(cfg.gain, 0.0)
        clicks = 4.0 * sigma2 * run_duration * half_mass / cfg.threshold_energy
    logger.debug("expected_clicks %s: %.17g over %g windows", method.value, clicks, windows)
    return ClickEstimate(clicks, run_duration, method, cfg.window)


def shared_config(cfgs, channels):
    """One DetectorConfig for every channel; a list must hold equal configs."""
    if isinstance(cfgs, DetectorConfig):
        return cfgs
    cfgs = list(cfgs)
    if len(cfgs) != channels:
        raise DomainError(f"{len(cfgs)} detector configs for {channels} channels")
    first = cfgs[0]
    for other in cfgs[1:]:
        if (other.threshold_energy, other.window, other.gain) != (first.threshold_energy, first.window, first.gain):
            raise DomainError("every channel must share threshold, window and gain law")
    return first


def _channel_powers(sigma2s):
    powers = [_power(s, f"sigma2[{j}]") for j, s in enumerate(sigma2s)]
    if not powers:
        raise DomainError("at least one channel is required")
    if not any(p > 0 for p in powers):
        raise DomainError("every channel power is zero")
    return powers


def _normalize(numerators, what):
    total = math.fsum(numerators)
    if not total > 0 or not math.isfinite(total):
        raise NumericalError(f"{what}: every channel numerator vanished", {"numerators": numerators})
    probs = [n / total for n in numerators]
    if abs(math.fsum(probs) - 1.0) > 1e-12:
        raise ConsistencyError(f"{what} does not sum to 1", {"sum": math.fsum(probs)})
    return probs


def _normalize_logs(log_numerators):
    logs = np.asarray(log_numerators)
    top = np.max(logs)
    if not np.isfinite(top):
        raise NumericalError("every channel log-numerator is -inf", {"log_numerators": list(logs)})
    weights = np.exp(logs - top)
    return _normalize([float(w) for w in weights], "generalized Born probabilities")


def _born_numerators(cfg, powers, tol, form, kernel, log_kernel):
    if cfg.gain.is_atom:
        eta0 = cfg.gain.eta_atom
        logs = [log_kernel(cfg.barrier_scale(p) * eta0) if p > 0 else -math.inf for p in powers]
        return _normalize_logs(logs)
    numerators = []
    for p in powers:
        if p == 0:
            numerators.append(0.0)
            continue
        value, _ = _gain_average(cfg, cfg.barrier_scale(p), kernel, form,
                                 epsabs=0.0, epsrel=max(tol, QUAD_EPSREL))
        numerators.append(value)
    logger.debug("generalized Born numerators %s", numerators)
    return _normalize(numerators, "generalized Born probabilities")


def generalized_born_probabilities(cfgs, sigma2s, tol=DEFAULT_TOL, form="eta"):
    """
    Click shares P_j = N_j / sum_k N_k for channels of power sigma2s seen by
    identical detectors. Silent channels get 0. A point-mass gain is handled in
    the log domain so the shares survive when every probability underflows.
    """
    positive_float(tol, "tol")
    powers = _channel_powers(sigma2s)
    cfg = shared_config(cfgs, len(powers))
    return _born_numerators(cfg, powers, tol, _form(form), crossing_probability, log_crossing_probability)


def _log_first_term(x):
    return math.log(2.0) + log_erfc(x)


def generalized_born_first_term(cfgs, sigma2s, tol=DEFAULT_TOL, form="eta"):
    """Same shares keeping only the leading term 2 erfc(c eta) of each numerator."""
    positive_float(tol, "tol")
    powers = _channel_powers(sigma2s)
    cfg = shared_config(cfgs, len(powers))
    return _born_numerators(cfg, powers, tol, _form(form), lambda x: 2.0 * erfc(x), _log_first_term)


def channel_detection_probabilities(cfgs, sigma2s, tol=DEFAULT_TOL):
    """Per-window absolute probabilities P(tau_j <= dt), one per channel."""
    powers = [_power(s, f"sigma2[{j}]") for j, s in enumerate(sigma2s)]
    if not powers:
        raise DomainError("at least one channel is required")
    cfg = shared_config(cfgs, len(powers))
    return [detection_prob_random_gain(cfg, p, tol).value for p in powers]
