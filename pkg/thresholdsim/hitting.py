"""
First-passage law of |phi| through the barrier a = sqrt(E_d/g) for a Wiener
signal phi of power sigma2 observed during a window dt.

Every quantity depends on the parameters only through the dimensionless
barrier x = a / sqrt(2 sigma2 dt) = 1/sqrt(2 eps g).
"""

import logging
import math
from dataclasses import dataclass

import numpy as np

from thresholdsim.errors import ConsistencyError, DomainError, NumericalError, RegimeError
from thresholdsim.special import erfc, log_erfc, std_normal_cdf

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-12
SERIES_BLOCK = 64
MAX_IMAGE_TERMS = 200_000
CONDITIONAL_TERMS = 8
LOG_ASYMPTOTE_FROM = 5.0


def positive_float(value, name):
    """float(value) if it is finite and > 0, else DomainError."""
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise DomainError(f"{name} must be a number, got {value!r}") from None
    if not math.isfinite(value) or value <= 0:
        raise DomainError(f"{name} must be positive and finite, got {value!r}")
    return value


@dataclass(frozen=True)
class HittingLawParams:
    """sigma2 (power), threshold_energy (E_d), gain (g), window (dt); all > 0."""
    sigma2: float
    threshold_energy: float
    gain: float
    window: float

    def __post_init__(self):
        for name in ("sigma2", "threshold_energy", "gain", "window"):
            object.__setattr__(self, name, positive_float(getattr(self, name), name))

    @property
    def barrier(self):
        return math.sqrt(self.threshold_energy / self.gain)

    @property
    def epsilon(self):
        return self.sigma2 * self.window / self.threshold_energy

    @property
    def eps_g(self):
        return self.sigma2 * self.window * self.gain / self.threshold_energy

    @property
    def x(self):
        return math.sqrt(self.threshold_energy / (2.0 * self.sigma2 * self.window * self.gain))


@dataclass(frozen=True)
class SeriesValue:
    value: float
    terms_used: int
    truncation_bound: float


def _check_tol(tol):
    positive_float(tol, "tol")


def clamp_probability(value, bound, what="probability"):
    """Clamp into [0, 1]; a miss larger than the truncation bound is an internal error."""
    slack = bound + 4 * np.finfo(float).eps
    if value < -slack or value > 1.0 + slack:
        raise ConsistencyError(f"{what} outside [0, 1] beyond its truncation bound",
                               {"value": value, "truncation_bound": bound})
    return min(1.0, max(0.0, value))


def _alternating_series(term_block, tol, rel_tol=None):
    """
    Sum t_0 - t_1 + t_2 - ... of nonincreasing terms, stopping before the
    first term below tol (or below rel_tol * |partial sum|).
    Returns (partial_sum, terms_used, first_omitted_term).
    """
    partial = 0.0
    previous = math.inf
    k0 = 0
    while k0 < MAX_IMAGE_TERMS:
        terms = term_block(np.arange(k0, k0 + SERIES_BLOCK))
        if terms[0] > previous or np.any(np.diff(terms) > 0):
            raise ConsistencyError("series terms are not monotone", {"first_index": k0})
        for i, term in enumerate(terms):
            term = float(term)
            if term < tol or (rel_tol is not None and term < rel_tol * abs(partial)):
                return partial, k0 + i, term
            partial += term if (k0 + i) % 2 == 0 else -term
        previous = float(terms[-1])
        k0 += SERIES_BLOCK
    raise NumericalError("alternating series did not reach its tolerance",
                         {"terms": k0, "tol": tol})


def _image_terms_needed(x, tol):
    return (math.sqrt(-math.log(min(tol, 0.5))) + 1.0) / (2.0 * x)


def hitting_cdf(params, tol=DEFAULT_TOL, rel_tol=None):
    """
    P(tau <= dt) = 2 sum_k (-1)^k erfc((1+2k) x), stopping once the next term
    is below tol. Passing rel_tol (1e-3 gives the coarse relative stop) also
    stops once the next term is below rel_tol * |partial sum|; it is off by
    default so the result carries an absolute error bound.
    """
    _check_tol(tol)
    x = params.x
    if _image_terms_needed(x, tol) > MAX_IMAGE_TERMS:
        logger.debug("hitting_cdf: x=%g needs the theta form", x)
        return hitting_cdf_theta_form(params, tol)

    value, used, omitted = _alternating_series(
        lambda ks: 2.0 * erfc((1.0 + 2.0 * ks) * x), tol, rel_tol)
    logger.debug("hitting_cdf x=%g terms=%d bound=%g", x, used, omitted)
    return SeriesValue(clamp_probability(value, omitted, "hitting_cdf"), used, omitted)


def hitting_cdf_normal_form(params, tol=DEFAULT_TOL, rel_tol=None):
    """Same law written as 4 sum_k (-1)^k [1 - Phi((1+2k) a / sqrt(sigma2 dt))]."""
    _check_tol(tol)
    y = params.barrier / math.sqrt(params.sigma2 * params.window)
    value, used, omitted = _alternating_series(
        lambda ks: 4.0 * (1.0 - std_normal_cdf((1.0 + 2.0 * ks) * y)), tol, rel_tol)
    return SeriesValue(clamp_probability(value, omitted, "hitting_cdf_normal_form"), used, omitted)


def _theta_survival(x, tol):
    """(4/pi) sum_k (-1)^k exp(-(2k+1)^2 pi^2 / (16 x^2)) / (2k+1)."""
    scale = math.pi * math.pi / (16.0 * x * x)

    def block(ks):
        odd = 1.0 + 2.0 * ks
        return (4.0 / math.pi) * np.exp(-odd * odd * scale) / odd

    return _alternating_series(block, tol)


def hitting_cdf_theta_form(params, tol=DEFAULT_TOL):
    """1 - survival, with the survival written as the eigenfunction series."""
    _check_tol(tol)
    survival, used, omitted = _theta_survival(params.x, tol)
    return SeriesValue(clamp_probability(1.0 - survival, omitted, "hitting_cdf_theta_form"),
                       used, omitted)


def hitting_cdf_first_term(params):
    """Leading image term 2 erfc(1/sqrt(2 eps g)); meaningful for eps g << 1."""
    return 2.0 * erfc(params.x)


def hitting_cdf_exponential_asymptotic(params):
    """2 sqrt(2 eps g / pi) exp(-1/(2 eps g)), valid only for eps g < 1."""
    eg = params.eps_g
    if eg >= 1.0:
        raise RegimeError(f"exponential asymptotic needs eps*g < 1, got {eg!r}")
    return 2.0 * math.sqrt(2.0 * eg / math.pi) * math.exp(-1.0 / (2.0 * eg))


_ODD = 1.0 + 2.0 * np.arange(CONDITIONAL_TERMS)
_SIGNS = np.where(np.arange(CONDITIONAL_TERMS) % 2 == 0, 1.0, -1.0)


def crossing_probability(x):
    """
    Vectorized P(tau <= dt) as a function of the dimensionless barrier x >= 0.
    Uses the image series for x >= 1 and the theta series below; eight terms
    of either are exact to double precision on its side of the switch.
    """
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    if np.any(x < 0) or not np.all(np.isfinite(x)):
        raise DomainError("barrier x must be finite and >= 0")
    out = np.ones_like(x)

    image = x >= 1.0
    if np.any(image):
        terms = 2.0 * erfc(np.outer(x[image], _ODD).ravel()).reshape(-1, CONDITIONAL_TERMS)
        out[image] = terms @ _SIGNS

    theta = (x > 0) & ~image
    if np.any(theta):
        xt = x[theta]
        q = np.exp(-np.outer(1.0 / (xt * xt), _ODD * _ODD) * (math.pi ** 2 / 16.0)) / _ODD
        out[theta] = 1.0 - (4.0 / math.pi) * (q @ _SIGNS)

    np.clip(out, 0.0, 1.0, out=out)
    return float(out[0]) if scalar else out


def log_crossing_probability(x):
    """log of crossing_probability, exact past the underflow of erfc."""
    x = np.asarray(x, dtype=np.float64)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    out = np.empty_like(x)
    near = x < LOG_ASYMPTOTE_FROM
    if np.any(near):
        with np.errstate(divide="ignore"):
            out[near] = np.log(crossing_probability(x[near]))
    far = ~near
    if np.any(far):
        # erfc(3x)/erfc(x) < exp(-8 x^2) is below double precision here
        out[far] = math.log(2.0) + log_erfc(x[far])
    return float(out[0]) if scalar else out
