"""
Error-function family in double precision.

erf/erfc follow the rational approximations of FreeBSD msun s_erf.c
(Sun Microsystems, 1993; free to use with this notice preserved), vectorized
over numpy arrays. The high/low split of x before exponentiation is kept so
erfc stays within a few ulps up to the underflow point.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.polynomial import polyval

from thresholdsim.errors import DomainError

logger = logging.getLogger(__name__)

SQRT_PI = math.sqrt(math.pi)
SQRT_2 = math.sqrt(2.0)

erx = 8.45062911510467529297e-01

# erf on [0, 0.84375]
PP = np.array([1.28379167095512558561e-01, -3.25042107247001499370e-01,
               -2.84817495755985104766e-02, -5.77027029648944159157e-03,
               -2.37630166566501626084e-05])
QQ = np.array([1.0, 3.97917223959155352819e-01, 6.50222499887672944485e-02,
               5.08130628187576562776e-03, 1.32494738004321644526e-04,
               -3.96022827877536812320e-06])

# erf on [0.84375, 1.25]
PA = np.array([-2.36211856075265944077e-03, 4.14856118683748331666e-01,
               -3.72207876035701323847e-01, 3.18346619901161753674e-01,
               -1.10894694282396677476e-01, 3.54783043256182359371e-02,
               -2.16637559486879084300e-03])
QA = np.array([1.0, 1.06420880400844228286e-01, 5.40397917702171048937e-01,
               7.18286544141962662868e-02, 1.26171219808761642112e-01,
               1.36370839120290507362e-02, 1.19844998467991074170e-02])

# erfc on [1.25, 1/0.35]
RA = np.array([-9.86494403484714822705e-03, -6.93858572707181764372e-01,
               -1.05586262253232909814e01, -6.23753324503260060396e01,
               -1.62396669462573470355e02, -1.84605092906711035994e02,
               -8.12874355063065934246e01, -9.81432934416914548592e00])
SA = np.array([1.0, 1.96512716674392571292e01, 1.37657754143519042600e02,
               4.34565877475229228821e02, 6.45387271733267880336e02,
               4.29008140027567833386e02, 1.08635005541779435134e02,
               6.57024977031928170135e00, -6.04244152148580987438e-02])

# erfc on [1/0.35, 28]
RB = np.array([-9.86494292470009928597e-03, -7.99283237680523006574e-01,
               -1.77579549177547519889e01, -1.60636384855821916062e02,
               -6.37566443368389627722e02, -1.02509513161107724954e03,
               -4.83519191608651397019e02])
SB = np.array([1.0, 3.03380607434824582924e01, 3.25792512996573918826e02,
               1.53672958608443695994e03, 3.19985821950859553908e03,
               2.55305040643316442583e03, 4.74528541206955367215e02,
               -2.24409524465858183362e01])

ERFC_UNDERFLOW = 28.0


@dataclass(frozen=True)
class AsymptoticSeriesResult:
    value: float
    terms_used: int
    error_bound: float


def _checked(x, name="x"):
    """Return (float64 array, was_scalar); reject non-finite input."""
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite, got {x!r}")
    return arr, arr.ndim == 0


def _out(arr, scalar):
    return float(arr) if scalar else arr


def _drop_low_word(x):
    """x with the low 32 bits of its mantissa cleared (exact z*z below)."""
    bits = np.ascontiguousarray(x, dtype=np.float64).view(np.uint64)
    return (bits & np.uint64(0xFFFFFFFF00000000)).view(np.float64)


def _tail_ratio(ax):
    """R/S of the two rational fits used on [1.25, 28]."""
    s = 1.0 / (ax * ax)
    return np.where(ax < 1.0 / 0.35,
                    polyval(s, RA) / polyval(s, SA),
                    polyval(s, RB) / polyval(s, SB))


def _tail_erfc(ax):
    """erfc(ax) * ax for 1.25 <= ax < 28, with the split exponent."""
    z = _drop_low_word(ax)
    return np.exp(-z * z - 0.5625) * np.exp((z - ax) * (z + ax) + _tail_ratio(ax))


def erfc(x):
    """Complementary error function; scalar in, float out; array in, array out."""
    x, scalar = _checked(x)
    x = np.atleast_1d(x)
    ax = np.abs(x)
    out = np.empty_like(x)

    small = ax < 0.84375
    if np.any(small):
        xs = x[small]
        z = xs * xs
        y = polyval(z, PP) / polyval(z, QQ)
        out[small] = np.where(xs < 0.25,
                              1.0 - (xs + xs * y),
                              0.5 - (xs * y + (xs - 0.5)))

    mid = (ax >= 0.84375) & (ax < 1.25)
    if np.any(mid):
        s = ax[mid] - 1.0
        pq = polyval(s, PA) / polyval(s, QA)
        out[mid] = np.where(x[mid] >= 0, (1.0 - erx) - pq, 1.0 + (erx + pq))

    tail = (ax >= 1.25) & (ax < ERFC_UNDERFLOW)
    if np.any(tail):
        r = _tail_erfc(ax[tail]) / ax[tail]
        out[tail] = np.where(x[tail] > 0, r, 2.0 - r)

    far = ax >= ERFC_UNDERFLOW
    out[far] = np.where(x[far] > 0, 0.0, 2.0)
    return float(out[0]) if scalar else out


def erf(x):
    """Error function, same accuracy and calling convention as erfc."""
    x, scalar = _checked(x)
    x = np.atleast_1d(x)
    ax = np.abs(x)
    out = np.empty_like(x)

    small = ax < 0.84375
    if np.any(small):
        xs = x[small]
        z = xs * xs
        out[small] = xs + xs * (polyval(z, PP) / polyval(z, QQ))

    mid = (ax >= 0.84375) & (ax < 1.25)
    if np.any(mid):
        s = ax[mid] - 1.0
        pq = polyval(s, PA) / polyval(s, QA)
        out[mid] = np.sign(x[mid]) * (erx + pq)

    tail = (ax >= 1.25) & (ax < 6.0)
    if np.any(tail):
        out[tail] = np.sign(x[tail]) * (1.0 - _tail_erfc(ax[tail]) / ax[tail])

    out[ax >= 6.0] = np.sign(x[ax >= 6.0])
    return float(out[0]) if scalar else out


def erfcx(x):
    """Scaled complement exp(x^2) * erfc(x); finite for every x >= 0."""
    x, scalar = _checked(x)
    x = np.atleast_1d(x)
    out = np.empty_like(x)

    near = x < 1.25
    if np.any(near):
        xn = x[near]
        out[near] = np.exp(xn * xn) * erfc(xn)

    tail = (x >= 1.25) & (x < ERFC_UNDERFLOW)
    if np.any(tail):
        xt = x[tail]
        out[tail] = np.exp(-0.5625 + _tail_ratio(xt)) / xt

    far = x >= ERFC_UNDERFLOW
    if np.any(far):
        out[far] = [_asymptotic_sum(v, 64)[0] / (v * SQRT_PI) for v in x[far]]
    return float(out[0]) if scalar else out


def log_erfc(x):
    """log erfc(x) without underflow for large positive x."""
    x, scalar = _checked(x)
    x = np.atleast_1d(x)
    out = np.empty_like(x)
    near = x < 1.25
    out[near] = np.log(erfc(x[near]))
    far = ~near
    out[far] = np.log(erfcx(x[far])) - x[far] * x[far]
    return float(out[0]) if scalar else out


def std_normal_cdf(x):
    """Phi(x), the standard normal distribution function."""
    x, scalar = _checked(x)
    return _out(0.5 * erfc(-x / SQRT_2), scalar)


def _asymptotic_sum(x, max_terms):
    """
    Partial sum of sum (-1)^n (2n-1)!!/(2x^2)^n under optimal truncation.
    Returns (partial_sum, terms_used, first_omitted_term).
    """
    inv = 1.0 / (2.0 * x * x)
    term = 1.0
    total = 1.0
    used = 1
    while True:
        nxt = -term * (2 * used - 1) * inv
        if used >= max_terms or abs(nxt) > abs(term):
            return total, used, nxt
        total += nxt
        term = nxt
        used += 1


def erfc_asymptotic(x, max_terms=1000):
    """
    Asymptotic expansion erfc(x) ~ e^{-x^2}/(x sqrt(pi)) sum (-1)^n (2n-1)!!/(2x^2)^n.
    Stops at max_terms or before the first term larger than its predecessor;
    error_bound is the magnitude of the first omitted term.
    """
    x = float(x)
    if not math.isfinite(x) or x <= 0.0:
        raise DomainError(f"asymptotic expansion needs x > 0, got {x!r}")
    if max_terms < 1:
        raise DomainError(f"max_terms must be >= 1, got {max_terms!r}")
    prefactor = math.exp(-x * x) / (x * SQRT_PI)
    total, used, omitted = _asymptotic_sum(x, int(max_terms))
    logger.debug("erfc_asymptotic x=%g terms=%d", x, used)
    return AsymptoticSeriesResult(value=prefactor * total,
                                  terms_used=used,
                                  error_bound=prefactor * abs(omitted))


def gaussian_kernel(lam, epsilon):
    """D_eps(lam) = exp(-lam^2/(2 eps)) / sqrt(2 pi eps), a delta sequence as eps -> 0."""
    eps = float(epsilon)
    if not math.isfinite(eps) or eps <= 0.0:
        raise DomainError(f"epsilon must be > 0, got {epsilon!r}")
    lam, scalar = _checked(lam, "lambda")
    return _out(np.exp(-lam * lam / (2.0 * eps)) / math.sqrt(2.0 * math.pi * eps), scalar)
