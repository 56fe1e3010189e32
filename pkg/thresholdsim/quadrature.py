import logging
import math
import warnings

from scipy import integrate

from thresholdsim.errors import NumericalError

logger = logging.getLogger(__name__)

QUAD_EPSABS = 1e-13
QUAD_EPSREL = 1e-10
QUAD_LIMIT = 400
EXP_LIMIT = 700.0


def _log_integrand(fn):
    """u -> fn(e^u) e^u, zero where e^u leaves double range."""
    def wrapped(u):
        if u > EXP_LIMIT or u < -EXP_LIMIT:
            return 0.0
        lam = math.exp(u)
        return float(fn(lam)) * lam
    return wrapped


def quad_checked(fn, lo, hi, epsabs=QUAD_EPSABS, epsrel=QUAD_EPSREL, what="integral"):
    """scipy.integrate.quad with non-convergence turned into NumericalError."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        result = integrate.quad(fn, lo, hi, epsabs=epsabs, epsrel=epsrel,
                                limit=QUAD_LIMIT, full_output=1)
    value, abserr, info = result[0], result[1], result[2]
    if len(result) > 3:
        message = result[3]
        # QUADPACK flags (roundoff, subdivision limit) are tolerated when the error estimate is small
        if abserr <= max(epsabs, epsrel * abs(value)) * 100:
            logger.debug("%s: accepted flagged result %g +- %g", what, value, abserr)
        else:
            raise NumericalError(f"quadrature failed for {what}",
                                 {"message": message.splitlines()[0], "abserr": abserr,
                                  "subintervals": info.get("last"), "interval": (lo, hi)})
    return value, abserr


def integrate_positive(fn, lower, upper, breakpoints=(), epsabs=QUAD_EPSABS,
                       epsrel=QUAD_EPSREL, what="integral"):
    """
    Integral of fn over (lower, upper) inside (0, inf), taken in the log
    variable u = ln(lambda). breakpoints mark where fn changes scale.
    Returns (value, abserr).
    """
    lo, hi = math.log(lower), math.log(upper)
    cuts = sorted({math.log(b) for b in breakpoints
                   if b > 0 and math.isfinite(b) and lo < math.log(b) < hi})
    edges = [lo] + cuts + [hi]
    g = _log_integrand(fn)
    total, err = 0.0, 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        value, abserr = quad_checked(g, a, b, epsabs=epsabs, epsrel=epsrel, what=what)
        total += value
        err += abserr
    return total, err
