"""
Gain distributions of a threshold detector and their eta = 1/sqrt(g) view.

The densities are tied by rho_g(l) = rho_eta(1/sqrt(l)) / (2 l^{3/2}) and
rho_eta(l) = (2/l^3) rho_g(1/l^2). The second relation is often printed with
1/(2 l^3) in front; that constant does not normalize rho_eta.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np
from scipy import stats

from thresholdsim.errors import DomainError, LimitUndefinedError, MisuseError
from thresholdsim.hitting import positive_float
from thresholdsim.quadrature import integrate_positive

logger = logging.getLogger(__name__)

TAIL_MASS = 1e-12
NORMALIZATION_TOL = 1e-8
LIMIT_PROBES = (1e-2, 1e-3, 1e-4)
LIMIT_STABLE_RTOL = 1e-3

DYNODE_DENSITY_SAMPLES = 200_000
DYNODE_DENSITY_SEED = 20120715
DYNODE_KERNEL_WIDTH = 0.005


class GainKind(Enum):
    POINT_MASS = "point_mass"
    DYNODE_COMPOUND = "dynode_compound"
    LOGNORMAL = "lognormal"
    EXPONENTIAL = "exponential"
    RAYLEIGH_ETA = "rayleigh_eta"


@dataclass(frozen=True)
class EtaDensity:
    source: "GainModel"
    f_eta_at_zero: float | None
    born_limit_valid: bool


class GainModel:
    """
    Immutable gain distribution. Subclasses provide the g-density, sampling
    and the g-interval outside which each tail holds less than TAIL_MASS.
    """
    kind = None
    is_atom = False

    def parameters(self):
        raise NotImplementedError

    def to_dict(self):
        return {"kind": self.kind.value, **self.parameters()}

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.parameters().items())
        return f"{type(self).__name__}({args})"

    def __eq__(self, other):
        return type(self) is type(other) and self.parameters() == other.parameters()

    def __hash__(self):
        return hash((self.kind, tuple(self.parameters().items())))

    @property
    def support(self):
        return (0.0, math.inf)

    def pdf_g(self, lam):
        raise NotImplementedError

    def pdf_eta(self, lam):
        lam = np.asarray(lam, dtype=np.float64)
        return 2.0 / lam ** 3 * self.pdf_g(1.0 / (lam * lam))

    def sample(self, rng, size=None):
        raise NotImplementedError

    def cdf(self, x):
        raise NotImplementedError

    def g_bounds(self):
        raise NotImplementedError

    def eta_bounds(self):
        lo, hi = self.g_bounds()
        return 1.0 / math.sqrt(hi), 1.0 / math.sqrt(lo)

    def g_median(self):
        raise NotImplementedError

    def eta_median(self):
        return 1.0 / math.sqrt(self.g_median())

    @cached_property
    def eta_density(self):
        limit, exists = self.eta_limit_at_zero()
        valid = bool(exists and limit is not None and math.isfinite(limit) and limit > 0.0)
        return EtaDensity(source=self, f_eta_at_zero=limit, born_limit_valid=valid)

    def eta_limit_at_zero(self):
        """(limit of rho_eta(l)/l as l -> 0+, whether it exists); numerical by default."""
        probes = self.eta_median() * np.asarray(LIMIT_PROBES)
        with np.errstate(over="ignore", under="ignore", invalid="ignore"):
            ratios = self.pdf_eta(probes) / probes
        if not np.all(np.isfinite(ratios)):
            return None, False
        last, before = float(ratios[-1]), float(ratios[-2])
        stable = abs(last - before) <= LIMIT_STABLE_RTOL * abs(last) or (last == 0.0 and before == 0.0)
        logger.debug("%r: f_eta probes %s stable=%s", self, ratios, stable)
        return (last, True) if stable else (None, False)

    def _check_normalization(self):
        """Quadrature of rho_g and rho_eta over their truncated supports."""
        g_mass, _ = integrate_positive(self.pdf_g, *self.g_bounds(),
                                       breakpoints=(self.g_median(),), what="rho_g normalization")
        eta_mass, _ = integrate_positive(self.pdf_eta, *self.eta_bounds(),
                                         breakpoints=(self.eta_median(),), what="rho_eta normalization")
        for name, mass in (("rho_g", g_mass), ("rho_eta", eta_mass)):
            if abs(mass - 1.0) > NORMALIZATION_TOL + 2 * TAIL_MASS:
                raise DomainError(f"{self!r}: {name} integrates to {mass!r}, not 1")
        logger.debug("%r normalized: g %.15f eta %.15f", self, g_mass, eta_mass)


class PointMassGain(GainModel):
    """Deterministic gain g0, kept as an atom (no density)."""
    kind = GainKind.POINT_MASS
    is_atom = True

    def __init__(self, gain):
        self.gain = positive_float(gain, "gain")

    def parameters(self):
        return {"gain": self.gain}

    @property
    def support(self):
        return (self.gain, self.gain)

    @property
    def eta_atom(self):
        return 1.0 / math.sqrt(self.gain)

    def pdf_g(self, lam):
        return np.zeros_like(np.asarray(lam, dtype=np.float64))

    def pdf_eta(self, lam):
        return np.zeros_like(np.asarray(lam, dtype=np.float64))

    def sample(self, rng, size=None):
        return self.gain if size is None else np.full(size, self.gain)

    def cdf(self, x):
        return np.where(np.asarray(x) >= self.gain, 1.0, 0.0)

    def g_bounds(self):
        return self.gain, self.gain

    def g_median(self):
        return self.gain

    def eta_limit_at_zero(self):
        return None, False


class _ScipyGain(GainModel):
    """Continuous gain backed by a frozen scipy.stats distribution of g."""

    def __init__(self, dist):
        self.dist = dist
        self._check_normalization()

    def pdf_g(self, lam):
        return self.dist.pdf(lam)

    def cdf(self, x):
        return self.dist.cdf(x)

    def sample(self, rng, size=None):
        draw = self.dist.rvs(size=size, random_state=rng)
        return float(draw) if size is None else np.asarray(draw, dtype=np.float64)

    def g_bounds(self):
        return float(self.dist.ppf(TAIL_MASS)), float(self.dist.isf(TAIL_MASS))

    def g_median(self):
        return float(self.dist.median())


class LogNormalGain(_ScipyGain):
    """ln g ~ Normal(mu, sigma^2)."""
    kind = GainKind.LOGNORMAL

    def __init__(self, mu, sigma):
        self.mu = float(mu)
        if not math.isfinite(self.mu):
            raise DomainError(f"mu must be finite, got {mu!r}")
        self.sigma = positive_float(sigma, "sigma")
        super().__init__(stats.lognorm(s=self.sigma, scale=math.exp(self.mu)))

    def parameters(self):
        return {"mu": self.mu, "sigma": self.sigma}


class ExponentialGain(_ScipyGain):
    """g ~ Exponential with the given mean (the decreasing single-electron spectrum)."""
    kind = GainKind.EXPONENTIAL

    def __init__(self, mean):
        self.mean = positive_float(mean, "mean")
        super().__init__(stats.expon(scale=self.mean))

    def parameters(self):
        return {"mean": self.mean}


class RayleighEtaGain(_ScipyGain):
    """
    eta = 1/sqrt(g) is Rayleigh with the given scale s, so rho_eta(l) ~ l/s^2
    near zero and g is inverse-gamma(1, 1/(2 s^2)).
    """
    kind = GainKind.RAYLEIGH_ETA

    def __init__(self, scale):
        self.scale = positive_float(scale, "scale")
        self.eta_dist = stats.rayleigh(scale=self.scale)
        super().__init__(stats.invgamma(a=1.0, scale=1.0 / (2.0 * self.scale ** 2)))

    def parameters(self):
        return {"scale": self.scale}

    def pdf_eta(self, lam):
        return self.eta_dist.pdf(lam)

    def eta_limit_at_zero(self):
        return 1.0 / self.scale ** 2, True


class DynodeCompoundGain(GainModel):
    """
    G = alpha * Z_N, Z_N the size of generation N of a Galton-Watson cascade
    started by one photoelectron with Poisson(mean_yield) secondaries per
    electron and dynode. Cascades that die out carry no pulse and are redrawn.
    There is no closed-form density; rho_g is a weighted Gaussian kernel
    estimate in ln G over the lattice values alpha*z of a fixed-seed sample.
    Histograms only agree with it on bins whose edges fall between lattice points.
    """
    kind = GainKind.DYNODE_COMPOUND

    def __init__(self, collection_fraction, mean_yield, stages,
                 density_samples=DYNODE_DENSITY_SAMPLES, density_seed=DYNODE_DENSITY_SEED):
        self.collection_fraction = positive_float(collection_fraction, "collection_fraction")
        self.mean_yield = positive_float(mean_yield, "mean_yield")
        if self.mean_yield <= 1.0:
            raise DomainError(f"mean_yield must exceed 1 for a growing cascade, got {mean_yield!r}")
        if int(stages) != stages or stages < 1:
            raise DomainError(f"stages must be a positive integer, got {stages!r}")
        self.stages = int(stages)
        self.density_samples = int(density_samples)
        self.density_seed = int(density_seed)
        self._build_density()
        self._check_normalization()

    def parameters(self):
        return {"collection_fraction": self.collection_fraction, "mean_yield": self.mean_yield,
                "stages": self.stages, "density_samples": self.density_samples,
                "density_seed": self.density_seed}

    @property
    def support(self):
        return (self.collection_fraction, math.inf)

    def extinction_probability(self):
        """q_N from q_n = exp(mu (q_{n-1} - 1)), q_0 = 0."""
        q = 0.0
        for _ in range(self.stages):
            q = math.exp(self.mean_yield * (q - 1.0))
        return q

    def mean(self):
        """E[G | Z_N > 0] = alpha mu^N / (1 - q_N)."""
        return self.collection_fraction * self.mean_yield ** self.stages / (1.0 - self.extinction_probability())

    def _cascade(self, rng, n):
        z = np.ones(n, dtype=np.int64)
        for _ in range(self.stages):
            z = rng.poisson(self.mean_yield * z)
        return z

    def sample(self, rng, size=None):
        n = 1 if size is None else int(np.prod(size))
        z = self._cascade(rng, n)
        dead = np.nonzero(z == 0)[0]
        while dead.size:
            z[dead] = self._cascade(rng, dead.size)
            dead = dead[z[dead] == 0]
        g = self.collection_fraction * z.astype(np.float64)
        return float(g[0]) if size is None else g.reshape(size)

    def _build_density(self):
        rng = np.random.default_rng(self.density_seed)
        z = np.rint(self.sample(rng, self.density_samples) / self.collection_fraction)
        levels, counts = np.unique(z, return_counts=True)
        if levels.size < 2:
            raise DomainError(f"{self!r}: the cascade sample has a single level; nothing to smooth")
        log_g = np.log(self.collection_fraction * levels)
        # kernels sit on the exact lattice values of ln G
        bandwidth = DYNODE_KERNEL_WIDTH * (log_g[-1] - log_g[0])
        spread = float(np.sqrt(np.cov(log_g, aweights=counts)))
        self._kde = stats.gaussian_kde(log_g, weights=counts, bw_method=bandwidth / spread)
        self._log_bounds = (log_g[0] - 9.0 * bandwidth, log_g[-1] + 9.0 * bandwidth)
        middle = np.searchsorted(np.cumsum(counts), 0.5 * counts.sum())
        self._median = float(self.collection_fraction * levels[middle])

    def pdf_g(self, lam):
        lam = np.asarray(lam, dtype=np.float64)
        flat = np.atleast_1d(lam).ravel()
        out = np.zeros_like(flat)
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.log(flat)
        inside = (u > self._log_bounds[0]) & (u < self._log_bounds[1])
        if np.any(inside):
            out[inside] = self._kde(u[inside]) / flat[inside]
        return out.reshape(lam.shape) if lam.ndim else float(out[0])

    def cdf(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        out = np.array([self._kde.integrate_box_1d(-np.inf, math.log(v)) if v > 0 else 0.0
                        for v in x.ravel()])
        return out.reshape(x.shape)

    def g_bounds(self):
        return math.exp(self._log_bounds[0]), math.exp(self._log_bounds[1])

    def g_median(self):
        return self._median


_KINDS = {
    GainKind.POINT_MASS: PointMassGain,
    GainKind.DYNODE_COMPOUND: DynodeCompoundGain,
    GainKind.LOGNORMAL: LogNormalGain,
    GainKind.EXPONENTIAL: ExponentialGain,
    GainKind.RAYLEIGH_ETA: RayleighEtaGain,
}


def gain_model_from_dict(spec):
    """Build a model from {'kind': ..., **parameters}."""
    spec = dict(spec)
    try:
        kind = GainKind(spec.pop("kind"))
    except KeyError:
        raise DomainError("gain model needs a 'kind'") from None
    except ValueError:
        known = ", ".join(k.value for k in GainKind)
        raise DomainError(f"unknown gain kind (expected one of {known})") from None
    try:
        return _KINDS[kind](**spec)
    except TypeError as e:
        raise DomainError(f"bad parameters for {kind.value}: {e}") from None


def _positive_argument(lam, name="lambda"):
    arr = np.asarray(lam, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError(f"{name} must be positive and finite, got {lam!r}")
    return arr


def _scalar_or_array(values, like):
    return float(values) if np.ndim(like) == 0 else np.asarray(values)


def rho_g(model, lam):
    """Gain density; zero outside the support (an atom has no density)."""
    arr = _positive_argument(lam)
    return _scalar_or_array(model.pdf_g(arr), lam)


def rho_eta(model, lam):
    """Density of eta = 1/sqrt(g): (2/l^3) rho_g(1/l^2)."""
    arr = _positive_argument(lam)
    return _scalar_or_array(model.pdf_eta(arr), lam)


def eta_density(model):
    """EtaDensity with the f_eta(0+) limit; computed once per model."""
    return model.eta_density


def f_eta(model, lam):
    """f_eta(l) = rho_eta(|l|)/|l|; at l = 0 the f_eta(0+) limit if it is valid."""
    lam = float(lam)
    if not math.isfinite(lam):
        raise DomainError(f"lambda must be finite, got {lam!r}")
    if lam == 0.0:
        density = eta_density(model)
        if not density.born_limit_valid:
            raise LimitUndefinedError(f"{model!r} has no finite positive f_eta(0+)")
        return density.f_eta_at_zero
    mag = abs(lam)
    if model.is_atom:
        return 1.0 / mag if math.isclose(mag, model.eta_atom, rel_tol=1e-12) else 0.0
    return float(model.pdf_eta(mag)) / mag


def sample_gain(model, rng, size=None):
    """Draw g > 0 from the model with the caller's numpy Generator."""
    return model.sample(rng, size)


def cdf_g(model, x):
    """Distribution function of g."""
    return model.cdf(x)


def require_atom(model):
    if not model.is_atom:
        raise MisuseError(f"operation needs a point_mass gain, got {model.kind.value}")
    return model
