"""
Experiment configuration: YAML text <-> ExperimentConfig.

Sections: scenario, units, signal, detector, gain, sweep, monte_carlo,
output. Numbers may be written in scientific notation, quoted or not.
Validation errors name the dotted field and, when the field exists in the
file, its line.
"""

import logging
import math
import os
from dataclasses import dataclass, field
from enum import Enum

import yaml

from thresholdsim.channels import (CovarianceOperator, SignalMode, channel_powers, covariance_from_entries,
                                   decompose_signal, diagonalizing_basis)
from thresholdsim.errors import ConfigError, DomainError
from thresholdsim.gain import GainKind, eta_density, gain_model_from_dict
from thresholdsim.montecarlo import DEFAULT_STEPS_PER_WINDOW, MIN_STEPS_PER_WINDOW, BarrierMode

logger = logging.getLogger(__name__)

THREADS_ENV = "THRESHOLDSIM_THREADS"
SECTIONS = ("scenario", "units", "signal", "detector", "gain", "sweep", "monte_carlo", "output")


class Scenario(Enum):
    VALIDATE_HITTING_LAW = "validate_hitting_law"
    FIXED_GAIN_DIVERGENCE = "fixed_gain_divergence"
    BORN_CONVERGENCE_SWEEP = "born_convergence_sweep"
    FULL_COMPARISON = "full_comparison"


class Basis(Enum):
    CHANNELS = "channels"
    DIAGONALIZE = "diagonalize"


@dataclass(frozen=True)
class Units:
    energy: str = "energy"
    time: str = "time"


@dataclass(frozen=True)
class SignalSpec:
    """Either a scalar power sigma2 or a dim x dim covariance in row-major entries."""
    mode: SignalMode = SignalMode.REAL
    sigma2: float | None = None
    dim: int | None = None
    entries: tuple = ()
    basis: Basis = Basis.CHANNELS

    def covariance(self):
        if self.sigma2 is not None:
            return CovarianceOperator([[self.sigma2]])
        B = covariance_from_entries(self.dim, [list(e) if isinstance(e, tuple) else e for e in self.entries])
        if self.basis is Basis.DIAGONALIZE:
            B = decompose_signal(B, diagonalizing_basis(B))
        return B

    def to_dict(self):
        if self.sigma2 is not None:
            return {"mode": self.mode.value, "sigma2": self.sigma2}
        return {"mode": self.mode.value,
                "covariance": {"dim": self.dim, "entries": [list(e) if isinstance(e, tuple) else e
                                                            for e in self.entries]},
                "basis": self.basis.value}


@dataclass(frozen=True)
class DetectorSpec:
    threshold_energy: float = 1.0
    window: float = 1.0
    run_duration: float | None = None

    def to_dict(self):
        return {"threshold_energy": self.threshold_energy, "window": self.window,
                "run_duration": self.run_duration}


@dataclass(frozen=True)
class SweepPoint:
    """A sweep point: epsilon alone, or an explicit (threshold_energy, window) pair."""
    epsilon: float | None = None
    threshold_energy: float | None = None
    window: float | None = None

    def resolve(self, detector, total_power):
        """(threshold_energy, window, epsilon) with eps = Sigma^2 dt / E_d."""
        if self.epsilon is not None:
            return detector.threshold_energy, self.epsilon * detector.threshold_energy / total_power, self.epsilon
        return self.threshold_energy, self.window, total_power * self.window / self.threshold_energy

    def to_value(self):
        return self.epsilon if self.epsilon is not None else [self.threshold_energy, self.window]


@dataclass(frozen=True)
class MonteCarloSpec:
    enabled: bool = True
    trials: int = 100_000
    steps_per_window: int = DEFAULT_STEPS_PER_WINDOW
    seed: int = 0
    barrier_mode: BarrierMode | None = None
    bridge_correction: bool | None = None
    threads: int = 1
    trace: bool = False
    ks_threshold: float = 0.01
    sigma_band: float = 3.0

    def to_dict(self):
        return {"enabled": self.enabled, "trials": self.trials, "steps_per_window": self.steps_per_window,
                "seed": self.seed,
                "barrier_mode": None if self.barrier_mode is None else self.barrier_mode.value,
                "bridge_correction": self.bridge_correction, "threads": self.threads,
                "trace": self.trace, "ks_threshold": self.ks_threshold, "sigma_band": self.sigma_band}


@dataclass(frozen=True)
class OutputSpec:
    directory: str = "reports"
    cdf_points: int = 200

    def to_dict(self):
        return {"directory": self.directory, "cdf_points": self.cdf_points}


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Scenario
    units: Units = field(default_factory=Units)
    signal: SignalSpec = field(default_factory=SignalSpec)
    detector: DetectorSpec = field(default_factory=DetectorSpec)
    gain: object = None
    sweep: tuple = ()
    monte_carlo: MonteCarloSpec = field(default_factory=MonteCarloSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    def to_dict(self):
        """Canonical form: every default filled in, sections in fixed order."""
        return {
            "scenario": self.scenario.value,
            "units": {"energy": self.units.energy, "time": self.units.time},
            "signal": self.signal.to_dict(),
            "detector": self.detector.to_dict(),
            "gain": self.gain.to_dict(),
            "sweep": {"points": [p.to_value() for p in self.sweep]},
            "monte_carlo": self.monte_carlo.to_dict(),
            "output": self.output.to_dict(),
        }

    def with_overrides(self, seed=None, output_dir=None):
        mc, out = self.monte_carlo, self.output
        if seed is not None:
            mc = MonteCarloSpec(**{**mc.__dict__, "seed": _seed(seed, _Locator(None), "monte_carlo.seed")})
        if output_dir is not None:
            out = OutputSpec(directory=str(output_dir), cdf_points=out.cdf_points)
        return ExperimentConfig(self.scenario, self.units, self.signal, self.detector, self.gain,
                                self.sweep, mc, out)


class _Locator:
    """Finds the line of a dotted field in the composed YAML node tree."""

    def __init__(self, root):
        self.root = root

    def line(self, path):
        node = self.root
        best = None if node is None else node.start_mark.line + 1
        for part in path.split("."):
            if isinstance(node, yaml.MappingNode):
                match = [v for k, v in node.value if getattr(k, "value", None) == part]
                if not match:
                    return best
                node = match[0]
            elif isinstance(node, yaml.SequenceNode) and part.isdigit() and int(part) < len(node.value):
                node = node.value[int(part)]
            else:
                return best
            best = node.start_mark.line + 1
        return best

    def error(self, message, path):
        return ConfigError(message, field=path, line=self.line(path))


def _section(raw, name, loc, required=False):
    value = raw.get(name)
    if value is None:
        if required:
            raise loc.error(f"missing section '{name}'", name)
        return {}
    if not isinstance(value, dict):
        raise loc.error(f"section '{name}' must be a mapping", name)
    return value


def _unknown(section, allowed, prefix, loc):
    for key in section:
        if key not in allowed:
            raise loc.error(f"unknown key '{key}'", f"{prefix}.{key}" if prefix else str(key))


def _number(value, path, loc, positive=False, unit_interval=False):
    if isinstance(value, bool):
        raise loc.error(f"expected a number, got {value!r}", path)
    try:
        number = float(value)
    except (TypeError, ValueError):
        raise loc.error(f"expected a number, got {value!r}", path) from None
    if not math.isfinite(number):
        raise loc.error(f"{number!r} is not finite", path)
    if positive and number <= 0:
        raise loc.error(f"must be > 0, got {number!r}", path)
    if unit_interval and not 0 < number < 1:
        raise loc.error(f"epsilon must lie in (0, 1), got {number!r}", path)
    return number


def _integer(value, path, loc, minimum=None):
    number = _number(value, path, loc)
    if number != int(number):
        raise loc.error(f"expected an integer, got {value!r}", path)
    if minimum is not None and number < minimum:
        raise loc.error(f"must be >= {minimum}, got {int(number)}", path)
    return int(number)


def _seed(value, loc, path):
    if isinstance(value, bool) or not isinstance(value, (int, str)):
        raise loc.error(f"seed must be an integer, got {value!r}", path)
    try:
        seed = int(value)
    except ValueError:
        raise loc.error(f"seed must be an integer, got {value!r}", path) from None
    if not 0 <= seed < 2 ** 64:
        raise loc.error(f"seed must fit in 64 unsigned bits, got {seed}", path)
    return seed


def _flag(value, path, loc, allow_none=False):
    if value is None and allow_none:
        return None
    if not isinstance(value, bool):
        raise loc.error(f"expected true or false, got {value!r}", path)
    return value


def _enum(enum, value, path, loc):
    try:
        return enum(value)
    except ValueError:
        choices = ", ".join(e.value for e in enum)
        raise loc.error(f"unknown value {value!r} (expected one of {choices})", path) from None


def _parse_signal(raw, loc):
    section = _section(raw, "signal", loc, required=True)
    _unknown(section, ("mode", "sigma2", "covariance", "basis"), "signal", loc)
    mode = _enum(SignalMode, section.get("mode", "real"), "signal.mode", loc)
    basis = _enum(Basis, section.get("basis", "channels"), "signal.basis", loc)
    if ("sigma2" in section) == ("covariance" in section):
        raise loc.error("give exactly one of 'sigma2' or 'covariance'", "signal")
    if "sigma2" in section:
        return SignalSpec(mode, _number(section["sigma2"], "signal.sigma2", loc, positive=True))

    cov = section["covariance"]
    if not isinstance(cov, dict):
        raise loc.error("covariance must be a mapping with 'dim' and 'entries'", "signal.covariance")
    _unknown(cov, ("dim", "entries"), "signal.covariance", loc)
    entries = cov.get("entries")
    if not isinstance(entries, list) or not entries:
        raise loc.error("the channel list is empty", "signal.covariance.entries")
    dim = _integer(cov.get("dim", round(math.sqrt(len(entries)))), "signal.covariance.dim", loc, minimum=1)
    values = []
    for i, entry in enumerate(entries):
        path = f"signal.covariance.entries.{i}"
        if isinstance(entry, list):
            if len(entry) != 2:
                raise loc.error("complex entries are written [re, im]", path)
            values.append((_number(entry[0], path, loc), _number(entry[1], path, loc)))
        else:
            values.append(_number(entry, path, loc))
    spec = SignalSpec(mode, None, dim, tuple(values), basis)
    try:
        spec.covariance()
    except DomainError as e:
        raise loc.error(str(e), "signal.covariance") from None
    return spec


def _parse_detector(raw, loc):
    section = _section(raw, "detector", loc, required=True)
    _unknown(section, ("threshold_energy", "window", "run_duration"), "detector", loc)
    threshold = _number(section.get("threshold_energy", 1.0), "detector.threshold_energy", loc, positive=True)
    window = _number(section.get("window", 1.0), "detector.window", loc, positive=True)
    run = section.get("run_duration")
    run = None if run is None else _number(run, "detector.run_duration", loc, positive=True)
    return DetectorSpec(threshold, window, run)


def _parse_gain(raw, loc):
    section = _section(raw, "gain", loc, required=True)
    if "kind" not in section:
        raise loc.error("gain needs a 'kind'", "gain")
    _enum(GainKind, section["kind"], "gain.kind", loc)
    params = {}
    for key, value in section.items():
        if key == "kind":
            continue
        integral = key in ("stages", "density_samples", "density_seed")
        path = f"gain.{key}"
        params[key] = _integer(value, path, loc) if integral else _number(value, path, loc)
    try:
        return gain_model_from_dict({"kind": section["kind"], **params})
    except DomainError as e:
        raise loc.error(str(e), "gain") from None


def _parse_sweep(raw, loc, sweeping):
    section = _section(raw, "sweep", loc)
    _unknown(section, ("epsilon", "pairs", "points"), "sweep", loc)
    points = []
    for i, value in enumerate(section.get("epsilon") or []):
        points.append(SweepPoint(epsilon=_number(value, f"sweep.epsilon.{i}", loc, positive=True,
                                                 unit_interval=sweeping)))
    for i, pair in enumerate(section.get("pairs") or []):
        path = f"sweep.pairs.{i}"
        if not isinstance(pair, list) or len(pair) != 2:
            raise loc.error("pairs are written [threshold_energy, window]", path)
        points.append(SweepPoint(threshold_energy=_number(pair[0], path, loc, positive=True),
                                 window=_number(pair[1], path, loc, positive=True)))
    for i, value in enumerate(section.get("points") or []):
        path = f"sweep.points.{i}"
        if isinstance(value, list):
            if len(value) != 2:
                raise loc.error("pairs are written [threshold_energy, window]", path)
            points.append(SweepPoint(threshold_energy=_number(value[0], path, loc, positive=True),
                                     window=_number(value[1], path, loc, positive=True)))
        else:
            points.append(SweepPoint(epsilon=_number(value, path, loc, positive=True, unit_interval=sweeping)))
    if not points:
        raise loc.error("the sweep has no points", "sweep")
    return tuple(points)


def _parse_monte_carlo(raw, loc):
    section = _section(raw, "monte_carlo", loc)
    defaults = MonteCarloSpec()
    _unknown(section, tuple(defaults.__dict__), "monte_carlo", loc)
    get = lambda key: section.get(key, getattr(defaults, key))
    mode = get("barrier_mode")
    return MonteCarloSpec(
        enabled=_flag(get("enabled"), "monte_carlo.enabled", loc),
        trials=_integer(get("trials"), "monte_carlo.trials", loc, minimum=1),
        steps_per_window=_integer(get("steps_per_window"), "monte_carlo.steps_per_window", loc,
                                  minimum=MIN_STEPS_PER_WINDOW),
        seed=_seed(get("seed"), loc, "monte_carlo.seed"),
        barrier_mode=None if mode is None else _enum(BarrierMode, mode, "monte_carlo.barrier_mode", loc),
        bridge_correction=_flag(get("bridge_correction"), "monte_carlo.bridge_correction", loc, allow_none=True),
        threads=_integer(get("threads"), "monte_carlo.threads", loc, minimum=1),
        trace=_flag(get("trace"), "monte_carlo.trace", loc),
        ks_threshold=_number(get("ks_threshold"), "monte_carlo.ks_threshold", loc, positive=True),
        sigma_band=_number(get("sigma_band"), "monte_carlo.sigma_band", loc, positive=True),
    )


def _parse_output(raw, loc):
    section = _section(raw, "output", loc)
    _unknown(section, ("directory", "cdf_points"), "output", loc)
    directory = section.get("directory", "reports")
    if not isinstance(directory, str) or not directory:
        raise loc.error("directory must be a non-empty string", "output.directory")
    return OutputSpec(directory, _integer(section.get("cdf_points", 200), "output.cdf_points", loc, minimum=2))


def _weak_signal(gain, powers, threshold, window, loc, path):
    """The delta-limit click rate 2 sigma2 f_eta(0+) / E_d stays within one click per window."""
    limit = eta_density(gain).f_eta_at_zero
    total = math.fsum(powers)
    for j, power in enumerate(powers):
        per_window = 2.0 * power * window * limit / threshold
        if per_window > 1.0:
            raise loc.error(f"channel {j} expects {per_window:.6g} delta-limit clicks per window; "
                            f"epsilon must not exceed {total / (2.0 * limit * power):.6g}", path)


def _validate(cfg, loc):
    """Scenario-level rules, checked before anything is computed."""
    atom = cfg.gain.is_atom
    if cfg.scenario in (Scenario.VALIDATE_HITTING_LAW, Scenario.FIXED_GAIN_DIVERGENCE) and not atom:
        raise loc.error(f"{cfg.scenario.value} needs a point_mass gain", "gain.kind")
    if cfg.scenario is Scenario.VALIDATE_HITTING_LAW and cfg.signal.sigma2 is None:
        raise loc.error("validate_hitting_law needs a scalar signal (sigma2)", "signal")
    if cfg.scenario is Scenario.BORN_CONVERGENCE_SWEEP and not eta_density(cfg.gain).born_limit_valid:
        raise loc.error("born_convergence_sweep needs a gain with a finite positive f_eta(0+)", "gain")
    if cfg.scenario is Scenario.FIXED_GAIN_DIVERGENCE and cfg.signal.sigma2 is not None:
        raise loc.error("fixed_gain_divergence needs at least two channels", "signal")
    mc = cfg.monte_carlo
    if mc.barrier_mode is not None:
        expected = BarrierMode.REAL_TWO_SIDED if cfg.signal.mode is SignalMode.REAL else BarrierMode.COMPLEX_MODULUS
        if mc.barrier_mode is not expected:
            raise loc.error(f"{mc.barrier_mode.value} does not fit a {cfg.signal.mode.value} signal",
                            "monte_carlo.barrier_mode")
    if mc.bridge_correction and cfg.signal.mode is SignalMode.COMPLEX:
        raise loc.error("bridge correction is only available for real signals", "monte_carlo.bridge_correction")
    B = cfg.signal.covariance()
    powers = channel_powers(B)
    for i, point in enumerate(cfg.sweep):
        threshold, window, eps = point.resolve(cfg.detector, B.trace)
        if not 0 < eps < 1:
            raise loc.error(f"sweep point gives epsilon {eps!r} outside (0, 1)", f"sweep.points.{i}")
        if cfg.scenario is Scenario.BORN_CONVERGENCE_SWEEP:
            _weak_signal(cfg.gain, powers, threshold, window, loc, f"sweep.points.{i}")
    run = cfg.detector.run_duration
    if run is not None and run < cfg.detector.window:
        raise loc.error("run_duration must be at least one window", "detector.run_duration")


def parse_config(text):
    """ExperimentConfig from YAML text; ConfigError on any problem."""
    try:
        root = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(e, 'problem', e)}",
                          line=None if mark is None else mark.line + 1) from None
    loc = _Locator(root)
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping of sections", line=1)
    _unknown(raw, SECTIONS, "", loc)
    if "scenario" not in raw:
        raise loc.error("missing 'scenario'", "scenario")
    scenario = _enum(Scenario, raw["scenario"], "scenario", loc)
    units = _section(raw, "units", loc)
    _unknown(units, ("energy", "time"), "units", loc)

    cfg = ExperimentConfig(
        scenario=scenario,
        units=Units(str(units.get("energy", "energy")), str(units.get("time", "time"))),
        signal=_parse_signal(raw, loc),
        detector=_parse_detector(raw, loc),
        gain=_parse_gain(raw, loc),
        sweep=_parse_sweep(raw, loc, sweeping=True),
        monte_carlo=_parse_monte_carlo(raw, loc),
        output=_parse_output(raw, loc),
    )
    _validate(cfg, loc)
    logger.debug("parsed %s config with %d sweep points", cfg.scenario.value, len(cfg.sweep))
    return cfg


def load_config(path):
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


def dump_config(cfg):
    """Canonical YAML text of a config."""
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)


def resolve_threads(cfg=None, requested=None):
    """--threads, then THRESHOLDSIM_THREADS, then monte_carlo.threads, then 1."""
    if requested is not None:
        threads = requested
    elif os.environ.get(THREADS_ENV):
        value = os.environ[THREADS_ENV]
        try:
            threads = int(value)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {value!r}") from None
    else:
        threads = cfg.monte_carlo.threads if cfg is not None else 1
    if threads < 1:
        raise ConfigError(f"thread count must be >= 1, got {threads}")
    return threads
