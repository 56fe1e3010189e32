"""
Monte Carlo detector: exact-increment Wiener paths, first passage of the
amplified energy g |phi|^2 through E_d, and click tallies over many pulses.

Every pulse starts from phi(0) = 0. The trials of a plan are cut into fixed
batches; batch b draws from SeedSequence(seed, spawn_key=(b,)), so a run is
reproducible from the seed whatever the number of worker threads.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from thresholdsim.channels import SignalMode, SignalModel
from thresholdsim.detection import DetectorConfig
from thresholdsim.errors import ConsistencyError, DomainError, MisuseError
from thresholdsim.gain import sample_gain
from thresholdsim.hitting import positive_float
from thresholdsim.special import ERFC_UNDERFLOW, erfc
from thresholdsim.stats import binomial_stderr
from thresholdsim.trace import NO_HIT_CHANNEL, NO_HIT_TIME, TraceWriter
from thresholdsim.worker import run_batches

logger = logging.getLogger(__name__)

DEFAULT_STEPS_PER_WINDOW = 10_000
MIN_STEPS_PER_WINDOW = 100
SCREEN_PROBABILITY = 1e-13
BATCH_ELEMENTS = 1 << 20
SQRT_HALF = math.sqrt(0.5)


class BarrierMode(Enum):
    REAL_TWO_SIDED = "real_two_sided"
    COMPLEX_MODULUS = "complex_modulus"


_MODE_FOR_SIGNAL = {SignalMode.REAL: BarrierMode.REAL_TWO_SIDED,
                    SignalMode.COMPLEX: BarrierMode.COMPLEX_MODULUS}


def derive_seed(seed, index):
    """64-bit seed of sub-run `index` (a sweep point) from the experiment seed."""
    return int(np.random.SeedSequence(seed, spawn_key=(0x5EED, index)).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class WienerPath:
    """Values phi(k h), k = 0..steps, of one channel; values[0] = 0."""
    values: np.ndarray
    time_step: float
    sigma2: float

    @property
    def times(self):
        return self.time_step * np.arange(self.values.shape[-1])


def _steps(window, h):
    window = positive_float(window, "window")
    h = positive_float(h, "time_step")
    if h > window * (1.0 + 1e-12):
        raise DomainError(f"time_step {h!r} exceeds the window {window!r}")
    return max(1, int(round(window / h)))


def _gaussian(rng, shape, mode):
    """Unit-variance increments; complex ones split the variance over re and im."""
    if mode is SignalMode.REAL:
        return rng.standard_normal(shape)
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) * SQRT_HALF


def simulate_wiener_path(sigma2, window, h, mode, rng):
    """
    One scalar path on the grid k * window/steps with steps = round(window/h):
    real increments ~ N(0, sigma2 h), complex ones with re and im each
    N(0, sigma2 h / 2), so E|phi(s)|^2 = sigma2 s.
    """
    sigma2 = positive_float(sigma2, "sigma2")
    mode = SignalMode(mode)
    steps = _steps(window, h)
    h = window / steps
    increments = math.sqrt(sigma2 * h) * _gaussian(rng, steps, mode)
    values = np.concatenate([np.zeros(1, dtype=increments.dtype), np.cumsum(increments)])
    return WienerPath(values, h, sigma2)


def simulate_signal_paths(signal, window, h, rng, paths):
    """(paths, steps + 1, m) samples of the m-channel signal, increments with covariance h B."""
    if not isinstance(signal, SignalModel):
        raise MisuseError(f"expected a SignalModel, got {type(signal).__name__}")
    steps = _steps(window, h)
    h = window / steps
    factor = signal.increment_factor()
    increments = math.sqrt(h) * (_gaussian(rng, (int(paths), steps, signal.channels), signal.mode) @ factor.T)
    phi = np.zeros((int(paths), steps + 1, signal.channels), dtype=increments.dtype)
    np.cumsum(increments, axis=1, out=phi[:, 1:, :])
    return phi


def bridge_crossing_probability(x1, x2, barrier, step_variance):
    """
    Probability that a Brownian bridge from x1 to x2 over a step of variance
    sigma2 h leaves (-a, a), combining the one-sided laws
    exp(-2 (a - x1)(a - x2) / (sigma2 h)) and exp(-2 (a + x1)(a + x2) / (sigma2 h))
    as independent events.
    """
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        up = np.exp(-2.0 * (barrier - x1) * (barrier - x2) / step_variance)
        down = np.exp(-2.0 * (barrier + x1) * (barrier + x2) / step_variance)
        p = up + down - up * down
    return np.where(np.asarray(step_variance) > 0, np.nan_to_num(p, nan=0.0), 0.0)


def crossing_steps(phi, barriers, sigma2s, h, barrier_mode, bridge_correction, rng=None):
    """
    First grid step k >= 1 at which each channel is at or past its barrier.
    phi is (n, steps + 1, m), barriers (n, m); returns an (n, m) int array
    holding steps + 1 where a channel never crosses.
    """
    n, points, m = phi.shape
    a = np.asarray(barriers, dtype=np.float64)[:, None, :]
    hit = np.abs(phi) >= a
    hit[:, 0, :] = False
    if bridge_correction:
        if barrier_mode is not BarrierMode.REAL_TWO_SIDED:
            raise DomainError("bridge correction is only defined for the real two-sided barrier")
        if rng is None:
            raise MisuseError("bridge correction needs a random stream")
        variance = np.asarray(sigma2s, dtype=np.float64) * h
        p = bridge_crossing_probability(phi[:, :-1, :].real, phi[:, 1:, :].real, a, variance)
        hit[:, 1:, :] |= rng.random(p.shape) < p
    return np.where(hit.any(axis=1), hit.argmax(axis=1), points)


def first_passage(path, barrier, barrier_mode=BarrierMode.REAL_TWO_SIDED, bridge_correction=False, rng=None):
    """Hitting time inf{s : |phi(s)| >= a} on the path's grid, or None if it never crosses."""
    barrier = positive_float(barrier, "barrier")
    barrier_mode = BarrierMode(barrier_mode)
    values = np.asarray(path.values)
    if barrier_mode is BarrierMode.REAL_TWO_SIDED and np.iscomplexobj(values):
        raise MisuseError("real_two_sided barrier on a complex path")
    step = crossing_steps(values[None, :, None], np.array([[barrier]]), [path.sigma2],
                          path.time_step, barrier_mode, bridge_correction, rng)[0, 0]
    return None if step >= values.size else float(step * path.time_step)


@dataclass(frozen=True)
class SimulationPlan:
    """
    A Monte Carlo run: `trials` pulses of the signal, each seen by one
    detector per channel sharing the window. time_step defaults to
    window / 10^4 and may not exceed window / 100.
    """
    signal: SignalModel
    detectors: tuple
    trials: int
    time_step: float | None = None
    seed: int = 0
    barrier_mode: BarrierMode | None = None
    bridge_correction: bool | None = None
    keep_trials: bool = False

    def __post_init__(self):
        if not isinstance(self.signal, SignalModel):
            raise MisuseError(f"signal must be a SignalModel, got {type(self.signal).__name__}")
        detectors = self.detectors
        if isinstance(detectors, DetectorConfig):
            detectors = (detectors,) * self.signal.channels
        detectors = tuple(detectors)
        if len(detectors) != self.signal.channels:
            raise DomainError(f"{len(detectors)} detectors for {self.signal.channels} channels")
        if len({d.window for d in detectors}) != 1:
            raise DomainError("every channel's detector must share the window")
        object.__setattr__(self, "detectors", detectors)

        if int(self.trials) != self.trials or self.trials < 1:
            raise DomainError(f"trials must be a positive integer, got {self.trials!r}")
        object.__setattr__(self, "trials", int(self.trials))

        window = detectors[0].window
        h = window / DEFAULT_STEPS_PER_WINDOW if self.time_step is None else positive_float(self.time_step, "time_step")
        if h > window / MIN_STEPS_PER_WINDOW * (1.0 + 1e-12):
            raise DomainError(f"time_step {h!r} is coarser than window/{MIN_STEPS_PER_WINDOW}")
        object.__setattr__(self, "time_step", h)

        if int(self.seed) != self.seed or not 0 <= self.seed < 2 ** 64:
            raise DomainError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        object.__setattr__(self, "seed", int(self.seed))

        expected = _MODE_FOR_SIGNAL[self.signal.mode]
        mode = expected if self.barrier_mode is None else BarrierMode(self.barrier_mode)
        if mode is not expected:
            raise DomainError(f"{mode.value} barrier does not fit a {self.signal.mode.value} signal")
        object.__setattr__(self, "barrier_mode", mode)

        bridge = (mode is BarrierMode.REAL_TWO_SIDED) if self.bridge_correction is None else bool(self.bridge_correction)
        if bridge and mode is BarrierMode.COMPLEX_MODULUS:
            raise DomainError("bridge correction is only available in real_two_sided mode")
        object.__setattr__(self, "bridge_correction", bridge)

    @property
    def window(self):
        return self.detectors[0].window

    @property
    def steps(self):
        return max(1, int(round(self.window / self.time_step)))

    @property
    def step(self):
        """Grid spacing actually used: window / steps."""
        return self.window / self.steps

    @property
    def batch_trials(self):
        return max(1, BATCH_ELEMENTS // (self.steps * self.signal.channels))

    def batches(self):
        size = self.batch_trials
        return [SimulationBatch(self, b, start, min(start + size, self.trials))
                for b, start in enumerate(range(0, self.trials, size))]


@dataclass(frozen=True)
class BatchResult:
    index: int
    start: int
    channels: np.ndarray
    times: np.ndarray
    gains: np.ndarray
    screened: int


class SimulationBatch:
    """Trials [start, stop) of a plan with the stream of batch `index`."""

    def __init__(self, plan, index, start, stop):
        self.plan = plan
        self.index = index
        self.start = start
        self.stop = stop

    def rng(self):
        return np.random.default_rng(np.random.SeedSequence(self.plan.seed, spawn_key=(self.index,)))

    def run(self):
        plan = self.plan
        rng = self.rng()
        n, m = self.stop - self.start, plan.signal.channels
        powers = np.asarray(plan.signal.powers)

        gains = np.empty((n, m))
        for j, detector in enumerate(plan.detectors):
            gains[:, j] = sample_gain(detector.gain, rng, size=n)
        thresholds = np.array([d.threshold_energy for d in plan.detectors])
        barriers = np.sqrt(thresholds / gains)

        # reflection bound on the crossing probability of each channel
        spread = np.sqrt(2.0 * powers * plan.window)
        x = np.full_like(barriers, ERFC_UNDERFLOW)
        np.divide(barriers, spread, out=x, where=spread > 0)
        factor = 2.0 if plan.barrier_mode is BarrierMode.REAL_TWO_SIDED else 4.0
        bound = factor * erfc(np.minimum(x, ERFC_UNDERFLOW))
        active = np.nonzero(np.any(bound >= SCREEN_PROBABILITY, axis=1))[0]

        channels = np.full(n, NO_HIT_CHANNEL, dtype=np.int32)
        times = np.full(n, NO_HIT_TIME)
        if active.size:
            phi = simulate_signal_paths(plan.signal, plan.window, plan.time_step, rng, active.size)
            first = crossing_steps(phi, barriers[active], powers, plan.step,
                                   plan.barrier_mode, plan.bridge_correction, rng)
            winner = np.argmin(first, axis=1)
            step = first[np.arange(active.size), winner]
            hit = step <= plan.steps
            channels[active[hit]] = winner[hit]
            times[active[hit]] = step[hit] * plan.step

        clicked = np.where(channels >= 0, channels, 0)
        logger.debug("batch %d: %d trials, %d simulated, %d clicks",
                     self.index, n, active.size, int(np.sum(channels >= 0)))
        return BatchResult(self.index, self.start, channels, times,
                           gains[np.arange(n), clicked], n - active.size)


@dataclass(frozen=True)
class EmpiricalClicks:
    """Click tallies of a run; per-trial arrays only when the plan keeps them."""
    per_channel_clicks: tuple
    trials: int
    screened: int = 0
    hit_channels: np.ndarray | None = None
    hitting_times: np.ndarray | None = None
    gains: np.ndarray | None = None

    def __post_init__(self):
        if sum(self.per_channel_clicks) > self.trials:
            raise ConsistencyError("more clicks than pulses",
                                   {"clicks": sum(self.per_channel_clicks), "trials": self.trials})

    @property
    def channels(self):
        return len(self.per_channel_clicks)

    @property
    def total_clicks(self):
        return sum(self.per_channel_clicks)

    @property
    def per_channel_prob(self):
        """Clicks per emitted pulse."""
        return [k / self.trials for k in self.per_channel_clicks]

    @property
    def per_channel_stderr(self):
        return [binomial_stderr(k, self.trials) for k in self.per_channel_clicks]

    @property
    def click_share(self):
        """Clicks of each channel over all clicks."""
        total = self.total_clicks
        return [k / total if total else math.nan for k in self.per_channel_clicks]

    @property
    def click_share_stderr(self):
        return [binomial_stderr(k, self.total_clicks) for k in self.per_channel_clicks]

    def hit_times(self, channel=None):
        """Hitting times of the pulses that clicked (in `channel` if given)."""
        if self.hitting_times is None:
            raise MisuseError("hitting times were not kept; set keep_trials on the plan")
        mask = self.hit_channels >= 0 if channel is None else self.hit_channels == channel
        return self.hitting_times[mask]


def run_experiment(plan, threads=1, trace_path=None):
    """Simulate every pulse of the plan and tally the first-clicking channel."""
    results = run_batches(plan.batches(), threads)
    channels = np.concatenate([r.channels for r in results])
    times = np.concatenate([r.times for r in results])
    gains = np.concatenate([r.gains for r in results])
    screened = sum(r.screened for r in results)
    if channels.size != plan.trials:
        raise ConsistencyError("batches do not cover the plan", {"trials": plan.trials, "got": channels.size})

    counts = np.bincount(channels[channels >= 0], minlength=plan.signal.channels)
    if trace_path is not None:
        with TraceWriter().open(trace_path) as writer:
            writer.write_many(range(plan.trials), channels, gains, times)

    logger.info("monte carlo: %d pulses, %d clicks %s, %d screened, %d threads",
                plan.trials, int(counts.sum()), counts.tolist(), screened, threads)
    if plan.keep_trials:
        return EmpiricalClicks(tuple(int(c) for c in counts), plan.trials, screened, channels, times, gains)
    return EmpiricalClicks(tuple(int(c) for c in counts), plan.trials, screened)
