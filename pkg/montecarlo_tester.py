import math
import os
import sys
import tempfile

import numpy as np
import pytest
from scipy import stats

from thresholdsim.channels import CovarianceOperator, SignalMode, SignalModel
from thresholdsim.detection import DetectorConfig, detection_prob_random_gain, generalized_born_probabilities
from thresholdsim.errors import ConsistencyError, DomainError, MisuseError
from thresholdsim.gain import PointMassGain, RayleighEtaGain
from thresholdsim.hitting import HittingLawParams, crossing_probability, hitting_cdf
from thresholdsim.montecarlo import (BATCH_ELEMENTS, BarrierMode, EmpiricalClicks, SimulationPlan, WienerPath,
                                     bridge_crossing_probability, derive_seed, first_passage, run_experiment,
                                     simulate_signal_paths, simulate_wiener_path)
from thresholdsim.stats import (binomial_stderr, empirical_cdf, expected_stderr, ks_critical, ks_distance,
                                within_sigmas, z_score)
from thresholdsim.trace import (NO_HIT_CHANNEL, NO_HIT_TIME, PAGE_RECORDS, TracePage, TraceWriter,
                                read_trace)
from thresholdsim.worker import SimulationWorker, run_batches


def scalar_plan(eps_g=0.5, trials=20_000, steps=1000, seed=11, **kw):
    signal = SignalModel.scalar(1.0)
    detector = DetectorConfig(1.0, eps_g, PointMassGain(1.0))
    return SimulationPlan(signal, detector, trials, time_step=eps_g / steps, seed=seed, **kw)


# paths

def test_wiener_path_grid():
    rng = np.random.default_rng(3)
    path = simulate_wiener_path(2.0, 1.0, 0.01, "real", rng)
    assert path.values.shape == (101,)
    assert path.values[0] == 0.0
    assert path.time_step == pytest.approx(0.01)
    assert path.times[-1] == pytest.approx(1.0)
    assert np.iscomplexobj(simulate_wiener_path(2.0, 1.0, 0.01, SignalMode.COMPLEX, rng).values)
    with pytest.raises(DomainError):
        simulate_wiener_path(2.0, 1.0, 2.0, "real", rng)


def test_endpoint_variance():
    rng = np.random.default_rng(5)
    n = 100_000
    for mode in (SignalMode.REAL, SignalMode.COMPLEX):
        signal = SignalModel.scalar(1.5, mode)
        end = simulate_signal_paths(signal, 2.0, 0.2, rng, n)[:, -1, 0]
        var = np.mean(np.abs(end) ** 2)
        target = 1.5 * 2.0
        # E|phi|^4 is 3 v^2 (real) or 2 v^2 (complex)
        se = target * math.sqrt((2.0 if mode is SignalMode.REAL else 1.0) / n)
        assert abs(var - target) <= 5.0 * se, mode


def test_bridge_crossing_probability():
    p = bridge_crossing_probability(0.0, 0.0, 1.0, 0.5)
    e = math.exp(-2.0 / 0.5)
    assert p == pytest.approx(2.0 * e - e * e)
    assert bridge_crossing_probability(0.0, 0.0, 1.0, 0.0) == 0.0
    near = bridge_crossing_probability(0.99, 0.99, 1.0, 0.01)
    far = bridge_crossing_probability(0.1, 0.1, 1.0, 0.01)
    assert near > far


def test_first_passage_on_a_fixed_path():
    values = np.array([0.0, 0.5, 0.9, -1.1, 0.2])
    path = WienerPath(values, 0.1, 1.0)
    assert first_passage(path, 1.0) == pytest.approx(0.3)
    assert first_passage(path, 2.0) is None
    assert first_passage(WienerPath(np.array([0.0, 1.0]), 0.1, 1.0), 1.0) == pytest.approx(0.1)
    with pytest.raises(MisuseError):
        first_passage(WienerPath(values.astype(complex), 0.1, 1.0), 1.0)
    with pytest.raises(DomainError):
        first_passage(path, 1.0, BarrierMode.COMPLEX_MODULUS, bridge_correction=True,
                      rng=np.random.default_rng(0))


def test_first_passage_hitting_law():
    rng = np.random.default_rng(8)
    params = HittingLawParams(1.0, 1.0, 1.0, 0.5)
    hits = sum(first_passage(simulate_wiener_path(1.0, 0.5, 0.5 / 500, "real", rng), params.barrier,
                             bridge_correction=True, rng=rng) is not None for _ in range(4000))
    assert within_sigmas(hits / 4000, hitting_cdf(params).value, 4000, sigmas=4.0)


# plans

def test_plan_defaults():
    plan = SimulationPlan(SignalModel.scalar(1.0), DetectorConfig(1.0, 2.0, PointMassGain(1.0)), 10)
    assert plan.time_step == pytest.approx(2.0 / 10_000)
    assert plan.steps == 10_000
    assert plan.barrier_mode is BarrierMode.REAL_TWO_SIDED
    assert plan.bridge_correction is True
    assert plan.batch_trials == BATCH_ELEMENTS // 10_000
    complex_plan = SimulationPlan(SignalModel.scalar(1.0, "complex"), DetectorConfig(1.0, 2.0, PointMassGain(1.0)), 10)
    assert complex_plan.barrier_mode is BarrierMode.COMPLEX_MODULUS
    assert complex_plan.bridge_correction is False


def test_plan_validation():
    signal = SignalModel.scalar(1.0)
    det = DetectorConfig(1.0, 1.0, PointMassGain(1.0))
    with pytest.raises(DomainError):
        SimulationPlan(signal, det, 10, time_step=0.1)
    with pytest.raises(DomainError):
        SimulationPlan(signal, det, 0)
    with pytest.raises(DomainError):
        SimulationPlan(signal, det, 10, seed=-1)
    with pytest.raises(DomainError):
        SimulationPlan(signal, det, 10, seed=2 ** 64)
    with pytest.raises(DomainError):
        SimulationPlan(signal, det, 10, barrier_mode=BarrierMode.COMPLEX_MODULUS)
    with pytest.raises(DomainError):
        SimulationPlan(SignalModel.scalar(1.0, "complex"), det, 10, bridge_correction=True)
    with pytest.raises(DomainError):
        SimulationPlan(signal, (det, det), 10)
    with pytest.raises(MisuseError):
        SimulationPlan("signal", det, 10)


def test_batches_cover_the_trials():
    plan = scalar_plan(trials=5000, steps=1000)
    batches = plan.batches()
    assert plan.batch_trials == BATCH_ELEMENTS // 1000
    assert batches[0].start == 0 and batches[-1].stop == 5000
    assert all(a.stop == b.start for a, b in zip(batches, batches[1:]))
    assert [b.index for b in batches] == list(range(len(batches)))


def test_derive_seed():
    assert derive_seed(7, 0) == derive_seed(7, 0)
    assert len({derive_seed(7, i) for i in range(20)}) == 20
    assert derive_seed(7, 0) != derive_seed(8, 0)
    assert 0 <= derive_seed(7, 3) < 2 ** 64


# experiments

def test_scalar_probability_matches_hitting_law():
    plan = scalar_plan(eps_g=0.5, trials=20_000, steps=1000)
    clicks = run_experiment(plan, threads=2)
    expected = hitting_cdf(HittingLawParams(1.0, 1.0, 1.0, 0.5)).value
    assert abs(z_score(clicks.per_channel_prob[0], expected, clicks.trials)) <= 4.0


def test_hitting_times_follow_the_law():
    plan = scalar_plan(eps_g=0.5, trials=20_000, steps=1000, keep_trials=True)
    clicks = run_experiment(plan)
    times = clicks.hit_times()
    assert times.size == clicks.total_clicks
    assert np.all((times > 0) & (times <= 0.5 + 1e-12))
    law = lambda t: crossing_probability(1.0 / np.sqrt(2.0 * np.asarray(t)))
    distance = ks_distance(times, law, total=clicks.trials, horizon=0.5)
    assert distance < ks_critical(clicks.trials, alpha=1e-4)


def test_runs_are_reproducible_across_threads():
    plan = scalar_plan(eps_g=0.5, trials=5000, steps=1000, keep_trials=True)
    assert len(plan.batches()) > 1
    one = run_experiment(plan, threads=1)
    again = run_experiment(plan, threads=1)
    four = run_experiment(plan, threads=4)
    for other in (again, four):
        assert other.per_channel_clicks == one.per_channel_clicks
        assert np.array_equal(other.hitting_times, one.hitting_times)
        assert np.array_equal(other.hit_channels, one.hit_channels)


def test_seed_changes_the_run():
    a = run_experiment(scalar_plan(trials=3000, seed=1, keep_trials=True))
    b = run_experiment(scalar_plan(trials=3000, seed=2, keep_trials=True))
    assert not np.array_equal(a.hitting_times, b.hitting_times)


def test_hopeless_trials_are_screened():
    plan = scalar_plan(eps_g=0.005, trials=2000, steps=200)
    clicks = run_experiment(plan)
    assert clicks.screened == 2000
    assert clicks.total_clicks == 0
    assert math.isnan(clicks.click_share[0])


def test_random_gain_probability_matches_simulation():
    det = DetectorConfig(1.0, 0.01, RayleighEtaGain(1.0))
    plan = SimulationPlan(SignalModel.scalar(1.0), det, 100_000, time_step=0.01 / 1000, seed=7)
    clicks = run_experiment(plan, threads=2)
    assert clicks.screened > 0
    assert clicks.total_clicks > 300
    expected = detection_prob_random_gain(det, 1.0).value
    assert abs(z_score(clicks.per_channel_prob[0], expected, clicks.trials)) <= 3.0


def test_two_channel_click_shares():
    B = CovarianceOperator(np.diag([0.25, 0.75]))
    signal = SignalModel(SignalMode.REAL, B)
    # weak enough that both channels rarely cross in the same pulse
    det = DetectorConfig(1.0, 0.1, RayleighEtaGain(1.0))
    plan = SimulationPlan(signal, det, 20_000, time_step=0.1 / 500, seed=99)
    clicks = run_experiment(plan, threads=3)
    assert clicks.total_clicks <= clicks.trials
    assert math.fsum(clicks.click_share) == pytest.approx(1.0)
    shares = generalized_born_probabilities(det, [0.25, 0.75])
    z = z_score(clicks.click_share[0], shares[0], clicks.total_clicks)
    assert abs(z) <= 4.0


def test_symmetric_channels_split_evenly():
    signal = SignalModel(SignalMode.REAL, CovarianceOperator(np.diag([0.5, 0.5])))
    det = DetectorConfig(1.0, 0.05, RayleighEtaGain(1.0))
    clicks = run_experiment(SimulationPlan(signal, det, 20_000, time_step=0.05 / 200, seed=2024), threads=2)
    assert clicks.total_clicks > 500
    assert within_sigmas(clicks.click_share[0], 0.5, clicks.total_clicks, sigmas=4.0)


def test_halving_the_step_reduces_grid_bias():
    expected = hitting_cdf(HittingLawParams(1.0, 1.0, 1.0, 0.5)).value
    errors = []
    for steps in (100, 200, 400):
        plan = scalar_plan(eps_g=0.5, trials=100_000, steps=steps, seed=31, bridge_correction=False)
        errors.append(expected - run_experiment(plan, threads=2).per_channel_prob[0])
    # the grid misses crossings between points, so every estimate falls short
    assert errors[0] > errors[1] > errors[2] > 0.0


def test_complex_mode_runs():
    signal = SignalModel.scalar(1.0, SignalMode.COMPLEX)
    plan = SimulationPlan(signal, DetectorConfig(1.0, 0.5, PointMassGain(1.0)), 2000, time_step=0.5 / 200, seed=4)
    clicks = run_experiment(plan)
    assert 0 < clicks.total_clicks < clicks.trials


def test_empirical_clicks_invariants():
    with pytest.raises(ConsistencyError):
        EmpiricalClicks((6, 5), 10)
    clicks = EmpiricalClicks((3, 1), 10)
    assert clicks.per_channel_prob == [0.3, 0.1]
    assert clicks.click_share == [0.75, 0.25]
    assert clicks.per_channel_stderr[0] == pytest.approx(math.sqrt(0.3 * 0.7 / 10))
    with pytest.raises(MisuseError):
        clicks.hit_times()


# trace file

def test_trace_written_by_a_run():
    plan = scalar_plan(eps_g=0.5, trials=1500, steps=200, keep_trials=True)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "run", "trace.bin")
        clicks = run_experiment(plan, trace_path=path)
        records = read_trace(path)
    assert records.size == 1500
    assert np.array_equal(records["trial"], np.arange(1500))
    assert np.array_equal(records["channel"], clicks.hit_channels)
    assert np.array_equal(records["time"], clicks.hitting_times)
    missed = records["channel"] == NO_HIT_CHANNEL
    assert np.all(records["time"][missed] == NO_HIT_TIME)
    assert np.all(records["gain"] == 1.0)


def test_trace_pages():
    page = TracePage()
    for i in range(PAGE_RECORDS):
        assert page.write(i, 0, 1.0, 0.5)
    assert not page.has_capacity()
    assert not page.write(PAGE_RECORDS, 0, 1.0, 0.5)
    assert page.read(7) == (7, 0, 1.0, 0.5)


def test_trace_writer_spans_pages():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "trace.bin")
        n = 2 * PAGE_RECORDS + 17
        with TraceWriter().open(path) as writer:
            for i in range(n):
                writer.write(i, i % 3 - 1, 0.5 * i, -1.0 if i % 3 == 0 else 0.01 * i)
        records = read_trace(path)
    assert records.size == n
    assert records["gain"][-1] == 0.5 * (n - 1)
    assert records["channel"][0] == -1


def test_bad_trace_files():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "bad.bin")
        with open(path, "wb") as f:
            f.write(b"NOPE" + bytes(10))
        with pytest.raises(ConsistencyError):
            read_trace(path)
        with open(path, "wb") as f:
            f.write(b"TS")
        with pytest.raises(ConsistencyError):
            read_trace(path)
        good = os.path.join(tmp, "good.bin")
        with TraceWriter().open(good) as writer:
            writer.write(0, 0, 1.0, 0.1)
        with open(good, "ab") as f:
            f.write(b"x")
        with pytest.raises(ConsistencyError):
            read_trace(good)


# workers

class _Batch:
    def __init__(self, index, fail=False):
        self.index = index
        self.fail = fail

    def run(self):
        if self.fail:
            raise ValueError(f"batch {self.index}")
        return _Result(self.index)


class _Result:
    def __init__(self, index):
        self.index = index


def test_run_batches_orders_results():
    for threads in (1, 2, 5, 16):
        results = run_batches([_Batch(i) for i in range(11)], threads)
        assert [r.index for r in results] == list(range(11))
    assert run_batches([], 4) == []


def test_run_batches_reraises():
    with pytest.raises(ValueError):
        run_batches([_Batch(0), _Batch(1, fail=True), _Batch(2)], 2)


def test_worker_collects_results():
    worker = SimulationWorker([_Batch(0)])
    worker.add_batch(_Batch(1))
    worker.run()
    worker.join()
    assert [r.index for r in worker.results] == [0, 1]
    assert worker.errors == []


# statistics

def test_binomial_errors():
    assert binomial_stderr(30, 100) == pytest.approx(math.sqrt(0.3 * 0.7 / 100))
    assert math.isnan(binomial_stderr(0, 0))
    assert expected_stderr(0.5, 100) == pytest.approx(0.05)
    assert z_score(0.6, 0.5, 100) == pytest.approx(2.0)
    assert z_score(0.0, 0.0, 100) == 0.0
    assert z_score(0.1, 0.0, 100) == math.inf
    assert within_sigmas(0.6, 0.5, 100, sigmas=2.5)


def test_ks_distance_matches_scipy_for_a_full_sample():
    samples = np.random.default_rng(12).normal(size=500)
    ours = ks_distance(samples, stats.norm.cdf)
    assert ours == pytest.approx(stats.kstest(samples, stats.norm.cdf).statistic, rel=1e-12)


def test_ks_distance_defective_cdf():
    # half the trials never hit; the law is half of a uniform on [0, 1]
    samples = np.linspace(0.01, 1.0, 100)
    law = lambda t: 0.5 * np.clip(np.asarray(t), 0.0, 1.0)
    assert ks_distance(samples, law, total=200, horizon=1.0) <= 0.005 + 1e-12
    assert ks_distance(samples[:50], law, total=200, horizon=1.0) == pytest.approx(0.25)
    with pytest.raises(DomainError):
        ks_distance(samples, law, total=50)


def test_empirical_cdf():
    cdf = empirical_cdf([0.1, 0.2, 0.2, 0.7], 8, [0.0, 0.2, 1.0])
    assert cdf.tolist() == [0.0, 0.375, 0.5]


def test_ks_critical():
    assert ks_critical(1000) == pytest.approx(stats.kstwo.isf(0.01, 1000))
    assert ks_critical(100_000) < 0.006


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
