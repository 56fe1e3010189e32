import contextlib
import dataclasses
import io
import math
import os
import sys
import tempfile

import numpy as np
import pytest
import yaml

from thresholdsim.cli import main
from thresholdsim.config import (THREADS_ENV, Basis, ExperimentConfig, Scenario, SweepPoint, dump_config,
                                 load_config, parse_config, resolve_threads)
from thresholdsim.errors import ConfigError, UsageError
from thresholdsim.report import (ExperimentReport, Table, emit_plot_data, read_report, table_from_csv,
                                 table_to_csv, write_report)
from thresholdsim.runner import run_scenario

CONFIGS = os.path.join(os.path.dirname(os.path.abspath(__file__)), "configs")
CATALAN = 0.915965594177219015

BASE = """\
scenario: born_convergence_sweep
signal:
  sigma2: 1.0
detector:
  threshold_energy: 1.0
  window: 1.0
gain:
  kind: rayleigh_eta
  scale: 1.0
sweep:
  epsilon: [0.1, 0.01]
"""

COMPLEX = """\
scenario: full_comparison
units: {energy: eV, time: ns}
signal:
  mode: complex
  covariance:
    dim: 2
    entries: [0.5, [0.1, 0.2], [0.1, -0.2], 0.5]
detector:
  threshold_energy: 2.0
  window: 1.0
gain:
  kind: rayleigh_eta
  scale: 1.0
sweep:
  points: [0.01, [1.0, 0.005]]
monte_carlo:
  enabled: false
"""


def shipped(name):
    return os.path.join(CONFIGS, name)


def config_error(text):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    return info.value


def quiet(fn, *args):
    out = io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(io.StringIO()):
        code = fn(*args)
    return code, out.getvalue()


# config

def test_shipped_configs_parse():
    scenarios = {load_config(shipped(name)).scenario for name in os.listdir(CONFIGS) if name.endswith(".yaml")}
    assert scenarios == set(Scenario)


def test_canonical_round_trip():
    for cfg in [parse_config(BASE), parse_config(COMPLEX)] + \
               [load_config(shipped(n)) for n in sorted(os.listdir(CONFIGS))]:
        again = parse_config(dump_config(cfg))
        assert again == cfg
        assert dump_config(again) == dump_config(cfg)


def test_defaults_are_filled_in():
    cfg = parse_config(BASE)
    assert cfg.monte_carlo.enabled
    assert cfg.monte_carlo.trials == 100_000
    assert cfg.output.directory == "reports"
    assert cfg.signal.basis is Basis.CHANNELS
    assert cfg.detector.run_duration is None


def test_complex_signal_config():
    cfg = parse_config(COMPLEX)
    B = cfg.signal.covariance()
    assert B.matrix[0, 1] == pytest.approx(0.1 + 0.2j)
    assert cfg.units.energy == "eV"
    resolved = [p.resolve(cfg.detector, B.trace) for p in cfg.sweep]
    assert resolved[0] == (2.0, pytest.approx(0.02), 0.01)
    assert resolved[1][2] == pytest.approx(0.005)


def test_diagonalized_basis():
    cfg = load_config(shipped("born_sweep.yaml"))
    assert cfg.signal.basis is Basis.DIAGONALIZE
    assert np.allclose(cfg.signal.covariance().matrix.diagonal().real, [0.25, 0.75])


def test_scientific_notation_strings():
    for value in ('"1e-3"', "1e-3", "1.0e-3"):
        cfg = parse_config(BASE.replace("[0.1, 0.01]", f"[{value}]"))
        assert cfg.sweep[0].epsilon == pytest.approx(1e-3)


def test_errors_name_field_and_line():
    e = config_error(BASE.replace("window: 1.0", "window: -2.0"))
    assert e.field == "detector.window"
    assert e.line == 6
    assert "line 6" in str(e)


def test_yaml_syntax_error_has_a_line():
    e = config_error(BASE + "oops: [1, 2\n")
    assert e.line is not None and e.line >= 12
    assert config_error("- just\n- a list\n").line == 1


def test_unknown_keys_are_rejected():
    assert config_error(BASE.replace("  window: 1.0", "  window: 1.0\n  colour: red")).field == "detector.colour"
    assert config_error(BASE + "extras: 1\n").field == "extras"
    assert config_error(BASE.replace("born_convergence_sweep", "poetry")).field == "scenario"


def test_signal_is_one_of_scalar_or_covariance():
    assert config_error(BASE.replace("  sigma2: 1.0", "  mode: real")).field == "signal"
    e = config_error(BASE.replace("  sigma2: 1.0", "  covariance:\n    dim: 2\n    entries: []"))
    assert e.field == "signal.covariance.entries"
    e = config_error(BASE.replace("  sigma2: 1.0", "  covariance:\n    dim: 2\n    entries: [1.0, 2.0, 2.0, 1.0]"))
    assert e.field == "signal.covariance"


def test_scenario_rules():
    hitting = BASE.replace("born_convergence_sweep", "validate_hitting_law")
    assert config_error(hitting).field == "gain.kind"
    lognormal = BASE.replace("kind: rayleigh_eta\n  scale: 1.0", "kind: lognormal\n  mu: 0.0\n  sigma: 0.5")
    assert config_error(lognormal).field == "gain"
    point_mass = BASE.replace("kind: rayleigh_eta\n  scale: 1.0", "kind: point_mass\n  gain: 1.0")
    assert config_error(point_mass.replace("born_convergence_sweep", "fixed_gain_divergence")).field == "signal"
    assert parse_config(point_mass.replace("born_convergence_sweep", "validate_hitting_law")).gain.is_atom


def test_sweep_epsilon_must_lie_in_unit_interval():
    assert config_error(BASE.replace("[0.1, 0.01]", "[1.5]")).field == "sweep.epsilon.0"
    assert config_error(BASE.replace("[0.1, 0.01]", "[0.1, 1.0]")).field == "sweep.epsilon.1"
    pairs = BASE.replace("epsilon: [0.1, 0.01]", "pairs: [[1.0, 5.0]]")
    assert config_error(pairs).field == "sweep.points.0"
    assert config_error(BASE.replace("epsilon: [0.1, 0.01]", "epsilon: []")).field == "sweep"


def test_born_sweep_stays_below_one_click_per_window():
    # scale 0.5 gives f_eta(0+) = 4, so epsilon 0.2 expects 1.6 clicks per window
    narrow = BASE.replace("scale: 1.0", "scale: 0.5")
    e = config_error(narrow.replace("[0.1, 0.01]", "[0.2, 0.1, 0.01]"))
    assert e.field == "sweep.points.0"
    assert "0.125" in str(e)
    assert len(parse_config(narrow).sweep) == 2
    two = narrow.replace("  sigma2: 1.0", "  covariance:\n    dim: 2\n    entries: [0.25, 0.0, 0.0, 0.75]")
    assert config_error(two.replace("[0.1, 0.01]", "[0.01, 0.17]")).field == "sweep.points.1"
    assert len(parse_config(two.replace("[0.1, 0.01]", "[0.01, 0.16]")).sweep) == 2


def test_run_duration_covers_a_window():
    e = config_error(BASE.replace("window: 1.0", "window: 1.0\n  run_duration: 0.5"))
    assert e.field == "detector.run_duration"


def test_monte_carlo_section():
    text = BASE + "monte_carlo:\n  seed: 18446744073709551615\n  bridge_correction: true\n  trace: true\n"
    mc = parse_config(text).monte_carlo
    assert mc.seed == 2 ** 64 - 1
    assert mc.bridge_correction is True
    assert config_error(BASE + "monte_carlo:\n  seed: -1\n").field == "monte_carlo.seed"
    assert config_error(BASE + "monte_carlo:\n  steps_per_window: 10\n").field == "monte_carlo.steps_per_window"
    assert config_error(BASE + "monte_carlo:\n  barrier_mode: complex_modulus\n").field == "monte_carlo.barrier_mode"
    assert config_error(COMPLEX.replace("enabled: false", "bridge_correction: true")).field == \
        "monte_carlo.bridge_correction"


def test_resolve_threads():
    cfg = load_config(shipped("full_comparison.yaml"))
    saved = os.environ.pop(THREADS_ENV, None)
    try:
        assert resolve_threads(cfg) == 4
        assert resolve_threads() == 1
        os.environ[THREADS_ENV] = "3"
        assert resolve_threads(cfg) == 3
        assert resolve_threads(cfg, 2) == 2
        os.environ[THREADS_ENV] = "many"
        with pytest.raises(ConfigError):
            resolve_threads(cfg)
        with pytest.raises(ConfigError):
            resolve_threads(cfg, 0)
    finally:
        os.environ.pop(THREADS_ENV, None)
        if saved is not None:
            os.environ[THREADS_ENV] = saved


def test_with_overrides():
    cfg = parse_config(BASE)
    changed = cfg.with_overrides(seed=42, output_dir="elsewhere")
    assert isinstance(changed, ExperimentConfig)
    assert changed.monte_carlo.seed == 42
    assert changed.output.directory == "elsewhere"
    assert changed.monte_carlo.trials == cfg.monte_carlo.trials
    assert cfg.with_overrides() == cfg
    with pytest.raises(ConfigError):
        cfg.with_overrides(seed=-3)


# reports

def test_table_csv_round_trip():
    table = Table("t", ("a", "b", "c", "d"), {"b": "ns"})
    table.add_row(1, 0.1, "x", True)
    table.add_row(2, math.nan, "y", False)
    table.add_row(a=3, b=1.0 / 3.0, c="z", d=True)
    text = table_to_csv(table)
    assert text.splitlines()[0] == "a,b [ns],c,d"
    again = table_from_csv("t", text)
    assert again == table
    assert again.units == {"b": "ns"}
    assert again.column("b")[2] == 1.0 / 3.0


def test_table_rows_are_checked():
    table = Table("t", ("a", "b"))
    with pytest.raises(ValueError):
        table.add_row(1)
    with pytest.raises(KeyError):
        table.add_row(a=1)
    with pytest.raises(TypeError):
        table.add_row(1, b=2)


def test_report_files():
    report = ExperimentReport("demo", 7, "scenario: demo\n", metadata={"threads": 2})
    report.add(Table("values", ("x", "y"))).add_row(0.5, 1.5)
    gates = report.add(Table("gates", ("name", "value", "threshold", "passed")))
    gates.add_row("fine", 0.0, 1.0, True)
    gates.add_row("broken", 2.0, 1.0, False)
    assert not report.passed
    assert [row[0] for row in report.failed_gates] == ["broken"]
    with tempfile.TemporaryDirectory() as tmp:
        write_report(report, tmp)
        assert sorted(os.listdir(tmp)) == ["config.yaml", "gates.csv", "run_metadata.yaml", "values.csv"]
        again = read_report(tmp)
    assert again.scenario == "demo" and again.seed == 7
    assert again.config_text == "scenario: demo\n"
    assert again.metadata == {"threads": 2}
    assert again.table("values") == report.table("values")
    assert again.failed_gates == report.failed_gates


def test_missing_tables_and_figures():
    report = ExperimentReport("demo", 0)
    with pytest.raises(UsageError):
        report.table("nothing")
    with pytest.raises(UsageError):
        emit_plot_data(report, "convergence")
    with pytest.raises(UsageError):
        emit_plot_data(report, "sunset")


# scenarios

def test_born_sweep_converges():
    cfg = load_config(shipped("born_sweep.yaml"))
    report = run_scenario(cfg)
    assert report.passed, report.failed_gates
    deviation = report.table("convergence").column("deviation")
    assert deviation == sorted(deviation, reverse=True)
    assert deviation[-1] < 1e-2
    ratios = report.table("clicks").column("full_over_delta")
    assert abs(ratios[-1] - CATALAN / 2.0) < abs(ratios[0] - CATALAN / 2.0)
    assert report.metadata["threads"] == 1
    plot = emit_plot_data(report, "convergence")
    assert plot.columns == ("epsilon", "P_1_analytic", "P_1_born", "deviation")
    assert len(plot) == 3


def test_click_estimates_past_the_weak_regime_become_nan():
    cfg = parse_config(BASE.replace("scale: 1.0", "scale: 0.5") + "monte_carlo:\n  enabled: false\n")
    # built directly, so the point never went through validation
    cfg = dataclasses.replace(cfg, sweep=(SweepPoint(epsilon=0.2),) + cfg.sweep)
    report = run_scenario(cfg)
    rows = {row[0]: row for row in report.table("clicks").rows}
    assert set(rows) == {0.2, 0.1, 0.01}
    assert math.isnan(rows[0.2][5]) and math.isnan(rows[0.2][6])
    assert 0.0 < rows[0.2][3] <= 1e6
    assert not math.isnan(rows[0.1][5])
    assert 0.0 < rows[0.01][6] < 1.0


def test_fixed_gain_diverges_from_born():
    report = run_scenario(load_config(shipped("fixed_gain_divergence.yaml")))
    assert report.passed, report.failed_gates
    table = report.table("divergence")
    strongest = [row for row in table.rows if row[1] == 1]
    assert strongest[-1][3] > 0.99
    assert all(row[2] == pytest.approx(0.75) for row in strongest)


def test_reports_are_reproducible_across_threads():
    raw = load_config(shipped("full_comparison.yaml")).to_dict()
    raw["monte_carlo"].update(trials=3000, steps_per_window=1000)
    cfg = parse_config(yaml.safe_dump(raw))
    one = run_scenario(cfg, threads=1)
    four = run_scenario(cfg, threads=4)
    for name in ("comparison", "gates"):
        assert table_to_csv(one.table(name)) == table_to_csv(four.table(name))
    assert one.config_text == four.config_text
    names = [row[0] for row in one.table("gates").rows]
    assert "probability_eps=0.01_ch0" in names and "probability_eps=0.01_ch1" in names
    shares = [row[7] for row in one.table("comparison").rows]
    assert math.fsum(shares) == pytest.approx(1.0)


# command line

def test_cli_validate():
    code, out = quiet(main, ["validate", shipped("born_sweep.yaml")])
    assert code == 0
    assert parse_config(out) == load_config(shipped("born_sweep.yaml"))
    code, _ = quiet(main, ["validate", os.path.join(CONFIGS, "missing.yaml")])
    assert code == 3
    with tempfile.TemporaryDirectory() as tmp:
        bad = os.path.join(tmp, "bad.yaml")
        with open(bad, "w") as f:
            f.write(BASE.replace("[0.1, 0.01]", "[2.0]"))
        code, _ = quiet(main, ["validate", bad])
    assert code == 1


def test_cli_run_and_emit_plot():
    with tempfile.TemporaryDirectory() as tmp:
        code, out = quiet(main, ["--threads", "2", "--seed-override", "5", "--output-dir", tmp,
                                 "run", shipped("born_sweep.yaml")])
        assert code == 0
        assert "PASS" in out and "FAIL" not in out
        report = read_report(tmp)
        assert report.seed == 5
        assert report.metadata["threads"] == 2

        target = os.path.join(tmp, "plot.csv")
        assert quiet(main, ["emit-plot", tmp, "convergence", "-o", target])[0] == 0
        with open(target) as f:
            assert f.readline().strip() == "epsilon,P_1_analytic,P_1_born,deviation"

        code, out = quiet(main, ["emit-plot", tmp, "convergence"])
        assert code == 0 and out.startswith("epsilon,")
        assert quiet(main, ["emit-plot", tmp, "sunset"])[0] == 1
        assert quiet(main, ["emit-plot", tmp, "hitting_law"])[0] == 1


def test_cli_bad_usage():
    assert quiet(main, ["frobnicate"])[0] == 1
    assert quiet(main, [])[0] == 1
    assert quiet(main, ["--help"])[0] == 0


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
