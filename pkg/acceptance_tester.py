"""
Full-size runs of the shipped Monte Carlo configs. Each takes minutes;
deselect with -m "not slow".
"""

import os
import sys
import tempfile

import pytest

from thresholdsim.config import load_config, resolve_threads
from thresholdsim.report import read_report, write_report
from thresholdsim.runner import run_scenario

CONFIGS = os.path.join(os.path.dirname(os.path.abspath(__file__)), "configs")


def run_shipped(name):
    with tempfile.TemporaryDirectory() as tmp:
        cfg = load_config(os.path.join(CONFIGS, name)).with_overrides(output_dir=tmp)
        report = run_scenario(cfg, threads=resolve_threads(cfg), output_dir=tmp)
        write_report(report, tmp)
        assert read_report(tmp).failed_gates == report.failed_gates
    return report


@pytest.mark.slow
def test_hitting_law_matches_simulation():
    report = run_shipped("validate_hitting_law.yaml")
    assert report.passed, report.failed_gates
    summary = report.table("hitting_summary")
    assert len(summary) == 3
    assert all(ks < 0.01 for ks in summary.column("ks_distance"))
    assert all(abs(z) <= 3.0 for z in summary.column("z"))


@pytest.mark.slow
def test_full_comparison_follows_generalized_rule():
    report = run_shipped("full_comparison.yaml")
    assert report.passed, report.failed_gates
    table = report.table("comparison")
    assert table.column("born") == [0.25, 0.75]
    assert all(abs(z) <= 3.0 for z in table.column("z_share"))
    assert all(abs(z) <= 3.0 for z in table.column("z_prob"))


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
