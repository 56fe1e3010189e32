"""
Experiment reports: named tables written one CSV per table, the canonical
config echo, and run metadata kept apart so CSV bodies are reproducible.
"""

import csv
import io
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
import yaml

from thresholdsim.errors import ConsistencyError, UsageError

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.yaml"
METADATA_FILE = "run_metadata.yaml"
GATES = "gates"

FIGURES = {
    "convergence": ("convergence", ("epsilon", "P_1_analytic", "P_1_born", "deviation")),
    "hitting_law": ("hitting_law", ("t", "analytic_cdf", "empirical_cdf", "eps_g")),
    "comparison": ("comparison", ("epsilon", "channel", "born", "P_generalized", "empirical_share", "share_stderr")),
}


def format_value(value):
    """17 significant digits for floats so a CSV re-reads to the same numbers."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def parse_value(text):
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _plain(value):
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def _same(a, b):
    if isinstance(a, float) and isinstance(b, float) and math.isnan(a) and math.isnan(b):
        return True
    return a == b


class Table:
    """Rows of equally long tuples under named columns; units label the header."""

    def __init__(self, name, columns, units=None):
        self.name = name
        self.columns = tuple(columns)
        self.units = dict(units or {})
        self.rows = []

    def add_row(self, *values, **named):
        if named:
            if values:
                raise TypeError("pass values positionally or by name, not both")
            missing = set(self.columns) - set(named)
            if missing:
                raise KeyError(f"row for {self.name} lacks {sorted(missing)}")
            values = tuple(named[c] for c in self.columns)
        if len(values) != len(self.columns):
            raise ValueError(f"{self.name}: row has {len(values)} values for {len(self.columns)} columns")
        self.rows.append(tuple(_plain(v) for v in values))

    def column(self, name):
        i = self.columns.index(name)
        return [row[i] for row in self.rows]

    def select(self, columns, name=None, where=None):
        """New table with the given columns of the rows accepted by `where`."""
        out = Table(name or self.name, columns, {c: self.units.get(c) for c in columns})
        index = [self.columns.index(c) for c in columns]
        for row in self.rows:
            if where is None or where(dict(zip(self.columns, row))):
                out.rows.append(tuple(row[i] for i in index))
        return out

    def header(self):
        return [f"{c} [{self.units[c]}]" if self.units.get(c) else c for c in self.columns]

    def __len__(self):
        return len(self.rows)

    def __eq__(self, other):
        return (isinstance(other, Table) and self.columns == other.columns
                and len(self.rows) == len(other.rows)
                and all(_same(a, b) for r, s in zip(self.rows, other.rows) for a, b in zip(r, s)))

    def __repr__(self):
        return f"Table({self.name!r}, columns={self.columns}, rows={len(self.rows)})"


def table_to_csv(table):
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(table.header())
    for row in table.rows:
        writer.writerow([format_value(v) for v in row])
    return buffer.getvalue()


def table_from_csv(name, text):
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ConsistencyError("empty CSV table", {"table": name}) from None
    columns, units = [], {}
    for cell in header:
        label, _, unit = cell.partition(" [")
        columns.append(label)
        if unit:
            units[label] = unit.rstrip("]")
    table = Table(name, columns, units)
    for row in reader:
        table.add_row(*[parse_value(v) for v in row])
    return table


def write_table(table, path):
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(table_to_csv(table))


def read_table(path, name=None):
    with open(path, "r", encoding="utf-8", newline="") as f:
        return table_from_csv(name or os.path.splitext(os.path.basename(path))[0], f.read())


@dataclass
class ExperimentReport:
    scenario: str
    seed: int
    config_text: str = ""
    tables: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def add(self, table):
        self.tables[table.name] = table
        return table

    def table(self, name):
        try:
            return self.tables[name]
        except KeyError:
            raise UsageError(f"report has no '{name}' table (has {', '.join(self.tables) or 'none'})") from None

    @property
    def failed_gates(self):
        gates = self.tables.get(GATES)
        if gates is None:
            return []
        return [row for row in gates.rows if not row[gates.columns.index("passed")]]

    @property
    def passed(self):
        return not self.failed_gates


def write_report(report, directory):
    """<table>.csv for every table, config.yaml and run_metadata.yaml."""
    os.makedirs(directory, exist_ok=True)
    for table in report.tables.values():
        write_table(table, os.path.join(directory, f"{table.name}.csv"))
    with open(os.path.join(directory, CONFIG_FILE), "w", encoding="utf-8") as f:
        f.write(report.config_text)
    with open(os.path.join(directory, METADATA_FILE), "w", encoding="utf-8") as f:
        yaml.safe_dump({"scenario": report.scenario, "seed": report.seed, **report.metadata}, f, sort_keys=False)
    logger.info("report written to %s (%d tables)", directory, len(report.tables))


def read_report(directory):
    with open(os.path.join(directory, METADATA_FILE), "r", encoding="utf-8") as f:
        metadata = yaml.safe_load(f) or {}
    config_path = os.path.join(directory, CONFIG_FILE)
    config_text = ""
    if os.path.exists(config_path):
        with open(config_path, "r", encoding="utf-8") as f:
            config_text = f.read()
    report = ExperimentReport(metadata.pop("scenario", ""), metadata.pop("seed", 0), config_text, {}, metadata)
    for name in sorted(os.listdir(directory)):
        if name.endswith(".csv"):
            report.add(read_table(os.path.join(directory, name)))
    return report


def emit_plot_data(report, figure, path=None):
    """Plot-ready table for a figure key; written to `path` when given."""
    try:
        source, columns = FIGURES[figure]
    except KeyError:
        raise UsageError(f"unknown figure '{figure}' (expected one of {', '.join(FIGURES)})") from None
    table = report.table(source)
    missing = [c for c in columns if c not in table.columns]
    if missing:
        raise UsageError(f"table '{source}' lacks columns {missing} for figure '{figure}'")
    plot = table.select(columns, name=figure)
    if path is not None:
        write_table(plot, path)
    return plot
