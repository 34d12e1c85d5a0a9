"""
CSV writers and readers for the command-line outputs.

Every file is written with a fixed header so that plotting scripts and
`compare` can rely on the column names.
"""

import csv
import logging
from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch, ParseError

logger = logging.getLogger(__name__)

TRAJECTORY_FIELDS = ["run_id", "t", "class", "state", "fraction", "zeta_fraction"]
SUMMARY_FIELDS = ["t", "class", "state", "mean", "min", "max"]
ODE_FIELDS = ["t", "kind", "state", "class", "parent", "value"]
STATIONARY_FIELDS = ["point_id", "residual", "max_real_eig", "classification",
                     "kind", "state", "class", "parent", "value"]
BASIN_FIELDS = ["x", "y", "label"]
BOUND_FIELDS = ["term", "value", "detail"]
COUPLE_FIELDS = ["n", "traces", "unequal", "rate", "ci_low", "ci_high", "b1b2_violations", "bound"]
GW_FIELDS = ["depth", "mean", "ci_low", "ci_high", "envelope", "ratio"]
DEPTH_FIELDS = ["depth", "exact", "bound"]
COMPARE_FIELDS = ["t", "class", "state", "gap"]
COMPARE_SUMMARY_FIELDS = ["class", "state", "sup_gap"]

# Grid points may sit this far outside the other file's time range.
GRID_SLACK = 1e-9


def write_rows(path, fieldnames, rows):
    """
    Write dict rows under a fixed header.

    Args:
        path: Output CSV path.
        fieldnames: Column order; every row must use exactly these keys.
        rows: Iterable of dicts.

    Returns:
        Number of data rows written.
    """
    count = 0
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
            count += 1
    logger.debug("Wrote %d rows to %s", count, path)
    return count


def read_rows(path):
    """Read a CSV file with a header into (fieldnames, list of dicts)."""
    with open(path, 'r', newline='', encoding='utf-8') as f:
        reader = csv.DictReader(f)
        rows = list(reader)
        return list(reader.fieldnames or []), rows


# ---------------------------------------------------------------------------
# series for compare

@dataclass
class Series:
    """State fraction over time for one (class, state) pair."""
    times: np.ndarray
    values: np.ndarray


def _float(row, key, path, lineno):
    try:
        return float(row[key])
    except (TypeError, ValueError):
        raise ParseError(f"column {key!r} is not a number: {row.get(key)!r}", lineno, path) from None


def _collect(pairs):
    """{key: {t: [values]}} -> {key: Series} with values averaged per time."""
    out = {}
    for key, by_time in pairs.items():
        times = np.array(sorted(by_time))
        values = np.array([np.mean(by_time[t]) for t in times.tolist()])
        out[key] = Series(times, values)
    return out


def load_series(path):
    """
    State fractions keyed by (class, state) from any of the trajectory,
    ensemble summary or ODE CSV files.

    Trajectory files are averaged over run_id; summaries use the mean
    column; ODE files contribute the root laws (kind y, and y_all as
    class "all").
    """
    fields, rows = read_rows(path)
    if "fraction" in fields:
        value_key = "fraction"
    elif "mean" in fields:
        value_key = "mean"
    elif "kind" in fields and "value" in fields:
        value_key = None
    else:
        raise ParseError(f"unrecognised CSV header {fields}", 1, path)
    pairs = {}
    for lineno, row in enumerate(rows, 2):
        if value_key is None:
            if row["kind"] not in ("y", "y_all"):
                continue
            value = _float(row, "value", path, lineno)
        else:
            value = _float(row, value_key, path, lineno)
        t = _float(row, "t", path, lineno)
        key = (row["class"], row["state"])
        pairs.setdefault(key, {}).setdefault(t, []).append(value)
    return _collect(pairs)


@dataclass
class Comparison:
    """Signed gaps first - second on the first file's grid."""
    gaps: dict
    sup: dict

    @property
    def max_gap(self):
        return max(self.sup.values()) if self.sup else 0.0

    def rows(self):
        for (cls, state), (times, gap) in sorted(self.gaps.items()):
            for t, g in zip(times.tolist(), gap.tolist()):
                yield {"t": t, "class": cls, "state": state, "gap": g}

    def summary_rows(self):
        for (cls, state), sup in sorted(self.sup.items()):
            yield {"class": cls, "state": state, "sup_gap": sup}


def compare_series(first, second):
    """
    Gap first - second for every (class, state) present in both, with the
    second series linearly interpolated onto the first one's times.
    """
    keys = sorted(set(first) & set(second))
    if not keys:
        raise GridMismatch("the two files share no (class, state) series")
    gaps = {}
    sup = {}
    for key in keys:
        a, b = first[key], second[key]
        lo, hi = b.times[0], b.times[-1]
        if a.times[0] < lo - GRID_SLACK or a.times[-1] > hi + GRID_SLACK:
            raise GridMismatch(
                f"series {key} spans [{a.times[0]:g}, {a.times[-1]:g}], "
                f"the other file only [{lo:g}, {hi:g}]")
        gap = a.values - np.interp(a.times, b.times, b.values)
        gaps[key] = (a.times, gap)
        sup[key] = float(np.abs(gap).max())
    skipped = (set(first) | set(second)) - set(keys)
    if skipped:
        logger.info("Skipped %d series present in only one file", len(skipped))
    return Comparison(gaps, sup)


def compare_files(first_path, second_path):
    return compare_series(load_series(first_path), load_series(second_path))
