"""Metric series, run results, and their CSV/JSON persistence."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CSV_COLUMNS = ("series", "x", "mean", "std", "n_seeds")


@dataclass(frozen=True)
class Point:
    x: float
    mean: float
    std: float
    n_seeds: int


@dataclass
class MetricSeries:
    name: str
    points: list = field(default_factory=list)

    def __post_init__(self):
        self.points = [p if isinstance(p, Point) else Point(*p) for p in self.points]
        xs = [p.x for p in self.points]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError(f"series {self.name!r}: x values must be strictly increasing")
        if any(p.std < 0 or math.isnan(p.std) for p in self.points):
            raise ValueError(f"series {self.name!r}: std must be non-negative")

    @property
    def xs(self):
        return np.array([p.x for p in self.points], dtype=np.float64)

    @property
    def means(self):
        return np.array([p.mean for p in self.points], dtype=np.float64)

    @property
    def stds(self):
        return np.array([p.std for p in self.points], dtype=np.float64)

    def at(self, x):
        for p in self.points:
            if p.x == x:
                return p
        raise KeyError(f"series {self.name!r} has no point at x={x}")

    @property
    def last(self):
        return self.points[-1]

    def to_dict(self):
        return {"name": self.name,
                "points": [[p.x, p.mean, p.std, p.n_seeds] for p in self.points]}

    @classmethod
    def from_dict(cls, data):
        return cls(data["name"], [Point(x, m, s, int(n)) for x, m, s, n in data["points"]])


def aggregate(name, per_seed):
    """Combine ``{seed: {x: value}}`` into a series of mean and population std.

    Seeds are processed in sorted order so the result does not depend on
    which run finished first.
    """
    by_x = {}
    for seed in sorted(per_seed):
        for x, value in per_seed[seed].items():
            by_x.setdefault(x, []).append(float(value))
    points = []
    for x in sorted(by_x):
        vals = np.array(by_x[x])
        points.append(Point(_plain(x), float(vals.mean()), float(vals.std()), len(vals)))
    return MetricSeries(name, points)


def _plain(x):
    x = float(x)
    return int(x) if x.is_integer() else x


@dataclass
class RunResult:
    manifest: dict
    series: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)

    def get(self, name):
        for s in self.series:
            if s.name == name:
                return s
        raise KeyError(f"no series named {name!r}")

    @property
    def names(self):
        return [s.name for s in self.series]

    def to_dict(self):
        return {"manifest": self.manifest,
                "series": [s.to_dict() for s in self.series],
                "artifacts": self.artifacts}

    @classmethod
    def from_dict(cls, data):
        return cls(data["manifest"], [MetricSeries.from_dict(s) for s in data["series"]],
                   data.get("artifacts", {}))


def write_csv(series, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for s in series:
            for p in s.points:
                writer.writerow([s.name, repr(p.x), repr(p.mean), repr(p.std), p.n_seeds])


def read_csv(path):
    """Parse a metrics CSV back into series, preserving first-seen order."""
    order, rows = [], {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV header {header!r}")
        for name, x, mean, std, n in reader:
            if name not in rows:
                order.append(name)
                rows[name] = []
            rows[name].append(Point(_plain(float(x)), float(mean), float(std), int(n)))
    return [MetricSeries(name, rows[name]) for name in order]


def emit_metrics(result, out_dir, formats=("csv", "json")):
    """Write ``metrics.csv``, ``result.json`` and ``manifest.json`` under ``out_dir``.

    Returns the list of written paths. Raises ``OSError`` if the directory
    cannot be created or written.
    """
    if isinstance(formats, str):
        formats = (formats,)
    unknown = set(formats) - {"csv", "json"}
    if unknown:
        raise ValueError(f"unknown metric formats {sorted(unknown)}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        write_csv(result.series, out / "metrics.csv")
        written.append(out / "metrics.csv")
    if "json" in formats:
        (out / "result.json").write_text(json.dumps(result.to_dict(), indent=1))
        written.append(out / "result.json")
    (out / "manifest.json").write_text(json.dumps(result.manifest, indent=1, sort_keys=True))
    written.append(out / "manifest.json")
    return written


def load_result(run_dir):
    path = Path(run_dir) / "result.json"
    return RunResult.from_dict(json.loads(path.read_text()))
