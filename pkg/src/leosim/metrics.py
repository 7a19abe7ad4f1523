"""Summary statistics (PDF histograms, ECDFs, percentiles) and CSV output.

All writers use fixed 6-significant-digit formatting so identical
inputs produce byte-identical files.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class EmptyInput(ValueError):
    """The statistic is undefined for an empty sample set."""


class MetricKind(enum.Enum):
    HISTOGRAM = "histogram"
    ECDF = "ecdf"
    MEAN_STD_SERIES = "mean_std_series"
    PERCENTILES = "percentiles"


@dataclass(frozen=True)
class Histogram:
    """Density histogram normalized so that sum(density * width) == 1."""

    bin_lefts: tuple[float, ...]
    bin_rights: tuple[float, ...]
    densities: tuple[float, ...]

    @property
    def total_mass(self) -> float:
        return sum(
            d * (r - l) for l, r, d in zip(self.bin_lefts, self.bin_rights, self.densities)
        )


@dataclass(frozen=True)
class Ecdf:
    """Step function F(x_i) = (i + 1) / n over the sorted samples."""

    xs: tuple[float, ...]
    fs: tuple[float, ...]

    def evaluate(self, x: float) -> float:
        """Fraction of samples <= x."""
        return float(np.searchsorted(self.xs, x, side="right")) / len(self.xs)


@dataclass(frozen=True)
class Percentiles:
    ps: tuple[float, ...]
    values: tuple[float, ...]


@dataclass(frozen=True)
class MeanStdSeries:
    name: str
    times: tuple[float, ...]
    means: tuple[float, ...]
    stds: tuple[float, ...]


@dataclass(frozen=True)
class MetricSeries:
    name: str
    kind: MetricKind
    payload: Histogram | Ecdf | MeanStdSeries | Percentiles


def histogram_pdf(samples: Sequence[float], bin_width: float) -> Histogram:
    """Bin samples at the given width, edges aligned to multiples of it.

    Empty input yields an empty histogram; otherwise densities are
    counts / (n * bin_width).
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    data = np.asarray(sorted(samples), dtype=float)
    if len(data) == 0:
        return Histogram((), (), ())
    first = int(np.floor(data[0] / bin_width))
    last = int(np.floor(data[-1] / bin_width))
    nbins = last - first + 1
    edges = (np.arange(nbins + 1) + first) * bin_width
    counts, _ = np.histogram(data, bins=edges)
    densities = counts / (len(data) * bin_width)
    return Histogram(
        bin_lefts=tuple(edges[:-1].tolist()),
        bin_rights=tuple(edges[1:].tolist()),
        densities=tuple(densities.tolist()),
    )


def ecdf(samples: Sequence[float]) -> Ecdf:
    """Empirical CDF of the samples."""
    if len(samples) == 0:
        raise EmptyInput("ecdf of empty sample set")
    xs = sorted(float(x) for x in samples)
    n = len(xs)
    return Ecdf(xs=tuple(xs), fs=tuple((i + 1) / n for i in range(n)))


def percentiles(samples: Sequence[float], ps: Sequence[float]) -> Percentiles:
    """Percentiles by linear interpolation at ranks (n - 1) * p / 100."""
    if len(samples) == 0:
        raise EmptyInput("percentiles of empty sample set")
    for p in ps:
        if not 0.0 <= p <= 100.0:
            raise ValueError(f"percentile {p} outside [0, 100]")
    values = np.percentile(np.asarray(samples, dtype=float), ps, method="linear")
    return Percentiles(ps=tuple(float(p) for p in ps), values=tuple(values.tolist()))


def _fmt(x: float) -> str:
    return format(float(x), ".6g")


def write_histogram_csv(path, hist: Histogram) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("bin_left,bin_right,density\n")
        for left, right, dens in zip(hist.bin_lefts, hist.bin_rights, hist.densities):
            fh.write(f"{_fmt(left)},{_fmt(right)},{_fmt(dens)}\n")


def write_ecdf_csv(path, curve: Ecdf) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("x,F\n")
        for x, f in zip(curve.xs, curve.fs):
            fh.write(f"{_fmt(x)},{_fmt(f)}\n")


def write_percentiles_csv(path, pct: Percentiles) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("p,value\n")
        for p, v in zip(pct.ps, pct.values):
            fh.write(f"{_fmt(p)},{_fmt(v)}\n")


def write_mean_std_csv(path, series: MeanStdSeries) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write("time_s,mean,std\n")
        for t, m, s in zip(series.times, series.means, series.stds):
            fh.write(f"{_fmt(t)},{_fmt(m)},{_fmt(s)}\n")
