"""Sample statistics for experiment runs.

Mean, sample standard deviation (n-1), and the 95% confidence half-width
using the Student-t quantile: t(0.975, n-1) * s / sqrt(n). For n=50 the
quantile is 2.00958.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.stats import t as student_t

from ..errors import InsufficientData


@dataclass(frozen=True)
class ExperimentResult:
    metric: str
    samples: tuple[float, ...]
    mean: float
    stddev: float
    ci95_half_width: float

    @property
    def n(self) -> int:
        return len(self.samples)


def stats(samples: list[float] | tuple[float, ...]) -> tuple[float, float, float]:
    """Return (mean, sample stddev, 95% CI half-width)."""
    n = len(samples)
    if n < 2:
        raise InsufficientData(f"need at least 2 samples, got {n}")
    mean = math.fsum(samples) / n
    var = math.fsum((x - mean) ** 2 for x in samples) / (n - 1)
    stddev = math.sqrt(var)
    quantile = float(student_t.ppf(0.975, n - 1))
    return mean, stddev, quantile * stddev / math.sqrt(n)


def summarize(metric: str, samples: list[float]) -> ExperimentResult:
    mean, stddev, ci = stats(samples)
    return ExperimentResult(metric, tuple(samples), mean, stddev, ci)


def format_number(x: float) -> str:
    if x == int(x) and abs(x) < 2**53:
        return str(int(x))
    return repr(float(x))


def summary_line(result: ExperimentResult) -> str:
    return (f"metric={result.metric} n={result.n} mean={format_number(result.mean)} "
            f"stddev={format_number(result.stddev)} "
            f"ci95_half_width={format_number(result.ci95_half_width)}")
