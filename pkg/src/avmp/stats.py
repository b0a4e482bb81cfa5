"""Aggregation and paired-bootstrap confidence intervals over cell results.

Comparisons are paired on the full (workload, model, budget, seed) key; any
unmatched key fails loudly rather than silently intersecting.  The bootstrap
is seeded through the same portable PCG generator as the workloads, so CI
endpoints are byte-stable across reruns and hosts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, NamedTuple

from avmp.errors import LogicError, PairingError
from avmp.rng import Pcg32

DEFAULT_BOOTSTRAP_RESAMPLES = 10_000
DEFAULT_BOOTSTRAP_SEED = 20260520


class CellKey(NamedTuple):
    """Identity of one cell within a variant's result set."""

    workload: str
    model: str
    budget_bytes: int
    seed: int


@dataclass(frozen=True)
class BootstrapReport:
    """A paired-bootstrap 95% CI for a delta or ratio-of-means."""

    label: str
    kind: str               # "delta" or "ratio"
    n: int
    point: float
    ci_low: float
    ci_high: float
    significant: bool       # CI excludes the null (0 for deltas, 1 for ratios)
    skipped_resamples: int = 0

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "kind": self.kind,
            "n": self.n,
            "point": self.point,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "significant": self.significant,
            "skipped_resamples": self.skipped_resamples,
        }


def mean(values) -> float:
    values = list(values)
    if not values:
        raise LogicError("mean of an empty group")
    return sum(values) / len(values)


def sample_std(values) -> float:
    """Std across seeds; 0.0 for singleton groups."""
    values = list(values)
    n = len(values)
    if n < 2:
        return 0.0
    m = sum(values) / n
    return math.sqrt(sum((v - m) ** 2 for v in values) / (n - 1))


def aggregate_mean_sigma(groups: Mapping[object, list[float]]) -> tuple[dict, float]:
    """Per-group (mean, sigma) plus the cross-group propagated sigma.

    Sigma propagates across groups as sqrt(sum sigma_i^2); each group's own
    sigma is the std of its members (typically the per-seed values).
    """
    if not groups:
        raise LogicError("aggregate over zero groups")
    out = {}
    total_var = 0.0
    for key, values in groups.items():
        if not values:
            raise LogicError(f"group {key!r} is empty")
        m = mean(values)
        s = sample_std(values)
        out[key] = (m, s)
        total_var += s * s
    return out, math.sqrt(total_var)


def _paired_series(a: Mapping[CellKey, float],
                   b: Mapping[CellKey, float]) -> tuple[list[float], list[float]]:
    missing_in_b = sorted(set(a) - set(b))
    missing_in_a = sorted(set(b) - set(a))
    if missing_in_a or missing_in_b:
        raise PairingError(
            f"unmatched cell keys: {len(missing_in_b)} only in first series, "
            f"{len(missing_in_a)} only in second "
            f"(e.g. {(missing_in_b or missing_in_a)[0]})")
    if not a:
        raise PairingError("no cells to pair")
    keys = sorted(a)
    return [a[k] for k in keys], [b[k] for k in keys]


def _nearest_rank_ci(sorted_stats: list[float]) -> tuple[float, float]:
    n = len(sorted_stats)
    lo_rank = max(1, math.ceil(0.025 * n))
    hi_rank = max(1, math.ceil(0.975 * n))
    return sorted_stats[lo_rank - 1], sorted_stats[hi_rank - 1]


def paired_bootstrap_delta(a: Mapping[CellKey, float], b: Mapping[CellKey, float],
                           n_resamples: int = DEFAULT_BOOTSTRAP_RESAMPLES,
                           rng_seed: int = DEFAULT_BOOTSTRAP_SEED,
                           label: str = "delta") -> BootstrapReport:
    """Resample per-key deltas (a - b) and report the 95% CI of their mean."""
    if n_resamples < 1:
        raise LogicError("need at least one resample")
    va, vb = _paired_series(a, b)
    deltas = [x - y for x, y in zip(va, vb)]
    n = len(deltas)
    rng = Pcg32(rng_seed, "bootstrap")
    stats = []
    for _ in range(n_resamples):
        total = 0.0
        for _ in range(n):
            total += deltas[rng.choice_index(n)]
        stats.append(total / n)
    stats.sort()
    ci_low, ci_high = _nearest_rank_ci(stats)
    point = mean(deltas)
    return BootstrapReport(
        label=label, kind="delta", n=n, point=point,
        ci_low=ci_low, ci_high=ci_high,
        significant=not (ci_low <= 0.0 <= ci_high),
    )


def paired_bootstrap_ratio(a: Mapping[CellKey, float], b: Mapping[CellKey, float],
                           n_resamples: int = DEFAULT_BOOTSTRAP_RESAMPLES,
                           rng_seed: int = DEFAULT_BOOTSTRAP_SEED,
                           label: str = "ratio") -> BootstrapReport:
    """Resample key tuples and report the 95% CI of the ratio of means."""
    if n_resamples < 1:
        raise LogicError("need at least one resample")
    va, vb = _paired_series(a, b)
    n = len(va)
    denom = mean(vb)
    if denom == 0.0:
        raise LogicError("full-sample denominator mean is zero")
    point = mean(va) / denom
    rng = Pcg32(rng_seed, "bootstrap")
    stats = []
    skipped = 0
    for _ in range(n_resamples):
        num = 0.0
        den = 0.0
        for _ in range(n):
            idx = rng.choice_index(n)
            num += va[idx]
            den += vb[idx]
        if den == 0.0:
            skipped += 1
            continue
        stats.append(num / den)
    if skipped > 0.01 * n_resamples:
        raise LogicError(
            f"{skipped} of {n_resamples} resamples had a zero denominator")
    stats.sort()
    ci_low, ci_high = _nearest_rank_ci(stats)
    return BootstrapReport(
        label=label, kind="ratio", n=n, point=point,
        ci_low=ci_low, ci_high=ci_high,
        significant=not (ci_low <= 1.0 <= ci_high),
        skipped_resamples=skipped,
    )


def enumerate_bootstrap_delta(a: Mapping[CellKey, float],
                              b: Mapping[CellKey, float]) -> list[float]:
    """Exhaustive n^n resample-mean distribution (oracle for tiny n)."""
    va, vb = _paired_series(a, b)
    deltas = [x - y for x, y in zip(va, vb)]
    n = len(deltas)
    if n > 4:
        raise LogicError("exhaustive enumeration is for n <= 4")
    out = []
    idx = [0] * n
    while True:
        out.append(sum(deltas[i] for i in idx) / n)
        pos = n - 1
        while pos >= 0:
            idx[pos] += 1
            if idx[pos] < n:
                break
            idx[pos] = 0
            pos -= 1
        if pos < 0:
            return sorted(out)


def enumerate_bootstrap_ratio(a: Mapping[CellKey, float],
                              b: Mapping[CellKey, float]) -> list[float]:
    """Exhaustive n^n resample ratio-of-means distribution (oracle)."""
    va, vb = _paired_series(a, b)
    n = len(va)
    if n > 4:
        raise LogicError("exhaustive enumeration is for n <= 4")
    out = []
    idx = [0] * n
    while True:
        num = sum(va[i] for i in idx)
        den = sum(vb[i] for i in idx)
        if den != 0.0:
            out.append(num / den)
        pos = n - 1
        while pos >= 0:
            idx[pos] += 1
            if idx[pos] < n:
                break
            idx[pos] = 0
            pos -= 1
        if pos < 0:
            return sorted(out)
