"""Stage timing for the diagnosis pipeline and latency aggregation.

Stages are wall-clock sub-intervals of one request: decode, detect_inference,
classify_inference, vote, cam, visualization, encode. A breakdown's total is
measured around everything, so it is at least as large as any single stage.
Percentiles use the nearest-rank rule on sorted totals.
"""

from __future__ import annotations

import json
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

from .errors import InvalidArgument

STAGES = (
    "decode",
    "detect_inference",
    "classify_inference",
    "vote",
    "cam",
    "visualization",
    "encode",
)

#: Tolerance for the total >= max(stage) check, to absorb float roundoff in
#: hand-built breakdowns.
_SLACK_MS = 1e-9


@dataclass
class TimingBreakdown:
    """Milliseconds per stage plus the enclosing total for one request."""

    stages: dict[str, float]
    total_ms: float
    resolution: str = "unknown"

    def __post_init__(self):
        for name, ms in self.stages.items():
            if name not in STAGES:
                raise InvalidArgument(f"unknown stage {name!r}")
            if not ms >= 0.0:
                raise InvalidArgument(f"stage {name} has negative time {ms}")
        if not self.total_ms >= 0.0:
            raise InvalidArgument(f"negative total {self.total_ms}")
        if self.stages and self.total_ms + _SLACK_MS < max(self.stages.values()):
            raise InvalidArgument(
                f"total {self.total_ms}ms is below the largest stage")

    def stage_ms(self, name: str) -> float:
        return self.stages.get(name, 0.0)

    def to_dict(self) -> dict:
        return {
            "stages": {k: self.stages[k] for k in STAGES if k in self.stages},
            "total_ms": self.total_ms,
            "resolution": self.resolution,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TimingBreakdown":
        return cls(dict(d["stages"]), float(d["total_ms"]),
                   str(d.get("resolution", "unknown")))


class StageTimer:
    """Accumulates per-stage wall time from construction until breakdown().

    Use as::

        timer = StageTimer()
        with timer.stage("decode"):
            ...
        breakdown = timer.breakdown("96x96")

    Entering the same stage again adds to its accumulated time. Nested
    stages are rejected; stages are meant to be disjoint intervals.
    """

    def __init__(self):
        self._t0 = time.perf_counter()
        self._acc: dict[str, float] = {}
        self._open: str | None = None

    @contextmanager
    def stage(self, name: str):
        if name not in STAGES:
            raise InvalidArgument(f"unknown stage {name!r}")
        if self._open is not None:
            raise InvalidArgument(
                f"stage {name!r} opened while {self._open!r} is still running")
        self._open = name
        start = time.perf_counter()
        try:
            yield
        finally:
            self._acc[name] = self._acc.get(name, 0.0) + (time.perf_counter() - start) * 1e3
            self._open = None

    def breakdown(self, resolution: str = "unknown") -> TimingBreakdown:
        total = (time.perf_counter() - self._t0) * 1e3
        # Guard against pathological clock granularity: the total interval
        # encloses every stage interval by construction.
        if self._acc:
            total = max(total, max(self._acc.values()))
        return TimingBreakdown(dict(self._acc), total, resolution)


class NullTimer:
    """Timer stand-in that records nothing; lets the pipeline skip branching."""

    @contextmanager
    def stage(self, name: str):
        yield


def instrument(run, resolution: str = "unknown"):
    """Call ``run(timer)`` and return (its result, the TimingBreakdown)."""
    timer = StageTimer()
    result = run(timer)
    return result, timer.breakdown(resolution)


def percentile_nearest_rank(sorted_values: list[float], q: float) -> float:
    """Nearest-rank percentile: sorted[ceil(q/100 * n) - 1], q in (0, 100].

    The rank is computed in integer arithmetic (q scaled by 100) so that
    e.g. p95 of 220 samples lands exactly on rank 209 rather than drifting
    to 210 through float error.
    """
    n = len(sorted_values)
    if n == 0:
        raise InvalidArgument("percentile of empty sample")
    if not 0.0 < q <= 100.0:
        raise InvalidArgument(f"percentile {q} outside (0, 100]")
    q_scaled = round(q * 100)
    rank = -(-q_scaled * n // 10000)
    return sorted_values[min(max(rank, 1), n) - 1]


@dataclass
class LatencyStats:
    """Aggregate over a set of breakdowns: central stats on totals, the
    sub/above one-second bucket counts, and per-resolution stage shares."""

    count: int
    mean_ms: float
    min_ms: float
    max_ms: float
    p50_ms: float
    p95_ms: float
    p99_ms: float
    under_1000ms: int
    at_least_1000ms: int
    stage_shares: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "count": self.count,
            "mean_ms": self.mean_ms,
            "min_ms": self.min_ms,
            "max_ms": self.max_ms,
            "p50_ms": self.p50_ms,
            "p95_ms": self.p95_ms,
            "p99_ms": self.p99_ms,
            "under_1000ms": self.under_1000ms,
            "at_least_1000ms": self.at_least_1000ms,
            "stage_shares": self.stage_shares,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def summarize(breakdowns: list[TimingBreakdown]) -> LatencyStats:
    """Fold many breakdowns into latency statistics."""
    if not breakdowns:
        raise InvalidArgument("summarize needs at least one breakdown")
    totals = sorted(b.total_ms for b in breakdowns)
    n = len(totals)
    mean = sum(totals) / n

    shares: dict[str, dict[str, float]] = {}
    by_res: dict[str, list[TimingBreakdown]] = {}
    for b in breakdowns:
        by_res.setdefault(b.resolution, []).append(b)
    for res, group in sorted(by_res.items()):
        total_mean = sum(b.total_ms for b in group) / len(group)
        res_shares = {}
        for stage in STAGES:
            stage_mean = sum(b.stage_ms(stage) for b in group) / len(group)
            res_shares[stage] = stage_mean / total_mean if total_mean > 0 else 0.0
        shares[res] = res_shares

    return LatencyStats(
        count=n,
        mean_ms=mean,
        min_ms=totals[0],
        max_ms=totals[-1],
        p50_ms=percentile_nearest_rank(totals, 50),
        p95_ms=percentile_nearest_rank(totals, 95),
        p99_ms=percentile_nearest_rank(totals, 99),
        under_1000ms=sum(1 for t in totals if t < 1000.0),
        at_least_1000ms=sum(1 for t in totals if t >= 1000.0),
        stage_shares=shares,
    )


def resolution_experiment(groups, config, registry) -> dict[str, dict[str, float]]:
    """Run the pipeline over images grouped by resolution tag and report,
    per group, the share of mean total time spent in inference
    (detect + classify) versus visualization."""
    from .ensemble import diagnose  # local import; ensemble depends on this module

    if not groups or any(not imgs for imgs in groups.values()):
        raise InvalidArgument("every resolution group needs at least one image")
    breakdowns: list[TimingBreakdown] = []
    for tag, images in groups.items():
        for img in images:
            timer = StageTimer()
            diagnose(img, config, registry, timer=timer)
            breakdowns.append(timer.breakdown(tag))
    stats = summarize(breakdowns)
    out = {}
    for tag in groups:
        s = stats.stage_shares[tag]
        out[tag] = {
            "inference_share": s["detect_inference"] + s["classify_inference"],
            "visualization_share": s["visualization"],
        }
    return out
