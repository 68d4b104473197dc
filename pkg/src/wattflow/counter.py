"""Wrap-aware arithmetic over raw energy counters.

Hardware energy counters are unsigned registers that count fixed-size energy
units and silently roll over to zero when they exceed their bit width.  This
module turns sequences of raw readings into joules: single-wrap deltas, unit
conversion, and windowed integration of a timestamped sample series.

All functions are pure and operate on immutable inputs; they are safe to call
from any number of threads.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Sequence

from .errors import (
    DegenerateSeriesError,
    InvalidArgumentError,
    OverflowComputationError,
    WindowOutOfRangeError,
)

__all__ = [
    "RaplDomain",
    "CounterSpec",
    "RawSample",
    "SampleSeries",
    "EnergyQuantity",
    "raw_delta",
    "wrap_delta",
    "to_joules",
    "integrate_window",
    "series_total",
    "wrap_horizon_s",
]


class RaplDomain(Enum):
    """Power-accounting scope of an energy counter."""

    PACKAGE = "package"
    CORE = "core"
    GRAPHICS = "graphics"
    DRAM = "dram"
    PSYS = "psys"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, name: str) -> "RaplDomain":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise InvalidArgumentError(f"unknown counter domain {name!r}") from None


@dataclass(frozen=True)
class CounterSpec:
    """Geometry of one energy counter.

    Attributes:
        domain: Power domain the counter accounts for.
        bit_width: Register width in bits, 1..64.  The counter wraps at
            ``wrap_modulus`` which defaults to ``2**bit_width``.
        energy_unit_joules: Joules represented by one raw count.
        update_period_s: How often the hardware refreshes the register.
        wrap_modulus: Optional override for counters that wrap at an
            advertised maximum range rather than a power of two (the
            powercap sysfs backend reads this range at startup).  Must not
            exceed ``2**bit_width``.
    """

    domain: RaplDomain
    bit_width: int
    energy_unit_joules: float
    update_period_s: float = 1e-3
    wrap_modulus: int | None = None

    def __post_init__(self) -> None:
        if not 1 <= self.bit_width <= 64:
            raise InvalidArgumentError(
                f"bit_width must be in [1, 64], got {self.bit_width}")
        if not (math.isfinite(self.energy_unit_joules)
                and self.energy_unit_joules > 0):
            raise InvalidArgumentError(
                f"energy_unit_joules must be finite and positive, "
                f"got {self.energy_unit_joules}")
        if not self.update_period_s > 0:
            raise InvalidArgumentError(
                f"update_period_s must be positive, got {self.update_period_s}")
        if self.wrap_modulus is not None:
            if not 0 < self.wrap_modulus <= (1 << self.bit_width):
                raise InvalidArgumentError(
                    f"wrap_modulus {self.wrap_modulus} outside "
                    f"(0, 2**{self.bit_width}]")

    @property
    def modulus(self) -> int:
        """Value at which the counter wraps to zero."""
        return self.wrap_modulus if self.wrap_modulus is not None \
            else 1 << self.bit_width


@dataclass(frozen=True)
class RawSample:
    """One raw counter reading: monotonic nanoseconds and counts."""

    t_ns: int
    raw: int


@dataclass(frozen=True)
class EnergyQuantity:
    """A non-negative, finite amount of energy in joules."""

    joules: float

    def __post_init__(self) -> None:
        if not math.isfinite(self.joules):
            raise OverflowComputationError(
                f"energy is not a finite real: {self.joules}")
        if self.joules < 0:
            raise InvalidArgumentError(f"energy must be >= 0, got {self.joules}")

    def __float__(self) -> float:
        return self.joules

    def __add__(self, other: "EnergyQuantity") -> "EnergyQuantity":
        return EnergyQuantity(self.joules + other.joules)


@dataclass(frozen=True)
class SampleSeries:
    """Ordered raw readings of one counter on one node.

    Timestamps are integer nanoseconds on the node's monotonic clock;
    ``epoch_wall_ns`` maps monotonic zero to wall time so traces recorded in
    wall time can be correlated (wall = epoch_wall_ns + t_ns).

    ``gap_markers`` lists timestamps where the producing agent recorded a
    failed read; ``wrap_horizon_ns`` is the configured minimum wrap period
    (see :func:`wrap_horizon_s`) used to flag gaps long enough that a wrap
    could have been missed.
    """

    node_id: str
    spec: CounterSpec
    samples: tuple[RawSample, ...]
    epoch_wall_ns: int = 0
    gap_markers: tuple[int, ...] = ()
    wrap_horizon_ns: int | None = None
    _cum: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        samples = tuple(self.samples)
        object.__setattr__(self, "samples", samples)
        modulus = self.spec.modulus
        prev_t = None
        for s in samples:
            if not 0 <= s.raw < modulus:
                raise InvalidArgumentError(
                    f"raw value {s.raw} outside [0, {modulus}) at t={s.t_ns}")
            if prev_t is not None and s.t_ns <= prev_t:
                raise InvalidArgumentError(
                    f"non-monotonic timestamp {s.t_ns} after {prev_t}")
            prev_t = s.t_ns

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def span_ns(self) -> tuple[int, int]:
        if len(self.samples) < 2:
            raise DegenerateSeriesError(
                f"series for {self.node_id}/{self.spec.domain} has "
                f"{len(self.samples)} sample(s); need >= 2")
        return self.samples[0].t_ns, self.samples[-1].t_ns

    def _cumulative(self) -> tuple[list[int], list[int]]:
        """Timestamps and unwrapped cumulative counts, cached."""
        cached = self._cum.get("arrays")
        if cached is None:
            times = [s.t_ns for s in self.samples]
            modulus = self.spec.modulus
            counts = [0]
            prev = self.samples[0].raw if self.samples else 0
            for s in self.samples[1:]:
                counts.append(counts[-1] + (s.raw - prev) % modulus)
                prev = s.raw
            cached = (times, counts)
            self._cum["arrays"] = cached
        return cached

    def unsafe_gaps(self, horizon_ns: int | None = None) -> list[tuple[int, int]]:
        """Sample gaps wide enough that an undetected wrap was possible.

        A gap is unsafe when it exceeds half the wrap horizon (the shortest
        time the counter could take to wrap at the configured maximum power).
        Explicit gap markers recorded by the agent are always unsafe.
        """
        horizon = horizon_ns if horizon_ns is not None else self.wrap_horizon_ns
        gaps: list[tuple[int, int]] = []
        if horizon is not None:
            limit = horizon // 2
            for a, b in zip(self.samples, self.samples[1:]):
                if b.t_ns - a.t_ns > limit:
                    gaps.append((a.t_ns, b.t_ns))
        for t in self.gap_markers:
            gaps.append((t, t))
        return sorted(set(gaps))

    def has_unsafe_gap(self, start_ns: int, end_ns: int,
                       horizon_ns: int | None = None) -> bool:
        return any(g0 <= end_ns and g1 >= start_ns
                   for g0, g1 in self.unsafe_gaps(horizon_ns))

    def with_horizon(self, horizon_ns: int) -> "SampleSeries":
        return replace(self, wrap_horizon_ns=horizon_ns, _cum={})


def raw_delta(prev: int, curr: int, bit_width: int) -> int:
    """Counter increment between two raw readings, assuming at most one wrap.

    Args:
        prev: Earlier raw reading, ``0 <= prev < 2**bit_width``.
        curr: Later raw reading, same range.
        bit_width: Register width in bits, 1..64.

    Returns:
        ``curr - prev`` if no wrap occurred, otherwise
        ``curr + 2**bit_width - prev``.  Always in ``[0, 2**bit_width)``.

    Raises:
        InvalidArgumentError: If either reading is outside the register range.
    """
    if not 1 <= bit_width <= 64:
        raise InvalidArgumentError(f"bit_width must be in [1, 64], got {bit_width}")
    return wrap_delta(prev, curr, 1 << bit_width)


def wrap_delta(prev: int, curr: int, modulus: int) -> int:
    """Single-wrap counter delta for an arbitrary wrap modulus."""
    if prev < 0 or curr < 0 or prev >= modulus or curr >= modulus:
        raise InvalidArgumentError(
            f"raw values must lie in [0, {modulus}), got prev={prev} curr={curr}")
    return (curr - prev) % modulus


def to_joules(delta: int, spec: CounterSpec) -> EnergyQuantity:
    """Convert a raw counter delta to joules using the spec's energy unit.

    Raises:
        InvalidArgumentError: If ``delta`` is negative.
        OverflowComputationError: If the product is not a finite real.
    """
    if delta < 0:
        raise InvalidArgumentError(f"raw delta must be >= 0, got {delta}")
    joules = delta * spec.energy_unit_joules
    if not math.isfinite(joules):
        raise OverflowComputationError(
            f"{delta} counts x {spec.energy_unit_joules} J/count is not "
            f"representable as a finite real")
    return EnergyQuantity(joules)


def _cumulative_counts_at(series: SampleSeries, t_ns: int) -> float:
    """Unwrapped cumulative counts at ``t_ns``, linearly interpolated.

    Counters refresh far more often than they are sampled, so cumulative
    energy is modeled as linear between consecutive samples.
    """
    times, counts = series._cumulative()
    i = bisect.bisect_right(times, t_ns) - 1
    if i == len(times) - 1:
        return float(counts[-1])
    t0, t1 = times[i], times[i + 1]
    c0, c1 = counts[i], counts[i + 1]
    return c0 + (c1 - c0) * ((t_ns - t0) / (t1 - t0))


def integrate_window(series: SampleSeries, window_start_ns: int,
                     window_end_ns: int) -> EnergyQuantity:
    """Energy accumulated by the counter inside a time window.

    Sums wrap-aware deltas between consecutive samples fully inside the
    window and adds linearly interpolated partial deltas at both boundaries.

    Args:
        series: Sample series with at least two samples.
        window_start_ns: Window start, monotonic nanoseconds.
        window_end_ns: Window end; must be greater than the start.

    Returns:
        Energy in joules.

    Raises:
        DegenerateSeriesError: Fewer than two samples.
        InvalidArgumentError: Empty or inverted window.
        WindowOutOfRangeError: Window extends beyond the sampled span
            (code ``window-head-out-of-range`` / ``window-tail-out-of-range``).
    """
    if len(series) < 2:
        raise DegenerateSeriesError(
            f"series for {series.node_id}/{series.spec.domain} has "
            f"{len(series)} sample(s); need >= 2")
    if window_start_ns >= window_end_ns:
        raise InvalidArgumentError(
            f"window start {window_start_ns} must precede end {window_end_ns}")
    first, last = series.span_ns
    if window_start_ns < first:
        raise WindowOutOfRangeError(
            f"window starts {first - window_start_ns} ns before first sample",
            code="window-head-out-of-range")
    if window_end_ns > last:
        raise WindowOutOfRangeError(
            f"window ends {window_end_ns - last} ns after last sample",
            code="window-tail-out-of-range")
    counts = (_cumulative_counts_at(series, window_end_ns)
              - _cumulative_counts_at(series, window_start_ns))
    return EnergyQuantity(max(counts, 0.0) * series.spec.energy_unit_joules)


def series_total(series: SampleSeries) -> EnergyQuantity:
    """Energy over the full sampled span (all wrap-aware deltas)."""
    if len(series) < 2:
        raise DegenerateSeriesError(
            f"series for {series.node_id}/{series.spec.domain} has "
            f"{len(series)} sample(s); need >= 2")
    _, counts = series._cumulative()
    return to_joules(counts[-1], series.spec)


def wrap_horizon_s(spec: CounterSpec, max_power_watts: float) -> float:
    """Shortest time the counter could take to wrap at a bounded power draw.

    Sampling (or gaps) longer than half this horizon can miss a wrap, which
    is why such gaps are flagged rather than silently integrated.
    """
    if not max_power_watts > 0:
        raise InvalidArgumentError(
            f"max_power_watts must be positive, got {max_power_watts}")
    return spec.modulus * spec.energy_unit_joules / max_power_watts


def build_series(node_id: str, spec: CounterSpec,
                 samples: Iterable[RawSample] | Sequence[RawSample],
                 epoch_wall_ns: int = 0,
                 gap_markers: Iterable[int] = (),
                 wrap_horizon_ns: int | None = None) -> SampleSeries:
    """Convenience constructor accepting any iterable of samples."""
    return SampleSeries(node_id=node_id, spec=spec, samples=tuple(samples),
                        epoch_wall_ns=epoch_wall_ns,
                        gap_markers=tuple(gap_markers),
                        wrap_horizon_ns=wrap_horizon_ns)
