"""Per-pixel count-rate statistics and time-slicing of photon streams.

The headline statistic is the median rate over all pixels: a handful of
hot pixels can sit orders of magnitude above the bulk and would dominate
a mean.  Hot pixels (rate at or above a configurable threshold, 1 kHz by
default) are reported separately, sorted by rate.

``split_subsets`` cuts a stream into contiguous spans of equal cycle
count so that slow drifts (temperature, ambient light) show up as a
trend across per-subset reports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .timestream import PhotonStream

SCHEMA_VERSION = 1

DEFAULT_HOT_THRESHOLD_CPS = 1000.0


@dataclass(frozen=True)
class RateReport:
    """Count rates for one stream (or one slice of it).

    ``rates_cps`` has one entry per pixel; ``hot_pixels`` lists
    ``(pixel, rate)`` for every pixel at or above ``hot_threshold_cps``,
    highest rate first.  ``subset_reports`` is only populated when the
    report was built with time slicing.
    """

    rates_cps: np.ndarray
    median_rate_cps: float
    hot_pixels: tuple[tuple[int, float], ...]
    duration_s: float
    hot_threshold_cps: float
    subset_reports: tuple[tuple[str, "RateReport"], ...] = ()

    def to_json_dict(self) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "duration_s": self.duration_s,
            "hot_threshold_cps": self.hot_threshold_cps,
            "median_rate_cps": self.median_rate_cps,
            "hot_pixels": [[pix, rate] for pix, rate in self.hot_pixels],
            "rates_cps": [float(r) for r in self.rates_cps],
        }
        if self.subset_reports:
            out["subsets"] = [
                {"label": label, **report.to_json_dict()}
                for label, report in self.subset_reports
            ]
        return out


def compute_rates(stream: PhotonStream, *,
                  duration_s: float | None = None,
                  hot_threshold_cps: float = DEFAULT_HOT_THRESHOLD_CPS,
                  n_subsets: int | None = None) -> RateReport:
    """Per-pixel rates, median rate, and hot-pixel list for a stream.

    The wall duration is taken from ``duration_s`` when given, otherwise
    from the stream's cycle count times the cycle period.  With
    ``n_subsets`` the stream is split into that many equal spans and a
    sub-report attached for each; an explicit ``duration_s`` is divided
    across the spans in proportion to their cycle counts.
    """
    total_s = _resolve_duration(stream, duration_s)

    report = _rates_for(stream, total_s, hot_threshold_cps)
    if n_subsets is None:
        return report

    subsets = split_subsets(stream, n_subsets)
    labeled = []
    for k, sub in enumerate(subsets):
        if duration_s is None:
            sub_s = _resolve_duration(sub, None)
        else:
            sub_s = duration_s * sub.total_cycles / stream.total_cycles
        labeled.append((f"subset {k}", _rates_for(sub, sub_s, hot_threshold_cps)))
    return RateReport(
        rates_cps=report.rates_cps,
        median_rate_cps=report.median_rate_cps,
        hot_pixels=report.hot_pixels,
        duration_s=report.duration_s,
        hot_threshold_cps=report.hot_threshold_cps,
        subset_reports=tuple(labeled),
    )


def split_subsets(stream: PhotonStream, n: int) -> list[PhotonStream]:
    """Cut a stream into ``n`` contiguous spans of near-equal cycle count.

    Span ``k`` covers cycle indices ``[k*C//n, (k+1)*C//n)`` of the
    ``C = stream.total_cycles`` acquisition, so spans are disjoint,
    order-preserving, and differ in size by at most one cycle.  Each
    subset is re-based to start at cycle 0 and reports its own span as
    ``total_cycles``, making it a standalone stream whose duration is the
    span length.
    """
    if n <= 0:
        raise ValueError(f"subset count must be positive, got {n}")
    total = stream.total_cycles
    if n > total:
        raise DataError(
            f"cannot split {total} cycles into {n} subsets")

    bounds = [(k * total) // n for k in range(n + 1)]
    out = []
    for k in range(n):
        lo, hi = bounds[k], bounds[k + 1]
        mask = (stream.cycle_index >= lo) & (stream.cycle_index < hi)
        out.append(PhotonStream(
            header=stream.header,
            cycle_index=stream.cycle_index[mask] - np.uint64(lo),
            pixel=stream.pixel[mask].copy(),
            time_ps=stream.time_ps[mask].copy(),
            raw_code=None if stream.raw_code is None
            else stream.raw_code[mask].copy(),
            total_cycles=hi - lo,
            out_of_window=None if stream.out_of_window is None
            else stream.out_of_window[mask].copy(),
        ))
    return out


def _resolve_duration(stream: PhotonStream, duration_s: float | None) -> float:
    if duration_s is None:
        duration_s = stream.duration_s
        if duration_s <= 0:
            raise DataError(
                "stream carries no cycles; pass an explicit duration_s")
    elif duration_s <= 0:
        raise DataError(f"duration must be positive, got {duration_s}")
    return float(duration_s)


def _rates_for(stream: PhotonStream, duration_s: float,
               hot_threshold_cps: float) -> RateReport:
    rates = stream.counts_per_pixel() / duration_s
    hot_idx = np.flatnonzero(rates >= hot_threshold_cps)
    hot = sorted(((int(p), float(rates[p])) for p in hot_idx),
                 key=lambda pr: (-pr[1], pr[0]))
    return RateReport(
        rates_cps=rates,
        median_rate_cps=float(np.median(rates)),
        hot_pixels=tuple(hot),
        duration_s=duration_s,
        hot_threshold_cps=float(hot_threshold_cps),
    )
