"""Time-difference coincidence histograms between two pixels.

For an ordered pixel pair (a, b) with a < b, every cross pair of records
inside the same acquisition cycle contributes one time difference

    dt = time_b - time_a          (optionally delay-corrected first)

and differences with |dt| <= window land in a fixed-width histogram.
Pairs never span cycle boundaries.  Normalizing by the median bin count
turns the histogram into a correlation estimate whose background sits at
1 and whose peaks read directly as contrast above background.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError
from .timestream import PhotonStream, SensorConfig

DEFAULT_WINDOW_PS = 25_000.0

SCHEMA_VERSION = 1

# Keep any single pairing expansion below ~64M entries.
_PAIR_CHUNK = 1 << 26


@dataclass(frozen=True)
class DeltaHistogram:
    """Coincidence histogram for one ordered pixel pair.

    ``counts[i]`` covers dt in [edge_i, edge_{i+1}); the final bin also
    accepts dt == +window.  ``normalized`` and ``median_count`` are set by
    ``normalize_histogram``.
    """

    pixel_a: int
    pixel_b: int
    window_ps: float
    bin_width_ps: float
    counts: np.ndarray
    total_pairs: int
    normalized: np.ndarray | None = None
    median_count: float | None = None

    def __post_init__(self):
        if self.pixel_a >= self.pixel_b:
            raise ValueError("pair must be ordered pixel_a < pixel_b")
        if self.window_ps <= 0 or self.bin_width_ps <= 0:
            raise ValueError("window and bin width must be positive")
        n = n_bins(self.window_ps, self.bin_width_ps)
        if len(self.counts) != n:
            raise ValueError(f"expected {n} bins, got {len(self.counts)}")

    @property
    def bin_edges(self) -> np.ndarray:
        n = len(self.counts)
        return -self.window_ps + self.bin_width_ps * np.arange(n + 1)

    @property
    def bin_centers(self) -> np.ndarray:
        edges = self.bin_edges
        return 0.5 * (edges[:-1] + edges[1:])

    # -- serialization -----------------------------------------------------

    def to_json_dict(self) -> dict:
        doc = {
            "schema_version": SCHEMA_VERSION,
            "kind": "delta_histogram",
            "pixel_a": self.pixel_a,
            "pixel_b": self.pixel_b,
            "window_ps": self.window_ps,
            "bin_width_ps": self.bin_width_ps,
            "total_pairs": self.total_pairs,
            "counts": self.counts.tolist(),
        }
        if self.normalized is not None:
            doc["normalized"] = self.normalized.tolist()
            doc["median_count"] = self.median_count
        return doc

    @classmethod
    def from_json_dict(cls, doc: dict) -> "DeltaHistogram":
        try:
            normalized = doc.get("normalized")
            return cls(
                pixel_a=int(doc["pixel_a"]),
                pixel_b=int(doc["pixel_b"]),
                window_ps=float(doc["window_ps"]),
                bin_width_ps=float(doc["bin_width_ps"]),
                counts=np.asarray(doc["counts"], dtype=np.int64),
                total_pairs=int(doc["total_pairs"]),
                normalized=(np.asarray(normalized, dtype=np.float64)
                            if normalized is not None else None),
                median_count=doc.get("median_count"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed histogram document: {exc}") from None

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh)

    @classmethod
    def load(cls, path: str) -> "DeltaHistogram":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"histogram file is not valid JSON: {exc}") from None
        return cls.from_json_dict(doc)


def n_bins(window_ps: float, bin_width_ps: float) -> int:
    return int(np.ceil(2.0 * window_ps / bin_width_ps))


def default_bin_width_ps(stream: PhotonStream) -> float:
    # Three mean TDC bins: fine enough for ~100 ps peaks, coarse enough
    # to keep background bins populated.
    return 3.0 * stream.sensor.mean_bin_width_ps


def _check_pair_args(sensor: SensorConfig, pair: tuple[int, int],
                     window_ps: float, bin_width_ps: float | None,
                     delays: np.ndarray | None):
    a, b = pair
    if a == b:
        raise ValueError("pair pixels must differ")
    if a > b:
        raise ValueError("pair must be ordered pixel_a < pixel_b")
    if not (0 <= a < sensor.num_pixels and 0 <= b < sensor.num_pixels):
        raise ValueError(f"pair {pair} outside 0..{sensor.num_pixels - 1}")
    if bin_width_ps is None:
        bin_width_ps = 3.0 * sensor.mean_bin_width_ps
    if window_ps <= 0 or bin_width_ps <= 0:
        raise ValueError("window and bin width must be positive")
    if delays is not None:
        delays = np.asarray(delays, dtype=np.float64)
        if delays.shape != (sensor.num_pixels,):
            raise ValueError("delays must cover every pixel")
    return a, b, float(bin_width_ps), delays


def _pair_counts(cyc_a, t_a, cyc_b, t_b, window_ps, bin_width_ps):
    """Bin dt = t_b - t_a over same-cycle cross pairs.

    Both record sets must be sorted by cycle.  Returns (counts, total
    pairs inside the window).
    """
    nb = n_bins(window_ps, bin_width_ps)
    counts = np.zeros(nb, dtype=np.int64)
    total = 0
    if len(cyc_a) and len(cyc_b):
        lo = np.searchsorted(cyc_b, cyc_a, side="left")
        hi = np.searchsorted(cyc_b, cyc_a, side="right")
        reps = hi - lo
        # Expand in bounded chunks so a pathological stream cannot blow
        # up memory; each chunk is a contiguous run of a-records.
        csum = np.concatenate(([0], np.cumsum(reps)))
        start = 0
        while start < len(cyc_a):
            stop = int(np.searchsorted(csum, csum[start] + _PAIR_CHUNK,
                                       side="right")) - 1
            stop = max(stop, start + 1)
            stop = min(stop, len(cyc_a))
            r = reps[start:stop]
            n_pairs = int(r.sum())
            if n_pairs:
                a_idx = np.repeat(np.arange(start, stop), r)
                offsets = np.arange(n_pairs) - np.repeat(
                    csum[start:stop] - csum[start], r)
                b_idx = np.repeat(lo[start:stop], r) + offsets
                dt = t_b[b_idx] - t_a[a_idx]
                inside = np.abs(dt) <= window_ps
                if inside.any():
                    idx = ((dt[inside] + window_ps) / bin_width_ps).astype(np.int64)
                    np.clip(idx, 0, nb - 1, out=idx)  # dt == +window lands in last bin
                    counts += np.bincount(idx, minlength=nb)
                    total += int(inside.sum())
            start = stop
    return counts, total


def build_histogram(stream: PhotonStream, pair: tuple[int, int],
                    window_ps: float = DEFAULT_WINDOW_PS,
                    bin_width_ps: float | None = None,
                    delays: np.ndarray | None = None) -> DeltaHistogram:
    """Histogram dt = t_b - t_a over all same-cycle cross pairs.

    ``delays`` (per-pixel, ps) are subtracted from each record's time
    before differencing, which is how a delay calibration enters an
    uncorrected stream.
    """
    a, b, bin_width_ps, delays = _check_pair_args(
        stream.sensor, pair, window_ps, bin_width_ps, delays)

    mask_a = stream.pixel == a
    mask_b = stream.pixel == b
    # Stream order is cycle-major, so these stay sorted by cycle.
    cyc_a = stream.cycle_index[mask_a]
    cyc_b = stream.cycle_index[mask_b]
    t_a = stream.time_ps[mask_a]
    t_b = stream.time_ps[mask_b]
    if delays is not None:
        t_a = t_a - delays[a]
        t_b = t_b - delays[b]

    counts, total = _pair_counts(cyc_a, t_a, cyc_b, t_b, window_ps,
                                 bin_width_ps)
    return DeltaHistogram(pixel_a=a, pixel_b=b, window_ps=float(window_ps),
                          bin_width_ps=float(bin_width_ps), counts=counts,
                          total_pairs=total)


class PixelIndex:
    """Per-pixel view of a stream for building many pair histograms.

    Groups the records by pixel once (a stable sort, so each slice keeps
    the stream's cycle order) and then serves individual pairs without
    rescanning the full stream.  A crosstalk scan touches hundreds of
    pairs; against the index each costs only the pairing itself.
    """

    def __init__(self, sensor: SensorConfig, cycles: np.ndarray,
                 times: np.ndarray, bounds: np.ndarray):
        self.sensor = sensor
        self._cycles = cycles
        self._times = times
        self._bounds = bounds

    @classmethod
    def from_stream(cls, stream: PhotonStream) -> "PixelIndex":
        order = np.argsort(stream.pixel, kind="stable")
        pixels = stream.pixel[order]
        bounds = np.searchsorted(
            pixels, np.arange(stream.sensor.num_pixels + 1))
        return cls(stream.sensor, stream.cycle_index[order],
                   stream.time_ps[order], bounds)

    @property
    def counts_per_pixel(self) -> np.ndarray:
        return np.diff(self._bounds)

    def records_for(self, pixel: int) -> tuple[np.ndarray, np.ndarray]:
        """(cycle_index, time_ps) slices for one pixel, cycle-sorted."""
        if not (0 <= pixel < self.sensor.num_pixels):
            raise ValueError(f"pixel {pixel} outside sensor")
        lo, hi = self._bounds[pixel], self._bounds[pixel + 1]
        return self._cycles[lo:hi], self._times[lo:hi]

    def histogram(self, pair: tuple[int, int],
                  window_ps: float = DEFAULT_WINDOW_PS,
                  bin_width_ps: float | None = None,
                  delays: np.ndarray | None = None) -> DeltaHistogram:
        """Same contract as ``build_histogram``, served from the index."""
        a, b, bin_width_ps, delays = _check_pair_args(
            self.sensor, pair, window_ps, bin_width_ps, delays)
        cyc_a, t_a = self.records_for(a)
        cyc_b, t_b = self.records_for(b)
        if delays is not None:
            t_a = t_a - delays[a]
            t_b = t_b - delays[b]
        counts, total = _pair_counts(cyc_a, t_a, cyc_b, t_b, window_ps,
                                     bin_width_ps)
        return DeltaHistogram(pixel_a=a, pixel_b=b,
                              window_ps=float(window_ps),
                              bin_width_ps=float(bin_width_ps),
                              counts=counts, total_pairs=total)


def normalize_histogram(hist: DeltaHistogram) -> DeltaHistogram:
    """Divide by the median bin count so flat background sits at 1."""
    if not hist.counts.any():
        raise DataError("cannot normalize an all-zero histogram")
    median = float(np.median(hist.counts))
    if median <= 0:
        raise DataError(
            "median bin count is zero; too few coincidences to normalize")
    return replace(hist, normalized=hist.counts / median, median_count=median)
