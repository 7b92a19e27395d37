"""TDC nonlinearity calibration by code density.

Each pixel's time-to-digital converter divides one clock period into
``tdc_bins_per_clock`` bins of unequal width.  Under illumination that is
uniform in time, the count share of a code estimates its bin width:

    width(pixel, code) = clock_period * count(pixel, code) / total(pixel)

A lookup table built this way converts raw codes to calibrated intra-clock
times using the bin midpoint convention.  Pixels without enough statistics
to trust the estimate are flagged unusable and refuse conversion.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import CalibrationError, DataError
from .timestream import PhotonStream, SensorConfig

logger = logging.getLogger(__name__)

MIN_COUNTS_PER_PIXEL = 10_000

SCHEMA_VERSION = 1


@dataclass
class TdcLut:
    """Per-pixel bin widths (ps) and derived offsets for one sensor.

    ``widths`` has shape (num_pixels, tdc_bins_per_clock).  For every
    pixel not in ``unusable`` all widths are positive and sum to the clock
    period (relative tolerance 1e-6).  Unusable pixels keep whatever raw
    shares were measured, for inspection only.
    """

    sensor: SensorConfig
    widths: np.ndarray
    unusable: frozenset[int] = frozenset()
    total_counts: np.ndarray | None = None
    offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        expected = (self.sensor.num_pixels, self.sensor.tdc_bins_per_clock)
        self.widths = np.asarray(self.widths, dtype=np.float64)
        if self.widths.shape != expected:
            raise ValueError(f"widths shape {self.widths.shape}, want {expected}")
        clock = self.sensor.clock_period_ps
        usable = np.ones(self.sensor.num_pixels, dtype=bool)
        usable[list(self.unusable)] = False
        if usable.any():
            w = self.widths[usable]
            if not (w > 0).all():
                raise ValueError("usable pixel has non-positive bin width")
            err = np.abs(w.sum(axis=1) - clock) / clock
            if err.max() > 1e-6:
                raise ValueError("usable pixel widths do not sum to clock period")
        offs = np.zeros_like(self.widths)
        offs[:, 1:] = np.cumsum(self.widths, axis=1)[:, :-1]
        self.offsets = offs

    # -- serialization -----------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "tdc_lut",
            "sensor": {
                "num_pixels": self.sensor.num_pixels,
                "tdc_bins_per_clock": self.sensor.tdc_bins_per_clock,
                "clock_period_ps": self.sensor.clock_period_ps,
            },
            "unusable_pixels": sorted(self.unusable),
            "widths_ps": {str(p): self.widths[p].tolist()
                          for p in range(self.sensor.num_pixels)},
        }

    @classmethod
    def from_json_dict(cls, doc: dict, sensor: SensorConfig | None = None) -> "TdcLut":
        try:
            fp = doc["sensor"]
            num_pixels = int(fp["num_pixels"])
            bins = int(fp["tdc_bins_per_clock"])
            clock = int(fp["clock_period_ps"])
            if sensor is None:
                sensor = SensorConfig(num_pixels=num_pixels,
                                      tdc_bins_per_clock=bins,
                                      clock_period_ps=clock)
            elif (num_pixels, bins, clock) != (sensor.num_pixels,
                                               sensor.tdc_bins_per_clock,
                                               sensor.clock_period_ps):
                raise CalibrationError(
                    "LUT sensor fingerprint does not match the stream sensor")
            widths = np.zeros((num_pixels, bins))
            for key, vals in doc["widths_ps"].items():
                p = int(key)
                if not 0 <= p < num_pixels or len(vals) != bins:
                    raise CalibrationError(f"malformed LUT row for pixel {key}")
                widths[p] = vals
            unusable = frozenset(int(p) for p in doc.get("unusable_pixels", ()))
        except (KeyError, TypeError, ValueError) as exc:
            raise CalibrationError(f"malformed LUT document: {exc}") from None
        return cls(sensor=sensor, widths=widths, unusable=unusable)

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh)

    @classmethod
    def load(cls, path: str, sensor: SensorConfig | None = None) -> "TdcLut":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise CalibrationError(f"LUT file is not valid JSON: {exc}") from None
        return cls.from_json_dict(doc, sensor)


def build_lut(stream: PhotonStream,
              min_counts: int = MIN_COUNTS_PER_PIXEL) -> TdcLut:
    """Estimate per-pixel bin widths from a uniform-illumination run.

    Pixels are flagged unusable when their total count is below
    ``min_counts`` or when any code never fired (a dead code makes the
    positive-width invariant unsatisfiable; with uniform light and enough
    counts this only happens to genuinely defective channels).
    """
    sensor = stream.sensor
    if stream.raw_code is None:
        raise DataError("stream carries no raw TDC codes")
    bins = sensor.tdc_bins_per_clock
    codes = stream.raw_code.astype(np.int64)
    if codes.size and codes.max() >= bins:
        bad = int(codes.max())
        raise DataError(f"raw code {bad} out of range (tdc_bins={bins})")

    flat = stream.pixel.astype(np.int64) * bins + codes
    counts = np.bincount(flat, minlength=sensor.num_pixels * bins)
    counts = counts.reshape(sensor.num_pixels, bins)
    totals = counts.sum(axis=1)

    starved = totals < min_counts
    dead_code = (counts == 0).any(axis=1)
    unusable = frozenset(np.flatnonzero(starved | dead_code).tolist())
    if unusable:
        logger.warning("%d pixels unusable after code-density calibration",
                       len(unusable))

    clock = float(sensor.clock_period_ps)
    with np.errstate(invalid="ignore", divide="ignore"):
        widths = clock * counts / totals[:, None]
    widths[totals == 0] = 0.0
    return TdcLut(sensor=sensor, widths=widths, unusable=unusable,
                  total_counts=totals)


def apply_lut(stream: PhotonStream, lut: TdcLut) -> PhotonStream:
    """Convert raw codes to calibrated times (bin midpoint convention).

        time_ps = clock_base(time_ps) + offset[pixel, code] + width[pixel, code] / 2

    The coarse clock base is whatever multiple of the clock period the raw
    record's time field encodes.  The result stream drops raw codes and is
    re-sorted, since calibrated fine times can reorder ties.
    """
    sensor = stream.sensor
    if (sensor.num_pixels, sensor.tdc_bins_per_clock, sensor.clock_period_ps) != \
            (lut.sensor.num_pixels, lut.sensor.tdc_bins_per_clock,
             lut.sensor.clock_period_ps):
        raise CalibrationError("LUT sensor fingerprint does not match the stream sensor")
    if stream.raw_code is None:
        raise DataError("stream carries no raw TDC codes")
    codes = stream.raw_code.astype(np.int64)
    if codes.size and codes.max() >= sensor.tdc_bins_per_clock:
        raise DataError(
            f"raw code {int(codes.max())} out of range "
            f"(tdc_bins={sensor.tdc_bins_per_clock})")

    hit = np.unique(stream.pixel)
    blocked = sorted(int(p) for p in hit if p in lut.unusable)
    if blocked:
        shown = ", ".join(str(p) for p in blocked[:10])
        more = "" if len(blocked) <= 10 else f" (+{len(blocked) - 10} more)"
        raise CalibrationError(
            f"stream contains records from uncalibrated pixels: {shown}{more}")

    clock = float(sensor.clock_period_ps)
    pix = stream.pixel.astype(np.int64)
    base = np.floor(stream.time_ps / clock) * clock
    fine = lut.offsets[pix, codes] + lut.widths[pix, codes] / 2.0
    times = base + fine

    order = np.lexsort((stream.pixel, times, stream.cycle_index))
    return PhotonStream(
        header=stream.header,
        cycle_index=stream.cycle_index[order],
        pixel=stream.pixel[order],
        time_ps=times[order],
        raw_code=None,
        total_cycles=stream.total_cycles,
    )
