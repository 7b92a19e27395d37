"""Per-pixel timing delay calibration from adjacent-pixel cross-talk peaks.

Routing differences put every pixel's timestamps a fixed delay d_p off a
common reference, up to several ns.  A cross-talk pair fires from one
avalanche, so both pixels see the same instant and the coincidence peak
between neighbors i and j = i + 1 sits at the pure delay difference

    off_{i,j} = d_i - d_j

(the ps-scale photon flight time between SPADs is neglected).  Measuring
all 255 adjacent peaks gives a bidiagonal chain of equations; pinning
the mean delay to zero removes the free global shift and makes the
solution unique.  Forward substitution solves the chain exactly in one
O(n) pass, so no general linear solver is involved.

Pairs without a significant peak (dead pixel, not enough light) leave a
gap: the chain continues with an assumed zero offset there, the pair is
recorded in ``gap_pixels``, and the result is flagged degraded when more
than 20% of the pairs fell out.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .coincidence import DEFAULT_WINDOW_PS, PixelIndex
from .errors import CalibrationError, DataError, FitError
from .peakfit import fit_gaussian
from .timestream import PhotonStream

SCHEMA_VERSION = 1

# More than this fraction of invalid adjacent pairs marks the resulting
# calibration as degraded.
MAX_INVALID_FRACTION = 0.2

# mean(d) = 0 is exact by construction; allow only float round-off.
MEAN_TOL_PS = 1e-9


@dataclass(frozen=True)
class OffsetMeasurement:
    """Fitted peak position for one adjacent pair (i, i + 1).

    ``off_ps`` follows the dt = t_i - t_j convention, i.e. it estimates
    d_i - d_{i+1} directly.  Invalid measurements carry nan/inf values.
    """

    pixel_low: int
    pixel_high: int
    off_ps: float
    sigma_ps: float
    valid: bool

    def __post_init__(self):
        if self.pixel_high != self.pixel_low + 1:
            raise ValueError("measurements are defined on adjacent pairs")

    def to_json_dict(self) -> dict:
        return {
            "pixel_low": self.pixel_low, "pixel_high": self.pixel_high,
            "off_ps": self.off_ps, "sigma_ps": self.sigma_ps,
            "valid": self.valid,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "OffsetMeasurement":
        return cls(pixel_low=int(doc["pixel_low"]),
                   pixel_high=int(doc["pixel_high"]),
                   off_ps=float(doc["off_ps"]),
                   sigma_ps=float(doc["sigma_ps"]),
                   valid=bool(doc["valid"]))


@dataclass(frozen=True, eq=False)
class DelayVector:
    """Per-pixel delays, mean-zero by construction."""

    delays_ps: np.ndarray
    provenance: tuple[OffsetMeasurement, ...] = ()
    gap_pixels: tuple[tuple[int, int], ...] = ()
    degraded: bool = False

    def __post_init__(self):
        d = np.asarray(self.delays_ps, dtype=np.float64)
        object.__setattr__(self, "delays_ps", d)
        if d.ndim != 1 or len(d) < 2:
            raise ValueError("need delays for at least two pixels")
        if abs(d.mean()) > MEAN_TOL_PS:
            raise ValueError("delay vector must have zero mean")

    @classmethod
    def centered(cls, delays_ps, **kw) -> "DelayVector":
        d = np.asarray(delays_ps, dtype=np.float64)
        return cls(d - d.mean(), **kw)

    def __len__(self) -> int:
        return len(self.delays_ps)

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "delay_vector",
            "delays_ps": {str(i): float(v)
                          for i, v in enumerate(self.delays_ps)},
            "gap_pixels": [list(g) for g in self.gap_pixels],
            "degraded": self.degraded,
            "provenance": [m.to_json_dict() for m in self.provenance],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "DelayVector":
        try:
            raw = doc["delays_ps"]
            pixels = sorted(int(k) for k in raw)
            if pixels != list(range(len(pixels))):
                raise DataError("delay keys must cover 0..n-1 exactly")
            d = np.array([float(raw[str(p)]) for p in pixels])
            return cls(
                delays_ps=d,
                provenance=tuple(OffsetMeasurement.from_json_dict(m)
                                 for m in doc.get("provenance", [])),
                gap_pixels=tuple((int(a), int(b))
                                 for a, b in doc.get("gap_pixels", [])),
                degraded=bool(doc.get("degraded", False)))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed delay document: {exc}") from None

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json_dict(), fh)

    @classmethod
    def load(cls, path: str) -> "DelayVector":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"delay file is not valid JSON: {exc}") from None
        return cls.from_json_dict(doc)


def measure_offsets(stream: PhotonStream,
                    window_ps: float = DEFAULT_WINDOW_PS,
                    ) -> list[OffsetMeasurement]:
    """Fit the cross-talk peak of every adjacent pixel pair.

    Expects uniform weak illumination (ambient light works) so that
    every pixel fires and neighbor cross-talk produces a peak.  Returns
    one measurement per pair; pairs without a significant peak come back
    flagged invalid rather than raising.
    """
    num_pixels = stream.sensor.num_pixels
    bin_width = stream.sensor.mean_bin_width_ps
    index = PixelIndex.from_stream(stream)
    out = []
    for i in range(num_pixels - 1):
        hist = index.histogram((i, i + 1), window_ps, bin_width)
        valid = False
        off = math.nan
        sigma = math.inf
        try:
            fit = fit_gaussian(hist)
            if fit.significant and math.isfinite(fit.center_err_ps):
                # Histogram dt runs t_{i+1} - t_i; the offset convention
                # is t_i - t_{i+1}, hence the sign flip.
                off = -fit.center_ps
                sigma = fit.center_err_ps
                valid = True
        except FitError:
            pass
        out.append(OffsetMeasurement(pixel_low=i, pixel_high=i + 1,
                                     off_ps=off, sigma_ps=sigma, valid=valid))
    return out


def invalid_fraction(measurements) -> float:
    if not measurements:
        return 1.0
    return sum(not m.valid for m in measurements) / len(measurements)


def solve_delays(measurements, num_pixels: int | None = None) -> DelayVector:
    """Solve the adjacent-pair chain for per-pixel delays.

    d_{i+1} = d_i - off_{i,i+1} segment by segment, then one global
    shift pins mean(d) to zero.  Invalid or missing pairs join their
    segments with an assumed zero offset and show up in ``gap_pixels``.
    """
    by_low: dict[int, OffsetMeasurement] = {}
    for m in measurements:
        if m.pixel_low in by_low:
            raise ValueError(f"duplicate measurement for pair "
                             f"({m.pixel_low}, {m.pixel_high})")
        by_low[m.pixel_low] = m

    if num_pixels is None:
        if not by_low:
            raise CalibrationError("no measurements to solve from")
        num_pixels = max(by_low) + 2
    if num_pixels < 2:
        raise ValueError("need at least two pixels")

    valid = [m for m in by_low.values() if m.valid]
    if not valid:
        raise CalibrationError("no valid offset measurements; cannot "
                               "calibrate delays")

    d = np.zeros(num_pixels)
    gaps = []
    for i in range(num_pixels - 1):
        m = by_low.get(i)
        if m is not None and m.valid:
            d[i + 1] = d[i] - m.off_ps
        else:
            d[i + 1] = d[i]
            gaps.append((i, i + 1))
    d -= d.mean()

    n_pairs = num_pixels - 1
    return DelayVector(
        delays_ps=d,
        provenance=tuple(sorted(valid, key=lambda m: m.pixel_low)),
        gap_pixels=tuple(gaps),
        degraded=len(gaps) > MAX_INVALID_FRACTION * n_pairs)


def apply_delays(stream: PhotonStream, delays) -> PhotonStream:
    """Subtract per-pixel delays from every record and re-sort.

    Corrected times may leave [0, cycle_period); such records are kept
    and tagged ``out_of_window`` instead of being wrapped, so counting
    statistics survive the correction.
    """
    vec = delays.delays_ps if isinstance(delays, DelayVector) \
        else np.asarray(delays, dtype=np.float64)
    if stream.n_records == 0:
        return stream
    if int(stream.pixel.max()) >= len(vec):
        raise DataError(f"delay vector covers {len(vec)} pixels but the "
                        f"stream uses pixel {int(stream.pixel.max())}")

    time = stream.time_ps - vec[stream.pixel]
    period = stream.sensor.cycle_period_ps
    oow = (time < 0) | (time >= period)
    if stream.out_of_window is not None:
        oow |= stream.out_of_window
    order = np.lexsort((stream.pixel, time, stream.cycle_index))
    return PhotonStream(
        header=stream.header,
        cycle_index=stream.cycle_index[order],
        pixel=stream.pixel[order],
        time_ps=time[order],
        raw_code=None if stream.raw_code is None else stream.raw_code[order],
        total_cycles=stream.total_cycles,
        out_of_window=oow[order] if oow.any() else None)
