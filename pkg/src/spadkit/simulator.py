"""Monte Carlo generator of synthetic photon-timestamp streams.

Generates dark counts, beam photons with distinguishability classes,
cross-arm time-correlated pairs (the bunching signal), distance-dependent
optical cross-talk, per-pixel electrical delays, and Gaussian detection
jitter, with a ground-truth sidecar for every count.  The model is
phenomenological: bunching is injected as explicit correlated pairs
rather than derived from thermal field statistics.

Reproducibility contract: the same config (seed included) produces a
byte-identical stream on any platform.  Cycles are generated in fixed
blocks, each from its own child generator keyed by the block index, so
blocks could be produced in parallel without changing the output.  Block
size is a pure function of the config.

Pair semantics: ``pair_fraction`` allocates that fraction of the weaker
arm's rate to cross-arm pair attempts.  Each attempt draws one class per
arm from the respective mix; attempts whose classes coincide become
time-correlated pairs (arm-b photon at arm-a time + N(0, sigma) + fiber
delay), the rest turn into two unrelated photons in independent cycles.
Independent cycles matter: keeping a failed attempt's photons in one
cycle would correlate the arm counts and raise the accidental floor in
proportion to the class-mismatch rate, and the measured contrast ratio
between mixes would no longer converge to the ratio of
``theoretical_contrast`` values (= sum of squared weights).

Cross-talk spawns are drawn from every generated photon (depth 1, no
CT-of-CT) before per-pixel delays are applied, and strictly follow their
source in time by |N(0, ct_jitter)|.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .timestream import PhotonStream, SensorConfig, StreamHeader

MAX_MEAN_RECORDS_PER_CYCLE = 10_000.0

# Target records per generation block; blocks are the determinism and
# parallelism unit.
_BLOCK_TARGET_RECORDS = 1 << 21
_BLOCK_MAX_CYCLES = 1 << 22

# Lineage arrays are only serialized to JSON below this record count.
LINEAGE_JSON_MAX = 1_000_000

ORIGIN_DARK = 0
ORIGIN_BEAM_SINGLE = 1
ORIGIN_PAIR_A = 2
ORIGIN_PAIR_B = 3
ORIGIN_CT = 4

ORIGIN_NAMES = ("dark", "beam_single", "pair_a", "pair_b", "crosstalk")


def _pairs(obj):
    """Key/value pairs from either a mapping or a pair sequence.

    Hand-written configs tend to use JSON objects ({"17": 2500}) where
    to_json_dict emits pair lists ([[17, 2500]]); accept both.
    """
    return obj.items() if isinstance(obj, dict) else obj


def theoretical_contrast(mix) -> float:
    """Probability that two photons drawn from the mix share a class.

    This is the factor by which distinguishability dilutes the bunching
    contrast: 1 for a single class, 0.5 for two equal classes, 0.25 for
    four equal classes.  Duplicate labels are merged before squaring.
    """
    mix = list(mix)
    if not mix:
        raise ValueError("class mix is empty")
    weights: dict[str, float] = {}
    for label, w in mix:
        w = float(w)
        if w < 0:
            raise ValueError(f"class weight must be >= 0, got {w} for {label!r}")
        weights[str(label)] = weights.get(str(label), 0.0) + w
    total = sum(weights.values())
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"class weights must sum to 1, got {total}")
    return float(sum(w * w for w in weights.values()))


@dataclass(frozen=True)
class DcrProfile:
    """Dark-count rates: a common base plus per-pixel overrides.

    ``drift_scale`` linearly ramps every dark rate from 1x at the first
    cycle to ``drift_scale``x at the last, modeling slow heating.
    """

    base_cps: float = 0.0
    overrides: tuple[tuple[int, float], ...] = ()
    drift_scale: float = 1.0

    def rates(self, num_pixels: int) -> np.ndarray:
        rates = np.full(num_pixels, float(self.base_cps))
        for pixel, rate in self.overrides:
            if not 0 <= pixel < num_pixels:
                raise ValueError(f"override pixel {pixel} out of range")
            rates[pixel] = float(rate)
        if (rates < 0).any():
            raise ValueError("dark rates must be >= 0")
        return rates

    def to_json_dict(self) -> dict:
        return {"base_cps": self.base_cps,
                "overrides": [[p, r] for p, r in self.overrides],
                "drift_scale": self.drift_scale}

    @classmethod
    def from_json_dict(cls, d: dict) -> "DcrProfile":
        return cls(base_cps=float(d.get("base_cps", 0.0)),
                   overrides=tuple((int(p), float(r)) for p, r
                                   in _pairs(d.get("overrides", []))),
                   drift_scale=float(d.get("drift_scale", 1.0)))


@dataclass(frozen=True)
class BeamSpec:
    """One illuminated pixel: rate plus its distinguishability-class mix."""

    pixel: int
    rate_cps: float
    mix: tuple[tuple[str, float], ...] = (("c0", 1.0),)

    def to_json_dict(self) -> dict:
        return {"pixel": self.pixel, "rate_cps": self.rate_cps,
                "mix": [[label, w] for label, w in self.mix]}

    @classmethod
    def from_json_dict(cls, d: dict) -> "BeamSpec":
        mix = tuple((str(label), float(w))
                    for label, w in _pairs(d.get("mix", [])))
        return cls(pixel=int(d["pixel"]), rate_cps=float(d["rate_cps"]),
                   mix=mix or (("c0", 1.0),))


@dataclass(frozen=True)
class SimConfig:
    sensor: SensorConfig = field(default_factory=SensorConfig)
    seed: int = 0
    duration_s: float = 1.0
    dcr: DcrProfile = field(default_factory=DcrProfile)
    beams: tuple[BeamSpec, ...] = ()
    pair_fraction: float = 0.0
    correlation_sigma_ps: float = 100.0
    fiber_delay_ps: float = 0.0
    ct_profile: tuple[tuple[int, float], ...] = ()
    ct_jitter_sigma_ps: float = 30.0
    delays_ps: tuple[float, ...] | None = None
    jitter_sigma_ps: float = 40.0
    include_lineage: bool = False

    # -- validation --------------------------------------------------------

    def validated(self) -> "SimConfig":
        """Raise on an inconsistent config; returns self for chaining."""
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")
        if self.duration_s <= 0:
            raise ValueError("duration must be positive")
        self.dcr.rates(self.sensor.num_pixels)
        if self.dcr.drift_scale < 0:
            raise ValueError("drift_scale must be >= 0")
        for beam in self.beams:
            if not 0 <= beam.pixel < self.sensor.num_pixels:
                raise ValueError(f"beam pixel {beam.pixel} out of range")
            if beam.rate_cps < 0:
                raise ValueError("beam rate must be >= 0")
            theoretical_contrast(beam.mix)  # validates the mix
        if not 0.0 <= self.pair_fraction <= 1.0:
            raise ValueError("pair_fraction must be in [0, 1]")
        if self.pair_fraction > 0 and len(self.beams) != 2:
            raise ValueError("pair generation requires exactly two beams")
        for sigma in (self.correlation_sigma_ps, self.ct_jitter_sigma_ps,
                      self.jitter_sigma_ps):
            if sigma < 0:
                raise ValueError("sigma values must be >= 0")
        for dist, prob in self.ct_profile:
            if int(dist) != dist or dist < 1:
                raise ValueError(f"ct distance must be a positive int, got {dist}")
            if not 0.0 <= prob <= 1.0:
                raise ValueError(f"ct probability {prob} outside [0, 1]")
        if len(set(d for d, _ in self.ct_profile)) != len(self.ct_profile):
            raise ValueError("duplicate distance in ct_profile")
        if self.delays_ps is not None \
                and len(self.delays_ps) != self.sensor.num_pixels:
            raise ValueError("delays_ps must have one entry per pixel")

        per_cycle = self._mean_records_per_cycle()
        if per_cycle > MAX_MEAN_RECORDS_PER_CYCLE:
            raise DataError(
                f"mean records/cycle {per_cycle:.0f} exceeds "
                f"{MAX_MEAN_RECORDS_PER_CYCLE:.0f}; rates unphysical "
                "for this model")
        return self

    def _mean_records_per_cycle(self) -> float:
        cycle_s = self.sensor.cycle_period_ps * 1e-12
        dark = self.dcr.rates(self.sensor.num_pixels).sum() \
            * max(1.0, self.dcr.drift_scale)
        beams = sum(b.rate_cps for b in self.beams)
        ct_factor = 1.0 + 2.0 * sum(p for _, p in self.ct_profile)
        return (dark + beams) * cycle_s * ct_factor

    # -- derived -----------------------------------------------------------

    @property
    def total_cycles(self) -> int:
        cycle_s = self.sensor.cycle_period_ps * 1e-12
        n = int(round(self.duration_s / cycle_s))
        if n < 1:
            raise ValueError("duration shorter than one cycle")
        return n

    def class_labels(self) -> tuple[str, ...]:
        labels = sorted({label for b in self.beams for label, _ in b.mix})
        return tuple(labels)

    # -- serialization -----------------------------------------------------

    def to_json_dict(self) -> dict:
        s = self.sensor
        return {
            "sensor": {"num_pixels": s.num_pixels,
                       "cycle_period_ps": s.cycle_period_ps,
                       "tdc_bins_per_clock": s.tdc_bins_per_clock,
                       "clock_period_ps": s.clock_period_ps},
            "seed": self.seed,
            "duration_s": self.duration_s,
            "dcr": self.dcr.to_json_dict(),
            "beams": [b.to_json_dict() for b in self.beams],
            "pair_fraction": self.pair_fraction,
            "correlation_sigma_ps": self.correlation_sigma_ps,
            "fiber_delay_ps": self.fiber_delay_ps,
            "ct_profile": [[d, p] for d, p in self.ct_profile],
            "ct_jitter_sigma_ps": self.ct_jitter_sigma_ps,
            "delays_ps": None if self.delays_ps is None
            else list(self.delays_ps),
            "jitter_sigma_ps": self.jitter_sigma_ps,
            "include_lineage": self.include_lineage,
        }

    @classmethod
    def from_json_dict(cls, d: dict) -> "SimConfig":
        sensor = SensorConfig(**d["sensor"]) if "sensor" in d else SensorConfig()
        delays = d.get("delays_ps")
        return cls(
            sensor=sensor,
            seed=int(d.get("seed", 0)),
            duration_s=float(d.get("duration_s", 1.0)),
            dcr=DcrProfile.from_json_dict(d.get("dcr", {})),
            beams=tuple(BeamSpec.from_json_dict(b) for b in d.get("beams", [])),
            pair_fraction=float(d.get("pair_fraction", 0.0)),
            correlation_sigma_ps=float(d.get("correlation_sigma_ps", 100.0)),
            fiber_delay_ps=float(d.get("fiber_delay_ps", 0.0)),
            ct_profile=tuple((int(dd), float(p))
                             for dd, p in _pairs(d.get("ct_profile", []))),
            ct_jitter_sigma_ps=float(d.get("ct_jitter_sigma_ps", 30.0)),
            delays_ps=None if delays is None else tuple(float(x) for x in delays),
            jitter_sigma_ps=float(d.get("jitter_sigma_ps", 40.0)),
            include_lineage=bool(d.get("include_lineage", False)),
        )


@dataclass
class SimTruth:
    """Ground truth for one simulation run.

    The count fields satisfy, and tests verify,
    ``n_records = n_dark + n_beam_singles + 2*n_pair_attempts + n_ct
    - n_dropped``.  ``origin``/``class_id`` are per-record lineage arrays
    aligned with the stream (present only when requested).
    """

    delays_ps: np.ndarray
    ct_profile: dict[int, float]
    total_cycles: int
    class_labels: tuple[str, ...]
    n_dark: int = 0
    n_beam_singles: int = 0
    n_pair_attempts: int = 0
    n_pair_bunched: int = 0
    n_ct: int = 0
    n_dropped: int = 0
    origin: np.ndarray | None = None
    class_id: np.ndarray | None = None

    def to_json_dict(self) -> dict:
        out = {
            "delays_ps": [float(d) for d in self.delays_ps],
            "ct_profile": {str(d): p for d, p in sorted(self.ct_profile.items())},
            "total_cycles": self.total_cycles,
            "class_labels": list(self.class_labels),
            "counts": {
                "dark": self.n_dark,
                "beam_singles": self.n_beam_singles,
                "pair_attempts": self.n_pair_attempts,
                "pair_bunched": self.n_pair_bunched,
                "crosstalk": self.n_ct,
                "dropped": self.n_dropped,
            },
        }
        if self.origin is not None and len(self.origin) <= LINEAGE_JSON_MAX:
            out["lineage"] = {
                "origin_names": list(ORIGIN_NAMES),
                "origin": self.origin.tolist(),
                "class_id": self.class_id.tolist(),
            }
        return out


def simulate(config: SimConfig) -> tuple[PhotonStream, SimTruth]:
    """Generate a stream and its ground truth from a validated config."""
    config.validated()
    sensor = config.sensor
    period = float(sensor.cycle_period_ps)
    cycle_s = sensor.cycle_period_ps * 1e-12
    total_cycles = config.total_cycles

    dark_rates = config.dcr.rates(sensor.num_pixels)
    labels = config.class_labels()
    label_index = {label: k for k, label in enumerate(labels)}
    delays = np.zeros(sensor.num_pixels) if config.delays_ps is None \
        else np.asarray(config.delays_ps, dtype=np.float64)

    per_cycle = max(config._mean_records_per_cycle(), 1e-12)
    block_cycles = int(_BLOCK_TARGET_RECORDS / per_cycle)
    block_cycles = max(1, min(block_cycles, _BLOCK_MAX_CYCLES, total_cycles))

    truth = SimTruth(
        delays_ps=delays.copy(),
        ct_profile={int(d): float(p) for d, p in config.ct_profile},
        total_cycles=total_cycles,
        class_labels=labels,
    )

    parts_cyc, parts_pix, parts_time = [], [], []
    parts_origin, parts_class = [], []
    for block_idx, c0 in enumerate(range(0, total_cycles, block_cycles)):
        span = min(block_cycles, total_cycles - c0)
        rng = np.random.default_rng(
            np.random.SeedSequence(config.seed, spawn_key=(block_idx,)))
        blk = _generate_block(rng, config, dark_rates, label_index,
                              c0, span, period, cycle_s, truth)
        cyc, pix, time, origin, class_id = blk
        # delays and detection jitter apply to every record
        time = time + delays[pix] + rng.normal(0.0, config.jitter_sigma_ps,
                                               len(time))
        time = np.rint(time)
        keep = (time >= 0.0) & (time < period)
        truth.n_dropped += int(len(keep) - keep.sum())
        cyc, pix, time = cyc[keep], pix[keep], time[keep]
        origin, class_id = origin[keep], class_id[keep]
        order = np.lexsort((pix, time, cyc))
        parts_cyc.append(cyc[order])
        parts_pix.append(pix[order])
        parts_time.append(time[order])
        parts_origin.append(origin[order])
        parts_class.append(class_id[order])

    header = StreamHeader(sensor=sensor, metadata={
        "source": "simulation", "seed": str(config.seed)})
    stream = PhotonStream(
        header=header,
        cycle_index=np.concatenate(parts_cyc) if parts_cyc
        else np.array([], dtype=np.uint64),
        pixel=np.concatenate(parts_pix) if parts_pix
        else np.array([], dtype=np.uint16),
        time_ps=np.concatenate(parts_time) if parts_time
        else np.array([], dtype=np.float64),
        raw_code=None,
        total_cycles=total_cycles,
    )
    if config.include_lineage:
        truth.origin = np.concatenate(parts_origin) if parts_origin \
            else np.array([], dtype=np.uint8)
        truth.class_id = np.concatenate(parts_class) if parts_class \
            else np.array([], dtype=np.int16)
    return stream, truth


def _generate_block(rng, config: SimConfig, dark_rates, label_index,
                    c0: int, span: int, period: float, cycle_s: float,
                    truth: SimTruth):
    """All photons for cycles [c0, c0+span) in a fixed draw order.

    Returns pre-delay, pre-drop record arrays.  The RNG call sequence
    depends only on the config (array shapes are data-dependent), which
    is what makes the output reproducible.
    """
    sensor = config.sensor
    num_pixels = sensor.num_pixels
    cyc_parts, pix_parts, t_parts = [], [], []
    origin_parts, class_parts = [], []

    def emit(cycles, pixels, times, origin, class_id):
        cyc_parts.append(cycles.astype(np.uint64, copy=False))
        pix_parts.append(pixels.astype(np.uint16, copy=False))
        t_parts.append(times.astype(np.float64, copy=False))
        n = len(cycles)
        origin_parts.append(np.full(n, origin, dtype=np.uint8))
        if isinstance(class_id, np.ndarray):
            class_parts.append(class_id.astype(np.int16, copy=False))
        else:
            class_parts.append(np.full(n, class_id, dtype=np.int16))

    # 1. dark counts, with optional linear drift across the acquisition
    drift = config.dcr.drift_scale
    if drift != 1.0:
        denom = max(truth.total_cycles - 1, 1)
        ramp = 1.0 + (drift - 1.0) * (np.arange(c0, c0 + span) / denom)
        weight_sum = float(ramp.sum())
        n_dark = rng.poisson(dark_rates * weight_sum * cycle_s)
        total_dark = int(n_dark.sum())
        cdf = np.cumsum(ramp)
        u = rng.uniform(0.0, weight_sum, total_dark)
        dark_cyc = np.uint64(c0) + np.searchsorted(cdf, u).astype(np.uint64)
    else:
        n_dark = rng.poisson(dark_rates * span * cycle_s)
        total_dark = int(n_dark.sum())
        dark_cyc = rng.integers(c0, c0 + span, total_dark).astype(np.uint64)
    dark_pix = np.repeat(np.arange(num_pixels, dtype=np.uint16), n_dark)
    dark_t = rng.uniform(0.0, period, total_dark)
    emit(dark_cyc, dark_pix, dark_t, ORIGIN_DARK, -1)
    truth.n_dark += total_dark

    # 2. beam singles (pair attempts are carved out of the two-beam rates)
    attempt_rate = 0.0
    if config.pair_fraction > 0:
        attempt_rate = config.pair_fraction * min(b.rate_cps
                                                  for b in config.beams)
    for beam in config.beams:
        single_rate = beam.rate_cps - attempt_rate
        n = int(rng.poisson(max(single_rate, 0.0) * span * cycle_s))
        cycles = rng.integers(c0, c0 + span, n).astype(np.uint64)
        times = rng.uniform(0.0, period, n)
        class_id = _draw_classes(rng, beam.mix, label_index, n)
        emit(cycles, np.full(n, beam.pixel, dtype=np.uint16), times,
             ORIGIN_BEAM_SINGLE, class_id)
        truth.n_beam_singles += n

    # 3. cross-arm pair attempts; same-class attempts become bunched pairs
    if attempt_rate > 0:
        arm_a, arm_b = config.beams
        n = int(rng.poisson(attempt_rate * span * cycle_s))
        cycles = rng.integers(c0, c0 + span, n).astype(np.uint64)
        t_a = rng.uniform(0.0, period, n)
        cls_a = _draw_classes(rng, arm_a.mix, label_index, n)
        cls_b = _draw_classes(rng, arm_b.mix, label_index, n)
        dt = rng.normal(0.0, config.correlation_sigma_ps, n)
        t_indep = rng.uniform(0.0, period, n)
        cyc_indep = rng.integers(c0, c0 + span, n).astype(np.uint64)
        matched = cls_a == cls_b
        t_b = np.where(matched, t_a + dt, t_indep) + config.fiber_delay_ps
        # Mismatched attempts must not share the a-photon's cycle: that
        # would correlate the per-cycle arm counts and inflate the flat
        # coincidence floor by the mismatch rate, skewing contrast ratios.
        cyc_b = np.where(matched, cycles, cyc_indep)
        emit(cycles, np.full(n, arm_a.pixel, dtype=np.uint16), t_a,
             ORIGIN_PAIR_A, cls_a)
        emit(cyc_b, np.full(n, arm_b.pixel, dtype=np.uint16), t_b,
             ORIGIN_PAIR_B, cls_b)
        truth.n_pair_attempts += n
        truth.n_pair_bunched += int(matched.sum())

    # 4. cross-talk spawns from every photon above, depth 1
    src_cyc = np.concatenate(cyc_parts)
    src_pix = np.concatenate(pix_parts)
    src_t = np.concatenate(t_parts)
    ct_cyc, ct_pix, ct_t = [], [], []
    for dist, prob in sorted(truth.ct_profile.items()):
        for direction in (dist, -dist):
            target = src_pix.astype(np.int64) + direction
            valid = np.flatnonzero((target >= 0) & (target < num_pixels))
            chosen = valid[_bernoulli_indices(rng, len(valid), prob)]
            if len(chosen) == 0:
                continue
            ct_cyc.append(src_cyc[chosen])
            ct_pix.append(target[chosen].astype(np.uint16))
            ct_t.append(src_t[chosen] + np.abs(
                rng.normal(0.0, config.ct_jitter_sigma_ps, len(chosen))))
    if ct_cyc:
        emit(np.concatenate(ct_cyc), np.concatenate(ct_pix),
             np.concatenate(ct_t), ORIGIN_CT, -1)
        truth.n_ct += sum(len(a) for a in ct_cyc)

    return (np.concatenate(cyc_parts), np.concatenate(pix_parts),
            np.concatenate(t_parts), np.concatenate(origin_parts),
            np.concatenate(class_parts))


def _draw_classes(rng, mix, label_index, n) -> np.ndarray:
    """Class ids for n photons drawn from the (label, weight) mix."""
    weights = np.array([w for _, w in mix], dtype=np.float64)
    cdf = np.cumsum(weights)
    cdf /= cdf[-1]
    picks = np.searchsorted(cdf, rng.uniform(0.0, 1.0, n), side="right")
    picks = np.minimum(picks, len(mix) - 1)
    ids = np.array([label_index[label] for label, _ in mix], dtype=np.int16)
    return ids[picks]


def _bernoulli_indices(rng, n: int, p: float) -> np.ndarray:
    """Indices of successes of n iid Bernoulli(p) trials, without
    materializing n draws: successive gaps are geometric."""
    if n == 0 or p <= 0.0:
        return np.array([], dtype=np.int64)
    if p >= 1.0:
        return np.arange(n, dtype=np.int64)
    chunks = []
    pos = -1
    expect = n * p
    size = int(expect + 6.0 * np.sqrt(expect) + 16)
    while pos < n - 1:
        gaps = rng.geometric(p, size)
        idx = pos + np.cumsum(gaps)
        chunks.append(idx)
        pos = int(idx[-1])
    idx = np.concatenate(chunks)
    return idx[idx < n]


def simulate_code_density(sensor: SensorConfig, widths_ps, counts_per_pixel,
                          seed: int, *, n_cycles: int = 1000) -> PhotonStream:
    """Raw-code stream under temporally uniform illumination.

    ``widths_ps`` gives the true TDC bin widths, one row per pixel or a
    single shared row; each detection samples its fine code from those
    widths, which is exactly the population a code-density calibration
    estimates.  Record times carry the correct coarse clock slot plus the
    nominal (uniform-width) code position.
    """
    widths = np.atleast_2d(np.asarray(widths_ps, dtype=np.float64))
    if widths.shape[0] == 1:
        widths = np.broadcast_to(widths, (sensor.num_pixels, widths.shape[1]))
    if widths.shape != (sensor.num_pixels, sensor.tdc_bins_per_clock):
        raise ValueError(
            f"widths shape {widths.shape} does not match sensor geometry")
    counts = np.broadcast_to(
        np.asarray(counts_per_pixel, dtype=np.int64), (sensor.num_pixels,))
    if (counts < 0).any():
        raise ValueError("counts must be >= 0")

    clock = float(sensor.clock_period_ps)
    n_slots = sensor.cycle_period_ps // sensor.clock_period_ps
    rng = np.random.default_rng(np.random.SeedSequence(seed))

    pix = np.repeat(np.arange(sensor.num_pixels, dtype=np.uint16), counts)
    total = len(pix)
    codes = np.empty(total, dtype=np.uint32)
    cum = np.cumsum(widths, axis=1)
    start = 0
    for p in range(sensor.num_pixels):
        n = int(counts[p])
        fine = rng.uniform(0.0, clock, n)
        codes[start:start + n] = np.searchsorted(cum[p], fine, side="right")
        start += n
    codes = np.minimum(codes, sensor.tdc_bins_per_clock - 1)

    cycles = rng.integers(0, n_cycles, total).astype(np.uint64)
    slots = rng.integers(0, n_slots, total)
    times = np.rint(slots * clock + codes * sensor.mean_bin_width_ps)

    order = np.lexsort((pix, times, cycles))
    return PhotonStream(
        header=StreamHeader(sensor=sensor,
                            metadata={"source": "simulation",
                                      "seed": str(seed)}),
        cycle_index=cycles[order], pixel=pix[order],
        time_ps=times[order], raw_code=codes[order],
        total_cycles=n_cycles,
    )
