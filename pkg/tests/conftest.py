"""Shared helpers: deterministic random stream generation and mutation."""

from __future__ import annotations

import io

import numpy as np

from spadkit import (
    AcquisitionCycle,
    SensorConfig,
    StreamHeader,
    TimestampRecord,
    write_stream,
)


def random_cycles(rng: np.random.Generator, sensor: SensorConfig,
                  max_cycles: int = 8, max_records: int = 6,
                  raw: bool = False) -> list[AcquisitionCycle]:
    """Random but invariant-respecting cycles (sorted records, growing index)."""
    cycles = []
    index = -1
    for _ in range(int(rng.integers(0, max_cycles + 1))):
        index += int(rng.integers(1, 5))
        n = int(rng.integers(0, max_records + 1))
        recs = sorted(
            ((int(rng.integers(0, sensor.cycle_period_ps)),
              int(rng.integers(0, sensor.num_pixels))) for _ in range(n)))
        records = tuple(
            TimestampRecord(
                pixel=p, time_ps=t,
                raw_code=int(rng.integers(0, sensor.tdc_bins_per_clock)) if raw else None)
            for t, p in recs)
        cycles.append(AcquisitionCycle(index, records))
    return cycles


def random_header(rng: np.random.Generator, sensor: SensorConfig) -> StreamHeader:
    meta = {}
    for k in range(int(rng.integers(0, 3))):
        meta[f"key{k}"] = "".join(
            chr(int(c)) for c in rng.integers(32, 127, size=rng.integers(0, 12)))
    return StreamHeader(sensor=sensor, metadata=meta)


def stream_bytes(header: StreamHeader, cycles: list[AcquisitionCycle]) -> bytes:
    buf = io.BytesIO()
    write_stream(header, cycles, buf)
    return buf.getvalue()
