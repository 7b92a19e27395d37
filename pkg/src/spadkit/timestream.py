"""Photon timestamp streams: types, binary format, CSV interchange.

A stream is a sequence of acquisition cycles, each holding the photon
records detected during one gating window.  Two representations coexist:

* record model -- ``AcquisitionCycle`` / ``TimestampRecord`` objects,
  convenient for small streams and for the streaming reader;
* columnar model -- ``PhotonStream``, parallel numpy arrays over all
  records, used by every analysis routine (millions of records).

Binary container (extension ``.spk1``, all fields little-endian):

    magic            4 bytes  b"SPK1"
    version          u16
    num_pixels       u16
    cycle_period_ps  u64
    tdc_bins         u16      per clock period
    clock_period_ps  u32
    metadata_count   u16      then per entry: key_len u16, key (utf-8),
                              val_len u16, val (utf-8)
    cycle_count      u64      0xFFFF_FFFF_FFFF_FFFF while streaming

    per cycle:
      cycle_index    u64      strictly increasing, gaps allowed
      record_count   u32
      per record:
        pixel        u16
        time_ps      u64      within [0, cycle_period_ps)
        flags        u8       bit 0: raw TDC code follows; others reserved
        raw_code     u32      only when flags bit 0 is set

Records inside a cycle are sorted by (time_ps, pixel); the readers reject
unsorted input rather than silently reordering it.  Empty cycles need not
be serialized -- the acquisition length in cycles travels in the
``total_cycles`` metadata key when it differs from the serialized count.
"""

from __future__ import annotations

import csv
import io
import logging
import struct
from dataclasses import dataclass, field, replace
from typing import BinaryIO, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import StreamFormatError

logger = logging.getLogger(__name__)

MAGIC = b"SPK1"
FORMAT_VERSION = 1
STREAMING_CYCLE_COUNT = 0xFFFF_FFFF_FFFF_FFFF

_HEADER = struct.Struct("<4sHHQHI")          # magic .. clock_period_ps
_U16 = struct.Struct("<H")
_U64 = struct.Struct("<Q")
_CYCLE_HEADER = struct.Struct("<QI")          # cycle_index, record_count
_REC_PLAIN = struct.Struct("<HQB")
_REC_RAW = struct.Struct("<HQBI")

_DT_PLAIN = np.dtype([("pixel", "<u2"), ("time", "<u8"), ("flags", "u1")])
_DT_RAW = np.dtype([("pixel", "<u2"), ("time", "<u8"), ("flags", "u1"),
                    ("raw", "<u4")])
_DT_CYCLE_HEADER = np.dtype([("index", "<u8"), ("count", "<u4")])

_FLAG_RAW = 0x01

# Records per slab in the vectorized read/write paths.  Bounds transient
# buffers to tens of MB while keeping per-slab Python overhead negligible.
_IO_CHUNK = 1 << 22


# ---------------------------------------------------------------------------
# core types

@dataclass(frozen=True)
class SensorConfig:
    """Geometry and timing constants of one linear SPAD half-array."""

    num_pixels: int = 256
    cycle_period_ps: int = 4_000_000
    tdc_bins_per_clock: int = 140
    clock_period_ps: int = 2500

    def __post_init__(self):
        if self.num_pixels < 2:
            raise ValueError("need at least two pixels")
        if self.tdc_bins_per_clock < 1 or self.clock_period_ps < 1:
            raise ValueError("TDC geometry must be positive")
        if self.cycle_period_ps <= self.clock_period_ps:
            raise ValueError("cycle period must exceed one clock period")

    @property
    def mean_bin_width_ps(self) -> float:
        # Derived, so width * bins == clock period holds exactly.
        return self.clock_period_ps / self.tdc_bins_per_clock


@dataclass(frozen=True)
class TimestampRecord:
    """One detection: pixel index and intra-cycle time in integer ps."""

    pixel: int
    time_ps: int
    raw_code: int | None = None


@dataclass(frozen=True)
class AcquisitionCycle:
    cycle_index: int
    records: tuple[TimestampRecord, ...]


@dataclass(frozen=True)
class StreamHeader:
    sensor: SensorConfig
    version: int = FORMAT_VERSION
    metadata: Mapping[str, str] = field(default_factory=dict)

    def with_metadata(self, **entries: str) -> "StreamHeader":
        merged = dict(self.metadata)
        merged.update(entries)
        return replace(self, metadata=merged)


# ---------------------------------------------------------------------------
# columnar stream

@dataclass
class PhotonStream:
    """All records of a stream as parallel arrays, cycle-major order.

    Arrays are sorted lexicographically by (cycle_index, time_ps, pixel).
    ``time_ps`` is float64 so delay-corrected streams keep sub-ps values;
    freshly read or simulated streams hold integer-valued times.
    ``out_of_window`` marks records pushed outside [0, cycle_period) by a
    delay correction; such streams are analysis artifacts and cannot be
    serialized.
    """

    header: StreamHeader
    cycle_index: np.ndarray
    pixel: np.ndarray
    time_ps: np.ndarray
    raw_code: np.ndarray | None = None
    total_cycles: int = 0
    out_of_window: np.ndarray | None = None

    # -- construction ------------------------------------------------------

    def __post_init__(self):
        n = len(self.cycle_index)
        if len(self.pixel) != n or len(self.time_ps) != n:
            raise ValueError("column lengths differ")
        if self.raw_code is not None and len(self.raw_code) != n:
            raise ValueError("column lengths differ")
        if self.total_cycles == 0 and n:
            self.total_cycles = int(self.cycle_index[-1]) + 1

    @property
    def sensor(self) -> SensorConfig:
        return self.header.sensor

    @property
    def n_records(self) -> int:
        return len(self.pixel)

    @property
    def duration_s(self) -> float:
        return self.total_cycles * self.sensor.cycle_period_ps * 1e-12

    def counts_per_pixel(self) -> np.ndarray:
        return np.bincount(self.pixel, minlength=self.sensor.num_pixels)

    def validate(self) -> None:
        """Check the stream invariants; raise StreamFormatError on violation."""
        sensor = self.sensor
        if self.n_records == 0:
            return
        if self.pixel.min() < 0 or self.pixel.max() >= sensor.num_pixels:
            raise StreamFormatError("pixel index out of range")
        in_window = (self.time_ps >= 0) & (self.time_ps < sensor.cycle_period_ps)
        if self.out_of_window is None:
            if not in_window.all():
                raise StreamFormatError("record time outside cycle")
        elif not (in_window | self.out_of_window).all():
            raise StreamFormatError("record time outside cycle and not tagged")
        key = (self.cycle_index.astype(np.int64), self.time_ps, self.pixel)
        order = _lex_nondecreasing(*key)
        if not order:
            raise StreamFormatError("records not sorted by (cycle, time, pixel)")
        if self.total_cycles <= int(self.cycle_index[-1]):
            raise StreamFormatError("total_cycles smaller than last cycle index")

    @classmethod
    def from_cycles(cls, header: StreamHeader,
                    cycles: Iterable[AcquisitionCycle],
                    total_cycles: int | None = None) -> "PhotonStream":
        cyc, pix, t, raw = [], [], [], []
        any_raw = False
        for c in cycles:
            for r in c.records:
                cyc.append(c.cycle_index)
                pix.append(r.pixel)
                t.append(r.time_ps)
                raw.append(0 if r.raw_code is None else r.raw_code)
                any_raw = any_raw or r.raw_code is not None
        stream = cls(
            header=header,
            cycle_index=np.asarray(cyc, dtype=np.uint64),
            pixel=np.asarray(pix, dtype=np.uint16),
            time_ps=np.asarray(t, dtype=np.float64),
            raw_code=np.asarray(raw, dtype=np.uint32) if any_raw else None,
            total_cycles=total_cycles or 0,
        )
        stream.validate()
        return stream

    def as_cycles(self) -> Iterator[AcquisitionCycle]:
        """Yield the record-model view (times rounded to integer ps)."""
        if self.n_records == 0:
            return
        bounds = _run_bounds(self.cycle_index)
        times = np.rint(self.time_ps).astype(np.uint64)
        for lo, hi in bounds:
            recs = tuple(
                TimestampRecord(
                    int(self.pixel[k]), int(times[k]),
                    int(self.raw_code[k]) if self.raw_code is not None else None)
                for k in range(lo, hi))
            yield AcquisitionCycle(int(self.cycle_index[lo]), recs)

    # -- binary I/O --------------------------------------------------------

    def write(self, sink: BinaryIO | str) -> int:
        """Serialize to the binary container.  Returns bytes written."""
        if self.out_of_window is not None and self.out_of_window.any():
            raise StreamFormatError(
                "stream holds out-of-window records and cannot be serialized")
        if isinstance(sink, str):
            with open(sink, "wb") as fh:
                return self.write(fh)

        header = self.header
        # The in-memory count is authoritative; an inherited metadata entry
        # (e.g. on a slice of a stream read from disk) must not survive.
        if self.total_cycles and \
                header.metadata.get("total_cycles") != str(self.total_cycles):
            header = header.with_metadata(total_cycles=str(self.total_cycles))

        starts, stops = _run_edges(self.cycle_index)
        written = _write_header(sink, header, cycle_count=len(starts))
        if len(starts) == 0:
            return written

        has_raw = self.raw_code is not None
        dtype = _DT_RAW if has_raw else _DT_PLAIN
        isz = dtype.itemsize
        hsz = _CYCLE_HEADER.size
        times = np.rint(self.time_ps).astype(np.uint64)
        counts = stops - starts

        # Pack whole slabs of cycles into one buffer, scattering headers and
        # records into place column by column; a per-cycle pack loop costs
        # microseconds per cycle, which adds up to seconds on minute-scale
        # acquisitions.
        for r0, r1 in _slab_runs(starts, _IO_CHUNK):
            lo, hi = int(starts[r0]), int(stops[r1 - 1])
            n_rec = hi - lo
            n_run = r1 - r0
            body = np.empty(n_run * hsz + n_rec * isz, dtype=np.uint8)

            hdr = np.empty(n_run, dtype=_DT_CYCLE_HEADER)
            hdr["index"] = self.cycle_index[starts[r0:r1]]
            hdr["count"] = counts[r0:r1]
            hdr_pos = hsz * np.arange(n_run) + isz * (starts[r0:r1] - lo)
            _scatter_rows(body, hdr_pos, hdr.view(np.uint8).reshape(n_run, hsz))

            rec = np.empty(n_rec, dtype=dtype)
            rec["pixel"] = self.pixel[lo:hi]
            rec["time"] = times[lo:hi]
            rec["flags"] = _FLAG_RAW if has_raw else 0
            if has_raw:
                rec["raw"] = self.raw_code[lo:hi]
            run_local = np.repeat(np.arange(1, n_run + 1), counts[r0:r1])
            rec_pos = hsz * run_local + isz * np.arange(n_rec)
            _scatter_rows(body, rec_pos, rec.view(np.uint8).reshape(n_rec, isz))

            sink.write(body.data)
            written += body.size
        return written

    @classmethod
    def read(cls, source: BinaryIO | str) -> "PhotonStream":
        """Read a whole binary stream into columnar form.

        Unlike ``read_stream`` this loads the file in one piece; use the
        streaming reader when memory must stay bounded by one cycle.
        """
        if isinstance(source, str):
            with open(source, "rb") as fh:
                return cls.read(fh)
        buf = source.read()
        header, cycle_count, pos = _parse_header(buf)

        scan = _scan_cycles(buf, pos)
        if scan is None:
            return cls._read_slow(buf, pos, header, cycle_count)
        idx_arr, cnt_arr, pos_arr, flags = scan

        n_cycles = len(idx_arr)
        total_rec = int(cnt_arr.sum())
        pixel = np.empty(0, dtype=np.uint16)
        time_ps = np.empty(0, dtype=np.float64)
        raw_code = None
        if total_rec:
            dtype = _DT_RAW if flags & _FLAG_RAW else _DT_PLAIN
            isz = dtype.itemsize
            u8 = np.frombuffer(buf, dtype=np.uint8)
            rec_first = np.concatenate(([0], np.cumsum(cnt_arr)))
            pix_parts, t_parts, raw_parts = [], [], []
            for c0, c1 in _slab_runs(rec_first[:-1], _IO_CHUNK):
                cnts = cnt_arr[c0:c1]
                m = int(rec_first[c1] - rec_first[c0])
                local = np.arange(m) - np.repeat(rec_first[c0:c1] - rec_first[c0],
                                                 cnts)
                byte0 = np.repeat(pos_arr[c0:c1], cnts) + local * isz
                mat = np.empty((m, isz), dtype=np.uint8)
                for j in range(isz):
                    mat[:, j] = u8[byte0 + j]
                rec = mat.view(dtype).reshape(m)
                if not (rec["flags"] == flags).all():
                    # A cycle mixes raw and plain records, so the scan's
                    # stride assumption is wrong from that record on.  The
                    # per-cycle parser handles (or precisely rejects) it.
                    return cls._read_slow(buf, pos, header, cycle_count)
                pix_parts.append(rec["pixel"].copy())
                t_parts.append(rec["time"].astype(np.float64))
                if flags & _FLAG_RAW:
                    raw_parts.append(rec["raw"].copy())
            pixel = np.concatenate(pix_parts)
            time_ps = np.concatenate(t_parts)
            if raw_parts:
                raw_code = np.concatenate(raw_parts)

        cycle_rep = np.repeat(idx_arr, cnt_arr)
        _validate_columns(cycle_rep, pixel, time_ps, header.sensor)
        if cycle_count != STREAMING_CYCLE_COUNT and cycle_count != n_cycles:
            raise StreamFormatError(
                f"header promises {cycle_count} cycles, found {n_cycles}")
        last_index = int(idx_arr[-1]) if n_cycles else -1
        return cls(
            header=header,
            cycle_index=cycle_rep,
            pixel=pixel,
            time_ps=time_ps,
            raw_code=raw_code,
            total_cycles=_total_cycles(header, last_index),
        )

    @classmethod
    def _read_slow(cls, buf: bytes, pos: int, header: StreamHeader,
                   cycle_count: int) -> "PhotonStream":
        """Cycle-at-a-time parse for layouts the vectorized path declines."""
        sensor = header.sensor
        chunks_cyc, chunks_pix, chunks_t, chunks_raw = [], [], [], []
        n_cycles = 0
        prev_index = -1
        while pos < len(buf):
            if len(buf) - pos < _CYCLE_HEADER.size:
                raise StreamFormatError("unexpected end of stream",
                                        cycle_index=n_cycles, offset=pos)
            index, count = _CYCLE_HEADER.unpack_from(buf, pos)
            if index <= prev_index:
                raise StreamFormatError(
                    "cycle index not strictly increasing", cycle_index=index,
                    offset=pos)
            prev_index = index
            pos += _CYCLE_HEADER.size
            block, raw, pos = _parse_record_block(buf, pos, count, index)
            _validate_block(block, sensor, index)
            chunks_cyc.append(np.full(count, index, dtype=np.uint64))
            chunks_pix.append(block["pixel"].copy())
            chunks_t.append(block["time"].astype(np.float64))
            chunks_raw.append(raw)
            n_cycles += 1

        if cycle_count != STREAMING_CYCLE_COUNT and cycle_count != n_cycles:
            raise StreamFormatError(
                f"header promises {cycle_count} cycles, found {n_cycles}")

        raw_code = None
        if chunks_raw and all(r is not None for r in chunks_raw):
            raw_code = np.concatenate(chunks_raw) if chunks_raw else None
        elif any(r is not None for r in chunks_raw):
            # Mixed raw/non-raw cycles: keep codes where present, 0 elsewhere.
            raw_code = np.concatenate([
                r if r is not None else np.zeros(len(c), dtype=np.uint32)
                for r, c in zip(chunks_raw, chunks_cyc)])

        stream = cls(
            header=header,
            cycle_index=(np.concatenate(chunks_cyc) if chunks_cyc
                         else np.empty(0, dtype=np.uint64)),
            pixel=(np.concatenate(chunks_pix) if chunks_pix
                   else np.empty(0, dtype=np.uint16)),
            time_ps=(np.concatenate(chunks_t) if chunks_t
                     else np.empty(0, dtype=np.float64)),
            raw_code=raw_code,
            total_cycles=_total_cycles(header, prev_index),
        )
        return stream


# ---------------------------------------------------------------------------
# record-model I/O

def write_stream(header: StreamHeader, cycles: Sequence[AcquisitionCycle],
                 sink: BinaryIO, *, cycle_count: int | None = None) -> int:
    """Serialize record-model cycles.  Returns bytes written.

    ``cycle_count`` defaults to ``len(cycles)``; pass
    ``STREAMING_CYCLE_COUNT`` when the count is unknown up front.
    """
    if cycle_count is None:
        cycle_count = len(cycles) if hasattr(cycles, "__len__") else STREAMING_CYCLE_COUNT
    written = _write_header(sink, header, cycle_count=cycle_count)
    sensor = header.sensor
    prev_index = -1
    for cycle in cycles:
        if cycle.cycle_index <= prev_index:
            raise StreamFormatError("cycle index not strictly increasing",
                                    cycle_index=cycle.cycle_index)
        prev_index = cycle.cycle_index
        written += _write_cycle(sink, cycle, sensor)
    return written


def read_stream(source: BinaryIO) -> tuple[StreamHeader, Iterator[AcquisitionCycle]]:
    """Open a binary stream for incremental reading.

    Returns the parsed header and a generator of cycles; memory use is
    bounded by the largest single cycle.  All structural violations raise
    ``StreamFormatError`` -- arbitrary bytes never crash the parser.
    """
    head = _read_exact(source, _HEADER.size, "header")
    magic, version, num_pixels, cycle_period, tdc_bins, clock = \
        _HEADER.unpack(head)
    if magic != MAGIC:
        raise StreamFormatError("not a SPK1 stream (bad magic)")
    if version != FORMAT_VERSION:
        raise StreamFormatError(f"unsupported format version {version}")
    try:
        sensor = SensorConfig(num_pixels=num_pixels,
                              cycle_period_ps=cycle_period,
                              tdc_bins_per_clock=tdc_bins,
                              clock_period_ps=clock)
    except ValueError as exc:
        raise StreamFormatError(f"invalid sensor header: {exc}") from None

    (meta_count,) = _U16.unpack(_read_exact(source, 2, "metadata count"))
    metadata = {}
    for _ in range(meta_count):
        key = _read_length_prefixed(source, "metadata key")
        val = _read_length_prefixed(source, "metadata value")
        metadata[key] = val
    (cycle_count,) = _U64.unpack(_read_exact(source, 8, "cycle count"))

    header = StreamHeader(sensor=sensor, version=version, metadata=metadata)
    return header, _iter_cycles(source, sensor, cycle_count)


def _iter_cycles(source: BinaryIO, sensor: SensorConfig,
                 cycle_count: int) -> Iterator[AcquisitionCycle]:
    prev_index = -1
    seen = 0
    while True:
        head = source.read(_CYCLE_HEADER.size)
        if not head:
            break
        if len(head) < _CYCLE_HEADER.size:
            raise StreamFormatError("unexpected end of stream",
                                    cycle_index=seen)
        index, count = _CYCLE_HEADER.unpack(head)
        if index <= prev_index:
            raise StreamFormatError("cycle index not strictly increasing",
                                    cycle_index=index)
        prev_index = index

        records = []
        prev_key = (-1, -1)
        for _ in range(count):
            fixed = _read_exact(source, _REC_PLAIN.size,
                                f"record in cycle {index}")
            pixel, time_ps, flags = _REC_PLAIN.unpack(fixed)
            raw = None
            if flags & _FLAG_RAW:
                (raw,) = struct.unpack("<I", _read_exact(
                    source, 4, f"raw code in cycle {index}"))
            if flags & ~_FLAG_RAW:
                raise StreamFormatError(
                    f"corrupt record (reserved flag bits 0x{flags:02x})",
                    cycle_index=index)
            if pixel >= sensor.num_pixels:
                raise StreamFormatError(
                    f"corrupt record (pixel {pixel} out of range)",
                    cycle_index=index)
            if time_ps >= sensor.cycle_period_ps:
                raise StreamFormatError(
                    f"corrupt record (time {time_ps} outside cycle)",
                    cycle_index=index)
            key = (time_ps, pixel)
            if key < prev_key:
                raise StreamFormatError(
                    "records not sorted by (time, pixel)", cycle_index=index)
            prev_key = key
            records.append(TimestampRecord(pixel, time_ps, raw))
        seen += 1
        yield AcquisitionCycle(index, tuple(records))

    if cycle_count != STREAMING_CYCLE_COUNT and seen != cycle_count:
        raise StreamFormatError(
            f"header promises {cycle_count} cycles, found {seen}")


# ---------------------------------------------------------------------------
# CSV interchange

def write_csv(stream: PhotonStream | Iterable[AcquisitionCycle],
              sink, *, header_row: bool = True) -> int:
    """Write ``cycle_index,pixel,time_ps`` rows.

    Raw codes and empty cycles have no row representation and do not
    survive the trip.  Returns the number of data rows written.
    """
    if isinstance(sink, str):
        with open(sink, "w", newline="") as fh:
            return write_csv(stream, fh, header_row=header_row)
    writer = csv.writer(sink)
    if header_row:
        writer.writerow(["cycle_index", "pixel", "time_ps"])
    rows = 0
    cycles = stream.as_cycles() if isinstance(stream, PhotonStream) else stream
    for cycle in cycles:
        for rec in cycle.records:
            writer.writerow([cycle.cycle_index, rec.pixel, rec.time_ps])
            rows += 1
    return rows


def read_csv(source, sensor: SensorConfig) -> list[AcquisitionCycle]:
    """Parse CSV rows into cycles under the same invariants as the binary reader."""
    if isinstance(source, str):
        with open(source, "r", newline="") as fh:
            return read_csv(fh, sensor)
    if isinstance(source, bytes):
        source = io.StringIO(source.decode("utf-8", errors="replace"))

    cycles: list[AcquisitionCycle] = []
    current: list[TimestampRecord] = []
    current_index = -1
    prev_key = (-1, -1)

    def flush():
        if current_index >= 0:
            cycles.append(AcquisitionCycle(current_index, tuple(current)))

    reader = csv.reader(source)
    while True:
        try:
            row = next(reader)
        except StopIteration:
            break
        except csv.Error as exc:
            raise StreamFormatError(f"CSV parse error: {exc}",
                                    line=reader.line_num) from None
        lineno = reader.line_num
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if lineno == 1 and not row[0].strip().lstrip("-").isdigit():
            continue  # optional header row
        if len(row) != 3:
            raise StreamFormatError(
                f"expected 3 columns, got {len(row)}", line=lineno)
        try:
            cyc, pixel, time_ps = (int(x) for x in row)
        except ValueError:
            raise StreamFormatError("non-integer field", line=lineno) from None
        if cyc < 0 or pixel < 0 or time_ps < 0:
            raise StreamFormatError("negative field", line=lineno)
        if pixel >= sensor.num_pixels:
            raise StreamFormatError(f"pixel {pixel} out of range", line=lineno)
        if time_ps >= sensor.cycle_period_ps:
            raise StreamFormatError(f"time {time_ps} outside cycle", line=lineno)
        if cyc != current_index:
            if cyc < current_index:
                raise StreamFormatError("cycle index decreases", line=lineno)
            flush()
            current = []
            current_index = cyc
            prev_key = (-1, -1)
        key = (time_ps, pixel)
        if key < prev_key:
            raise StreamFormatError("records not sorted by (time, pixel)",
                                    line=lineno)
        prev_key = key
        current.append(TimestampRecord(pixel, time_ps))
    flush()
    return cycles


# ---------------------------------------------------------------------------
# shared helpers

def _write_header(sink: BinaryIO, header: StreamHeader, *, cycle_count: int) -> int:
    sensor = header.sensor
    out = [_HEADER.pack(MAGIC, header.version, sensor.num_pixels,
                        sensor.cycle_period_ps, sensor.tdc_bins_per_clock,
                        sensor.clock_period_ps)]
    out.append(_U16.pack(len(header.metadata)))
    for key, val in header.metadata.items():
        kb, vb = key.encode(), str(val).encode()
        if len(kb) > 0xFFFF or len(vb) > 0xFFFF:
            raise ValueError("metadata entry longer than 65535 bytes")
        out.append(_U16.pack(len(kb)) + kb + _U16.pack(len(vb)) + vb)
    out.append(_U64.pack(cycle_count))
    blob = b"".join(out)
    sink.write(blob)
    return len(blob)


def _write_cycle(sink: BinaryIO, cycle: AcquisitionCycle,
                 sensor: SensorConfig) -> int:
    prev_key = (-1, -1)
    body = []
    for rec in cycle.records:
        if not 0 <= rec.pixel < sensor.num_pixels:
            raise StreamFormatError(f"pixel {rec.pixel} out of range",
                                    cycle_index=cycle.cycle_index)
        if not 0 <= rec.time_ps < sensor.cycle_period_ps:
            raise StreamFormatError(f"time {rec.time_ps} outside cycle",
                                    cycle_index=cycle.cycle_index)
        key = (rec.time_ps, rec.pixel)
        if key < prev_key:
            raise StreamFormatError("records not sorted by (time, pixel)",
                                    cycle_index=cycle.cycle_index)
        prev_key = key
        if rec.raw_code is None:
            body.append(_REC_PLAIN.pack(rec.pixel, rec.time_ps, 0))
        else:
            body.append(_REC_RAW.pack(rec.pixel, rec.time_ps, _FLAG_RAW,
                                      rec.raw_code))
    blob = _CYCLE_HEADER.pack(cycle.cycle_index, len(cycle.records)) + b"".join(body)
    sink.write(blob)
    return len(blob)


def _read_exact(source: BinaryIO, n: int, what: str) -> bytes:
    data = source.read(n)
    if len(data) != n:
        raise StreamFormatError(f"unexpected end of stream while reading {what}")
    return data


def _read_length_prefixed(source: BinaryIO, what: str) -> str:
    (n,) = _U16.unpack(_read_exact(source, 2, what + " length"))
    return _read_exact(source, n, what).decode("utf-8", errors="replace")


def _parse_header(buf: bytes) -> tuple[StreamHeader, int, int]:
    """Parse the container header from a byte buffer.

    Returns (header, cycle_count, offset of first cycle).
    """
    fh = io.BytesIO(buf)
    header, _ = read_stream(fh)  # reuse validation; generator unused
    (cycle_count,) = _U64.unpack_from(buf, fh.tell() - 8)
    return header, cycle_count, fh.tell()


def _parse_record_block(buf: bytes, pos: int, count: int,
                        cycle_index: int) -> tuple[np.ndarray, np.ndarray | None, int]:
    """Parse ``count`` records starting at ``pos``.

    Fast path assumes every record shares the first record's flags byte,
    which holds for any stream this package writes; alignment is verified
    against the parsed flags column before the result is trusted, so mixed
    streams fall back to the per-record path.
    """
    if count == 0:
        return np.empty(0, dtype=_DT_PLAIN), None, pos
    if len(buf) - pos < _REC_PLAIN.size:
        raise StreamFormatError("unexpected end of stream",
                                cycle_index=cycle_index, offset=pos)
    first_flags = buf[pos + 10]
    dtype = _DT_RAW if first_flags & _FLAG_RAW else _DT_PLAIN
    end = pos + count * dtype.itemsize
    if first_flags in (0, _FLAG_RAW) and end <= len(buf):
        block = np.frombuffer(buf, dtype=dtype, count=count, offset=pos)
        if (block["flags"] == first_flags).all():
            raw = block["raw"].copy() if first_flags & _FLAG_RAW else None
            return block, raw, end

    # Slow path: records with heterogeneous flags (or corruption; the
    # per-record parser produces the precise error).
    if count > (len(buf) - pos) // _REC_PLAIN.size:
        # The buffer cannot possibly hold this many records; refuse before
        # allocating anything proportional to the claimed count.
        raise StreamFormatError(
            f"record count {count} exceeds remaining data",
            cycle_index=cycle_index, offset=pos)
    pixels = np.empty(count, dtype=np.uint16)
    times = np.empty(count, dtype=np.uint64)
    flags_arr = np.empty(count, dtype=np.uint8)
    raws = np.zeros(count, dtype=np.uint32)
    any_raw = False
    for k in range(count):
        if len(buf) - pos < _REC_PLAIN.size:
            raise StreamFormatError("unexpected end of stream",
                                    cycle_index=cycle_index, offset=pos)
        pixel, time_ps, flags = _REC_PLAIN.unpack_from(buf, pos)
        pos += _REC_PLAIN.size
        if flags & _FLAG_RAW:
            if len(buf) - pos < 4:
                raise StreamFormatError("unexpected end of stream",
                                        cycle_index=cycle_index, offset=pos)
            (raws[k],) = struct.unpack_from("<I", buf, pos)
            pos += 4
            any_raw = True
        pixels[k], times[k], flags_arr[k] = pixel, time_ps, flags
    block = np.empty(count, dtype=_DT_PLAIN)
    block["pixel"], block["time"], block["flags"] = pixels, times, flags_arr
    return block, (raws if any_raw else None), pos


def _validate_block(block: np.ndarray, sensor: SensorConfig,
                    cycle_index: int) -> None:
    if len(block) == 0:
        return
    flags = block["flags"]
    if (flags & np.uint8(0xFF ^ _FLAG_RAW)).any():
        raise StreamFormatError("corrupt record (reserved flag bits)",
                                cycle_index=cycle_index)
    if int(block["pixel"].max()) >= sensor.num_pixels:
        raise StreamFormatError("corrupt record (pixel out of range)",
                                cycle_index=cycle_index)
    if int(block["time"].max()) >= sensor.cycle_period_ps:
        raise StreamFormatError("corrupt record (time outside cycle)",
                                cycle_index=cycle_index)
    t = block["time"].astype(np.int64)
    p = block["pixel"].astype(np.int64)
    if not _lex_nondecreasing(np.zeros_like(t), t, p):
        raise StreamFormatError("records not sorted by (time, pixel)",
                                cycle_index=cycle_index)


def _lex_nondecreasing(major: np.ndarray, mid: np.ndarray,
                       minor: np.ndarray) -> bool:
    if len(major) < 2:
        return True
    dmaj = np.diff(major)
    dmid = np.diff(mid)
    dmin = np.diff(minor)
    ok = (dmaj > 0) | ((dmaj == 0) & ((dmid > 0) | ((dmid == 0) & (dmin >= 0))))
    return bool(ok.all())


def _run_bounds(values: np.ndarray) -> list[tuple[int, int]]:
    """[(start, stop)] of equal-value runs in a sorted array."""
    starts, stops = _run_edges(values)
    return list(zip(starts.tolist(), stops.tolist()))


def _run_edges(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(starts, stops) arrays of equal-value runs in a sorted array."""
    if len(values) == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty
    edges = np.flatnonzero(np.diff(values)) + 1
    starts = np.concatenate(([0], edges))
    stops = np.concatenate((edges, [len(values)]))
    return starts, stops


def _slab_runs(starts: np.ndarray, chunk: int) -> Iterator[tuple[int, int]]:
    """Yield [r0, r1) groups of whole runs covering about ``chunk`` items.

    ``starts`` holds each run's first item ordinal; a single run larger than
    ``chunk`` gets a slab of its own.
    """
    n_runs = len(starts)
    r0 = 0
    while r0 < n_runs:
        r1 = int(np.searchsorted(starts, int(starts[r0]) + chunk, side="left"))
        r1 = min(max(r1, r0 + 1), n_runs)
        yield r0, r1
        r0 = r1


def _scatter_rows(out: np.ndarray, pos: np.ndarray, rows: np.ndarray) -> None:
    """out[pos[i] + j] = rows[i, j], vectorized one byte column at a time."""
    for j in range(rows.shape[1]):
        out[pos + j] = rows[:, j]


def _scan_cycles(buf: bytes, pos: int) -> tuple[
        np.ndarray, np.ndarray, np.ndarray, int] | None:
    """Index the cycle headers of ``buf`` without parsing record payloads.

    Returns (cycle indices, record counts, record block offsets, shared flags
    byte) when every cycle is well formed and each cycle's first record
    carries the same flags byte; any anomaly returns None and the caller
    falls back to the per-cycle parser, which either accepts the unusual but
    legal layout or raises the precise structural error.  The shared flags
    byte fixes the record stride, so a record that deviates mid-cycle would
    desynchronize this scan; the caller cross-checks the parsed flags column
    before trusting the result.
    """
    n_buf = len(buf)
    hsz = _CYCLE_HEADER.size
    unpack = _CYCLE_HEADER.unpack_from
    sizes = {0: _REC_PLAIN.size, _FLAG_RAW: _REC_RAW.size}
    indices: list[int] = []
    counts: list[int] = []
    offsets: list[int] = []
    prev = -1
    flags = -1
    rsz = 0
    while pos < n_buf:
        if n_buf - pos < hsz:
            return None
        index, count = unpack(buf, pos)
        if index <= prev:
            return None
        prev = index
        pos += hsz
        indices.append(index)
        counts.append(count)
        offsets.append(pos)
        if count:
            if n_buf - pos < _REC_PLAIN.size:
                return None
            f = buf[pos + 10]
            if f != flags:
                if flags != -1 or f not in sizes:
                    return None
                flags = f
                rsz = sizes[f]
            pos += count * rsz
            if pos > n_buf:
                return None
    return (np.array(indices, dtype=np.uint64),
            np.array(counts, dtype=np.int64),
            np.array(offsets, dtype=np.int64),
            flags)


def _validate_columns(cycles: np.ndarray, pixels: np.ndarray,
                      times: np.ndarray, sensor: SensorConfig) -> None:
    """Whole-stream version of `_validate_block` (minus the flags check).

    Reports the earliest offending cycle, and within a cycle prefers the
    pixel-range error over time-range over ordering, exactly as the
    per-cycle validation would.
    """
    if len(pixels) == 0:
        return
    none = np.iinfo(np.int64).max
    bad_pix = pixels >= sensor.num_pixels
    bad_time = times >= sensor.cycle_period_ps
    cyc_pix = int(cycles[np.argmax(bad_pix)]) if bad_pix.any() else none
    cyc_time = int(cycles[np.argmax(bad_time)]) if bad_time.any() else none

    cyc_sort = none
    if len(pixels) > 1:
        # Only within-cycle pairs matter; the scan already guarantees the
        # cycle indices themselves increase.
        same = cycles[1:] == cycles[:-1]
        dt = np.diff(times)
        dpix = np.diff(pixels.astype(np.int64))
        ok = ~same | (dt > 0) | ((dt == 0) & (dpix >= 0))
        if not ok.all():
            cyc_sort = int(cycles[int(np.argmax(~ok)) + 1])

    first = min(cyc_pix, cyc_time, cyc_sort)
    if first == none:
        return
    if first == cyc_pix:
        raise StreamFormatError("corrupt record (pixel out of range)",
                                cycle_index=first)
    if first == cyc_time:
        raise StreamFormatError("corrupt record (time outside cycle)",
                                cycle_index=first)
    raise StreamFormatError("records not sorted by (time, pixel)",
                            cycle_index=first)


def _total_cycles(header: StreamHeader, last_index: int) -> int:
    try:
        total = int(header.metadata.get("total_cycles", 0) or 0)
    except ValueError:
        total = 0  # foreign metadata; fall back to the cycle span
    return max(total, last_index + 1, 0)
