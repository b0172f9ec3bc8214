"""Two-profile address-event transport.

RAW profile, for clean in-order local links only: each spike is one
little-endian u32 word, address in bits [23:0], signed 8-bit value in
bits [31:24].  Exactly 4 bytes per event, no framing, no timestamps,
and no way to detect loss or corruption.

SAFE profile, for links that drop, corrupt, delay, or reorder:

    magic      u16   0xAE52
    version    u8    1
    flags      u8    bit0 = payload present, all other bits zero
    seq        u32   wrapping frame counter, starts at 0
    timestamp  u64   frame reference time, microseconds
    count      u16   number of records
    records    count * (address u32, value i16, dt_offset u16)
    crc        u32   CRC-32 over everything above

All fields little-endian.  dt_offset values are microseconds relative
to the frame timestamp and must be non-decreasing.  The CRC is the
reflected 0x04C11DB7 polynomial with init and final xor 0xFFFFFFFF
(check value: crc(b"123456789") = 0xCBF43926).  Fixed overhead is
18 header + 4 crc bytes, so bytes per event = 22/count + 8.

A seeded channel simulator (loss, byte bit-flips, delay, bounded
reordering) and a receiver with sequence accounting close the loop.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .sigma_delta import GradedSpike

SAFE_MAGIC = 0xAE52
SAFE_VERSION = 1
RAW_WORD_BYTES = 4
ADDRESS_BITS = 24
_HEADER = struct.Struct("<HBBIQH")
_RECORD = struct.Struct("<IhH")
_CRC = struct.Struct("<I")
assert _HEADER.size == 18 and _RECORD.size == 8

SAFE_FIXED_OVERHEAD = _HEADER.size + _CRC.size  # 22


def crc32(data: bytes) -> int:
    return zlib.crc32(data) & 0xFFFFFFFF


assert crc32(b"123456789") == 0xCBF43926


class TransportError(ValueError):
    """Anything wrong on the encode side."""


class DecodeError(TransportError):
    """Wire bytes rejected; .kind names the diagnosis."""

    kind = "decode"


class BadMagicError(DecodeError):
    kind = "bad_magic"


class BadVersionError(DecodeError):
    kind = "bad_version"


class BadCrcError(DecodeError):
    kind = "bad_crc"


class TruncatedError(DecodeError):
    kind = "truncated"


class TrailingDataError(DecodeError):
    """Bytes after a CRC-valid frame; not one of the four corruption
    diagnoses, only reachable with malformed framing."""

    kind = "trailing_data"


def event_to_spike(x: int, y: int, polarity: int, width: int) -> GradedSpike:
    """Flatten an event to AER form: address = y * width + x, value = polarity."""
    return GradedSpike(y * width + x, polarity)


def raw_encode(spikes) -> bytes:
    """Pack spikes as RAW words.  Values must be nonzero integers in [-128, 127]."""
    spikes = list(spikes)
    words = np.empty(len(spikes), dtype=np.uint32)
    for i, s in enumerate(spikes):
        if not (0 <= s.address < (1 << ADDRESS_BITS)):
            raise TransportError(f"address {s.address} does not fit {ADDRESS_BITS} bits")
        v = s.value
        if v != int(v) or not (-128 <= int(v) <= 127):
            raise TransportError(f"value {v!r} is not an i8 quantized value")
        if int(v) == 0:
            raise TransportError("zero-valued spikes are not transmitted")
        words[i] = (int(v) & 0xFF) << ADDRESS_BITS | s.address
    return words.astype("<u4").tobytes()


def raw_decode(data: bytes) -> list[GradedSpike]:
    if len(data) % RAW_WORD_BYTES != 0:
        raise TruncatedError(f"{len(data)} bytes is not a whole number of words")
    words = np.frombuffer(data, dtype="<u4")
    addresses = words & ((1 << ADDRESS_BITS) - 1)
    values = (words >> ADDRESS_BITS).astype(np.uint8).astype(np.int8)
    if np.any(values == 0):
        i = int(np.nonzero(values == 0)[0][0])
        raise DecodeError(f"word {i} carries a zero value")
    return [GradedSpike(int(a), int(v)) for a, v in zip(addresses, values)]


def quantize_values(spikes, scale: float) -> list[GradedSpike]:
    """Scale real spike values to i8 for the RAW profile; zeros are dropped.

    The scale itself is link metadata and never goes on the wire.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    out = []
    for s in spikes:
        q = int(np.clip(round(s.value / scale), -128, 127))
        if q != 0:
            out.append(GradedSpike(s.address, q))
    return out


@dataclass(frozen=True)
class FrameRecord:
    address: int
    value: int
    dt_offset_us: int

    def __post_init__(self):
        if not (0 <= self.address <= 0xFFFFFFFF):
            raise TransportError(f"address {self.address} does not fit u32")
        if not (-32768 <= self.value <= 32767):
            raise TransportError(f"value {self.value} does not fit i16")
        if self.value == 0:
            raise TransportError("zero-valued records are not transmitted")
        if not (0 <= self.dt_offset_us <= 0xFFFF):
            raise TransportError(f"dt_offset {self.dt_offset_us} does not fit u16")


@dataclass
class SafeFrame:
    seq: int
    timestamp_us: int
    records: list[FrameRecord] = field(default_factory=list)

    def __post_init__(self):
        if not (0 <= self.seq <= 0xFFFFFFFF):
            raise TransportError(f"seq {self.seq} does not fit u32")
        if not (0 <= self.timestamp_us <= 0xFFFFFFFFFFFFFFFF):
            raise TransportError(f"timestamp {self.timestamp_us} does not fit u64")
        if len(self.records) > 0xFFFF:
            raise TransportError(f"{len(self.records)} records do not fit u16 count")
        last = 0
        for r in self.records:
            if r.dt_offset_us < last:
                raise TransportError("dt_offsets must be non-decreasing")
            last = r.dt_offset_us

    @property
    def flags(self) -> int:
        return 1 if self.records else 0


def build_frame(spikes, offsets_us, seq: int, timestamp_us: int) -> SafeFrame:
    """Assemble a frame from graded spikes plus per-spike time offsets."""
    spikes = list(spikes)
    if offsets_us is None:
        offsets_us = [0] * len(spikes)
    if len(offsets_us) != len(spikes):
        raise TransportError("one offset per spike required")
    records = [
        FrameRecord(s.address, int(s.value), int(dt)) for s, dt in zip(spikes, offsets_us)
    ]
    return SafeFrame(seq, timestamp_us, records)


def safe_encode(spikes, seq: int, timestamp_us: int, offsets_us=None) -> bytes:
    """Encode one SAFE frame; see module docstring for the layout."""
    frame = (
        spikes
        if isinstance(spikes, SafeFrame)
        else build_frame(spikes, offsets_us, seq, timestamp_us)
    )
    parts = [
        _HEADER.pack(
            SAFE_MAGIC,
            SAFE_VERSION,
            frame.flags,
            frame.seq,
            frame.timestamp_us,
            len(frame.records),
        )
    ]
    for r in frame.records:
        parts.append(_RECORD.pack(r.address, r.value, r.dt_offset_us))
    body = b"".join(parts)
    return body + _CRC.pack(crc32(body))


def safe_decode(data: bytes) -> SafeFrame:
    """Decode one SAFE frame or raise a DecodeError diagnosing why not."""
    if len(data) < _HEADER.size + _CRC.size:
        raise TruncatedError(f"{len(data)} bytes, need at least {_HEADER.size + _CRC.size}")
    magic, version, flags, seq, timestamp, count = _HEADER.unpack_from(data)
    if magic != SAFE_MAGIC:
        raise BadMagicError(f"magic 0x{magic:04X}, want 0x{SAFE_MAGIC:04X}")
    if version != SAFE_VERSION:
        raise BadVersionError(f"version {version}, want {SAFE_VERSION}")
    body_len = _HEADER.size + count * _RECORD.size
    if len(data) < body_len + _CRC.size:
        raise TruncatedError(f"{len(data)} bytes, frame claims {body_len + _CRC.size}")
    (stored,) = _CRC.unpack_from(data, body_len)
    computed = crc32(data[:body_len])
    if stored != computed:
        raise BadCrcError(f"crc 0x{stored:08X}, computed 0x{computed:08X}")
    if len(data) > body_len + _CRC.size:
        raise TrailingDataError(f"{len(data) - body_len - _CRC.size} bytes after frame")
    if flags != (1 if count else 0):
        raise DecodeError(f"flags 0x{flags:02X} inconsistent with count {count}")
    records = []
    last = 0
    for i in range(count):
        address, value, dt = _RECORD.unpack_from(data, _HEADER.size + i * _RECORD.size)
        if value == 0:
            raise DecodeError(f"record {i} carries a zero value")
        if dt < last:
            raise DecodeError(f"record {i} dt_offset decreases")
        last = dt
        records.append(FrameRecord(address, value, dt))
    return SafeFrame(seq, timestamp, records)


def raw_overhead_bytes_per_event() -> float:
    return float(RAW_WORD_BYTES)


def safe_overhead_bytes_per_event(count: int) -> float:
    if count < 1:
        raise ValueError("need at least one record")
    return SAFE_FIXED_OVERHEAD / count + _RECORD.size


@dataclass
class ChannelConfig:
    """Impairment model for the link simulator.

    Draw order per unit, from one seeded generator, is part of the
    contract so tests can replay it: one uniform for loss; if the unit
    survives and bitflip_p > 0, one uniform per byte, then one integer
    in [0, 8) per flipped byte; if delay_jitter_us > 0, one uniform for
    the jitter.  Lost units consume only the loss draw.
    """

    loss_p: float = 0.0
    bitflip_p: float = 0.0
    delay_base_us: float = 0.0
    delay_jitter_us: float = 0.0
    reorder_window: int = 0
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.loss_p <= 1) or not (0 <= self.bitflip_p <= 1):
            raise ValueError("probabilities must be in [0, 1]")
        if self.delay_base_us < 0 or self.delay_jitter_us < 0:
            raise ValueError("delays must be >= 0")
        if self.reorder_window < 0:
            raise ValueError("reorder_window must be >= 0")


@dataclass(frozen=True)
class Delivery:
    time_us: float
    payload: bytes
    sent_index: int


def channel_transmit(
    payloads, cfg: ChannelConfig, t_send=None, raw: bool = False
) -> list[Delivery]:
    """Push byte units through the impairment model; returns deliveries in
    arrival order with non-decreasing arrival times.

    Loss is applied before corruption.  With reorder_window = 0 the link
    is FIFO; otherwise units are merged by delay so that none is
    displaced more than reorder_window positions.  The RAW profile is
    declared in-order only, so raw traffic refuses a reordering link.
    """
    payloads = list(payloads)
    if raw and cfg.reorder_window > 0:
        raise TransportError("RAW profile requires an in-order link; reorder_window must be 0")
    if t_send is None:
        t_send = [0.0] * len(payloads)
    if len(t_send) != len(payloads):
        raise ValueError("one send time per payload required")
    rng = np.random.default_rng(cfg.seed)
    pending: list[tuple[float, int, bytes]] = []
    for i, payload in enumerate(payloads):
        if rng.random() < cfg.loss_p:
            continue
        data = payload
        if cfg.bitflip_p > 0:
            flips = rng.random(len(payload)) < cfg.bitflip_p
            if flips.any():
                buf = bytearray(data)
                for j in np.nonzero(flips)[0]:
                    buf[j] ^= 1 << int(rng.integers(0, 8))
                data = bytes(buf)
        jitter = rng.random() if cfg.delay_jitter_us > 0 else 0.0
        arrival = float(t_send[i]) + cfg.delay_base_us + jitter * cfg.delay_jitter_us
        pending.append((arrival, i, data))
    ordered = _bounded_reorder(pending, cfg.reorder_window)
    deliveries = []
    clock = float("-inf")
    for arrival, i, data in ordered:
        clock = max(clock, arrival)
        deliveries.append(Delivery(clock, data, i))
    return deliveries


def _bounded_reorder(pending, window: int):
    """Emit by arrival time but never displace a unit more than `window`
    positions from its send order (k-bounded merge)."""
    if window == 0:
        return pending
    out = []
    buf: list[tuple[float, int, bytes]] = []
    for item in pending:
        buf.append(item)
        if len(buf) > window:
            k = min(range(len(buf)), key=lambda idx: (buf[idx][0], buf[idx][1]))
            out.append(buf.pop(k))
    while buf:
        k = min(range(len(buf)), key=lambda idx: (buf[idx][0], buf[idx][1]))
        out.append(buf.pop(k))
    return out


@dataclass
class LinkStats:
    sent: int = 0
    delivered: int = 0
    lost: int = 0
    corrupted_dropped: int = 0
    duplicate_dropped: int = 0
    reordered: int = 0
    bytes_sent: int = 0
    events_sent: int = 0

    def overhead_bytes_per_event(self) -> float:
        if self.events_sent == 0:
            raise ValueError("no events sent")
        return self.bytes_sent / self.events_sent

    def as_dict(self) -> dict:
        return {
            "sent": self.sent,
            "delivered": self.delivered,
            "lost": self.lost,
            "corrupted_dropped": self.corrupted_dropped,
            "duplicate_dropped": self.duplicate_dropped,
            "reordered": self.reordered,
            "bytes_sent": self.bytes_sent,
            "events_sent": self.events_sent,
        }


def _seq_delta(a: int, b: int) -> int:
    """Wrapping distance a - b as a signed 32-bit quantity."""
    return ((a - b + 0x80000000) & 0xFFFFFFFF) - 0x80000000


class SafeReceiver:
    """Re-sequencing receiver for SAFE frames.

    Out-of-order frames within `reorder_window` are buffered and
    released in order; gaps that cannot close are charged as lost.
    Because a corrupted frame also leaves a sequence gap, gap frames are
    attributed to corruption first so every sent frame is counted
    exactly once across delivered / lost / corrupted / duplicate.
    """

    def __init__(self, reorder_window: int = 8, stats: LinkStats | None = None):
        if reorder_window < 0:
            raise ValueError("reorder_window must be >= 0")
        self.reorder_window = reorder_window
        self.stats = stats if stats is not None else LinkStats()
        self.next_seq = 0
        self._pending: dict[int, SafeFrame] = {}
        self._gap_frames = 0

    def receive_payload(self, payload: bytes) -> list[tuple[int, int, int]]:
        """Decode and ingest one unit; corrupted units count and emit nothing."""
        try:
            frame = safe_decode(payload)
        except DecodeError:
            self.stats.corrupted_dropped += 1
            self._refresh_lost()
            return []
        return self.ingest(frame)

    def ingest(self, frame: SafeFrame) -> list[tuple[int, int, int]]:
        """Returns (absolute_time_us, address, value) tuples released in order."""
        out: list[tuple[int, int, int]] = []
        delta = _seq_delta(frame.seq, self.next_seq)
        if delta < 0 or frame.seq in self._pending:
            self.stats.duplicate_dropped += 1
            return out
        if delta == 0:
            out.extend(self._emit(frame))
            self.next_seq = (self.next_seq + 1) & 0xFFFFFFFF
            out.extend(self._drain(reordered=True))
        else:
            self._pending[frame.seq] = frame
            while len(self._pending) > self.reorder_window:
                out.extend(self._force_advance())
        return out

    def finalize(self) -> list[tuple[int, int, int]]:
        """Flush buffered frames, charging any remaining gaps as lost."""
        out = []
        while self._pending:
            out.extend(self._force_advance())
        return out

    def close(self, total_frames_sent: int) -> list[tuple[int, int, int]]:
        """Finalize and charge tail losses given the sender's frame count.

        The receiver cannot see frames lost after the last arrival; the
        sender-side count closes the books so that delivered + lost +
        corrupted_dropped + duplicate_dropped == sent.
        """
        out = self.finalize()
        tail = _seq_delta(total_frames_sent & 0xFFFFFFFF, self.next_seq)
        if tail > 0:
            self._gap_frames += tail
            self.next_seq = total_frames_sent & 0xFFFFFFFF
            self._refresh_lost()
        return out

    def _force_advance(self) -> list[tuple[int, int, int]]:
        oldest = min(self._pending, key=lambda s: _seq_delta(s, self.next_seq))
        gap = _seq_delta(oldest, self.next_seq)
        self._gap_frames += gap
        self._refresh_lost()
        self.next_seq = oldest
        frame = self._pending.pop(oldest)
        # The frame we advance to was only waiting on a gap, it did not
        # overtake anything that later arrived; only drained ones did.
        out = self._emit(frame)
        self.next_seq = (self.next_seq + 1) & 0xFFFFFFFF
        out.extend(self._drain(reordered=True))
        return out

    def _drain(self, reordered: bool) -> list[tuple[int, int, int]]:
        out = []
        while self.next_seq in self._pending:
            frame = self._pending.pop(self.next_seq)
            out.extend(self._emit(frame))
            if reordered:
                self.stats.reordered += 1
            self.next_seq = (self.next_seq + 1) & 0xFFFFFFFF
        return out

    def _emit(self, frame: SafeFrame) -> list[tuple[int, int, int]]:
        self.stats.delivered += 1
        return [
            (frame.timestamp_us + r.dt_offset_us, r.address, r.value)
            for r in frame.records
        ]

    def _refresh_lost(self) -> None:
        self.stats.lost = max(0, self._gap_frames - self.stats.corrupted_dropped)


def receiver_ingest(frames, reorder_window: int = 8):
    """Run decoded frames through a SafeReceiver; returns (events, stats)."""
    rx = SafeReceiver(reorder_window)
    events = []
    for frame in frames:
        events.extend(rx.ingest(frame))
    events.extend(rx.finalize())
    return events, rx.stats


def dump_frame(data: bytes) -> str:
    """Annotated hex view of one SAFE frame for the CLI."""
    lines = []

    def row(offset, nbytes, label):
        chunk = data[offset : offset + nbytes]
        lines.append(f"{offset:6d}  {chunk.hex(' '):<24}  {label}")

    if len(data) < _HEADER.size:
        return f"short buffer ({len(data)} bytes)"
    magic, version, flags, seq, timestamp, count = _HEADER.unpack_from(data)
    row(0, 2, f"magic      0x{magic:04X}")
    row(2, 1, f"version    {version}")
    row(3, 1, f"flags      0x{flags:02X}")
    row(4, 4, f"seq        {seq}")
    row(8, 8, f"timestamp  {timestamp} us")
    row(16, 2, f"count      {count}")
    for i in range(count):
        off = _HEADER.size + i * _RECORD.size
        if off + _RECORD.size > len(data):
            lines.append(f"{off:6d}  (record {i} truncated)")
            return "\n".join(lines)
        address, value, dt = _RECORD.unpack_from(data, off)
        row(off, 8, f"record {i:<4d} addr={address} value={value} dt=+{dt} us")
    off = _HEADER.size + count * _RECORD.size
    if off + _CRC.size <= len(data):
        (stored,) = _CRC.unpack_from(data, off)
        computed = crc32(data[:off])
        status = "ok" if stored == computed else f"MISMATCH (computed 0x{computed:08X})"
        row(off, 4, f"crc        0x{stored:08X} {status}")
    else:
        lines.append(f"{off:6d}  (crc truncated)")
    return "\n".join(lines)
