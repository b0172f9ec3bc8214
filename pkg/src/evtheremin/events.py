"""Event-camera data model: streams, frames, depth masking, synthesis, EVT1 codec.

Events are (t_us, x, y, polarity) records held in a packed numpy array.
The EVT1 container stores them little-endian:

    magic   4 B   ASCII "EVT1"
    width   u16   sensor columns
    height  u16   sensor rows
    rsvd    u32   zero
    record 16 B   t u64, x u16, y u16, polarity i8, 3 pad bytes (zero)

Writers must zero the padding; readers ignore it.  An empty stream is a
valid 12-byte file.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "<i1")])

# On-wire record layout: 16 bytes with 3 trailing zero pad bytes.
_WIRE_DTYPE = np.dtype(
    {
        "names": ["t", "x", "y", "p"],
        "formats": ["<u8", "<u2", "<u2", "<i1"],
        "offsets": [0, 8, 10, 12],
        "itemsize": 16,
    }
)

EVT1_MAGIC = b"EVT1"
_EVT1_HEADER = struct.Struct("<4sHHI")
assert _EVT1_HEADER.size == 12

DEPTH_RANGE_MAX_M = 3.0


class StreamError(ValueError):
    """Structurally invalid event data."""


class CodecError(ValueError):
    """Malformed EVT1 bytes."""


class Hand(Enum):
    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class Resolution:
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"resolution must be positive, got {self.width}x{self.height}")

    @property
    def npixels(self) -> int:
        return self.width * self.height

    def __str__(self) -> str:
        return f"{self.width}x{self.height}"


@dataclass(frozen=True)
class Event:
    t: int
    x: int
    y: int
    polarity: int

    def __post_init__(self):
        if self.t < 0:
            raise StreamError(f"negative timestamp {self.t}")
        if self.polarity not in (-1, 1):
            raise StreamError(f"polarity must be +1 or -1, got {self.polarity}")


class EventStream:
    """A batch of events plus the resolution they were captured at."""

    def __init__(self, data: np.ndarray, resolution: Resolution):
        if data.dtype != EVENT_DTYPE:
            data = data.astype(EVENT_DTYPE)
        self.data = data
        self.resolution = resolution

    @classmethod
    def empty(cls, resolution: Resolution) -> "EventStream":
        return cls(np.empty(0, dtype=EVENT_DTYPE), resolution)

    @classmethod
    def from_events(cls, events, resolution: Resolution) -> "EventStream":
        events = list(events)
        data = np.zeros(len(events), dtype=EVENT_DTYPE)
        for i, ev in enumerate(events):
            data[i] = (ev.t, ev.x, ev.y, ev.polarity)
        stream = cls(data, resolution)
        stream.validate()
        return stream

    @classmethod
    def from_arrays(cls, t, x, y, p, resolution: Resolution) -> "EventStream":
        data = np.zeros(len(t), dtype=EVENT_DTYPE)
        data["t"], data["x"], data["y"], data["p"] = t, x, y, p
        return cls(data, resolution)

    def __len__(self) -> int:
        return len(self.data)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return self.resolution == other.resolution and np.array_equal(self.data, other.data)

    def validate(self) -> None:
        """Raise StreamError naming the first offending event, if any."""
        d = self.data
        bad = np.nonzero((d["x"] >= self.resolution.width) | (d["y"] >= self.resolution.height))[0]
        if len(bad):
            i = int(bad[0])
            raise StreamError(
                f"event {i} at ({d['x'][i]},{d['y'][i]}) outside {self.resolution}"
            )
        bad = np.nonzero((d["p"] != 1) & (d["p"] != -1))[0]
        if len(bad):
            i = int(bad[0])
            raise StreamError(f"event {i} has polarity {d['p'][i]}, want +1 or -1")

    def time_sorted(self) -> "EventStream":
        order = np.argsort(self.data["t"], kind="stable")
        return EventStream(self.data[order], self.resolution)

    def window(self, t0: int, t1: int) -> "EventStream":
        """Events with t0 <= t < t1 (requires nothing about ordering)."""
        t = self.data["t"]
        mask = (t >= t0) & (t < t1)
        return EventStream(self.data[mask], self.resolution)

    def span_us(self) -> tuple[int, int]:
        if len(self) == 0:
            return (0, 0)
        t = self.data["t"]
        return int(t.min()), int(t.max())


@dataclass
class Frame:
    """Accumulated event counts (or signed polarity sums) over a time window."""

    resolution: Resolution
    cells: np.ndarray
    t_start: int
    t_end: int

    def __post_init__(self):
        if self.cells.shape != (self.resolution.height, self.resolution.width):
            raise ValueError(
                f"cells shape {self.cells.shape} does not match {self.resolution}"
            )


@dataclass
class DepthFrame:
    """Per-pixel range readings in meters; NaN marks 'no reading'."""

    resolution: Resolution
    depth_m: np.ndarray
    far_max_m: float = DEPTH_RANGE_MAX_M

    def __post_init__(self):
        if self.depth_m.shape != (self.resolution.height, self.resolution.width):
            raise ValueError(
                f"depth shape {self.depth_m.shape} does not match {self.resolution}"
            )
        finite = self.depth_m[np.isfinite(self.depth_m)]
        if len(finite) and (finite.min() <= 0 or finite.max() > self.far_max_m):
            raise ValueError(
                f"depth readings must lie in (0, {self.far_max_m}] m; "
                f"got range [{finite.min()}, {finite.max()}]"
            )


def frame_accumulate(
    stream: EventStream,
    t0: int,
    t1: int,
    resolution: Resolution | None = None,
    signed: bool = False,
) -> Frame:
    """Accumulate events with t0 <= t < t1 into a frame.

    Unsigned mode counts events per pixel; signed mode sums polarities.
    """
    if t1 <= t0:
        raise ValueError(f"bad window [{t0}, {t1})")
    res = resolution or stream.resolution
    if res != stream.resolution:
        raise StreamError(f"stream is {stream.resolution}, frame wants {res}")
    stream.validate()
    d = stream.data
    mask = (d["t"] >= t0) & (d["t"] < t1)
    idx = d["y"][mask].astype(np.int64) * res.width + d["x"][mask].astype(np.int64)
    weights = d["p"][mask].astype(np.int64) if signed else None
    counts = np.bincount(idx, weights=weights, minlength=res.npixels)
    cells = counts.reshape(res.height, res.width).astype(np.int64)
    return Frame(res, cells, t0, t1)


def frame_downsample(frame: Frame, target: Resolution) -> Frame:
    """Sum source cells into target cells via floor index mapping.

    Source pixel (x, y) lands in target cell (x*tw//sw, y*th//sh).  Total
    count is conserved exactly.
    """
    src = frame.resolution
    if target.width > src.width or target.height > src.height:
        raise ValueError(f"cannot downsample {src} to larger {target}")
    xmap = (np.arange(src.width, dtype=np.int64) * target.width) // src.width
    ymap = (np.arange(src.height, dtype=np.int64) * target.height) // src.height
    out = np.zeros((target.height, target.width), dtype=np.int64)
    np.add.at(out, (ymap[:, None], xmap[None, :]), frame.cells)
    return Frame(target, out, frame.t_start, frame.t_end)


def depth_mask(obj, depth: DepthFrame, near_m: float, far_m: float):
    """Drop events (or zero frame cells) whose pixel depth is outside [near, far].

    Pixels with no depth reading are treated as outside.  Works on an
    EventStream or a Frame; resolution must match the depth frame.
    """
    if not (0 <= near_m < far_m):
        raise ValueError(f"bad depth range [{near_m}, {far_m}]")
    if far_m > depth.far_max_m:
        raise ValueError(f"far {far_m} exceeds sensor range {depth.far_max_m}")
    keep = (depth.depth_m >= near_m) & (depth.depth_m <= far_m)  # NaN compares False
    if isinstance(obj, EventStream):
        if obj.resolution != depth.resolution:
            raise StreamError(f"stream {obj.resolution} vs depth {depth.resolution}")
        d = obj.data
        mask = keep[d["y"].astype(np.int64), d["x"].astype(np.int64)]
        return EventStream(d[mask], obj.resolution)
    if isinstance(obj, Frame):
        if obj.resolution != depth.resolution:
            raise ValueError(f"frame {obj.resolution} vs depth {depth.resolution}")
        cells = np.where(keep, obj.cells, 0)
        return Frame(obj.resolution, cells, obj.t_start, obj.t_end)
    raise TypeError(f"cannot depth-mask {type(obj).__name__}")


@dataclass(frozen=True)
class TrajectorySample:
    t: int
    hand: Hand
    x: float
    y: float


@dataclass
class Trajectory:
    """Per-hand position samples over time.  Unit is 'px' or 'm'."""

    samples: list[TrajectorySample] = field(default_factory=list)
    unit: str = "px"

    def __post_init__(self):
        if self.unit not in ("px", "m"):
            raise ValueError(f"unit must be 'px' or 'm', got {self.unit!r}")
        last: dict[Hand, int] = {}
        for s in self.samples:
            if s.hand in last and s.t <= last[s.hand]:
                raise ValueError(
                    f"timestamps for {s.hand.value} not strictly increasing at t={s.t}"
                )
            last[s.hand] = s.t

    def hands(self) -> list[Hand]:
        seen = []
        for s in self.samples:
            if s.hand not in seen:
                seen.append(s.hand)
        return seen

    def _tracks(self) -> dict[Hand, tuple[np.ndarray, np.ndarray, np.ndarray]]:
        out = {}
        for hand in self.hands():
            pts = [(s.t, s.x, s.y) for s in self.samples if s.hand is hand]
            t = np.array([p[0] for p in pts], dtype=np.float64)
            x = np.array([p[1] for p in pts], dtype=np.float64)
            y = np.array([p[2] for p in pts], dtype=np.float64)
            out[hand] = (t, x, y)
        return out

    def position_at(self, hand: Hand, t: float) -> tuple[float, float]:
        """Linearly interpolated position, clamped at the ends."""
        tr = self._tracks().get(hand)
        if tr is None:
            raise KeyError(f"trajectory has no samples for {hand.value}")
        ts, xs, ys = tr
        return float(np.interp(t, ts, xs)), float(np.interp(t, ts, ys))

    def span_us(self) -> tuple[int, int]:
        if not self.samples:
            return (0, 0)
        ts = [s.t for s in self.samples]
        return min(ts), max(ts)

    def to_json(self) -> str:
        return json.dumps(
            {
                "unit": self.unit,
                "samples": [[s.t, s.hand.value, s.x, s.y] for s in self.samples],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "Trajectory":
        obj = json.loads(text)
        samples = [
            TrajectorySample(int(t), Hand(h), float(x), float(y))
            for t, h, x, y in obj["samples"]
        ]
        return cls(samples, obj.get("unit", "px"))


def waving_trajectory(
    resolution: Resolution,
    duration_ms: float,
    amplitude_px: float = 30.0,
    period_ms: float = 2000.0,
    centers: dict[Hand, tuple[float, float]] | None = None,
    y_amplitude_px: float = 6.0,
    sample_ms: float = 5.0,
) -> Trajectory:
    """Two hands waving sinusoidally around fixed centers.  Deterministic."""
    if centers is None:
        w, h = resolution.width, resolution.height
        centers = {
            Hand.LEFT: (0.28 * w, 0.5 * h),
            Hand.RIGHT: (0.72 * w, 0.5 * h),
        }
    n = max(2, int(round(duration_ms / sample_ms)) + 1)
    ts = np.linspace(0.0, duration_ms, n)
    samples = []
    for hand, (cx, cy) in centers.items():
        # Hands move in antiphase so they never collide.
        phase = 0.0 if hand is Hand.LEFT else np.pi
        for t in ts:
            x = cx + amplitude_px * np.sin(2 * np.pi * t / period_ms + phase)
            y = cy + y_amplitude_px * np.sin(4 * np.pi * t / period_ms + phase)
            samples.append(TrajectorySample(int(round(t * 1000)), hand, float(x), float(y)))
    samples.sort(key=lambda s: (s.t, s.hand.value))
    traj = Trajectory(samples, "px")
    _check_trajectory_bounds(traj, resolution)
    return traj


def _check_trajectory_bounds(traj: Trajectory, resolution: Resolution) -> None:
    for s in traj.samples:
        if not (0 <= s.x < resolution.width and 0 <= s.y < resolution.height):
            raise ValueError(
                f"trajectory sample at t={s.t} ({s.x:.1f},{s.y:.1f}) outside {resolution}"
            )


def _render_blobs(canvas: np.ndarray, positions, radius: float) -> list[tuple[int, int, int, int]]:
    """Draw soft-edged disks; returns the touched bounding boxes."""
    h, w = canvas.shape
    boxes = []
    pad = int(np.ceil(radius)) + 2
    for cx, cy in positions:
        x0, x1 = max(0, int(cx) - pad), min(w, int(cx) + pad + 1)
        y0, y1 = max(0, int(cy) - pad), min(h, int(cy) + pad + 1)
        if x0 >= x1 or y0 >= y1:
            continue
        ys, xs = np.mgrid[y0:y1, x0:x1]
        dist = np.hypot(xs - cx, ys - cy)
        disk = np.clip(radius + 0.5 - dist, 0.0, 1.0)
        np.maximum(canvas[y0:y1, x0:x1], disk, out=canvas[y0:y1, x0:x1])
        boxes.append((y0, y1, x0, x1))
    return boxes


def synth_hand_events(
    trajectory: Trajectory,
    resolution: Resolution,
    seed: int,
    blob_radius: float = 8.0,
    contrast_threshold: float = 0.05,
    rate_scale: float = 1.0,
    micro_step_us: int = 1000,
) -> EventStream:
    """Generate events from moving hand blobs by luminance frame differencing.

    The trajectory is rendered as soft-edged disks at micro_step_us
    intervals; wherever the luminance changes by at least
    contrast_threshold between successive micro-frames, the pixel emits
    floor(rate_scale * |delta| / contrast_threshold) events with the sign
    of the change, timestamps jittered uniformly inside the step.
    A stationary scene therefore emits nothing.
    """
    if trajectory.unit != "px":
        raise ValueError("synthesis needs a pixel-unit trajectory")
    if contrast_threshold <= 0 or rate_scale < 0 or micro_step_us <= 0:
        raise ValueError("bad synthesis parameters")
    _check_trajectory_bounds(trajectory, resolution)
    t_min, t_max = trajectory.span_us()
    if t_max <= t_min:
        return EventStream.empty(resolution)
    rng = np.random.default_rng(seed)
    hands = trajectory.hands()
    shape = (resolution.height, resolution.width)
    prev = np.zeros(shape, dtype=np.float64)
    _render_blobs(prev, [trajectory.position_at(h, t_min) for h in hands], blob_radius)
    ts_out, xs_out, ys_out, ps_out = [], [], [], []
    n_steps = int(np.ceil((t_max - t_min) / micro_step_us))
    for k in range(1, n_steps + 1):
        t_k = min(t_min + k * micro_step_us, t_max)
        cur = np.zeros(shape, dtype=np.float64)
        boxes = _render_blobs(cur, [trajectory.position_at(h, t_k) for h in hands], blob_radius)
        if boxes:
            cur_box = (
                min(b[0] for b in boxes),
                max(b[1] for b in boxes),
                min(b[2] for b in boxes),
                max(b[3] for b in boxes),
            )
        else:
            cur_box = (0, 0, 0, 0)
        # Change can only happen where either frame has support.
        py0, py1, px0, px1 = _union_box(cur_box, _support_box(prev))
        if py0 >= py1:
            prev = cur
            continue
        diff = cur[py0:py1, px0:px1] - prev[py0:py1, px0:px1]
        mag = np.abs(diff)
        yy, xx = np.nonzero(mag >= contrast_threshold)
        if len(yy):
            counts = np.floor(rate_scale * mag[yy, xx] / contrast_threshold).astype(np.int64)
            keep = counts > 0
            yy, xx, counts = yy[keep], xx[keep], counts[keep]
            sign = np.sign(diff[yy, xx]).astype(np.int8)
            total = int(counts.sum())
            if total:
                t_lo = t_min + (k - 1) * micro_step_us
                step_span = t_k - t_lo
                jitter = rng.random(total) * step_span
                ts = (t_lo + jitter).astype(np.uint64)
                xs = np.repeat(xx + px0, counts).astype(np.uint16)
                ys = np.repeat(yy + py0, counts).astype(np.uint16)
                ps = np.repeat(sign, counts)
                ts_out.append(ts)
                xs_out.append(xs)
                ys_out.append(ys)
                ps_out.append(ps)
        prev = cur
    if not ts_out:
        return EventStream.empty(resolution)
    stream = EventStream.from_arrays(
        np.concatenate(ts_out),
        np.concatenate(xs_out),
        np.concatenate(ys_out),
        np.concatenate(ps_out),
        resolution,
    )
    return stream.time_sorted()


def _support_box(img: np.ndarray) -> tuple[int, int, int, int]:
    ys, xs = np.nonzero(img)
    if len(ys) == 0:
        return (0, 0, 0, 0)
    return int(ys.min()), int(ys.max()) + 1, int(xs.min()), int(xs.max()) + 1


def _union_box(a, b) -> tuple[int, int, int, int]:
    if a[0] >= a[1]:
        return b
    if b[0] >= b[1]:
        return a
    return (min(a[0], b[0]), max(a[1], b[1]), min(a[2], b[2]), max(a[3], b[3]))


def add_noise_events(stream: EventStream, fraction: float, seed: int) -> EventStream:
    """Mix in uniformly random distractor events, fraction relative to len(stream)."""
    if fraction < 0:
        raise ValueError("fraction must be >= 0")
    n = int(round(len(stream) * fraction))
    if n == 0:
        return stream
    rng = np.random.default_rng(seed)
    t0, t1 = stream.span_us()
    res = stream.resolution
    noise = np.zeros(n, dtype=EVENT_DTYPE)
    noise["t"] = rng.integers(t0, max(t1, t0 + 1), n)
    noise["x"] = rng.integers(0, res.width, n)
    noise["y"] = rng.integers(0, res.height, n)
    noise["p"] = rng.choice(np.array([-1, 1], dtype=np.int8), n)
    merged = np.concatenate([stream.data, noise])
    return EventStream(merged, res).time_sorted()


def encode_evt1(stream: EventStream) -> bytes:
    """Serialize a stream to EVT1 bytes (see module docstring for layout)."""
    stream.validate()
    res = stream.resolution
    if res.width > 0xFFFF or res.height > 0xFFFF:
        raise CodecError(f"resolution {res} does not fit u16 fields")
    header = _EVT1_HEADER.pack(EVT1_MAGIC, res.width, res.height, 0)
    wire = np.zeros(len(stream), dtype=_WIRE_DTYPE)
    for name in ("t", "x", "y", "p"):
        wire[name] = stream.data[name]
    return header + wire.tobytes()


def decode_evt1(data: bytes) -> EventStream:
    """Parse EVT1 bytes; raises CodecError on any structural problem."""
    if len(data) < _EVT1_HEADER.size:
        raise CodecError(f"truncated header: {len(data)} bytes")
    magic, width, height, reserved = _EVT1_HEADER.unpack_from(data)
    if magic != EVT1_MAGIC:
        raise CodecError(f"bad magic {magic!r}")
    body = len(data) - _EVT1_HEADER.size
    if body % _WIRE_DTYPE.itemsize != 0:
        raise CodecError(f"truncated record section: {body} bytes")
    res = Resolution(width, height)
    wire = np.frombuffer(data, dtype=_WIRE_DTYPE, offset=_EVT1_HEADER.size)
    stream = EventStream.from_arrays(wire["t"], wire["x"], wire["y"], wire["p"], res)
    try:
        stream.validate()
    except StreamError as exc:
        raise CodecError(str(exc)) from exc
    return stream
