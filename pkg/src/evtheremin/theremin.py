"""Theremin control model: pitch/volume laws, scores, calibration, rendering.

Pitch follows an exponential distance law around a reference point,

    freq(d) = f_ref * 2 ** ((d_ref - d) / octave_m)

so every octave_m meters toward the pitch antenna raises the pitch one
octave.  Volume is a linear ramp of the volume hand's height between
h_min and h_max.  Scores are text files of NOTE/VOL lines; rendering is
a phase-continuous sine with optional vibrato, written as 16-bit mono
WAV.
"""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass, field

import numpy as np

from .events import Hand, Resolution, Trajectory, TrajectorySample
from .tracker import HandEstimate, HandLabel

RAMP_MS_DEFAULT = 30.0


class ScoreError(ValueError):
    """Unparseable or unplayable score content."""


class CalibrationError(ValueError):
    """Calibration samples cannot pin down the pitch law."""


def note_freq(midi: int) -> float:
    """Equal-tempered frequency for a MIDI note number (A4 = 69 = 440 Hz)."""
    if midi != int(midi) or not (0 <= midi <= 127):
        raise ValueError(f"MIDI note must be an integer in [0, 127], got {midi!r}")
    return 440.0 * 2.0 ** ((int(midi) - 69) / 12.0)


def cents_between(f_a: float, f_b: float) -> float:
    if f_a <= 0 or f_b <= 0:
        raise ValueError("frequencies must be positive")
    return 1200.0 * math.log2(f_a / f_b)


@dataclass(frozen=True)
class PitchCalibration:
    d_ref_m: float
    f_ref_hz: float
    octave_m: float

    def __post_init__(self):
        if self.d_ref_m <= 0 or self.f_ref_hz <= 0 or self.octave_m <= 0:
            raise ValueError("calibration parameters must be positive")

    def freq_at(self, d_m: float) -> float:
        return self.f_ref_hz * 2.0 ** ((self.d_ref_m - d_m) / self.octave_m)

    def distance_for(self, freq_hz: float) -> float:
        if freq_hz <= 0:
            raise ValueError("frequency must be positive")
        return self.d_ref_m - self.octave_m * math.log2(freq_hz / self.f_ref_hz)


@dataclass(frozen=True)
class PixelGeometry:
    """Camera-to-theremin geometry.  The pitch antenna sits at a fixed
    image column; hand distance is horizontal pixel distance times the
    pixel pitch, volume-hand height is distance above the image bottom."""

    pixel_to_meter: float = 0.002
    antenna_x_px: float = 0.0
    image_height_px: int = 180

    def __post_init__(self):
        if self.pixel_to_meter <= 0:
            raise ValueError("pixel_to_meter must be positive")

    def pitch_distance_m(self, x_px: float) -> float:
        return abs(x_px - self.antenna_x_px) * self.pixel_to_meter

    def pitch_x_px(self, d_m: float) -> float:
        return self.antenna_x_px + d_m / self.pixel_to_meter

    def height_m(self, y_px: float) -> float:
        return (self.image_height_px - y_px) * self.pixel_to_meter

    def y_px_for_height(self, h_m: float) -> float:
        return self.image_height_px - h_m / self.pixel_to_meter

    def cents_per_pixel(self, cal: PitchCalibration) -> float:
        """How far one pixel of pitch-hand error moves the pitch."""
        return 1200.0 * self.pixel_to_meter / cal.octave_m


@dataclass(frozen=True)
class ControlPoint:
    t_us: int
    freq_hz: float
    amp: float

    def __post_init__(self):
        if self.freq_hz <= 0:
            raise ValueError(f"frequency must be positive, got {self.freq_hz}")
        if not (0.0 <= self.amp <= 1.0):
            raise ValueError(f"amplitude must be in [0, 1], got {self.amp}")


def hands_to_control(
    est: HandEstimate,
    cal: PitchCalibration,
    vol_range_m: tuple[float, float],
    geometry: PixelGeometry = PixelGeometry(),
) -> ControlPoint:
    """Map a tracked-hand estimate to a theremin control point.

    The pitch hand must be present.  A missing volume hand plays at full
    amplitude, like a theremin with nothing near its volume loop.
    """
    h_min, h_max = vol_range_m
    if not h_min < h_max:
        raise ValueError(f"bad volume range [{h_min}, {h_max}]")
    pitch = est.hands.get(HandLabel.PITCH)
    if pitch is None:
        raise ValueError("estimate has no pitch hand")
    d = geometry.pitch_distance_m(pitch.x)
    freq = cal.freq_at(d)
    vol = est.hands.get(HandLabel.VOLUME)
    if vol is None:
        amp = 1.0
    else:
        h = geometry.height_m(vol.y)
        amp = float(np.clip((h - h_min) / (h_max - h_min), 0.0, 1.0))
    return ControlPoint(est.t_us, freq, amp)


@dataclass(frozen=True)
class Note:
    midi: int
    duration_ms: float

    def __post_init__(self):
        if self.duration_ms <= 0:
            raise ValueError(f"note duration must be positive, got {self.duration_ms}")
        note_freq(self.midi)


@dataclass
class Score:
    notes: list[Note] = field(default_factory=list)
    volumes: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self):
        last = -1.0
        for t_ms, level in self.volumes:
            if t_ms < last:
                raise ScoreError("VOL timestamps must be non-decreasing")
            if not (0.0 <= level <= 1.0):
                raise ScoreError(f"VOL level {level} outside [0, 1]")
            last = t_ms

    def duration_ms(self) -> float:
        return sum(n.duration_ms for n in self.notes)

    def note_starts_ms(self) -> list[float]:
        starts, t = [], 0.0
        for n in self.notes:
            starts.append(t)
            t += n.duration_ms
        return starts

    def freq_at_ms(self, t_ms: float) -> float:
        """Nominal score frequency at a time, ignoring transition ramps."""
        if not self.notes:
            raise ScoreError("empty score")
        acc = 0.0
        for n in self.notes:
            acc += n.duration_ms
            if t_ms < acc:
                return note_freq(n.midi)
        return note_freq(self.notes[-1].midi)

    def level_at_ms(self, t_ms: float) -> float:
        if not self.volumes:
            return 1.0
        ts = [v[0] for v in self.volumes]
        ls = [v[1] for v in self.volumes]
        return float(np.interp(t_ms, ts, ls))


def parse_score(text: str) -> Score:
    """NOTE <midi> <duration_ms> and VOL <t_ms> <level> lines; # comments."""
    notes, volumes = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "NOTE" and len(parts) == 3:
                notes.append(Note(int(parts[1]), float(parts[2])))
            elif parts[0] == "VOL" and len(parts) == 3:
                volumes.append((float(parts[1]), float(parts[2])))
            else:
                raise ScoreError(f"unrecognized directive {parts[0]!r}")
        except (ValueError, ScoreError) as exc:
            raise ScoreError(f"line {lineno}: {exc}") from exc
    return Score(notes, volumes)


def format_score(score: Score) -> str:
    lines = [f"NOTE {n.midi} {n.duration_ms:g}" for n in score.notes]
    lines += [f"VOL {t:g} {level:g}" for t, level in score.volumes]
    return "\n".join(lines) + "\n"


def score_to_trajectory(
    score: Score,
    cal: PitchCalibration,
    tempo: float = 1.0,
    geometry: PixelGeometry = PixelGeometry(),
    vol_range_m: tuple[float, float] = (0.05, 0.30),
    resolution: Resolution = Resolution(240, 180),
    sample_ms: float = 10.0,
    ramp_ms: float = RAMP_MS_DEFAULT,
    pitch_y_px: float | None = None,
    volume_x_px: float | None = None,
    vibrato_px: float = 2.5,
    vibrato_hz: float = 6.0,
) -> Trajectory:
    """Plant hand positions that would play the score.

    The pitch hand holds the distance for each note, moving linearly
    over ramp_ms at note changes; outside those ramps the realized pitch
    center is exact.  If the score has VOL points the volume hand tracks
    the interpolated level as a height, otherwise it is omitted entirely.
    Positions are emitted in image pixels on a sample_ms grid.

    Both hands carry a small periodic wobble (pitch vibrato, volume bob).
    Besides being idiomatic, this is what keeps them visible: a change
    camera emits nothing for a perfectly still hand, and a tracker fed
    silence can only hold a stale position.  Set vibrato_px to 0 for the
    mathematically frozen trajectory.
    """
    if tempo <= 0:
        raise ValueError("tempo must be positive")
    if not score.notes:
        raise ScoreError("empty score")
    h_min, h_max = vol_range_m
    if pitch_y_px is None:
        pitch_y_px = 0.5 * resolution.height
    if volume_x_px is None:
        volume_x_px = 0.9 * resolution.width
    durations = [n.duration_ms / tempo for n in score.notes]
    starts, acc = [], 0.0
    for d in durations:
        starts.append(acc)
        acc += d
    total_ms = acc
    dists = []
    for n in score.notes:
        d = cal.distance_for(note_freq(n.midi))
        if d <= 0:
            raise ScoreError(
                f"note {n.midi} needs distance {d:.3f} m, outside playable range"
            )
        dists.append(d)
    if score.volumes:
        # The tracker labels hands by image x order, so the pitch hand must
        # stay clearly left of the volume hand for every note in the score.
        x_worst = max(geometry.pitch_x_px(d) for d in dists) + vibrato_px
        if x_worst >= volume_x_px - 8.0:
            raise ScoreError(
                f"lowest note puts the pitch hand at x={x_worst:.0f} px, too close "
                f"to the volume hand at x={volume_x_px:.0f} px; raise the score or "
                "move volume_x_px right"
            )

    def dist_at(t_ms: float) -> float:
        i = 0
        while i + 1 < len(starts) and t_ms >= starts[i + 1]:
            i += 1
        if i > 0 and t_ms < starts[i] + ramp_ms:
            frac = (t_ms - starts[i]) / ramp_ms
            return dists[i - 1] + (dists[i] - dists[i - 1]) * frac
        return dists[i]

    # Wobble speed must clear the sensor's contrast threshold or the
    # hand fades from view; defaults sit comfortably above it.
    bob_px = 0.8 * vibrato_px
    bob_hz = 0.9 * vibrato_hz
    n_samples = max(2, int(math.floor(total_ms / sample_ms)) + 1)
    samples = []
    for k in range(n_samples):
        t_ms = min(k * sample_ms, total_ms)
        t_us = int(round(t_ms * 1000))
        # Quadrature pairs trace a small ellipse, so hand speed never
        # reaches zero and the event stream never goes dark.  The cross
        # axis is the one that does not affect the played sound.
        ph_v = 2 * math.pi * vibrato_hz * t_ms / 1000.0
        x = geometry.pitch_x_px(dist_at(t_ms)) + vibrato_px * math.sin(ph_v)
        y = pitch_y_px + bob_px * math.cos(ph_v)
        samples.append(TrajectorySample(t_us, Hand.LEFT, x, y))
        if score.volumes:
            h = h_min + score.level_at_ms(t_ms * tempo) * (h_max - h_min)
            ph_b = 2 * math.pi * bob_hz * t_ms / 1000.0
            vy = geometry.y_px_for_height(h) + bob_px * math.sin(ph_b)
            vx = volume_x_px + bob_px * math.cos(ph_b)
            samples.append(TrajectorySample(t_us, Hand.RIGHT, vx, vy))
    traj = Trajectory(samples, "px")
    for s in traj.samples:
        if not (0 <= s.x < resolution.width and 0 <= s.y < resolution.height):
            raise ScoreError(
                f"score drives a hand to ({s.x:.1f},{s.y:.1f}), outside {resolution}"
            )
    return traj


def in_ramp(t_ms: float, score: Score, tempo: float = 1.0, ramp_ms: float = RAMP_MS_DEFAULT) -> bool:
    """True when the pitch hand is mid-transition between notes."""
    acc = 0.0
    for i, n in enumerate(score.notes):
        if i > 0 and acc <= t_ms < acc + ramp_ms:
            return True
        acc += n.duration_ms / tempo
    return False


def calibrate_pitch(samples: list[tuple[float, float]]) -> PitchCalibration:
    """Least-squares fit of the exponential pitch law to (distance, freq)
    pairs, minimizing squared residuals in log2 frequency.

    The fitted reference distance is anchored at the mean sample
    distance, which makes the parameterization unique; refitting on
    samples of a fitted model at the same distances returns that model.
    """
    if len(samples) < 2:
        raise CalibrationError("need at least 2 samples")
    d = np.array([s[0] for s in samples], dtype=np.float64)
    f = np.array([s[1] for s in samples], dtype=np.float64)
    if np.any(f <= 0) or np.any(d <= 0):
        raise CalibrationError("distances and frequencies must be positive")
    if np.ptp(d) == 0:
        raise CalibrationError("samples must cover at least 2 distinct distances")
    y = np.log2(f)
    slope, intercept = np.polyfit(d, y, 1)
    if slope >= 0:
        raise CalibrationError(
            "pitch must fall with distance; samples fit a non-negative slope"
        )
    octave_m = -1.0 / slope
    d_ref = float(d.mean())
    f_ref = float(2.0 ** (intercept + slope * d_ref))
    return PitchCalibration(d_ref, f_ref, octave_m)


@dataclass(frozen=True)
class Vibrato:
    depth_cents: float = 0.0
    rate_hz: float = 5.0

    def __post_init__(self):
        if self.depth_cents < 0 or self.rate_hz < 0:
            raise ValueError("vibrato depth and rate must be >= 0")


def render_trace(
    points: list[ControlPoint],
    sample_rate: int = 22050,
    vibrato: Vibrato | None = None,
    end_us: int | None = None,
) -> np.ndarray:
    """Render control points to int16 PCM with a phase-continuous sine.

    Frequency and amplitude hold their last value between points
    (zero-order hold).  Vibrato modulates the instantaneous frequency by
    2 ** ((depth_cents / 1200) * sin(2 pi rate t)); depth 0 is bit-identical
    to no vibrato.
    """
    if sample_rate < 8000:
        raise ValueError("sample rate must be >= 8000")
    if not points:
        return np.zeros(0, dtype=np.int16)
    ts = np.array([p.t_us for p in points], dtype=np.int64)
    if np.any(np.diff(ts) < 0):
        raise ValueError("control points must be time-ordered")
    t0 = int(ts[0])
    t1 = int(end_us) if end_us is not None else int(ts[-1])
    if t1 <= t0:
        return np.zeros(0, dtype=np.int16)
    n = int(round((t1 - t0) * 1e-6 * sample_rate))
    t_us = t0 + (np.arange(n, dtype=np.float64) / sample_rate) * 1e6
    idx = np.searchsorted(ts, t_us, side="right") - 1
    idx = np.clip(idx, 0, len(points) - 1)
    freq = np.array([p.freq_hz for p in points])[idx]
    amp = np.array([p.amp for p in points])[idx]
    if vibrato is not None and vibrato.depth_cents > 0:
        t_s = (t_us - t0) * 1e-6
        freq = freq * 2.0 ** (
            (vibrato.depth_cents / 1200.0) * np.sin(2 * np.pi * vibrato.rate_hz * t_s)
        )
    phase = 2 * np.pi * np.cumsum(freq) / sample_rate
    pcm = amp * np.sin(phase)
    return np.clip(np.round(pcm * 32767.0), -32768, 32767).astype(np.int16)


def write_wav(path, pcm: np.ndarray, sample_rate: int) -> None:
    """16-bit mono PCM WAV."""
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(pcm.astype("<i2").tobytes())


def read_wav(path) -> tuple[np.ndarray, int]:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise ValueError("expected 16-bit mono WAV")
        data = np.frombuffer(w.readframes(w.getnframes()), dtype="<i2")
        return data, w.getframerate()
