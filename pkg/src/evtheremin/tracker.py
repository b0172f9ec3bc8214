"""Hand tracking: event frames in, labeled pitch/volume hand estimates out.

Pipeline per step: accumulate the window's events at sensor resolution,
optionally depth-mask, downsample to the on-chip grid, turn counts into
a detector heatmap (event-density blob filter or a sigma-delta network),
drive the neural field one step with the heatmap, and read peaks back
out as upscaled hand positions.  The field's inertia is what rejects
distractor events; when nothing is detected the previous estimate is
held with its confidence halved each step.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field
from enum import Enum

import numpy as np
import scipy.sparse as sp
from scipy.ndimage import gaussian_filter

from .events import DepthFrame, EventStream, Frame, Resolution, depth_mask, frame_accumulate, frame_downsample
from .neural_field import Field, FieldParams, KernelParams, LateralKernel, Peak, detect_peaks, field_step, make_kernel
from .sigma_delta import DenseNet, Layer, SigmaDeltaNetwork


class HandLabel(Enum):
    PITCH = "pitch_hand"
    VOLUME = "volume_hand"


@dataclass(frozen=True)
class HandPoint:
    x: float
    y: float
    confidence: float

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")


@dataclass
class HandEstimate:
    t_us: int
    hands: dict[HandLabel, HandPoint] = dataclass_field(default_factory=dict)

    def with_decayed_confidence(self, factor: float, t_us: int) -> "HandEstimate":
        return HandEstimate(
            t_us,
            {
                label: HandPoint(p.x, p.y, p.confidence * factor)
                for label, p in self.hands.items()
            },
        )


def tracker_field_params() -> tuple[FieldParams, KernelParams]:
    """Field preset for tracking: quick integration so the peak follows a
    moving hand within a few windows, mild local excitation for pooling,
    no global inhibition so both hands can hold a peak.

    Excitation is kept weak on purpose.  A self-sustaining bump parks
    itself where the input used to be and the peak centroid then lags a
    moving hand by several cells; with input-dominated dynamics the bump
    dies where the input dies and re-forms where it moved."""
    return (
        FieldParams(tau=3.0, h=-5.0, beta=4.0, dt=1.0),
        KernelParams(c_exc=2.0, sigma_exc=2.0, c_inh=2.0, sigma_inh=4.0, g_inh=0.0),
    )


@dataclass
class TrackerConfig:
    input_res: Resolution = Resolution(240, 180)
    chip_res: Resolution = Resolution(86, 65)
    window_us: int = 10_000
    detector: str = "blob"  # "blob" or "sd_net"
    field_params: FieldParams = dataclass_field(default_factory=lambda: tracker_field_params()[0])
    kernel_params: KernelParams = dataclass_field(default_factory=lambda: tracker_field_params()[1])
    input_gain: float = 15.0
    detect_threshold: float = 0.0
    min_separation_cells: float = 6.0
    min_peak_mass: float = 1.0
    mirror: bool = True
    depth_range_m: tuple[float, float] | None = None
    confidence_decay: float = 0.5
    blur_sigma_cells: float = 1.5
    sd_theta: float = 0.02
    use_field: bool = True  # False = raw argmax baseline, no field filtering
    argmax_floor: float = 0.2  # baseline ignores heat below this
    max_hands: int = 2

    def __post_init__(self):
        if self.detector not in ("blob", "sd_net"):
            raise ValueError(f"unknown detector {self.detector!r}")
        if self.chip_res.width > self.input_res.width or self.chip_res.height > self.input_res.height:
            raise ValueError(f"chip {self.chip_res} exceeds input {self.input_res}")
        if self.window_us <= 0:
            raise ValueError("window must be positive")
        if not (0.0 < self.confidence_decay < 1.0):
            raise ValueError("confidence decay must be in (0, 1)")
        if self.max_hands not in (1, 2):
            raise ValueError("tracker handles 1 or 2 hands")


class GainControl:
    """Decaying reference level for heatmap normalization.

    Normalizing each frame by its own maximum erases the difference
    between strong evidence and noise: in a window where the hands are
    nearly still (event cameras see nothing at a motion turning point)
    the brightest pixel is a stray event, and per-frame scaling promotes
    it to full strength.  A reference that tracks the recent peak and
    decays a little per step keeps quiet windows quiet.  Upward slew is
    capped so a one-hand event burst (a fast note jump) cannot crush the
    other, slower hand out of the normalized map.
    """

    def __init__(self, decay: float = 0.9, growth: float = 1.5):
        if not (0.0 < decay < 1.0) or growth <= 1.0:
            raise ValueError("need 0 < decay < 1 and growth > 1")
        self.decay = decay
        self.growth = growth
        self.ref = 0.0

    def normalize(self, img: np.ndarray) -> np.ndarray:
        m = float(img.max())
        if self.ref <= 0:
            self.ref = m
        else:
            self.ref = min(max(self.ref * self.decay, m), self.ref * self.growth)
        if self.ref <= 0:
            return np.zeros_like(img)
        return np.clip(img / self.ref, 0.0, 1.0)

    def reset(self) -> None:
        self.ref = 0.0


class BlobDetector:
    """Normalized local event density: Gaussian blur of the count frame."""

    def __init__(self, sigma_cells: float):
        if sigma_cells <= 0:
            raise ValueError("blur sigma must be positive")
        self.sigma = sigma_cells
        self.gain = GainControl()

    def heatmap(self, frame: Frame) -> np.ndarray:
        smooth = gaussian_filter(frame.cells.astype(np.float64), self.sigma, mode="constant")
        return self.gain.normalize(smooth)

    def reset(self) -> None:
        self.gain.reset()


def blur_operator(resolution: Resolution, sigma_cells: float, radius: int | None = None) -> sp.csr_matrix:
    """Gaussian blur expressed as a sparse matrix over flattened frames,
    so the sigma-delta path has a single dense-layer forwarding shape."""
    if radius is None:
        radius = max(1, int(np.ceil(3 * sigma_cells)))
    ax = np.arange(-radius, radius + 1)
    kern = np.exp(-(ax[None, :] ** 2 + ax[:, None] ** 2) / (2 * sigma_cells**2))
    kern /= kern.sum()
    w, h = resolution.width, resolution.height
    rows, cols, vals = [], [], []
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            weight = kern[dy + radius, dx + radius]
            ys = np.arange(max(0, -dy), min(h, h - dy))
            xs = np.arange(max(0, -dx), min(w, w - dx))
            if len(ys) == 0 or len(xs) == 0:
                continue
            yy, xx = np.meshgrid(ys, xs, indexing="ij")
            out_idx = (yy * w + xx).ravel()
            in_idx = ((yy + dy) * w + (xx + dx)).ravel()
            rows.append(out_idx)
            cols.append(in_idx)
            vals.append(np.full(len(out_idx), weight))
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(resolution.npixels, resolution.npixels),
    )
    return mat.tocsr()


class SigmaDeltaDetector:
    """Spiking detector: one sparse blur layer run through the sigma-delta
    pipeline, fed the flattened count frame each step.  Stateful, so
    between-step redundancy is carried by spikes only."""

    def __init__(self, resolution: Resolution, sigma_cells: float, theta: float,
                 net: DenseNet | None = None):
        if net is None:
            op = blur_operator(resolution, sigma_cells)
            net = DenseNet([Layer(op, np.zeros(resolution.npixels), "relu")])
        if net.in_size != resolution.npixels or net.out_size != resolution.npixels:
            raise ValueError(
                f"network maps {net.in_size} -> {net.out_size}, frame has {resolution.npixels} pixels"
            )
        self.resolution = resolution
        self.runner = SigmaDeltaNetwork(net, theta)
        self.last_spike_counts: list[int] = [0] * len(net.layers)
        self.total_spikes = 0
        self.gain = GainControl()

    def heatmap(self, frame: Frame) -> np.ndarray:
        out, counts = self.runner.step(frame.cells.astype(np.float64).ravel())
        self.last_spike_counts = counts
        self.total_spikes += sum(counts)
        img = np.clip(out, 0.0, None).reshape(self.resolution.height, self.resolution.width)
        return self.gain.normalize(img)

    def reset(self) -> None:
        self.runner.reset()
        self.total_spikes = 0
        self.gain.reset()


def detect_heatmap(frame: Frame, detector) -> np.ndarray:
    """Normalized [0, 1] detection heatmap at the frame's resolution."""
    heat = detector.heatmap(frame)
    if heat.shape != frame.cells.shape:
        raise ValueError("detector returned a heatmap of the wrong shape")
    return heat


def assign_hands(peaks: list[Peak], mirror: bool = True) -> dict[HandLabel, Peak]:
    """Label up to two peaks.  A single peak is the pitch hand.  With two,
    the image-left peak is the pitch hand when mirror is set (a camera
    facing the player sees their right hand on the image left); mirror
    off swaps the roles."""
    if not peaks:
        return {}
    if len(peaks) == 1:
        return {HandLabel.PITCH: peaks[0]}
    a, b = sorted(peaks[:2], key=lambda p: (p.x, p.y))
    if mirror:
        return {HandLabel.PITCH: a, HandLabel.VOLUME: b}
    return {HandLabel.PITCH: b, HandLabel.VOLUME: a}


class HandTracker:
    """Stateful window-by-window tracker; see module docstring."""

    def __init__(self, config: TrackerConfig | None = None):
        self.config = config or TrackerConfig()
        cfg = self.config
        if cfg.detector == "blob":
            self.detector = BlobDetector(cfg.blur_sigma_cells)
        else:
            self.detector = SigmaDeltaDetector(cfg.chip_res, cfg.blur_sigma_cells, cfg.sd_theta)
        self.kernel: LateralKernel = make_kernel(cfg.kernel_params)
        self.reset()

    def reset(self) -> None:
        cfg = self.config
        self.field = Field.at_rest(cfg.chip_res, cfg.field_params)
        self.previous: HandEstimate | None = None
        self.detector.reset()

    def _upscale(self, p: Peak) -> tuple[float, float]:
        cfg = self.config
        sx = cfg.input_res.width / cfg.chip_res.width
        sy = cfg.input_res.height / cfg.chip_res.height
        # Cell-center rule: undoes the half-cell bias of floor downsampling.
        return ((p.x + 0.5) * sx, (p.y + 0.5) * sy)

    def step(self, window: EventStream, t_end: int, depth: DepthFrame | None = None) -> HandEstimate:
        cfg = self.config
        t_start = t_end - cfg.window_us
        frame = frame_accumulate(window, t_start, t_end, cfg.input_res)
        if cfg.depth_range_m is not None and depth is not None:
            near, far = cfg.depth_range_m
            frame = depth_mask(frame, depth, near, far)
        chip = frame_downsample(frame, cfg.chip_res)
        heat = detect_heatmap(chip, self.detector)
        if cfg.use_field:
            self.field = field_step(self.field, heat * cfg.input_gain, self.kernel)
            peaks = detect_peaks(self.field, cfg.detect_threshold, cfg.min_separation_cells)
            peaks = [p for p in peaks if p.mass >= cfg.min_peak_mass][: cfg.max_hands]
        else:
            peaks = _argmax_peaks(heat, cfg.max_hands, cfg.min_separation_cells, cfg.argmax_floor)
        if not peaks:
            if self.previous is None:
                est = HandEstimate(t_end, {})
            else:
                est = self.previous.with_decayed_confidence(cfg.confidence_decay, t_end)
            self.previous = est
            return est
        labeled = assign_hands(peaks, cfg.mirror)
        hands = {}
        for label, peak in labeled.items():
            x, y = self._upscale(peak)
            hands[label] = HandPoint(x, y, 1.0)
        est = HandEstimate(t_end, hands)
        self.previous = est
        return est

    def run(self, stream: EventStream, t_start: int | None = None, t_end: int | None = None) -> list[HandEstimate]:
        """Track a whole stream in fixed windows; timestamps at window ends."""
        cfg = self.config
        if len(stream) == 0 and (t_start is None or t_end is None):
            return []
        lo, hi = stream.span_us()
        t_start = lo if t_start is None else t_start
        t_end = hi + 1 if t_end is None else t_end
        data = stream.time_sorted()
        ts = data.data["t"]
        out = []
        t = t_start
        while t < t_end:
            w_end = t + cfg.window_us
            i0, i1 = np.searchsorted(ts, [t, w_end])
            window = EventStream(data.data[i0:i1], stream.resolution)
            out.append(self.step(window, int(w_end)))
            t = w_end
        return out


def _argmax_peaks(
    heat: np.ndarray, max_hands: int, min_separation: float, floor: float = 0.0
) -> list[Peak]:
    """Raw detector baseline: greedy argmax with local suppression."""
    work = heat.copy()
    h, w = work.shape
    peaks = []
    r = max(1, int(round(min_separation)))
    for _ in range(max_hands):
        if work.max() <= floor:
            break
        iy, ix = np.unravel_index(int(np.argmax(work)), work.shape)
        peaks.append(Peak(float(ix), float(iy), float(work[iy, ix])))
        y0, y1 = max(0, iy - r), min(h, iy + r + 1)
        x0, x1 = max(0, ix - r), min(w, ix + r + 1)
        work[y0:y1, x0:x1] = 0.0
    return peaks


def format_estimates(estimates: list[HandEstimate]) -> str:
    """One line per hand per step: t_us,label,x,y,confidence."""
    lines = []
    for est in estimates:
        for label in (HandLabel.PITCH, HandLabel.VOLUME):
            p = est.hands.get(label)
            if p is not None:
                lines.append(
                    f"{est.t_us},{label.value},{p.x:.3f},{p.y:.3f},{p.confidence:.4f}"
                )
    return "\n".join(lines) + ("\n" if lines else "")


def parse_estimates(text: str) -> list[HandEstimate]:
    by_t: dict[int, dict[HandLabel, HandPoint]] = {}
    order: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise ValueError(f"line {lineno}: want t,label,x,y,confidence")
        t = int(parts[0])
        label = HandLabel(parts[1])
        if t not in by_t:
            by_t[t] = {}
            order.append(t)
        by_t[t][label] = HandPoint(float(parts[2]), float(parts[3]), float(parts[4]))
    return [HandEstimate(t, by_t[t]) for t in order]
