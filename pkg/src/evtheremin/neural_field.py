"""Two-dimensional neural field with difference-of-Gaussians lateral coupling.

The field is a leaky integrator over a grid of activations u:

    u += (dt / tau) * (-u + h + s + K * f(u) - g_inh * sum(f(u)))

with sigmoid rate function f(u) = 1 / (1 + exp(-beta * u)), a local
excitation / surround inhibition kernel K applied by zero-padded
convolution, and optional global inhibition g_inh.  Localized input
ignites a self-stabilizing supra-threshold peak; with g_inh > 0 the
field becomes selective and at most one peak survives.

Grids are indexed [row, column] i.e. [y, x].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import label as _cc_label
from scipy.signal import convolve2d
from scipy.special import expit

from .events import Resolution


@dataclass(frozen=True)
class FieldParams:
    """Integration constants.  tie_break adds a vanishing input ramp that
    favors earlier row-major cells so exactly symmetric inputs still
    resolve deterministically in selective mode."""

    tau: float = 10.0
    h: float = -5.0
    beta: float = 4.0
    dt: float = 1.0
    tie_break: float = 0.0

    def __post_init__(self):
        if self.tau <= 0 or self.dt <= 0:
            raise ValueError("tau and dt must be positive")
        if self.dt > self.tau:
            raise ValueError(f"dt {self.dt} must not exceed tau {self.tau}")
        if self.h >= 0:
            raise ValueError(f"resting level must be negative, got {self.h}")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.tie_break < 0:
            raise ValueError("tie_break must be >= 0")


@dataclass(frozen=True)
class KernelParams:
    c_exc: float = 15.0
    sigma_exc: float = 3.0
    c_inh: float = 10.0
    sigma_inh: float = 6.0
    g_inh: float = 0.0

    def __post_init__(self):
        if not (0 < self.sigma_exc < self.sigma_inh):
            raise ValueError(
                f"need 0 < sigma_exc < sigma_inh, got {self.sigma_exc}, {self.sigma_inh}"
            )
        if self.c_exc < 0 or self.c_inh < 0 or self.g_inh < 0:
            raise ValueError("kernel amplitudes and g_inh must be >= 0")


def tracking_params() -> tuple[FieldParams, KernelParams]:
    """Multi-peak regime: local competition only, peaks can coexist."""
    return FieldParams(), KernelParams(g_inh=0.0)


def selective_params() -> tuple[FieldParams, KernelParams]:
    """Winner-take-all regime: global inhibition plus a tiny deterministic
    scan-order bias so exact ties resolve to the earlier cell."""
    return FieldParams(tie_break=0.05), KernelParams(g_inh=1.5)


@dataclass
class LateralKernel:
    weights: np.ndarray
    g_inh: float = 0.0

    def __post_init__(self):
        kh, kw = self.weights.shape
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError("kernel dimensions must be odd")


def make_kernel(params: KernelParams, radius: int | None = None) -> LateralKernel:
    """Difference-of-Gaussians interaction kernel on a (2r+1)^2 grid."""
    if radius is None:
        radius = int(np.ceil(3.0 * params.sigma_inh))
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    ax = np.arange(-radius, radius + 1, dtype=np.float64)
    r2 = ax[None, :] ** 2 + ax[:, None] ** 2
    k = params.c_exc * np.exp(-r2 / (2 * params.sigma_exc**2)) - params.c_inh * np.exp(
        -r2 / (2 * params.sigma_inh**2)
    )
    return LateralKernel(k, params.g_inh)


@dataclass
class Field:
    u: np.ndarray
    params: FieldParams

    @classmethod
    def at_rest(cls, resolution: Resolution, params: FieldParams | None = None) -> "Field":
        params = params or FieldParams()
        u = np.full((resolution.height, resolution.width), params.h, dtype=np.float64)
        return cls(u, params)

    @property
    def resolution(self) -> Resolution:
        return Resolution(self.u.shape[1], self.u.shape[0])

    def rate(self) -> np.ndarray:
        return expit(self.params.beta * self.u)


def _scan_ramp(shape: tuple[int, int]) -> np.ndarray:
    n = shape[0] * shape[1]
    denom = max(n - 1, 1)
    return (np.arange(n, dtype=np.float64) / denom).reshape(shape)


def field_step(field: Field, s: np.ndarray, kernel: LateralKernel) -> Field:
    """One Euler step of the field dynamics.  Pure: returns a new Field."""
    s = np.asarray(s, dtype=np.float64)
    if s.shape != field.u.shape:
        raise ValueError(f"input shape {s.shape} vs field {field.u.shape}")
    p = field.params
    rate = expit(p.beta * field.u)
    lateral = convolve2d(rate, kernel.weights, mode="same", boundary="fill", fillvalue=0.0)
    drive = -field.u + p.h + s + lateral - kernel.g_inh * rate.sum()
    if p.tie_break > 0:
        drive = drive - p.tie_break * _scan_ramp(field.u.shape)
    u_new = field.u + (p.dt / p.tau) * drive
    return Field(u_new, p)


@dataclass(frozen=True)
class Peak:
    x: float
    y: float
    mass: float


def detect_peaks(
    field: Field, threshold: float = 0.0, min_separation: float = 0.0
) -> list[Peak]:
    """Supra-threshold connected regions reduced to weighted centroids.

    Weights are (u - threshold) over each 8-connected region; regions
    whose centroids fall closer than min_separation merge.  The result
    is sorted by mass, largest first, ties broken row-major.
    """
    if threshold <= field.params.h:
        raise ValueError(
            f"threshold {threshold} must exceed resting level {field.params.h}"
        )
    mask = field.u > threshold
    labels, n = _cc_label(mask, structure=np.ones((3, 3), dtype=int))
    peaks: list[Peak] = []
    for region in range(1, n + 1):
        ys, xs = np.nonzero(labels == region)
        w = field.u[ys, xs] - threshold
        mass = float(w.sum())
        peaks.append(Peak(float((w * xs).sum() / mass), float((w * ys).sum() / mass), mass))
    if min_separation > 0:
        peaks = _merge_close(peaks, min_separation)
    peaks.sort(key=lambda p: (-p.mass, p.y, p.x))
    return peaks


def _merge_close(peaks: list[Peak], min_separation: float) -> list[Peak]:
    peaks = list(peaks)
    while len(peaks) > 1:
        best = None
        for i in range(len(peaks)):
            for j in range(i + 1, len(peaks)):
                d = float(np.hypot(peaks[i].x - peaks[j].x, peaks[i].y - peaks[j].y))
                if d < min_separation and (best is None or d < best[0]):
                    best = (d, i, j)
        if best is None:
            break
        _, i, j = best
        a, b = peaks[i], peaks[j]
        m = a.mass + b.mass
        merged = Peak((a.x * a.mass + b.x * b.mass) / m, (a.y * a.mass + b.y * b.mass) / m, m)
        peaks = [p for k, p in enumerate(peaks) if k not in (i, j)] + [merged]
    return peaks


def field_to_pgm(field: Field) -> bytes:
    """Render activations as a 16-bit binary PGM (maxval 65535, big-endian
    samples per the format).  Linear scale over the field's value range."""
    u = field.u
    lo, hi = float(u.min()), float(u.max())
    span = hi - lo if hi > lo else 1.0
    scaled = np.round((u - lo) / span * 65535.0).astype(">u2")
    h, w = u.shape
    header = f"P5\n{w} {h}\n65535\n".encode("ascii")
    return header + scaled.tobytes()
