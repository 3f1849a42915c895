"""Lane-width normalisation of tracked detections into fixed-length windows."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .ingest import marking_intercept
from .smoothing import KalmanConfig, kalman_smooth
from .tracking import DEFAULT_GATE_PX, associate

WINDOW_LEN = 24
DEFAULT_STRIDE = 8
MIN_LANE_WIDTH_PX = 4.0
CLAMP = 3.0

VARIANTS = ("raw", "normalized", "filtered")


class DegenerateLaneWidth(ValueError):
    def __init__(self, message, frame_index=None):
        self.frame_index = frame_index
        super().__init__(message if frame_index is None else f"frame {frame_index}: {message}")


class TooShort(ValueError):
    pass


@dataclass
class MotionSeries:
    values: np.ndarray
    frame_indices: np.ndarray
    label: int | None = None
    u_o: np.ndarray | None = field(default=None, repr=False)
    u_1: np.ndarray | None = field(default=None, repr=False)
    u_2: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.values)

    def last_window(self, length=WINDOW_LEN) -> np.ndarray:
        if len(self.values) < length:
            raise TooShort(f"series of length {len(self.values)} is shorter than {length}")
        return self.values[-length:]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame_index", "p_r", "u_o", "u_1", "u_2"])
        cols = [self.u_o, self.u_1, self.u_2]
        for n, (f, p) in enumerate(zip(self.frame_indices, self.values)):
            w.writerow([int(f), repr(float(p))] + ["" if c is None else repr(float(c[n])) for c in cols])
        return buf.getvalue()


def normalize_frame(u_o, u_1, u_2, w_min=MIN_LANE_WIDTH_PX, clamp=CLAMP) -> float:
    """Object offset from the lane centre in units of the pixel lane width."""
    width = abs(u_1 - u_2)
    if width < w_min:
        raise DegenerateLaneWidth(f"lane width {width:.3g} px below {w_min} px")
    p = (u_o - (u_1 + u_2) / 2.0) / width
    return float(np.clip(p, -clamp, clamp))


def build_series(frame_indices, u_o, u_1, u_2, label=None, w_min=MIN_LANE_WIDTH_PX, clamp=CLAMP) -> MotionSeries:
    """Per-frame normalisation of aligned object and marking coordinates.

    Markings are put in canonical order (``u_1 < u_2``) frame by frame.
    """
    fi = np.asarray(frame_indices, dtype=int)
    uo = np.asarray(u_o, dtype=float)
    a = np.asarray(u_1, dtype=float)
    b = np.asarray(u_2, dtype=float)
    if not (len(fi) == len(uo) == len(a) == len(b)):
        raise ValueError("series must share a frame grid")
    u1, u2 = np.minimum(a, b), np.maximum(a, b)
    vals = np.empty(len(fi))
    for n in range(len(fi)):
        try:
            vals[n] = normalize_frame(uo[n], u1[n], u2[n], w_min, clamp)
        except DegenerateLaneWidth as exc:
            raise DegenerateLaneWidth(str(exc), int(fi[n])) from None
    return MotionSeries(vals, fi, label, uo, u1, u2)


def make_windows(series, stride=DEFAULT_STRIDE, length=WINDOW_LEN) -> np.ndarray:
    """Sliding windows of ``length`` values taken every ``stride`` frames, shape (n, length)."""
    vals = series.values if isinstance(series, MotionSeries) else np.asarray(series, dtype=float)
    if len(vals) < length:
        raise TooShort(f"series of length {len(vals)} is shorter than {length}")
    return sliding_window_view(vals, length)[::stride].copy()


def series_from_frames(
    frames,
    variant="filtered",
    label=None,
    gate_px=DEFAULT_GATE_PX,
    kalman: KalmanConfig = KalmanConfig(),
    image_width=1920.0,
    w_min=MIN_LANE_WIDTH_PX,
) -> MotionSeries:
    """Detections of one clip to a motion series.

    ``variant`` selects the preprocessing:

    * ``"filtered"``: Kalman-filtered object and marking coordinates, normalised.
    * ``"normalized"``: raw coordinates normalised frame by frame; missed
      object frames are linearly interpolated.
    * ``"raw"``: no lane reference; the interpolated object coordinate,
      centred and divided by the image width.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    track = associate(frames, gate_px=gate_px)
    obs_f = np.array(track.frame_indices())
    obs_u = np.array([o.u_o for _, o in track.observations])
    obs_v = np.array([o.v_base for _, o in track.observations])
    grid = np.arange(obs_f[0], obs_f[-1] + 1)
    by_index = {f.frame_index: f for f in frames}
    v_base = np.interp(grid, obs_f, obs_v)

    if variant == "raw":
        u = np.interp(grid, obs_f, obs_u)
        return MotionSeries((u - image_width / 2.0) / image_width, grid, label, u, None, None)

    u1 = np.empty(len(grid))
    u2 = np.empty(len(grid))
    for n, f in enumerate(grid):
        fr = by_index.get(int(f))
        if fr is None:
            raise DegenerateLaneWidth("no marking data", int(f))
        u1[n] = marking_intercept(fr.left_marking, v_base[n])
        u2[n] = marking_intercept(fr.right_marking, v_base[n])

    if variant == "filtered":
        _, uo = kalman_smooth(obs_f, obs_u, kalman)
        _, u1 = kalman_smooth(grid, u1, kalman)
        _, u2 = kalman_smooth(grid, u2, kalman)
    else:
        uo = np.interp(grid, obs_f, obs_u)
    return build_series(grid, uo, u1, u2, label=label, w_min=w_min)
