"""Detection records: JSONL parsing, bounding-box baselines and marking intercepts."""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np

INTERCEPT_NEIGHBOURS = 6
MAX_EXTRAPOLATION_PX = 50.0

FRAME_FIELDS = ("frame_index", "timestamp_s", "boxes", "left_marking", "right_marking")


class ParseError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class SchemaError(ValueError):
    def __init__(self, field_name, message=None, line=None):
        self.field = field_name
        self.line = line
        text = message or f"missing or invalid field {field_name!r}"
        if line is not None:
            text = f"line {line}: {text}"
        super().__init__(text)


class InsufficientPoints(ValueError):
    pass


class ExtrapolationTooFar(ValueError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    u_tl: float
    v_tl: float
    u_br: float
    v_br: float

    def __post_init__(self):
        if not (self.u_tl < self.u_br and self.v_tl < self.v_br):
            raise ValueError(f"degenerate box {self.as_list()}")

    def as_list(self):
        return [self.u_tl, self.v_tl, self.u_br, self.v_br]


@dataclass(frozen=True)
class MarkingPoints:
    side: str
    points: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.side not in ("Left", "Right"):
            raise ValueError(f"side must be Left or Right, got {self.side!r}")
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        object.__setattr__(self, "points", pts)


@dataclass(frozen=True)
class DetectionFrame:
    frame_index: int
    timestamp_s: float
    boxes: tuple
    left_marking: MarkingPoints
    right_marking: MarkingPoints

    def to_dict(self) -> dict:
        return {
            "frame_index": self.frame_index,
            "timestamp_s": self.timestamp_s,
            "boxes": [b.as_list() for b in self.boxes],
            "left_marking": self.left_marking.points.tolist(),
            "right_marking": self.right_marking.points.tolist(),
        }


@dataclass(frozen=True)
class BaselineObservation:
    u_o: float
    v_base: float
    u_1: float
    u_2: float


def _number(value, name, line):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value):
        raise SchemaError(name, f"field {name!r} must be a finite number", line)
    return value


def _points(value, name, line):
    if not isinstance(value, list):
        raise SchemaError(name, line=line)
    for p in value:
        if not isinstance(p, list) or len(p) != 2:
            raise SchemaError(name, f"field {name!r} must be a list of [u, v] pairs", line)
        _number(p[0], name, line)
        _number(p[1], name, line)
    return value


def frame_from_dict(d: dict, line=None) -> DetectionFrame:
    """Validate one decoded record and build a :class:`DetectionFrame`."""
    if not isinstance(d, dict):
        raise SchemaError("frame", "record must be a JSON object", line)
    for name in FRAME_FIELDS:
        if name not in d:
            raise SchemaError(name, line=line)
    idx = d["frame_index"]
    if isinstance(idx, bool) or not isinstance(idx, int):
        raise SchemaError("frame_index", "field 'frame_index' must be an integer", line)
    ts = float(_number(d["timestamp_s"], "timestamp_s", line))
    if not isinstance(d["boxes"], list):
        raise SchemaError("boxes", line=line)
    boxes = []
    for b in d["boxes"]:
        if not isinstance(b, list) or len(b) != 4:
            raise SchemaError("boxes", "each box must be [u_tl, v_tl, u_br, v_br]", line)
        try:
            boxes.append(BoundingBox(*(float(_number(c, "boxes", line)) for c in b)))
        except ValueError as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError("boxes", str(exc), line) from None
    left = MarkingPoints("Left", _points(d["left_marking"], "left_marking", line))
    right = MarkingPoints("Right", _points(d["right_marking"], "right_marking", line))
    return DetectionFrame(idx, ts, tuple(boxes), left, right)


def parse_frames(stream) -> list:
    """Parse a JSONL stream of detection frames, sorted by ``frame_index``.

    ``stream`` may be bytes, str, or a text/binary file object. Blank lines
    are skipped.
    """
    if isinstance(stream, (bytes, bytearray)):
        stream = io.StringIO(stream.decode("utf-8"))
    elif isinstance(stream, str):
        stream = io.StringIO(stream)
    frames = []
    for lineno, raw in enumerate(stream, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        if not raw.strip():
            continue
        try:
            d = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, lineno) from None
        frames.append(frame_from_dict(d, lineno))
    frames.sort(key=lambda f: f.frame_index)
    for a, b in zip(frames, frames[1:]):
        if a.frame_index == b.frame_index:
            raise SchemaError("frame_index", f"duplicate frame_index {a.frame_index}")
    return frames


def frames_to_jsonl(frames) -> str:
    return "".join(json.dumps(f.to_dict(), separators=(",", ":")) + "\n" for f in frames)


def baseline_position(box: BoundingBox) -> tuple:
    """1-D object coordinate and baseline row: box centre in u, bottom edge in v."""
    return (box.u_tl + box.u_br) / 2.0, box.v_br


def marking_intercept(marking: MarkingPoints, v_base: float, k=INTERCEPT_NEIGHBOURS, max_extrapolation=MAX_EXTRAPOLATION_PX) -> float:
    """Where a marking crosses image row ``v_base``.

    Fits ``u = a*v + b`` by least squares to the ``k`` points nearest in v to
    ``v_base`` and evaluates it there.
    """
    pts = marking.points
    if len(pts) < 2:
        raise InsufficientPoints(f"{marking.side} marking has {len(pts)} point(s)")
    order = np.argsort(np.abs(pts[:, 1] - v_base), kind="stable")
    near = pts[order[: min(k, len(pts))]]
    v, u = near[:, 1], near[:, 0]
    lo, hi = v.min(), v.max()
    if v_base < lo - max_extrapolation or v_base > hi + max_extrapolation:
        raise ExtrapolationTooFar(f"row {v_base:.1f} is outside [{lo:.1f}, {hi:.1f}] by more than {max_extrapolation} px")
    vc = v - v.mean()
    denom = float(vc @ vc)
    if denom == 0.0:
        raise InsufficientPoints(f"{marking.side} marking points share a single row")
    slope = float(vc @ (u - u.mean())) / denom
    return float(u.mean() + slope * (v_base - v.mean()))


def observe(box: BoundingBox, frame: DetectionFrame) -> BaselineObservation:
    u_o, v_base = baseline_position(box)
    return BaselineObservation(
        u_o, v_base, marking_intercept(frame.left_marking, v_base), marking_intercept(frame.right_marking, v_base)
    )
