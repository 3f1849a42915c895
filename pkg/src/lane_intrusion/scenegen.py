"""Synthetic lane-intrusion clips rendered into noisy detection records.

A scene is one pedestrian/cyclist standing at a fixed road depth and moving
laterally while the camera drives forward with a slowly wandering yaw. The
ego lane is centred on ``X = 0`` and bounded by markings at ``+/- w/2``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, CameraPose, project_points, relative_position_world
from .ingest import BoundingBox, DetectionFrame, MarkingPoints

LABELS = ("LeftToRight", "RightToLeft", "NoIntrusion")
LABEL_INDEX = {name: i for i, name in enumerate(LABELS)}

ONSET_FRAMES = 5
NO_INTRUSION_MARGIN = 0.55
MARKING_SPAN_M = 20.0


class InvalidConfig(ValueError):
    pass


class LabelViolation(AssertionError):
    pass


DEFAULT_INTRINSICS = CameraIntrinsics(f_x=8000.0, f_y=8000.0, u_0=960.0, v_0=540.0)


@dataclass(frozen=True)
class ScenarioConfig:
    label: str = "LeftToRight"
    lane_width_m: float = 3.5
    object_range_m: tuple = (150.0, 250.0)
    ego_speed_mps: float = 20.0
    object_lateral_speed_mps: float = 1.0
    yaw_profile: tuple | float | None = None  # per-frame theta_y (rad), or an amplitude for a constant U(-a, a) yaw
    frame_count: int = 32
    frame_rate_hz: float = 10.0
    camera_offset_m: float = 0.0
    camera_height_m: float = 1.5
    object_size_m: tuple = (0.6, 1.7)

    def validate(self):
        if self.label not in LABELS:
            raise InvalidConfig(f"label must be one of {LABELS}")
        if self.frame_count < 24:
            raise InvalidConfig("frame_count must be >= 24")
        if not self.lane_width_m > 0:
            raise InvalidConfig("lane_width_m must be positive")
        lo, hi = self.object_range_m
        if not (50.0 <= lo <= hi <= 400.0):
            raise InvalidConfig("object_range_m must lie within [50, 400]")
        if self.frame_rate_hz <= 0 or self.ego_speed_mps < 0 or self.object_lateral_speed_mps < 0:
            raise InvalidConfig("rates and speeds must be non-negative")
        if self.yaw_profile is not None and not np.isscalar(self.yaw_profile):
            if len(self.yaw_profile) != self.frame_count:
                raise InvalidConfig("yaw_profile length must equal frame_count")
        if self.camera_height_m <= 0:
            raise InvalidConfig("camera_height_m must be positive")
        return self


@dataclass(frozen=True)
class SensorConfig:
    intrinsics: CameraIntrinsics = DEFAULT_INTRINSICS
    pixel_noise_sigma: float = 2.0
    miss_rate: float = 0.05
    clutter_rate: float = 0.5
    marking_points_per_frame: int = 8
    image_width: int = 1920
    image_height: int = 1080

    def validate(self):
        if not (0.0 <= self.miss_rate <= 1.0):
            raise InvalidConfig("miss_rate must be a probability")
        if self.clutter_rate < 0 or self.pixel_noise_sigma < 0:
            raise InvalidConfig("clutter_rate and pixel_noise_sigma must be non-negative")
        if self.marking_points_per_frame < 2:
            raise InvalidConfig("need at least 2 marking points per frame")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class LabeledScene:
    object_trajectory: np.ndarray  # (frame_count, 3) world coordinates of the object's ground point
    marking_x: tuple  # (X_w^1, X_w^2)
    poses: list
    label: str
    config: ScenarioConfig = field(repr=False)

    def relative_positions(self) -> np.ndarray:
        x1, x2 = self.marking_x
        return np.array([relative_position_world(x, x1, x2) for x in self.object_trajectory[:, 0]])

    def true_image_positions(self, intr: CameraIntrinsics = DEFAULT_INTRINSICS) -> np.ndarray:
        """Noise-free (u_o, u_1, u_2, v) per frame, markings taken at the object's depth."""
        out = np.empty((len(self.poses), 4))
        for t, pose in enumerate(self.poses):
            X, Y, Z = self.object_trajectory[t]
            pts = np.array([[X, Y, Z], [self.marking_x[0], Y, Z], [self.marking_x[1], Y, Z]])
            uvz = project_points(pts, intr, pose)
            out[t] = (uvz[0, 0], uvz[1, 0], uvz[2, 0], uvz[0, 1])
        return out


def _smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def _displacement(n_frames, onset, step_m):
    """Cumulative lateral displacement with a smoothstep speed ramp starting at ``onset``."""
    t = np.arange(n_frames)
    speed = step_m * _smoothstep((t - onset) / ONSET_FRAMES)
    return np.concatenate([[0.0], np.cumsum(speed[1:])])


def _check_label(label, p):
    if label == "LeftToRight":
        ok = np.all(np.diff(p) >= 0) and p[0] < -0.5 <= p[-1] and abs(p[-1]) < 0.5
    elif label == "RightToLeft":
        ok = np.all(np.diff(p) <= 0) and p[0] > 0.5 >= p[-1] and abs(p[-1]) < 0.5
    else:
        ok = np.all(np.abs(p) >= NO_INTRUSION_MARGIN)
    if not ok:
        raise LabelViolation(f"{label} predicate failed for p_r from {p[0]:.3f} to {p[-1]:.3f}")


def simulate_scene(cfg: ScenarioConfig, seed) -> LabeledScene:
    """Sample a world-frame trajectory consistent with ``cfg.label``.

    Intruders cross their near marking at a frame late enough for the final
    24-frame window and early enough for the first one, then stay inside the
    lane. Non-intruders stand still, approach the lane without reaching it,
    or walk away from it; they always stay at least 0.55 lane widths off-centre.
    """
    cfg.validate()
    rng = np.random.default_rng(seed)
    N = cfg.frame_count
    dt = 1.0 / cfg.frame_rate_hz
    w = cfg.lane_width_m
    x1, x2 = -w / 2.0, w / 2.0
    step = cfg.object_lateral_speed_mps * dt

    travel = cfg.ego_speed_mps * dt * (N - 1)
    lo, hi = cfg.object_range_m
    z_obj = rng.uniform(min(lo + travel, hi), hi)

    if cfg.label in ("LeftToRight", "RightToLeft"):
        if step <= 0:
            raise InvalidConfig("an intrusion needs a positive lateral speed")
        direction = 1.0 if cfg.label == "LeftToRight" else -1.0
        # crossing frame: inside the last window and (when possible) the first
        t_lo = max(N - 22, ONSET_FRAMES, N - 1 - int(math.floor(0.85 * w / step)))
        t_hi = min(N - 4, max(N - 22, 21))
        if t_lo > t_hi:
            raise InvalidConfig("lateral speed too high to end inside the lane")
        t_cross = int(rng.integers(t_lo, t_hi + 1))
        onset = int(rng.integers(0, t_cross - ONSET_FRAMES + 1))
        d = _displacement(N, onset, step)
        edge = x1 if direction > 0 else x2
        x = edge + direction * (d - d[t_cross])
    else:
        side = float(rng.choice([-1.0, 1.0]))
        mode = rng.choice(["static", "approach", "retreat"]) if step > 0 else "static"
        onset = int(rng.integers(0, N // 2))
        d = _displacement(N, onset, step) if mode != "static" else np.zeros(N)
        if mode == "approach":
            end = side * rng.uniform(0.6, 1.0)  # lane-width units
            x = side * (w * abs(end) + (d[-1] - d))
        else:
            start = side * rng.uniform(0.6, 2.0)
            x = side * w * abs(start) + side * d
        x = x + (x1 + x2) / 2.0

    traj = np.column_stack([x, np.zeros(N), np.full(N, z_obj)])
    if cfg.yaw_profile is None:
        yaw = np.zeros(N)
    elif np.isscalar(cfg.yaw_profile):
        # a fixed heading error drawn within the amplitude
        yaw = np.full(N, rng.uniform(-1.0, 1.0) * float(cfg.yaw_profile))
    else:
        yaw = np.asarray(cfg.yaw_profile, dtype=float)
    poses = [
        CameraPose(cfg.camera_offset_m, -cfg.camera_height_m, cfg.ego_speed_mps * dt * t, 0.0, float(yaw[t]), 0.0)
        for t in range(N)
    ]
    scene = LabeledScene(traj, (x1, x2), poses, cfg.label, cfg)
    _check_label(cfg.label, scene.relative_positions())
    return scene


def render_detections(scene: LabeledScene, sensor: SensorConfig = SensorConfig(), seed=0) -> list:
    """Project a scene into per-frame boxes and marking points with sensor noise."""
    sensor.validate()
    rng = np.random.default_rng(seed)
    intr = sensor.intrinsics
    cfg = scene.config
    width_m, height_m = cfg.object_size_m
    sigma = sensor.pixel_noise_sigma
    dt = 1.0 / cfg.frame_rate_hz
    frames = []
    for t, pose in enumerate(scene.poses):
        X, Y, Z = scene.object_trajectory[t]
        u_f, v_f, z_c = project_points(np.array([X, Y, Z]), intr, pose)
        bw = intr.f_x * width_m / z_c
        bh = intr.f_y * height_m / z_c

        boxes = []
        if rng.random() >= sensor.miss_rate:
            boxes.append(_noisy_box(rng, u_f, v_f, bw, bh, sigma))
        for _ in range(rng.poisson(sensor.clutter_rate)):
            uc = rng.uniform(0.0, sensor.image_width)
            vb = v_f + rng.uniform(-20.0, 20.0)
            boxes.append(_noisy_box(rng, uc, vb, bw, bh, sigma))
        order = rng.permutation(len(boxes))
        boxes = tuple(boxes[i] for i in order)

        markings = []
        for side, xm in zip(("Left", "Right"), scene.marking_x):
            zs = Z + rng.uniform(-MARKING_SPAN_M, MARKING_SPAN_M, sensor.marking_points_per_frame)
            pts = np.column_stack([np.full(len(zs), xm), np.full(len(zs), Y), zs])
            uv = project_points(pts, intr, pose)[:, :2]
            uv = uv + rng.normal(0.0, sigma, uv.shape) if sigma > 0 else uv
            markings.append(MarkingPoints(side, uv[np.argsort(uv[:, 1])]))
        frames.append(DetectionFrame(t, round(t * dt, 9), boxes, markings[0], markings[1]))
    return frames


def _noisy_box(rng, u_c, v_bottom, bw, bh, sigma):
    c = np.array([u_c - bw / 2.0, v_bottom - bh, u_c + bw / 2.0, v_bottom])
    if sigma > 0:
        c = c + rng.normal(0.0, sigma, 4)
    u0, u1 = sorted((c[0], c[2]))
    v0, v1 = sorted((c[1], c[3]))
    # keep the box non-degenerate under heavy noise
    u1 = max(u1, u0 + 1e-3)
    v1 = max(v1, v0 + 1e-3)
    return BoundingBox(float(u0), float(v0), float(u1), float(v1))


@dataclass(frozen=True)
class DatasetConfig:
    """Ranges from which per-sample scenarios are drawn."""

    lane_width_m: float = 3.5
    object_range_m: tuple = (150.0, 250.0)
    ego_speed_mps: float = 20.0
    lateral_speed_mps: tuple = (0.8, 1.3)
    yaw_amplitude_deg: float = 3.0
    yaw_wander_deg: float = 0.5
    yaw_wander_period_s: tuple = (4.0, 10.0)
    camera_offset_m: tuple = (-1.0, 1.0)
    frame_count: int = 32
    frame_rate_hz: float = 10.0


def draw_scenario(label, ranges: DatasetConfig, rng) -> ScenarioConfig:
    """Sample one scenario: constant yaw offset plus a slow sinusoidal wander."""
    n = ranges.frame_count
    t = np.arange(n) / ranges.frame_rate_hz
    yaw0 = math.radians(rng.uniform(-ranges.yaw_amplitude_deg, ranges.yaw_amplitude_deg))
    amp = math.radians(rng.uniform(0.0, ranges.yaw_wander_deg))
    period = rng.uniform(*ranges.yaw_wander_period_s)
    phase = rng.uniform(0.0, 2.0 * math.pi)
    yaw = yaw0 + amp * np.sin(2.0 * math.pi * t / period + phase)
    return ScenarioConfig(
        label=label,
        lane_width_m=ranges.lane_width_m,
        object_range_m=tuple(ranges.object_range_m),
        ego_speed_mps=ranges.ego_speed_mps,
        object_lateral_speed_mps=float(rng.uniform(*ranges.lateral_speed_mps)),
        yaw_profile=tuple(float(v) for v in yaw),
        frame_count=n,
        frame_rate_hz=ranges.frame_rate_hz,
        camera_offset_m=float(rng.uniform(*ranges.camera_offset_m)),
    )


def _child_seed(seed, *path) -> int:
    return int(np.random.SeedSequence([int(seed), *path]).generate_state(1)[0])


def make_sample(index, label, seed, ranges: DatasetConfig = DatasetConfig(), sensor: SensorConfig = SensorConfig()) -> dict:
    """One dataset record; every random stream is derived from ``(seed, index)``."""
    rng = np.random.default_rng(_child_seed(seed, index, 0))
    cfg = draw_scenario(label, ranges, rng)
    scene = simulate_scene(cfg, _child_seed(seed, index, 1))
    frames = render_detections(scene, sensor, _child_seed(seed, index, 2))
    truth = scene.true_image_positions(sensor.intrinsics)
    scen = asdict(cfg)
    scen["object_range_m"] = list(cfg.object_range_m)
    scen["object_size_m"] = list(cfg.object_size_m)
    scen["yaw_profile"] = list(cfg.yaw_profile)
    return {
        "label": label,
        "frames": [f.to_dict() for f in frames],
        "meta": {
            "index": index,
            "seed": int(seed),
            "scenario": scen,
            "sensor": sensor.to_dict(),
            "truth": {
                "p_r": scene.relative_positions().tolist(),
                "u_o": truth[:, 0].tolist(),
                "u_1": truth[:, 1].tolist(),
                "u_2": truth[:, 2].tolist(),
            },
        },
    }


def generate_dataset(path, n_per_class, seed=0, ranges: DatasetConfig = DatasetConfig(), sensor: SensorConfig = SensorConfig()) -> str:
    """Write a class-balanced JSONL dataset (labels interleaved) and return its SHA-256."""
    if n_per_class < 1:
        raise InvalidConfig("n_per_class must be >= 1")
    digest = hashlib.sha256()
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(n_per_class * len(LABELS)):
            rec = make_sample(i, LABELS[i % len(LABELS)], seed, ranges, sensor)
            line = json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n"
            digest.update(line.encode("utf-8"))
            fh.write(line)
    return digest.hexdigest()
