"""Frame-to-frame association of detections into a single intruder track."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ingest import BaselineObservation, baseline_position, marking_intercept

DEFAULT_GATE_PX = 40.0
MIN_TRACK_LENGTH = 24
MAX_GAP_FRACTION = 0.3
MAX_CONSECUTIVE_MISSES = 5
VELOCITY_HISTORY = 6
CONFIRM_AFTER = 3


class EmptyMatrix(ValueError):
    pass


class NoTrackFound(RuntimeError):
    pass


def hungarian(cost):
    """Minimum-cost assignment for a rectangular cost matrix.

    Returns ``(assignment, total)`` where ``assignment`` maps each matched row
    to its column; ``min(n_rows, n_cols)`` pairs are always matched.
    Shortest augmenting path with row/column potentials, O(n^2 m).
    """
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2 or c.size == 0:
        raise EmptyMatrix("cost matrix must be a non-empty 2-D array")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix must be finite")
    transposed = c.shape[0] > c.shape[1]
    if transposed:
        c = c.T
    n, m = c.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    match = np.zeros(m + 1, dtype=int)  # match[j] = 1-based row assigned to column j
    way = np.zeros(m + 1, dtype=int)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used[1:]
            cur = c[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[match[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    pairs = {}
    for j in range(1, m + 1):
        if match[j]:
            r, col = match[j] - 1, j - 1
            if transposed:
                r, col = col, r
            pairs[r] = col
    pairs = dict(sorted(pairs.items()))
    total = float(sum(np.asarray(cost, dtype=float)[r, col] for r, col in pairs.items()))
    return pairs, total


@dataclass
class Track:
    object_id: int
    observations: list = field(default_factory=list)  # (frame_index, BaselineObservation)
    gaps: set = field(default_factory=set)
    costs: list = field(default_factory=list)

    @property
    def first_frame(self):
        return self.observations[0][0]

    @property
    def last_frame(self):
        return self.observations[-1][0]

    @property
    def span(self):
        return self.last_frame - self.first_frame + 1

    @property
    def gap_fraction(self):
        return len(self.gaps) / self.span

    @property
    def mean_cost(self):
        return float(np.mean(self.costs)) if self.costs else 0.0

    def frame_indices(self):
        return [f for f, _ in self.observations]


@dataclass
class _Tentative:
    object_id: int
    frames: list = field(default_factory=list)
    us: list = field(default_factory=list)
    vs: list = field(default_factory=list)
    costs: list = field(default_factory=list)

    def predict(self, frame_index):
        if len(self.us) < 2:
            return self.us[-1]
        # median slope and median anchor over the recent history, so a single
        # clutter box slipping through the gate cannot derail the track
        f = np.array(self.frames[-VELOCITY_HISTORY:], dtype=float)
        u = np.array(self.us[-VELOCITY_HISTORY:])
        vel = float(np.median(np.diff(u) / np.diff(f)))
        return float(np.median(u + vel * (frame_index - f)))


def _detections(frame):
    dets = sorted(baseline_position(b) for b in frame.boxes)
    return np.array(dets, dtype=float).reshape(-1, 2)


def associate(frames, gate_px=DEFAULT_GATE_PX, min_length=MIN_TRACK_LENGTH, max_misses=MAX_CONSECUTIVE_MISSES) -> Track:
    """Build tracks frame by frame and return the longest one.

    Each live track predicts the next object coordinate (constant velocity once
    it has two observations). Tracks with at least three observations are
    matched first, then younger tracks take the leftover detections; each
    round is matched to detections by Hungarian
    assignment on absolute u-distance; matches costing more than ``gate_px``
    are rejected. Velocity and anchor are medians over the last few
    observations. Tracks that miss more than ``max_misses`` consecutive frames
    are closed. Marking intercepts are computed for the returned track only.
    """
    frames = sorted(frames, key=lambda f: f.frame_index)
    live, closed = [], []
    next_id = 0
    for frame in frames:
        fi = frame.frame_index
        for t in list(live):
            if fi - t.frames[-1] > max_misses + 1:
                live.remove(t)
                closed.append(t)
        dets = _detections(frame)
        unmatched = set(range(len(dets)))
        # confirmed tracks pick first so a fresh clutter track cannot steal the object
        confirmed = [t for t in live if len(t.frames) >= CONFIRM_AFTER]
        tentative = [t for t in live if len(t.frames) < CONFIRM_AFTER]
        for group in (confirmed, tentative):
            free = sorted(unmatched)
            if not group or not free:
                continue
            preds = np.array([t.predict(fi) for t in group])
            cost = np.abs(preds[:, None] - dets[free][None, :, 0])
            # out-of-gate pairs all cost the same so they cannot steer in-gate matches
            pairs, _ = hungarian(np.minimum(cost, 2.0 * gate_px))
            for r, c in pairs.items():
                if cost[r, c] <= gate_px:
                    t, col = group[r], free[c]
                    t.frames.append(fi)
                    t.us.append(dets[col, 0])
                    t.vs.append(dets[col, 1])
                    t.costs.append(float(cost[r, c]))
                    unmatched.discard(col)
        for col in sorted(unmatched):
            live.append(_Tentative(next_id, [fi], [dets[col, 0]], [dets[col, 1]]))
            next_id += 1
    closed.extend(live)

    def valid(t):
        span = t.frames[-1] - t.frames[0] + 1
        return span >= min_length and 1.0 - len(t.frames) / span <= MAX_GAP_FRACTION

    candidates = [t for t in closed if valid(t)]
    if not candidates:
        raise NoTrackFound(f"no track spans {min_length} frames")
    best = min(
        candidates,
        key=lambda t: (-len(t.frames), float(np.mean(t.costs)) if t.costs else 0.0, t.object_id),
    )
    by_index = {f.frame_index: f for f in frames}
    track = Track(best.object_id, costs=list(best.costs))
    for fi, u, v in zip(best.frames, best.us, best.vs):
        frame = by_index[fi]
        track.observations.append(
            (fi, BaselineObservation(u, v, marking_intercept(frame.left_marking, v), marking_intercept(frame.right_marking, v)))
        )
    track.gaps = set(range(best.frames[0], best.frames[-1] + 1)) - set(best.frames)
    return track
